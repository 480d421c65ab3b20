#pragma once

// Reliable, ordered point-to-point byte messaging among W workers.
//
// Two backends share one Endpoint surface: an in-process fabric where each
// worker is a thread with a FIFO inbox, and a TCP mesh where each worker may be
// a separate process. Messages between a fixed (src, dest, tag) triple are
// delivered in send order; messages of different triples may interleave.

#include "duorun/errors.hpp"
#include "duorun/wire.hpp"

#include <array>
#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>

namespace duorun
{
    using Tag = std::uint32_t;

    /// Tags at or above this value are reserved for runtime-internal traffic
    /// (barriers, collectives, actor control). Application tags live below it.
    inline constexpr Tag kReservedTagBase = 0x8000'0000u;

    namespace tags
    {
        inline constexpr Tag barrier_arrive = kReservedTagBase + 0x01;
        inline constexpr Tag barrier_release = kReservedTagBase + 0x02;
        inline constexpr Tag goodbye = kReservedTagBase + 0x03;
        inline constexpr Tag spmd_reduce_up = kReservedTagBase + 0x10;
        inline constexpr Tag spmd_reduce_down = kReservedTagBase + 0x11;
        inline constexpr Tag spmd_gather = kReservedTagBase + 0x12;
        inline constexpr Tag spmd_bcast = kReservedTagBase + 0x13;
        inline constexpr Tag actor_first = kReservedTagBase + 0x100;
        inline constexpr Tag actor_last = kReservedTagBase + 0x1ff;
    } // namespace tags

    inline constexpr std::size_t kDefaultMaxPayload = std::size_t{64} << 20;

    /// Size in bytes of the TCP frame header: length, src, dest, tag (u32 LE each).
    inline constexpr std::size_t kFrameHeaderBytes = 16;

    enum class Backend
    {
        in_process,
        tcp
    };

    std::string to_string(Backend backend);
    Backend parse_backend(std::string_view text);

    struct WorldConfig
    {
        int n_workers = 1;
        Backend backend = Backend::in_process;
        /// Rendezvous port for the tcp backend. For in_process worlds it is part
        /// of the key that lets threads find each other.
        std::uint32_t base_port = 0;
        std::string rendezvous_address = "127.0.0.1";
        std::uint64_t seed = 0;
        std::size_t max_payload = kDefaultMaxPayload;
        std::chrono::milliseconds join_timeout{30'000};

        /// Throws ConfigError when an invariant does not hold.
        void validate() const;
    };

    /// Returns DUORUN_SEED when set (decimal or 0x-hex), otherwise `fallback`.
    std::uint64_t resolve_seed(std::uint64_t fallback);

    struct Packet
    {
        int src = 0;
        int dest = 0;
        Tag tag = 0;
        Bytes payload;
    };

    /// Receive filter: optional source rank and an inclusive tag range.
    struct Match
    {
        std::optional<int> src;
        Tag tag_lo = 0;
        Tag tag_hi = ~Tag{0};

        /// Any source, any application tag (reserved tags excluded).
        static Match any() { return {std::nullopt, 0, kReservedTagBase - 1}; }
        static Match tag(Tag t) { return {std::nullopt, t, t}; }
        static Match from(int src, Tag t) { return {src, t, t}; }
        static Match tag_range(Tag lo, Tag hi) { return {std::nullopt, lo, hi}; }

        bool matches(const Packet &p) const noexcept
        {
            return (!src || *src == p.src) && p.tag >= tag_lo && p.tag <= tag_hi;
        }
    };

    namespace detail
    {
        class EndpointImpl;
    }

    /// One worker's handle on a world. Owned by exactly one execution context;
    /// never used concurrently. Movable between threads before use.
    class Endpoint
    {
    public:
        Endpoint();
        explicit Endpoint(std::unique_ptr<detail::EndpointImpl> impl);
        Endpoint(Endpoint &&) noexcept;
        Endpoint &operator=(Endpoint &&) noexcept;
        ~Endpoint();

        int rank() const noexcept;
        int world_size() const noexcept;
        Backend backend() const noexcept;
        std::size_t max_payload() const noexcept;

        /// Asynchronous: may return before delivery.
        void send_bytes(int dest, Tag tag, Bytes payload);
        void send_bytes(int dest, Tag tag, std::span<const std::uint8_t> payload)
        {
            send_bytes(dest, tag, Bytes(payload.begin(), payload.end()));
        }

        /// Blocks until a matching message is available. Non-matching messages
        /// are retained for later receives. Without a tag filter only
        /// application tags match.
        Packet recv_bytes(std::optional<int> src_filter = std::nullopt,
                          std::optional<Tag> tag_filter = std::nullopt);
        Packet recv(const Match &match);
        std::optional<Packet> recv_for(const Match &match, std::chrono::nanoseconds timeout);
        std::optional<Packet> try_recv(const Match &match);

        /// No rank returns before every rank has entered.
        void barrier();

        /// Collective orderly shutdown: barrier, then tear down connections.
        void finalize();
        /// Non-collective teardown after an error. Peers blocked on this
        /// world observe ShutdownError.
        void abort() noexcept;
        bool finalized() const noexcept;

        /// Number of send_bytes calls that left this worker (self-sends excluded).
        std::uint64_t remote_sends() const noexcept;

        explicit operator bool() const noexcept { return static_cast<bool>(m_impl); }

    private:
        detail::EndpointImpl &impl() const;
        std::unique_ptr<detail::EndpointImpl> m_impl;
    };

    /// Joins the world as `rank`. Collective: returns once every rank has joined.
    Endpoint init_world(const WorldConfig &config, int rank);

    /// Monotonic wall clock in seconds.
    double monotonic_now() noexcept;

    /// CPU seconds consumed by the calling thread.
    double thread_cpu_now() noexcept;

    /// Encodes a TCP frame header (exposed for interop tests).
    std::array<std::uint8_t, kFrameHeaderBytes> encode_frame_header(std::uint32_t payload_length, int src,
                                                                     int dest, Tag tag);

    struct FrameHeader
    {
        std::uint32_t length;
        std::uint32_t src;
        std::uint32_t dest;
        Tag tag;
    };
    FrameHeader decode_frame_header(std::span<const std::uint8_t, kFrameHeaderBytes> bytes);
} // namespace duorun
