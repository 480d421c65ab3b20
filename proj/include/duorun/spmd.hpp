#pragma once

// Rank-based SPMD messaging over an Endpoint: typed send/recv with a 12-byte
// header, deadlock-free pairwise sendrecv, and deterministic reductions.

#include "duorun/transport.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace duorun
{
    enum class ReduceOp : std::uint32_t
    {
        sum = 1,
        max = 2,
        min = 3
    };

    double apply_reduce(ReduceOp op, double lhs, double rhs) noexcept;
    std::string to_string(ReduceOp op);
} // namespace duorun

namespace duorun::spmd
{
    /// Wire codes for the element kind (first header field).
    enum class ElementKind : std::uint32_t
    {
        float64 = 1,
        int64 = 2,
        raw_bytes = 3
    };

    std::size_t element_width(ElementKind kind) noexcept;
    std::string to_string(ElementKind kind);

    inline constexpr std::size_t kTypedHeaderBytes = 12;

    /// Contiguous typed payload; byte length is always count * element width.
    class TypedBuffer
    {
    public:
        TypedBuffer() = default;

        static TypedBuffer of_float64(std::span<const double> values);
        static TypedBuffer of_int64(std::span<const std::int64_t> values);
        static TypedBuffer of_bytes(std::span<const std::uint8_t> bytes);
        static TypedBuffer of_bytes(Bytes &&bytes);

        ElementKind kind() const noexcept { return m_kind; }
        std::size_t count() const noexcept { return m_bytes.size() / element_width(m_kind); }
        std::span<const std::uint8_t> bytes() const noexcept { return m_bytes; }
        Bytes take_bytes() && { return std::move(m_bytes); }

        /// Throws TypeMismatchError when the kind differs.
        std::vector<double> to_float64() const;
        std::vector<std::int64_t> to_int64() const;

        /// Header + elements, as sent on the wire.
        Bytes encode() const;
        /// Throws ProtocolError on a malformed header.
        static TypedBuffer decode(std::span<const std::uint8_t> wire);

        friend bool operator==(const TypedBuffer &, const TypedBuffer &) = default;

    private:
        TypedBuffer(ElementKind kind, Bytes bytes) : m_kind(kind), m_bytes(std::move(bytes)) {}
        void require(ElementKind kind) const;

        ElementKind m_kind = ElementKind::raw_bytes;
        Bytes m_bytes;
    };

    struct Received
    {
        int src = 0;
        Tag tag = 0;
        TypedBuffer buffer;
    };

    /// SPMD view of an Endpoint. Same ownership rule: one caller at a time.
    class Communicator
    {
    public:
        explicit Communicator(Endpoint &ep) : m_ep(&ep) {}

        int rank() const noexcept { return m_ep->rank(); }
        int size() const noexcept { return m_ep->world_size(); }
        Endpoint &endpoint() const noexcept { return *m_ep; }

        void send(int dest, Tag tag, const TypedBuffer &buf);

        Received recv(std::optional<int> src_filter = std::nullopt, std::optional<Tag> tag_filter = std::nullopt);

        /// Like recv, but throws TypeMismatchError unless the header carries `expected`.
        Received recv_expect(ElementKind expected, std::optional<int> src_filter = std::nullopt,
                             std::optional<Tag> tag_filter = std::nullopt);

        /// Posts the send before blocking on the receive, so symmetric pairwise
        /// exchanges cannot deadlock.
        TypedBuffer sendrecv(int dest, const TypedBuffer &send_buf, int src, Tag tag);

        /// Rank-ascending binary-tree reduction; every rank gets the root's
        /// result, so values are bit-identical across ranks.
        double allreduce(double value, ReduceOp op);
        std::vector<double> allreduce(std::span<const double> values, ReduceOp op);

        /// Root receives every rank's buffer, indexed by rank. Others get {}.
        std::vector<TypedBuffer> gather(const TypedBuffer &buf, int root = 0);
        TypedBuffer broadcast(const TypedBuffer &buf, int root = 0);

        void barrier() { m_ep->barrier(); }

    private:
        static void check_user_tag(Tag tag);
        Endpoint *m_ep;
    };
} // namespace duorun::spmd
