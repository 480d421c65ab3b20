#pragma once

#include "duorun/transport.hpp"

#include <chrono>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <optional>
#include <string>

namespace duorun::detail
{
    using Clock = std::chrono::steady_clock;

    /// Unbounded FIFO of packets with blocking pop. Closing wakes all waiters;
    /// packets already queued are still handed out before ShutdownError.
    class Inbox
    {
    public:
        void push(Packet packet);

        /// Nullopt on timeout (or immediately when `deadline` is in the past and
        /// the queue is empty). Throws ShutdownError once closed and drained.
        std::optional<Packet> pop(std::optional<Clock::time_point> deadline);

        void close(std::string reason);
        bool closed() const;

    private:
        mutable std::mutex m_mutex;
        std::condition_variable m_cv;
        std::deque<Packet> m_queue;
        bool m_closed = false;
        std::string m_reason;
    };

    class EndpointImpl
    {
    public:
        EndpointImpl(int rank, int world_size, Backend backend, std::size_t max_payload);
        virtual ~EndpointImpl() = default;

        EndpointImpl(const EndpointImpl &) = delete;
        EndpointImpl &operator=(const EndpointImpl &) = delete;

        int rank() const noexcept { return m_rank; }
        int world_size() const noexcept { return m_world; }
        Backend backend() const noexcept { return m_backend; }
        std::size_t max_payload() const noexcept { return m_max_payload; }
        bool finalized() const noexcept { return m_finalized; }
        std::uint64_t remote_sends() const noexcept { return m_remote_sends; }

        void send(int dest, Tag tag, Bytes payload);

        /// `deadline` nullopt blocks indefinitely.
        std::optional<Packet> receive(const Match &match, std::optional<Clock::time_point> deadline);

        void barrier();

        void finalize();
        virtual void abort() noexcept = 0;

    protected:
        virtual void deliver_remote(int dest, Tag tag, Bytes &&payload) = 0;
        virtual Inbox &inbox() = 0;
        /// Backend teardown after the closing barrier.
        virtual void close_after_barrier() {}

        void mark_finalized() noexcept { m_finalized = true; }

    private:
        int m_rank;
        int m_world;
        Backend m_backend;
        std::size_t m_max_payload;
        bool m_finalized = false;
        std::uint64_t m_barrier_epoch = 0;
        std::uint64_t m_remote_sends = 0;
        std::deque<Packet> m_retained;
    };

    std::unique_ptr<EndpointImpl> make_inprocess_endpoint(const WorldConfig &config, int rank);
    std::unique_ptr<EndpointImpl> make_tcp_endpoint(const WorldConfig &config, int rank);
} // namespace duorun::detail
