#include "duorun/transport.hpp"

#include "endpoint_impl.hpp"

#include <cstdlib>
#include <cstring>
#include <ctime>

namespace duorun
{
    std::string to_string(Backend backend)
    {
        return backend == Backend::tcp ? "tcp" : "inproc";
    }

    Backend parse_backend(std::string_view text)
    {
        if (text == "inproc" || text == "in_process")
        {
            return Backend::in_process;
        }
        if (text == "tcp")
        {
            return Backend::tcp;
        }
        throw ConfigError("unknown backend '" + std::string(text) + "' (expected inproc or tcp)");
    }

    void WorldConfig::validate() const
    {
        if (n_workers < 1)
        {
            throw ConfigError("n_workers must be >= 1, got " + std::to_string(n_workers));
        }
        if (backend == Backend::tcp && n_workers > 1 && (base_port < 1024 || base_port > 65535))
        {
            throw ConfigError("base_port must be in [1024, 65535] for the tcp backend, got " +
                              std::to_string(base_port));
        }
        if (max_payload == 0)
        {
            throw ConfigError("max_payload must be positive");
        }
    }

    std::uint64_t resolve_seed(std::uint64_t fallback)
    {
        const char *env = std::getenv("DUORUN_SEED");
        if (env == nullptr || *env == '\0')
        {
            return fallback;
        }
        char *end = nullptr;
        const auto value = std::strtoull(env, &end, 0);
        if (end == env || *end != '\0')
        {
            throw ConfigError(std::string("DUORUN_SEED is not an unsigned integer: ") + env);
        }
        return value;
    }

    double monotonic_now() noexcept
    {
        using namespace std::chrono;
        return duration<double>(steady_clock::now().time_since_epoch()).count();
    }

    double thread_cpu_now() noexcept
    {
        timespec ts{};
        ::clock_gettime(CLOCK_THREAD_CPUTIME_ID, &ts);
        return static_cast<double>(ts.tv_sec) + static_cast<double>(ts.tv_nsec) * 1e-9;
    }

    std::array<std::uint8_t, kFrameHeaderBytes> encode_frame_header(std::uint32_t payload_length, int src,
                                                                     int dest, Tag tag)
    {
        std::array<std::uint8_t, kFrameHeaderBytes> out{};
        const std::uint32_t fields[4] = {payload_length, static_cast<std::uint32_t>(src),
                                         static_cast<std::uint32_t>(dest), tag};
        std::memcpy(out.data(), fields, sizeof(fields));
        return out;
    }

    FrameHeader decode_frame_header(std::span<const std::uint8_t, kFrameHeaderBytes> bytes)
    {
        FrameHeader h{};
        std::memcpy(&h.length, bytes.data(), 4);
        std::memcpy(&h.src, bytes.data() + 4, 4);
        std::memcpy(&h.dest, bytes.data() + 8, 4);
        std::memcpy(&h.tag, bytes.data() + 12, 4);
        return h;
    }

    // Endpoint ---------------------------------------------------------------

    Endpoint::Endpoint() = default;
    Endpoint::Endpoint(std::unique_ptr<detail::EndpointImpl> impl) : m_impl(std::move(impl)) {}
    Endpoint::Endpoint(Endpoint &&) noexcept = default;
    Endpoint &Endpoint::operator=(Endpoint &&) noexcept = default;

    Endpoint::~Endpoint()
    {
        if (m_impl && !m_impl->finalized())
        {
            m_impl->abort();
        }
    }

    detail::EndpointImpl &Endpoint::impl() const
    {
        if (!m_impl)
        {
            throw ShutdownError("endpoint is not connected to a world");
        }
        return *m_impl;
    }

    int Endpoint::rank() const noexcept { return m_impl ? m_impl->rank() : -1; }
    int Endpoint::world_size() const noexcept { return m_impl ? m_impl->world_size() : 0; }
    Backend Endpoint::backend() const noexcept { return m_impl ? m_impl->backend() : Backend::in_process; }
    std::size_t Endpoint::max_payload() const noexcept { return m_impl ? m_impl->max_payload() : 0; }
    bool Endpoint::finalized() const noexcept { return !m_impl || m_impl->finalized(); }
    std::uint64_t Endpoint::remote_sends() const noexcept { return m_impl ? m_impl->remote_sends() : 0; }

    void Endpoint::send_bytes(int dest, Tag tag, Bytes payload) { impl().send(dest, tag, std::move(payload)); }

    Packet Endpoint::recv_bytes(std::optional<int> src_filter, std::optional<Tag> tag_filter)
    {
        Match m;
        m.src = src_filter;
        if (tag_filter)
        {
            m.tag_lo = m.tag_hi = *tag_filter;
        }
        else
        {
            m.tag_hi = kReservedTagBase - 1;
        }
        return recv(m);
    }

    Packet Endpoint::recv(const Match &match) { return *impl().receive(match, std::nullopt); }

    std::optional<Packet> Endpoint::recv_for(const Match &match, std::chrono::nanoseconds timeout)
    {
        const auto deadline =
            detail::Clock::now() + std::chrono::duration_cast<detail::Clock::duration>(timeout);
        return impl().receive(match, deadline);
    }

    std::optional<Packet> Endpoint::try_recv(const Match &match)
    {
        return impl().receive(match, detail::Clock::time_point::min());
    }

    void Endpoint::barrier() { impl().barrier(); }
    void Endpoint::finalize() { impl().finalize(); }

    void Endpoint::abort() noexcept
    {
        if (m_impl)
        {
            m_impl->abort();
        }
    }

    Endpoint init_world(const WorldConfig &config, int rank)
    {
        config.validate();
        if (rank < 0 || rank >= config.n_workers)
        {
            throw ConfigError("rank " + std::to_string(rank) + " out of range for world of " +
                              std::to_string(config.n_workers));
        }
        if (config.backend == Backend::tcp && config.n_workers > 1)
        {
            return Endpoint(detail::make_tcp_endpoint(config, rank));
        }
        return Endpoint(detail::make_inprocess_endpoint(config, rank));
    }

    namespace detail
    {
        // Inbox --------------------------------------------------------------

        void Inbox::push(Packet packet)
        {
            {
                std::lock_guard lock(m_mutex);
                m_queue.push_back(std::move(packet));
            }
            m_cv.notify_one();
        }

        std::optional<Packet> Inbox::pop(std::optional<Clock::time_point> deadline)
        {
            std::unique_lock lock(m_mutex);
            auto ready = [&] { return !m_queue.empty() || m_closed; };
            if (deadline)
            {
                if (!m_cv.wait_until(lock, *deadline, ready))
                {
                    return std::nullopt;
                }
            }
            else
            {
                m_cv.wait(lock, ready);
            }
            if (m_queue.empty())
            {
                throw ShutdownError(m_reason);
            }
            Packet p = std::move(m_queue.front());
            m_queue.pop_front();
            return p;
        }

        void Inbox::close(std::string reason)
        {
            {
                std::lock_guard lock(m_mutex);
                if (m_closed)
                {
                    return;
                }
                m_closed = true;
                m_reason = std::move(reason);
            }
            m_cv.notify_all();
        }

        bool Inbox::closed() const
        {
            std::lock_guard lock(m_mutex);
            return m_closed;
        }

        // EndpointImpl -------------------------------------------------------

        EndpointImpl::EndpointImpl(int rank, int world_size, Backend backend, std::size_t max_payload)
            : m_rank(rank), m_world(world_size), m_backend(backend), m_max_payload(max_payload)
        {
        }

        void EndpointImpl::send(int dest, Tag tag, Bytes payload)
        {
            if (m_finalized)
            {
                throw ShutdownError("send on finalized world");
            }
            if (dest < 0 || dest >= m_world)
            {
                throw ConfigError("destination rank " + std::to_string(dest) + " out of range [0, " +
                                  std::to_string(m_world) + ")");
            }
            if (payload.size() > m_max_payload)
            {
                throw ConfigError("payload of " + std::to_string(payload.size()) + " bytes exceeds maximum " +
                                  std::to_string(m_max_payload));
            }
            if (dest == m_rank)
            {
                inbox().push(Packet{m_rank, dest, tag, std::move(payload)});
                return;
            }
            deliver_remote(dest, tag, std::move(payload));
            ++m_remote_sends;
        }

        std::optional<Packet> EndpointImpl::receive(const Match &match, std::optional<Clock::time_point> deadline)
        {
            if (m_finalized)
            {
                throw ShutdownError("receive on finalized world");
            }
            for (auto it = m_retained.begin(); it != m_retained.end(); ++it)
            {
                if (match.matches(*it))
                {
                    Packet p = std::move(*it);
                    m_retained.erase(it);
                    return p;
                }
            }
            while (true)
            {
                auto p = inbox().pop(deadline);
                if (!p)
                {
                    return std::nullopt;
                }
                if (match.matches(*p))
                {
                    return p;
                }
                m_retained.push_back(std::move(*p));
            }
        }

        void EndpointImpl::barrier()
        {
            ++m_barrier_epoch;
            if (m_world == 1)
            {
                return;
            }
            auto check = [&](const Packet &p) {
                ByteReader r(p.payload);
                const auto epoch = r.get_u64();
                if (epoch != m_barrier_epoch)
                {
                    throw ProtocolError("barrier epoch mismatch: rank " + std::to_string(p.src) + " at epoch " +
                                        std::to_string(epoch) + ", rank " + std::to_string(m_rank) +
                                        " at epoch " + std::to_string(m_barrier_epoch));
                }
            };
            ByteWriter w;
            w.put_u64(m_barrier_epoch);
            if (m_rank == 0)
            {
                for (int i = 1; i < m_world; ++i)
                {
                    check(*receive(Match::tag(tags::barrier_arrive), std::nullopt));
                }
                for (int i = 1; i < m_world; ++i)
                {
                    send(i, tags::barrier_release, w.bytes());
                }
            }
            else
            {
                send(0, tags::barrier_arrive, w.bytes());
                check(*receive(Match::from(0, tags::barrier_release), std::nullopt));
            }
        }

        void EndpointImpl::finalize()
        {
            if (m_finalized)
            {
                return;
            }
            barrier();
            close_after_barrier();
            m_finalized = true;
        }
    } // namespace detail
} // namespace duorun
