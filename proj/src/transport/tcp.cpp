// TCP backend.
//
// World formation: rank 0 listens on rendezvous_address:base_port and collects
// one registration (rank, listen port, host) from every other rank, then sends
// each the full table. Rank j then connects to every rank i in [1, j) and
// accepts connections from every rank above it. The registration connection
// doubles as the 0<->j data link.
//
// Frames: u32 payload length, u32 src, u32 dest, u32 tag (all little-endian),
// then the payload. A background reader thread per endpoint drains every peer
// socket into the endpoint's inbox.

#include "endpoint_impl.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/eventfd.h>
#include <sys/socket.h>
#include <sys/uio.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <thread>
#include <vector>

namespace duorun::detail
{
    namespace
    {
        constexpr std::uint32_t kRegisterMagic = 0x524F5544; // "DUOR"
        constexpr std::uint32_t kHelloMagic = 0x4C454844;    // "DHEL"
        constexpr std::uint32_t kStatusOk = 0;
        constexpr std::uint32_t kStatusDuplicate = 1;
        constexpr std::uint32_t kStatusMismatch = 2;

        std::string errno_text(const char *what)
        {
            return std::string(what) + ": " + std::strerror(errno);
        }

        class Socket
        {
        public:
            Socket() = default;
            explicit Socket(int fd) : m_fd(fd) {}
            Socket(Socket &&o) noexcept : m_fd(std::exchange(o.m_fd, -1)) {}
            Socket &operator=(Socket &&o) noexcept
            {
                if (this != &o)
                {
                    reset();
                    m_fd = std::exchange(o.m_fd, -1);
                }
                return *this;
            }
            ~Socket() { reset(); }

            int get() const noexcept { return m_fd; }
            int release() noexcept { return std::exchange(m_fd, -1); }
            void reset() noexcept
            {
                if (m_fd >= 0)
                {
                    ::close(m_fd);
                    m_fd = -1;
                }
            }

        private:
            int m_fd = -1;
        };

        int remaining_ms(Clock::time_point deadline)
        {
            const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
            return left.count() < 0 ? 0 : static_cast<int>(left.count());
        }

        void wait_fd(int fd, short events, Clock::time_point deadline, const char *what)
        {
            while (true)
            {
                pollfd pfd{fd, events, 0};
                const int rc = ::poll(&pfd, 1, remaining_ms(deadline));
                if (rc > 0)
                {
                    return;
                }
                if (rc == 0)
                {
                    throw WorldFormationError(std::string("timed out during world formation: ") + what);
                }
                if (errno != EINTR)
                {
                    throw WorldFormationError(errno_text("poll"));
                }
            }
        }

        void write_all(int fd, const void *data, std::size_t n)
        {
            const auto *p = static_cast<const std::uint8_t *>(data);
            while (n > 0)
            {
                const auto w = ::send(fd, p, n, MSG_NOSIGNAL);
                if (w < 0)
                {
                    if (errno == EINTR)
                    {
                        continue;
                    }
                    throw ShutdownError(errno_text("send"));
                }
                p += w;
                n -= static_cast<std::size_t>(w);
            }
        }

        void read_exact(int fd, void *data, std::size_t n, Clock::time_point deadline, const char *what)
        {
            auto *p = static_cast<std::uint8_t *>(data);
            while (n > 0)
            {
                wait_fd(fd, POLLIN, deadline, what);
                const auto r = ::recv(fd, p, n, 0);
                if (r == 0)
                {
                    throw WorldFormationError(std::string("peer closed during world formation: ") + what);
                }
                if (r < 0)
                {
                    if (errno == EINTR || errno == EAGAIN)
                    {
                        continue;
                    }
                    throw WorldFormationError(errno_text("recv"));
                }
                p += r;
                n -= static_cast<std::size_t>(r);
            }
        }

        void send_message(int fd, const Bytes &body)
        {
            const auto len = static_cast<std::uint32_t>(body.size());
            write_all(fd, &len, sizeof(len));
            write_all(fd, body.data(), body.size());
        }

        Bytes read_message(int fd, Clock::time_point deadline, const char *what)
        {
            std::uint32_t len = 0;
            read_exact(fd, &len, sizeof(len), deadline, what);
            if (len > (1u << 20))
            {
                throw WorldFormationError(std::string("oversized formation message: ") + what);
            }
            Bytes body(len);
            read_exact(fd, body.data(), len, deadline, what);
            return body;
        }

        sockaddr_in resolve(const std::string &host, std::uint32_t port)
        {
            addrinfo hints{};
            hints.ai_family = AF_INET;
            hints.ai_socktype = SOCK_STREAM;
            addrinfo *res = nullptr;
            const int rc = ::getaddrinfo(host.c_str(), nullptr, &hints, &res);
            if (rc != 0 || res == nullptr)
            {
                throw WorldFormationError("cannot resolve '" + host + "': " + ::gai_strerror(rc));
            }
            sockaddr_in addr{};
            std::memcpy(&addr, res->ai_addr, sizeof(addr));
            ::freeaddrinfo(res);
            addr.sin_port = htons(static_cast<std::uint16_t>(port));
            return addr;
        }

        void set_nodelay(int fd)
        {
            int one = 1;
            ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
        }

        Socket listen_on(const sockaddr_in &addr, int backlog)
        {
            Socket s(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
            if (s.get() < 0)
            {
                throw WorldFormationError(errno_text("socket"));
            }
            int one = 1;
            ::setsockopt(s.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
            if (::bind(s.get(), reinterpret_cast<const sockaddr *>(&addr), sizeof(addr)) != 0)
            {
                throw WorldFormationError(errno_text("bind") + " (port " + std::to_string(ntohs(addr.sin_port)) +
                                          ")");
            }
            if (::listen(s.get(), backlog) != 0)
            {
                throw WorldFormationError(errno_text("listen"));
            }
            return s;
        }

        std::uint32_t local_port(int fd)
        {
            sockaddr_in addr{};
            socklen_t len = sizeof(addr);
            ::getsockname(fd, reinterpret_cast<sockaddr *>(&addr), &len);
            return ntohs(addr.sin_port);
        }

        std::string local_host(int fd)
        {
            sockaddr_in addr{};
            socklen_t len = sizeof(addr);
            ::getsockname(fd, reinterpret_cast<sockaddr *>(&addr), &len);
            char buf[INET_ADDRSTRLEN] = {};
            ::inet_ntop(AF_INET, &addr.sin_addr, buf, sizeof(buf));
            return buf;
        }

        Socket accept_before(int listener, Clock::time_point deadline, const char *what)
        {
            while (true)
            {
                wait_fd(listener, POLLIN, deadline, what);
                const int fd = ::accept4(listener, nullptr, nullptr, SOCK_CLOEXEC);
                if (fd >= 0)
                {
                    return Socket(fd);
                }
                if (errno != EINTR && errno != EAGAIN && errno != ECONNABORTED)
                {
                    throw WorldFormationError(errno_text("accept"));
                }
            }
        }

        Socket connect_before(const sockaddr_in &addr, Clock::time_point deadline)
        {
            while (true)
            {
                Socket s(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
                if (s.get() < 0)
                {
                    throw WorldFormationError(errno_text("socket"));
                }
                if (::connect(s.get(), reinterpret_cast<const sockaddr *>(&addr), sizeof(addr)) == 0)
                {
                    return s;
                }
                if (Clock::now() >= deadline)
                {
                    throw WorldFormationError(errno_text("connect") + " (timed out)");
                }
                std::this_thread::sleep_for(std::chrono::milliseconds(5));
            }
        }

        struct PeerAddress
        {
            std::string host;
            std::uint32_t port = 0;
        };

        class TcpEndpoint final : public EndpointImpl
        {
        public:
            TcpEndpoint(int rank, int world, std::size_t max_payload, std::vector<Socket> peers,
                        std::chrono::milliseconds close_timeout)
                : EndpointImpl(rank, world, Backend::tcp, max_payload), m_close_timeout(close_timeout)
            {
                m_fds.resize(static_cast<std::size_t>(world), -1);
                for (int r = 0; r < world; ++r)
                {
                    if (r != rank)
                    {
                        m_fds[static_cast<std::size_t>(r)] = peers[static_cast<std::size_t>(r)].release();
                        set_nodelay(m_fds[static_cast<std::size_t>(r)]);
                    }
                }
                m_goodbye.assign(static_cast<std::size_t>(world), false);
                m_wake = ::eventfd(0, EFD_CLOEXEC | EFD_NONBLOCK);
                if (m_wake < 0)
                {
                    close_sockets();
                    throw WorldFormationError(errno_text("eventfd"));
                }
                m_reader = std::thread([this] { reader_loop(); });
            }

            ~TcpEndpoint() override
            {
                stop_reader();
                close_sockets();
            }

            void abort() noexcept override
            {
                for (int fd : m_fds)
                {
                    if (fd >= 0)
                    {
                        ::shutdown(fd, SHUT_RDWR);
                    }
                }
                stop_reader();
                close_sockets();
                m_inbox.close("world aborted by rank " + std::to_string(rank()));
                mark_finalized();
            }

        protected:
            void deliver_remote(int dest, Tag tag, Bytes &&payload) override
            {
                write_frame(dest, tag, payload);
            }

            Inbox &inbox() override { return m_inbox; }

            void close_after_barrier() override
            {
                for (int r = 0; r < world_size(); ++r)
                {
                    if (r != rank())
                    {
                        write_frame(r, tags::goodbye, {});
                    }
                }
                {
                    std::unique_lock lock(m_state_mutex);
                    m_state_cv.wait_for(lock, m_close_timeout, [&] {
                        return m_goodbyes == world_size() - 1 || m_reader_done;
                    });
                }
                stop_reader();
                close_sockets();
            }

        private:
            struct ReadState
            {
                std::array<std::uint8_t, kFrameHeaderBytes> header{};
                std::size_t header_got = 0;
                FrameHeader frame{};
                Bytes payload;
                std::size_t payload_got = 0;
                bool in_payload = false;
                bool open = true;
            };

            void write_frame(int dest, Tag tag, const Bytes &payload)
            {
                const int fd = m_fds[static_cast<std::size_t>(dest)];
                if (fd < 0)
                {
                    throw ShutdownError("connection to rank " + std::to_string(dest) + " is closed");
                }
                auto header = encode_frame_header(static_cast<std::uint32_t>(payload.size()), rank(), dest, tag);
                iovec iov[2];
                iov[0].iov_base = header.data();
                iov[0].iov_len = header.size();
                iov[1].iov_base = const_cast<std::uint8_t *>(payload.data());
                iov[1].iov_len = payload.size();
                int first = 0;
                const int count = payload.empty() ? 1 : 2;
                while (first < count)
                {
                    msghdr msg{};
                    msg.msg_iov = &iov[first];
                    msg.msg_iovlen = static_cast<std::size_t>(count - first);
                    auto w = ::sendmsg(fd, &msg, MSG_NOSIGNAL);
                    if (w < 0)
                    {
                        if (errno == EINTR)
                        {
                            continue;
                        }
                        throw ShutdownError(errno_text(("send to rank " + std::to_string(dest)).c_str()));
                    }
                    auto written = static_cast<std::size_t>(w);
                    while (first < count && written >= iov[first].iov_len)
                    {
                        written -= iov[first].iov_len;
                        ++first;
                    }
                    if (first < count)
                    {
                        iov[first].iov_base = static_cast<std::uint8_t *>(iov[first].iov_base) + written;
                        iov[first].iov_len -= written;
                    }
                }
            }

            void reader_loop()
            {
                std::vector<ReadState> states(static_cast<std::size_t>(world_size()));
                std::vector<std::uint8_t> staging(1 << 16);
                std::vector<pollfd> pfds;
                std::vector<int> who;
                std::string failure;
                while (failure.empty())
                {
                    pfds.clear();
                    who.clear();
                    pfds.push_back({m_wake, POLLIN, 0});
                    who.push_back(-1);
                    for (int r = 0; r < world_size(); ++r)
                    {
                        if (r != rank() && states[static_cast<std::size_t>(r)].open)
                        {
                            pfds.push_back({m_fds[static_cast<std::size_t>(r)], POLLIN, 0});
                            who.push_back(r);
                        }
                    }
                    if (pfds.size() == 1)
                    {
                        break;
                    }
                    const int rc = ::poll(pfds.data(), pfds.size(), -1);
                    if (rc < 0)
                    {
                        if (errno == EINTR)
                        {
                            continue;
                        }
                        failure = errno_text("poll");
                        break;
                    }
                    if (pfds[0].revents != 0)
                    {
                        break;
                    }
                    for (std::size_t k = 1; k < pfds.size() && failure.empty(); ++k)
                    {
                        if (pfds[k].revents == 0)
                        {
                            continue;
                        }
                        failure = drain(who[k], states[static_cast<std::size_t>(who[k])], staging);
                    }
                }
                if (!failure.empty())
                {
                    m_inbox.close(failure);
                }
                {
                    std::lock_guard lock(m_state_mutex);
                    m_reader_done = true;
                }
                m_state_cv.notify_all();
            }

            /// Reads everything currently available from one peer. Returns a
            /// non-empty failure description when the world is broken.
            std::string drain(int peer, ReadState &st, std::vector<std::uint8_t> &staging)
            {
                const int fd = m_fds[static_cast<std::size_t>(peer)];
                while (true)
                {
                    std::uint8_t *dst;
                    std::size_t want;
                    const bool direct = st.in_payload && st.frame.length - st.payload_got >= staging.size();
                    if (direct)
                    {
                        dst = st.payload.data() + st.payload_got;
                        want = st.frame.length - st.payload_got;
                    }
                    else
                    {
                        dst = staging.data();
                        want = staging.size();
                    }
                    const auto r = ::recv(fd, dst, want, MSG_DONTWAIT);
                    if (r == 0)
                    {
                        st.open = false;
                        if (m_goodbye[static_cast<std::size_t>(peer)])
                        {
                            return {};
                        }
                        return "rank " + std::to_string(peer) + " disconnected";
                    }
                    if (r < 0)
                    {
                        if (errno == EINTR)
                        {
                            continue;
                        }
                        if (errno == EAGAIN || errno == EWOULDBLOCK)
                        {
                            return {};
                        }
                        st.open = false;
                        if (m_goodbye[static_cast<std::size_t>(peer)])
                        {
                            return {};
                        }
                        return errno_text(("recv from rank " + std::to_string(peer)).c_str());
                    }
                    const auto n = static_cast<std::size_t>(r);
                    if (direct)
                    {
                        st.payload_got += n;
                        if (st.payload_got == st.frame.length)
                        {
                            if (auto err = complete(peer, st); !err.empty())
                            {
                                return err;
                            }
                        }
                        continue;
                    }
                    if (auto err = parse(peer, st, std::span<const std::uint8_t>(staging.data(), n)); !err.empty())
                    {
                        return err;
                    }
                }
            }

            std::string parse(int peer, ReadState &st, std::span<const std::uint8_t> data)
            {
                while (!data.empty())
                {
                    if (!st.in_payload)
                    {
                        const auto take = std::min(data.size(), kFrameHeaderBytes - st.header_got);
                        std::memcpy(st.header.data() + st.header_got, data.data(), take);
                        st.header_got += take;
                        data = data.subspan(take);
                        if (st.header_got < kFrameHeaderBytes)
                        {
                            break;
                        }
                        st.frame = decode_frame_header(st.header);
                        st.header_got = 0;
                        if (st.frame.length > max_payload())
                        {
                            return "frame from rank " + std::to_string(peer) + " exceeds maximum payload";
                        }
                        if (static_cast<int>(st.frame.src) != peer || static_cast<int>(st.frame.dest) != rank())
                        {
                            return "misaddressed frame from rank " + std::to_string(peer);
                        }
                        st.in_payload = true;
                        st.payload.assign(st.frame.length, 0);
                        st.payload_got = 0;
                    }
                    const auto take = std::min(data.size(), st.frame.length - st.payload_got);
                    if (take > 0)
                    {
                        std::memcpy(st.payload.data() + st.payload_got, data.data(), take);
                        st.payload_got += take;
                        data = data.subspan(take);
                    }
                    if (st.payload_got == st.frame.length)
                    {
                        if (auto err = complete(peer, st); !err.empty())
                        {
                            return err;
                        }
                    }
                }
                return {};
            }

            std::string complete(int peer, ReadState &st)
            {
                st.in_payload = false;
                if (st.frame.tag == tags::goodbye)
                {
                    {
                        std::lock_guard lock(m_state_mutex);
                        m_goodbye[static_cast<std::size_t>(peer)] = true;
                        ++m_goodbyes;
                    }
                    m_state_cv.notify_all();
                    return {};
                }
                m_inbox.push(Packet{peer, rank(), st.frame.tag, std::move(st.payload)});
                st.payload = Bytes();
                return {};
            }

            void stop_reader() noexcept
            {
                if (m_reader.joinable())
                {
                    const std::uint64_t one = 1;
                    [[maybe_unused]] auto rc = ::write(m_wake, &one, sizeof(one));
                    m_reader.join();
                }
            }

            void close_sockets() noexcept
            {
                for (int &fd : m_fds)
                {
                    if (fd >= 0)
                    {
                        ::close(fd);
                        fd = -1;
                    }
                }
                if (m_wake >= 0)
                {
                    ::close(m_wake);
                    m_wake = -1;
                }
            }

            std::vector<int> m_fds;
            int m_wake = -1;
            Inbox m_inbox;
            std::thread m_reader;
            std::chrono::milliseconds m_close_timeout;

            std::mutex m_state_mutex;
            std::condition_variable m_state_cv;
            std::vector<bool> m_goodbye;
            int m_goodbyes = 0;
            bool m_reader_done = false;
        };

        std::vector<Socket> form_world_root(const WorldConfig &cfg, Clock::time_point deadline)
        {
            const int world = cfg.n_workers;
            auto listener = listen_on(resolve(cfg.rendezvous_address, cfg.base_port), SOMAXCONN);
            std::vector<Socket> peers(static_cast<std::size_t>(world));
            std::vector<PeerAddress> table(static_cast<std::size_t>(world));
            int registered = 0;
            while (registered < world - 1)
            {
                auto conn = accept_before(listener.get(), deadline, "waiting for registrations");
                auto body = read_message(conn.get(), deadline, "reading registration");
                ByteReader r(body);
                const auto magic = r.get_u32();
                const auto peer = static_cast<int>(r.get_u32());
                const auto peer_world = static_cast<int>(r.get_u32());
                const auto port = r.get_u32();
                auto host = r.get_string();
                ByteWriter reply;
                if (magic != kRegisterMagic || peer_world != world)
                {
                    reply.put_u32(kStatusMismatch);
                    send_message(conn.get(), reply.bytes());
                    continue;
                }
                if (peer <= 0 || peer >= world || peers[static_cast<std::size_t>(peer)].get() >= 0)
                {
                    reply.put_u32(kStatusDuplicate);
                    send_message(conn.get(), reply.bytes());
                    continue;
                }
                table[static_cast<std::size_t>(peer)] = {std::move(host), port};
                peers[static_cast<std::size_t>(peer)] = std::move(conn);
                ++registered;
            }
            ByteWriter msg;
            msg.put_u32(kStatusOk);
            for (const auto &entry : table)
            {
                msg.put_u32(entry.port);
                msg.put_string(entry.host);
            }
            for (int r = 1; r < world; ++r)
            {
                send_message(peers[static_cast<std::size_t>(r)].get(), msg.bytes());
            }
            return peers;
        }

        std::vector<Socket> form_world_peer(const WorldConfig &cfg, int rank, Clock::time_point deadline)
        {
            const int world = cfg.n_workers;
            std::vector<Socket> peers(static_cast<std::size_t>(world));

            sockaddr_in any{};
            any.sin_family = AF_INET;
            any.sin_addr.s_addr = htonl(INADDR_ANY);
            any.sin_port = 0;
            auto listener = listen_on(any, SOMAXCONN);

            auto root = connect_before(resolve(cfg.rendezvous_address, cfg.base_port), deadline);
            ByteWriter reg;
            reg.put_u32(kRegisterMagic);
            reg.put_u32(static_cast<std::uint32_t>(rank));
            reg.put_u32(static_cast<std::uint32_t>(world));
            reg.put_u32(local_port(listener.get()));
            reg.put_string(local_host(root.get()));
            send_message(root.get(), reg.bytes());

            auto body = read_message(root.get(), deadline, "waiting for the rank table");
            ByteReader r(body);
            const auto status = r.get_u32();
            if (status == kStatusDuplicate)
            {
                throw ConfigError("duplicate rank " + std::to_string(rank) + " rejected by rendezvous");
            }
            if (status != kStatusOk)
            {
                throw ConfigError("rendezvous rejected registration (world size mismatch)");
            }
            std::vector<PeerAddress> table(static_cast<std::size_t>(world));
            for (auto &entry : table)
            {
                entry.port = r.get_u32();
                entry.host = r.get_string();
            }
            peers[0] = std::move(root);

            for (int i = 1; i < rank; ++i)
            {
                const auto &entry = table[static_cast<std::size_t>(i)];
                auto conn = connect_before(resolve(entry.host, entry.port), deadline);
                ByteWriter hello;
                hello.put_u32(kHelloMagic);
                hello.put_u32(static_cast<std::uint32_t>(rank));
                send_message(conn.get(), hello.bytes());
                peers[static_cast<std::size_t>(i)] = std::move(conn);
            }
            for (int pending = world - 1 - rank; pending > 0; --pending)
            {
                auto conn = accept_before(listener.get(), deadline, "waiting for higher ranks");
                auto hello = read_message(conn.get(), deadline, "reading peer hello");
                ByteReader h(hello);
                const auto magic = h.get_u32();
                const auto peer = static_cast<int>(h.get_u32());
                if (magic != kHelloMagic || peer <= rank || peer >= world ||
                    peers[static_cast<std::size_t>(peer)].get() >= 0)
                {
                    throw WorldFormationError("unexpected peer hello from rank " + std::to_string(peer));
                }
                peers[static_cast<std::size_t>(peer)] = std::move(conn);
            }
            return peers;
        }
    } // namespace

    std::unique_ptr<EndpointImpl> make_tcp_endpoint(const WorldConfig &config, int rank)
    {
        const auto deadline = Clock::now() + config.join_timeout;
        auto peers = rank == 0 ? form_world_root(config, deadline) : form_world_peer(config, rank, deadline);
        return std::make_unique<TcpEndpoint>(rank, config.n_workers, config.max_payload, std::move(peers),
                                             config.join_timeout);
    }
} // namespace duorun::detail
