#include "duorun/launch.hpp"

#include <netinet/in.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <csignal>
#include <cstdio>
#include <exception>
#include <thread>
#include <vector>

namespace duorun
{
    namespace
    {
        std::exception_ptr root_cause(const std::vector<std::exception_ptr> &errors)
        {
            std::exception_ptr fallback;
            for (const auto &e : errors)
            {
                if (!e)
                {
                    continue;
                }
                try
                {
                    std::rethrow_exception(e);
                }
                catch (const ShutdownError &)
                {
                    if (!fallback)
                    {
                        fallback = e;
                    }
                }
                catch (...)
                {
                    return e;
                }
            }
            return fallback;
        }

        void run_rank(const WorldConfig &config, int rank, const WorkerBody &body)
        {
            Endpoint ep;
            try
            {
                ep = init_world(config, rank);
                body(ep);
                ep.finalize();
            }
            catch (...)
            {
                ep.abort();
                throw;
            }
        }
    } // namespace

    LaunchMode parse_launch_mode(std::string_view text)
    {
        if (text == "threads")
        {
            return LaunchMode::threads;
        }
        if (text == "processes")
        {
            return LaunchMode::processes;
        }
        throw ConfigError("unknown launch mode '" + std::string(text) + "' (expected threads or processes)");
    }

    std::uint32_t pick_free_port()
    {
        const int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
        if (fd < 0)
        {
            throw WorldFormationError("socket() failed while picking a port");
        }
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
        addr.sin_port = 0;
        socklen_t len = sizeof(addr);
        if (::bind(fd, reinterpret_cast<sockaddr *>(&addr), sizeof(addr)) != 0 ||
            ::getsockname(fd, reinterpret_cast<sockaddr *>(&addr), &len) != 0)
        {
            ::close(fd);
            throw WorldFormationError("could not bind an ephemeral port");
        }
        ::close(fd);
        return ntohs(addr.sin_port);
    }

    void run_world(WorldConfig config, const WorkerBody &body, LaunchMode mode)
    {
        if (config.base_port == 0)
        {
            if (config.backend == Backend::tcp)
            {
                config.base_port = pick_free_port();
            }
            else
            {
                static std::atomic<std::uint64_t> next_world{0};
                config.rendezvous_address =
                    "inproc-" + std::to_string(::getpid()) + "-" + std::to_string(next_world++);
            }
        }
        config.validate();
        const int world = config.n_workers;

        if (mode == LaunchMode::threads || world == 1)
        {
            std::vector<std::exception_ptr> errors(static_cast<std::size_t>(world));
            std::vector<std::thread> threads;
            threads.reserve(static_cast<std::size_t>(world));
            for (int r = 0; r < world; ++r)
            {
                threads.emplace_back([&, r] {
                    try
                    {
                        run_rank(config, r, body);
                    }
                    catch (...)
                    {
                        errors[static_cast<std::size_t>(r)] = std::current_exception();
                    }
                });
            }
            for (auto &t : threads)
            {
                t.join();
            }
            if (auto e = root_cause(errors))
            {
                std::rethrow_exception(e);
            }
            return;
        }

        if (config.backend != Backend::tcp)
        {
            throw ConfigError("process launch requires the tcp backend");
        }
        std::fflush(nullptr);
        std::vector<pid_t> children;
        for (int r = 1; r < world; ++r)
        {
            const pid_t pid = ::fork();
            if (pid < 0)
            {
                for (pid_t c : children)
                {
                    ::kill(c, SIGTERM);
                    ::waitpid(c, nullptr, 0);
                }
                throw WorldFormationError("fork failed");
            }
            if (pid == 0)
            {
                int code = 0;
                try
                {
                    run_rank(config, r, body);
                }
                catch (const std::exception &e)
                {
                    std::fprintf(stderr, "rank %d: %s\n", r, e.what());
                    code = 1;
                }
                catch (...)
                {
                    code = 1;
                }
                std::fflush(nullptr);
                ::_exit(code);
            }
            children.push_back(pid);
        }

        std::exception_ptr root_error;
        try
        {
            run_rank(config, 0, body);
        }
        catch (...)
        {
            root_error = std::current_exception();
        }
        int failed_children = 0;
        for (pid_t c : children)
        {
            int status = 0;
            while (::waitpid(c, &status, 0) < 0 && errno == EINTR)
            {
            }
            if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
            {
                ++failed_children;
            }
        }
        if (root_error)
        {
            std::rethrow_exception(root_error);
        }
        if (failed_children > 0)
        {
            throw Error(std::to_string(failed_children) + " worker process(es) failed");
        }
    }
} // namespace duorun
