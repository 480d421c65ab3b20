// In-process backend: one Inbox per worker inside a shared fabric. Threads that
// call init_world with the same (rendezvous_address, base_port) key join the
// same fabric.

#include "endpoint_impl.hpp"

#include <map>
#include <memory>
#include <vector>

namespace duorun::detail
{
    namespace
    {
        struct Fabric
        {
            explicit Fabric(int n)
            {
                inboxes.reserve(static_cast<std::size_t>(n));
                for (int i = 0; i < n; ++i)
                {
                    inboxes.push_back(std::make_unique<Inbox>());
                }
            }

            void shutdown(const std::string &why)
            {
                for (auto &box : inboxes)
                {
                    box->close(why);
                }
            }

            std::vector<std::unique_ptr<Inbox>> inboxes;
            bool formed = false; // guarded by the registry mutex
        };

        class Registry
        {
        public:
            static Registry &instance()
            {
                static Registry registry;
                return registry;
            }

            std::shared_ptr<Fabric> join(const std::string &key, int world, int rank,
                                         std::chrono::milliseconds timeout)
            {
                std::unique_lock lock(m_mutex);
                auto [it, inserted] = m_pending.try_emplace(key);
                auto &entry = it->second;
                if (inserted)
                {
                    entry.fabric = std::make_shared<Fabric>(world);
                    entry.joined.assign(static_cast<std::size_t>(world), false);
                }
                else if (static_cast<int>(entry.joined.size()) != world)
                {
                    throw ConfigError("world '" + key + "' joined with mismatched sizes " +
                                      std::to_string(entry.joined.size()) + " and " + std::to_string(world));
                }
                if (entry.joined[static_cast<std::size_t>(rank)])
                {
                    throw ConfigError("duplicate rank " + std::to_string(rank) + " joining world '" + key + "'");
                }
                entry.joined[static_cast<std::size_t>(rank)] = true;
                auto fabric = entry.fabric;
                if (++entry.count == world)
                {
                    fabric->formed = true;
                    m_pending.erase(it);
                    m_cv.notify_all();
                    return fabric;
                }
                if (!m_cv.wait_for(lock, timeout, [&] { return fabric->formed; }))
                {
                    auto again = m_pending.find(key);
                    if (again != m_pending.end() && again->second.fabric == fabric)
                    {
                        again->second.joined[static_cast<std::size_t>(rank)] = false;
                        if (--again->second.count == 0)
                        {
                            m_pending.erase(again);
                        }
                    }
                    throw WorldFormationError("timed out joining in-process world '" + key + "' as rank " +
                                              std::to_string(rank));
                }
                return fabric;
            }

        private:
            struct Pending
            {
                std::shared_ptr<Fabric> fabric;
                std::vector<bool> joined;
                int count = 0;
            };

            std::mutex m_mutex;
            std::condition_variable m_cv;
            std::map<std::string, Pending> m_pending;
        };

        class InProcessEndpoint final : public EndpointImpl
        {
        public:
            InProcessEndpoint(std::shared_ptr<Fabric> fabric, int rank, int world, std::size_t max_payload)
                : EndpointImpl(rank, world, Backend::in_process, max_payload), m_fabric(std::move(fabric))
            {
            }

            void abort() noexcept override
            {
                if (finalized())
                {
                    return;
                }
                try
                {
                    m_fabric->shutdown("world aborted by rank " + std::to_string(rank()));
                }
                catch (...)
                {
                }
                mark_finalized();
            }

        protected:
            void deliver_remote(int dest, Tag tag, Bytes &&payload) override
            {
                auto &box = *m_fabric->inboxes[static_cast<std::size_t>(dest)];
                if (box.closed())
                {
                    throw ShutdownError("send to rank " + std::to_string(dest) + " after world shutdown");
                }
                box.push(Packet{rank(), dest, tag, std::move(payload)});
            }

            Inbox &inbox() override { return *m_fabric->inboxes[static_cast<std::size_t>(rank())]; }

        private:
            std::shared_ptr<Fabric> m_fabric;
        };
    } // namespace

    std::unique_ptr<EndpointImpl> make_inprocess_endpoint(const WorldConfig &config, int rank)
    {
        std::shared_ptr<Fabric> fabric;
        if (config.n_workers == 1)
        {
            fabric = std::make_shared<Fabric>(1);
        }
        else
        {
            const auto key = config.rendezvous_address + ":" + std::to_string(config.base_port);
            fabric = Registry::instance().join(key, config.n_workers, rank, config.join_timeout);
        }
        return std::make_unique<InProcessEndpoint>(std::move(fabric), rank, config.n_workers, config.max_payload);
    }
} // namespace duorun::detail
