#include "duorun/microbench.hpp"

#include "duorun/actor.hpp"
#include "duorun/spmd.hpp"

namespace duorun::microbench
{
    std::string to_string(BenchKind kind)
    {
        return kind == BenchKind::latency ? "latency" : "bandwidth";
    }

    BenchSchedule iteration_schedule(std::size_t size_bytes, BenchKind kind)
    {
        BenchSchedule s;
        s.iterations = size_bytes < 8192 ? 1000 : 100;
        s.warmups = kind == BenchKind::latency ? 60 : 10;
        return s;
    }

    void MessageSizeSweep::validate() const
    {
        if (min_bytes == 0 || min_bytes > max_bytes)
        {
            throw ConfigError("message sweep needs 0 < min_bytes <= max_bytes");
        }
    }

    std::vector<std::size_t> MessageSizeSweep::sizes() const
    {
        validate();
        std::vector<std::size_t> out;
        for (std::size_t s = min_bytes; s <= max_bytes; s *= 2)
        {
            out.push_back(s);
            if (s > max_bytes / 2)
            {
                break;
            }
        }
        return out;
    }

    namespace
    {
        constexpr Tag kDataTag = 1;
        constexpr Tag kReplyTag = 2;
        constexpr actor::CollectionId kPairCollection = 0x4d42;

        enum : actor::EntryId
        {
            kStart = 1,
            kPing = 2,
            kPong = 3,
            kData = 4,
            kAck = 5
        };

        struct Prepared
        {
            std::vector<std::size_t> sizes;
            ScheduleFn schedule;
            int window = kDefaultWindow;
            PhaseHook hook;
        };

        Prepared prepare(const Endpoint &ep, const BenchOptions &options)
        {
            if (ep.world_size() < 2)
            {
                throw ConfigError("point-to-point benchmarks need at least 2 workers");
            }
            if (options.window < 1)
            {
                throw ConfigError("bandwidth window must be positive");
            }
            Prepared p;
            p.sizes = options.sweep.sizes();
            p.schedule = options.schedule ? options.schedule : ScheduleFn(iteration_schedule);
            p.window = options.window;
            p.hook = options.hook;
            return p;
        }

        BenchSchedule checked(const Prepared &p, std::size_t size, BenchKind kind)
        {
            auto s = p.schedule(size, kind);
            if (s.iterations < 1 || s.warmups < 0)
            {
                throw ConfigError("benchmark schedule needs iterations >= 1 and warmups >= 0");
            }
            return s;
        }

        spmd::TypedBuffer message_of(std::size_t size)
        {
            Bytes data(size);
            for (std::size_t i = 0; i < size; ++i)
            {
                data[i] = static_cast<std::uint8_t>(i * 131u + 7u);
            }
            return spmd::TypedBuffer::of_bytes(std::move(data));
        }

        double to_value(BenchKind kind, std::size_t size, const BenchSchedule &s, int window, double elapsed)
        {
            if (kind == BenchKind::latency)
            {
                return elapsed / (2.0 * s.iterations) * 1e6;
            }
            const double bytes = static_cast<double>(s.iterations) * window * static_cast<double>(size);
            return bytes / elapsed / 1e6;
        }

        std::vector<SizeResult> share(Endpoint &ep, const std::vector<std::size_t> &sizes,
                                      const std::vector<double> &values)
        {
            spmd::Communicator comm(ep);
            const auto got = comm.broadcast(spmd::TypedBuffer::of_float64(values), 0).to_float64();
            std::vector<SizeResult> out;
            for (std::size_t i = 0; i < sizes.size(); ++i)
            {
                out.push_back({sizes[i], got.at(i)});
            }
            return out;
        }

        double spmd_trial(spmd::Communicator &comm, BenchKind kind, std::size_t size, const BenchSchedule &s,
                          int window, const PhaseHook &hook)
        {
            const auto msg = message_of(size);
            const auto ack = message_of(kAckBytes);
            const int total = s.warmups + s.iterations;
            double t0 = 0.0;
            if (comm.rank() == 0)
            {
                for (int i = 0; i < total; ++i)
                {
                    if (i == s.warmups)
                    {
                        mark(hook, Phase::warmup, 0, s.warmups, size);
                        mark(hook, Phase::timed_begin, 0, 0, size);
                        t0 = monotonic_now();
                    }
                    if (kind == BenchKind::latency)
                    {
                        comm.send(1, kDataTag, msg);
                        comm.recv(1, kDataTag);
                    }
                    else
                    {
                        for (int w = 0; w < window; ++w)
                        {
                            comm.send(1, kDataTag, msg);
                        }
                        comm.recv(1, kReplyTag);
                    }
                }
                const double elapsed = monotonic_now() - t0;
                mark(hook, Phase::timed_end, 0, 0, size);
                return elapsed;
            }
            if (comm.rank() == 1)
            {
                for (int i = 0; i < total; ++i)
                {
                    if (kind == BenchKind::latency)
                    {
                        auto got = comm.recv(0, kDataTag);
                        comm.send(0, kDataTag, got.buffer);
                    }
                    else
                    {
                        for (int w = 0; w < window; ++w)
                        {
                            comm.recv(0, kDataTag);
                        }
                        comm.send(0, kReplyTag, ack);
                    }
                }
            }
            return 0.0;
        }

        std::vector<SizeResult> run_spmd(Endpoint &ep, const Prepared &p, BenchKind kind)
        {
            spmd::Communicator comm(ep);
            std::vector<double> values;
            for (auto size : p.sizes)
            {
                const auto s = checked(p, size, kind);
                comm.barrier();
                mark(p.hook, Phase::barrier, comm.rank(), 0, size);
                const double elapsed = spmd_trial(comm, kind, size, s, p.window, p.hook);
                comm.barrier();
                mark(p.hook, Phase::barrier, comm.rank(), 0, size);
                values.push_back(to_value(kind, size, s, p.window, elapsed));
            }
            return share(ep, p.sizes, values);
        }

        // Per-rank state shared by the two benchmark chares.
        struct Driver
        {
            BenchKind kind = BenchKind::latency;
            spmd::TypedBuffer msg;
            spmd::TypedBuffer ack;
            BenchSchedule schedule;
            int window = 1;
            int completed = 0;
            int received = 0;
            double t0 = 0.0;
            double t1 = 0.0;
            std::size_t size = 0;
            PhaseHook hook;
        };

        class PairChare : public actor::Chare
        {
        public:
            explicit PairChare(Driver &d) : m_driver(&d) {}

            void pack(ByteWriter &) const override
            {
                throw UsageError("benchmark chares are not migratable");
            }

            void on_start(const actor::Envelope &) { begin(); }

            void on_ping(const actor::Envelope &env)
            {
                auto got = spmd::TypedBuffer::decode(env.payload);
                send(0, kPong, 0, got.encode());
            }

            void on_pong(const actor::Envelope &env)
            {
                spmd::TypedBuffer::decode(env.payload);
                finish_iteration();
            }

            void on_data(const actor::Envelope &env)
            {
                spmd::TypedBuffer::decode(env.payload);
                if (++m_driver->received % m_driver->window == 0)
                {
                    send(0, kAck, 0, m_driver->ack.encode());
                }
            }

            void on_ack(const actor::Envelope &env)
            {
                spmd::TypedBuffer::decode(env.payload);
                finish_iteration();
            }

        private:
            void begin()
            {
                auto &d = *m_driver;
                if (d.completed == d.schedule.warmups)
                {
                    mark(d.hook, Phase::warmup, runtime().endpoint().rank(), d.schedule.warmups, d.size);
                    mark(d.hook, Phase::timed_begin, runtime().endpoint().rank(), 0, d.size);
                    d.t0 = monotonic_now();
                }
                if (d.kind == BenchKind::latency)
                {
                    send(1, kPing, 0, d.msg.encode());
                    return;
                }
                for (int w = 0; w < d.window; ++w)
                {
                    send(1, kData, 0, d.msg.encode());
                }
            }

            void finish_iteration()
            {
                auto &d = *m_driver;
                if (++d.completed == d.schedule.warmups + d.schedule.iterations)
                {
                    d.t1 = monotonic_now();
                    mark(d.hook, Phase::timed_end, runtime().endpoint().rank(), 0, d.size);
                    runtime().exit();
                    return;
                }
                begin();
            }

            Driver *m_driver;
        };

        std::vector<SizeResult> run_actor(Endpoint &ep, const Prepared &p, BenchKind kind)
        {
            Driver driver;
            driver.kind = kind;
            driver.window = p.window;
            driver.ack = message_of(kAckBytes);
            driver.hook = p.hook;

            actor::ChareType<PairChare> type("pair");
            type.create([&driver](std::uint32_t) { return std::make_unique<PairChare>(driver); })
                .restore([](std::uint32_t, ByteReader &) -> std::unique_ptr<PairChare> {
                    throw UsageError("benchmark chares are not migratable");
                })
                .entry(kStart, &PairChare::on_start, "start")
                .entry(kPing, &PairChare::on_ping, "ping")
                .entry(kPong, &PairChare::on_pong, "pong")
                .entry(kData, &PairChare::on_data, "data")
                .entry(kAck, &PairChare::on_ack, "ack");

            actor::Runtime rt(ep);
            actor::CollectionSpec spec;
            spec.n_chares = 2;
            spec.placement = actor::PlacementPolicy::round_robin;
            rt.create_collection(kPairCollection, spec, type.def());

            std::vector<double> values;
            for (auto size : p.sizes)
            {
                driver.schedule = checked(p, size, kind);
                driver.msg = message_of(size);
                driver.completed = 0;
                driver.received = 0;
                driver.size = size;
                ep.barrier();
                mark(p.hook, Phase::barrier, ep.rank(), 0, size);
                if (ep.rank() == 0)
                {
                    rt.send(actor::ChareId{kPairCollection, 0}, kStart, 0);
                }
                rt.run(actor::Termination::exit_call);
                ep.barrier();
                mark(p.hook, Phase::barrier, ep.rank(), 0, size);
                values.push_back(to_value(kind, size, driver.schedule, p.window, driver.t1 - driver.t0));
            }
            rt.destroy_collection(kPairCollection);
            return share(ep, p.sizes, values);
        }

        std::vector<SizeResult> run(Endpoint &ep, const BenchOptions &options, BenchKind kind)
        {
            const auto p = prepare(ep, options);
            return options.runtime == RuntimeKind::spmd ? run_spmd(ep, p, kind) : run_actor(ep, p, kind);
        }
    } // namespace

    std::vector<SizeResult> run_latency(Endpoint &ep, const BenchOptions &options)
    {
        return run(ep, options, BenchKind::latency);
    }

    std::vector<SizeResult> run_bandwidth(Endpoint &ep, const BenchOptions &options)
    {
        return run(ep, options, BenchKind::bandwidth);
    }
} // namespace duorun::microbench
