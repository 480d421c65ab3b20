#include "duorun/pic.hpp"

#include "duorun/actor.hpp"

#include <algorithm>

namespace duorun::pic
{
    void PicConfig::validate() const
    {
        mesh.validate();
        dist.validate();
        if (iterations < 0 || warmups < 0)
        {
            throw ConfigError("iteration counts must be non-negative");
        }
        if (odf < 1)
        {
            throw ConfigError("odf must be at least 1");
        }
        if (lb_period < 0)
        {
            throw ConfigError("lb_period must be non-negative");
        }
    }

    namespace
    {
        constexpr actor::CollectionId kCells = 0x5049;

        enum : actor::EntryId
        {
            kStart = 1,
            kBatch = 2,
            kDone = 3
        };

        // Particles of the initial distribution that start in `block`.
        std::vector<ParticleSet> split_initial(const PicConfig &cfg, const Ownership &own, bool by_worker)
        {
            const auto all = distribute_particles(cfg.mesh, cfg.dist);
            std::vector<ParticleSet> parts(static_cast<std::size_t>(by_worker ? own.workers() : own.blocks()));
            for (std::size_t k = 0; k < all.size(); ++k)
            {
                const auto [ci, cj] = cell_of(cfg.mesh, all.x[k], all.y[k]);
                const int b = by_worker ? own.worker_of_cell(ci, cj) : own.block_of_cell(ci, cj);
                parts[static_cast<std::size_t>(b)].push(all.at(k));
            }
            return parts;
        }

        struct WorkerTimes
        {
            double start = 0.0;
            double total = 0.0;
            /// Latest local finish time per iteration.
            std::vector<double> step_end;
            /// Busy CPU seconds per iteration.
            std::vector<double> busy;
            double lb_s = 0.0;
            int rebalances = 0;
        };

        // Packs (id, x, y, vx, vy) of every particle as five parallel arrays.
        Bytes pack_particles(const ParticleSet &s)
        {
            ByteWriter w;
            s.pack(w);
            return std::move(w).take();
        }

        void finish(spmd::Communicator &comm, const PicConfig &cfg, const WorkerTimes &times,
                    const ParticleSet &mine, PicResult &result)
        {
            const int W = comm.size();
            const auto n = times.step_end.size();

            std::vector<double> ends = times.step_end;
            ends.push_back(times.start);
            ends.push_back(times.total);
            ends.push_back(times.lb_s);
            const auto maxed = comm.allreduce(ends, ReduceOp::max);
            double prev = maxed[n];
            for (std::size_t t = 0; t < n; ++t)
            {
                const double end = std::max(maxed[t], prev);
                result.iteration_s.push_back(end - prev);
                prev = end;
            }
            result.total_s = maxed[n + 1];
            result.lb_s = maxed[n + 2];
            result.rebalances = times.rebalances;

            const auto busy_max = comm.allreduce(times.busy, ReduceOp::max);
            const auto busy_sum = comm.allreduce(times.busy, ReduceOp::sum);
            for (std::size_t t = 0; t < n; ++t)
            {
                const double mean = busy_sum[t] / W;
                result.imbalance.push_back(mean > 0.0 ? busy_max[t] / mean : 1.0);
            }

            auto parts = comm.gather(spmd::TypedBuffer::of_bytes(pack_particles(mine)), 0);
            std::vector<double> summary{0.0, 0.0};
            if (comm.rank() == 0)
            {
                ParticleSet all;
                for (const auto &part : parts)
                {
                    ByteReader r(part.bytes());
                    all.append(ParticleSet::unpack(r));
                }
                all.sort_by_id();
                std::vector<Particle> state;
                state.reserve(all.size());
                for (std::size_t k = 0; k < all.size(); ++k)
                {
                    state.push_back(all.at(k));
                }
                summary = {checksum(state), static_cast<double>(state.size())};
                if (cfg.collect_particles)
                {
                    result.final_state = std::move(state);
                }
            }
            const auto shared = comm.broadcast(spmd::TypedBuffer::of_float64(summary), 0).to_float64();
            result.checksum = shared.at(0);
            result.particles = static_cast<std::uint64_t>(shared.at(1));
        }

        PicResult run_spmd(Endpoint &ep, const PicConfig &cfg)
        {
            spmd::Communicator comm(ep);
            const Ownership own(cfg.mesh.L, comm.size(), 1);
            const auto mesh = init_mesh_charges(cfg.mesh);
            auto initial = [&] {
                return std::move(split_initial(cfg, own, true)[static_cast<std::size_t>(comm.rank())]);
            };

            auto particles = initial();
            for (int w = 0; w < cfg.warmups; ++w)
            {
                push_particles(particles, mesh, cfg.mesh);
                particles = exchange_particles(comm, own, cfg.mesh, std::move(particles));
            }
            particles = initial();
            mark(cfg.hook, Phase::warmup, comm.rank(), cfg.warmups);

            WorkerTimes times;
            times.step_end.resize(static_cast<std::size_t>(cfg.iterations));
            times.busy.resize(static_cast<std::size_t>(cfg.iterations));
            comm.barrier();
            mark(cfg.hook, Phase::barrier, comm.rank());
            mark(cfg.hook, Phase::timed_begin, comm.rank());
            times.start = monotonic_now();
            for (int t = 0; t < cfg.iterations; ++t)
            {
                const double c0 = thread_cpu_now();
                push_particles(particles, mesh, cfg.mesh);
                particles = exchange_particles(comm, own, cfg.mesh, std::move(particles));
                times.busy[static_cast<std::size_t>(t)] = thread_cpu_now() - c0;
                times.step_end[static_cast<std::size_t>(t)] = monotonic_now();
            }
            comm.barrier();
            times.total = monotonic_now() - times.start;
            mark(cfg.hook, Phase::barrier, comm.rank());
            mark(cfg.hook, Phase::timed_end, comm.rank());

            PicResult result;
            finish(comm, cfg, times, particles, result);
            return result;
        }

        // Per-worker context for the cell chares.
        struct Shared
        {
            const PicConfig *cfg = nullptr;
            const Ownership *own = nullptr;
            const ChargeMesh *mesh = nullptr;
            int target = 0;
            int lb_period = 0;
            std::vector<double> step_end;
        };

        class CellChare : public actor::Chare
        {
        public:
            CellChare(Shared &shared) : m_shared(&shared) {}

            void reset(ParticleSet particles)
            {
                m_particles = std::move(particles);
                m_incoming.clear();
                m_step = 0;
                m_received = 0;
                m_busy.assign(static_cast<std::size_t>(m_shared->target), 0.0);
                m_host.assign(static_cast<std::size_t>(m_shared->target), -1);
                set_epoch(0);
            }

            const ParticleSet &particles() const { return m_particles; }
            const std::vector<double> &busy() const { return m_busy; }
            const std::vector<int> &host() const { return m_host; }

            void pack(ByteWriter &out) const override
            {
                out.put_u32(static_cast<std::uint32_t>(m_step));
                out.put_u32(static_cast<std::uint32_t>(m_received));
                m_particles.pack(out);
                m_incoming.pack(out);
                out.put_vector(m_busy);
                out.put_vector(m_host);
            }

            void unpack(ByteReader &in)
            {
                m_step = static_cast<int>(in.get_u32());
                m_received = static_cast<int>(in.get_u32());
                m_particles = ParticleSet::unpack(in);
                m_incoming = ParticleSet::unpack(in);
                m_busy = in.get_vector<double>();
                m_host = in.get_vector<int>();
            }

            void on_start(const actor::Envelope &)
            {
                m_clock = thread_cpu_now();
                step();
            }

            void on_batch(const actor::Envelope &env)
            {
                m_clock = thread_cpu_now();
                auto r = env.reader();
                m_incoming.append(ParticleSet::unpack(r));
                ++m_received;
                charge();
                try_complete();
            }

            void resume_from_sync() override
            {
                m_clock = thread_cpu_now();
                step();
            }

            void on_done(const actor::Envelope &) { runtime().exit(); }

        private:
            // Adds CPU time since the last mark to the current iteration.
            void charge()
            {
                const double now = thread_cpu_now();
                if (m_step < m_shared->target)
                {
                    m_busy[static_cast<std::size_t>(m_step)] += now - m_clock;
                }
                m_clock = now;
            }

            void step()
            {
                const auto &s = *m_shared;
                const auto &own = *s.own;
                m_host[static_cast<std::size_t>(m_step)] = runtime().rank();
                push_particles(m_particles, *s.mesh, s.cfg->mesh);
                std::vector<ParticleSet> out(static_cast<std::size_t>(own.blocks()));
                for (std::size_t k = 0; k < m_particles.size(); ++k)
                {
                    const auto [ci, cj] = cell_of(s.cfg->mesh, m_particles.x[k], m_particles.y[k]);
                    out[static_cast<std::size_t>(own.block_of_cell(ci, cj))].push(m_particles.at(k));
                }
                m_particles.clear();
                const auto me = index();
                for (std::uint32_t d = 0; d < out.size(); ++d)
                {
                    if (d != me)
                    {
                        send(d, kBatch, static_cast<std::uint32_t>(m_step), pack_particles(out[d]));
                    }
                }
                m_incoming.append(out[me]);
                ++m_received;
                charge();
                try_complete();
            }

            void try_complete()
            {
                auto &s = *m_shared;
                if (m_received < s.own->blocks())
                {
                    return;
                }
                m_particles = std::move(m_incoming);
                m_incoming.clear();
                m_particles.sort_by_id();
                m_received = 0;
                charge();
                auto &end = s.step_end[static_cast<std::size_t>(m_step)];
                end = std::max(end, monotonic_now());
                ++m_step;
                set_epoch(static_cast<std::uint32_t>(m_step));
                if (m_step == s.target)
                {
                    contribute(0.0, ReduceOp::sum, kDone, 0);
                }
                else if (s.lb_period > 0 && m_step % s.lb_period == 0)
                {
                    at_sync();
                }
                else
                {
                    step();
                }
            }

            Shared *m_shared;
            ParticleSet m_particles;
            ParticleSet m_incoming;
            int m_step = 0;
            int m_received = 0;
            std::vector<double> m_busy;
            std::vector<int> m_host;
            double m_clock = 0.0;
        };

        std::vector<CellChare *> local_cells(actor::Runtime &rt)
        {
            std::vector<CellChare *> out;
            for (auto *c : rt.local_chares(kCells))
            {
                out.push_back(static_cast<CellChare *>(c));
            }
            return out;
        }

        // Loads the initial distribution into the local chares and sizes their per-step records.
        void reset_cells(actor::Runtime &rt, Shared &shared, const Ownership &own, int steps, int lb_period)
        {
            shared.target = steps;
            shared.lb_period = lb_period;
            shared.step_end.assign(static_cast<std::size_t>(steps), 0.0);
            auto parts = split_initial(*shared.cfg, own, false);
            for (auto *c : local_cells(rt))
            {
                c->reset(std::move(parts[c->index()]));
            }
        }

        void actor_steps(actor::Runtime &rt, const Shared &shared)
        {
            if (shared.target == 0)
            {
                return;
            }
            for (auto *c : local_cells(rt))
            {
                rt.send(c->id(), kStart, 0);
            }
            rt.run(actor::Termination::exit_call);
        }

        PicResult run_actor(Endpoint &ep, const PicConfig &cfg)
        {
            const Ownership own(cfg.mesh.L, ep.world_size(), cfg.odf);
            const auto mesh = init_mesh_charges(cfg.mesh);
            Shared shared;
            shared.cfg = &cfg;
            shared.own = &own;
            shared.mesh = &mesh;

            actor::ChareType<CellChare> type("cell");
            type.create([&shared](std::uint32_t) { return std::make_unique<CellChare>(shared); })
                .restore([&shared](std::uint32_t, ByteReader &r) {
                    auto c = std::make_unique<CellChare>(shared);
                    c->unpack(r);
                    return c;
                })
                .entry(kStart, &CellChare::on_start, "start")
                .entry(kBatch, &CellChare::on_batch, "batch")
                .entry(kDone, &CellChare::on_done, "done");

            actor::RuntimeOptions options;
            options.load_clock = actor::LoadClock::thread_cpu;
            actor::Runtime rt(ep, options);
            rt.create_collection(
                kCells, actor::CollectionSpec::with_odf(static_cast<std::uint32_t>(cfg.odf), ep.world_size()),
                type.def());
            spmd::Communicator comm(ep);

            reset_cells(rt, shared, own, cfg.warmups, 0);
            actor_steps(rt, shared);
            rt.reset_loads(kCells);
            mark(cfg.hook, Phase::warmup, comm.rank(), cfg.warmups);
            reset_cells(rt, shared, own, cfg.iterations, cfg.lb_period);

            WorkerTimes times;
            const auto before = rt.stats();
            comm.barrier();
            mark(cfg.hook, Phase::barrier, comm.rank());
            mark(cfg.hook, Phase::timed_begin, comm.rank());
            times.start = monotonic_now();
            actor_steps(rt, shared);
            comm.barrier();
            times.total = monotonic_now() - times.start;
            mark(cfg.hook, Phase::barrier, comm.rank());
            mark(cfg.hook, Phase::timed_end, comm.rank());
            times.step_end = shared.step_end;
            times.lb_s = rt.stats().lb_seconds - before.lb_seconds;
            times.rebalances = static_cast<int>(rt.stats().rebalances - before.rebalances);

            // Busy time per iteration is attributed to whichever worker hosted
            // the chare during that iteration.
            ByteWriter w;
            ParticleSet mine;
            const auto cells = local_cells(rt);
            w.put_u64(cells.size());
            for (auto *c : cells)
            {
                w.put_vector(c->busy());
                w.put_vector(c->host());
                mine.append(c->particles());
            }
            auto reports = comm.gather(spmd::TypedBuffer::of_bytes(std::move(w).take()), 0);
            std::vector<double> per_worker(static_cast<std::size_t>(cfg.iterations) * ep.world_size(), 0.0);
            if (comm.rank() == 0)
            {
                for (const auto &rep : reports)
                {
                    ByteReader r(rep.bytes());
                    const auto count = r.get_u64();
                    for (std::uint64_t k = 0; k < count; ++k)
                    {
                        const auto busy = r.get_vector<double>();
                        const auto host = r.get_vector<int>();
                        for (std::size_t t = 0; t < busy.size(); ++t)
                        {
                            if (host[t] >= 0)
                            {
                                per_worker[t * ep.world_size() + static_cast<std::size_t>(host[t])] += busy[t];
                            }
                        }
                    }
                }
            }
            per_worker = comm.broadcast(spmd::TypedBuffer::of_float64(per_worker), 0).to_float64();
            times.busy.assign(static_cast<std::size_t>(cfg.iterations), 0.0);
            for (std::size_t t = 0; t < times.busy.size(); ++t)
            {
                times.busy[t] = per_worker[t * ep.world_size() + static_cast<std::size_t>(ep.rank())];
            }

            PicResult result;
            finish(comm, cfg, times, mine, result);
            rt.destroy_collection(kCells);
            return result;
        }
    } // namespace

    PicResult run_pic(Endpoint &ep, const PicConfig &config)
    {
        config.validate();
        return config.runtime == RuntimeKind::spmd ? run_spmd(ep, config) : run_actor(ep, config);
    }
} // namespace duorun::pic
