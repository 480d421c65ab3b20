#include "duorun/stencil2d.hpp"

#include "duorun/actor.hpp"

#include <algorithm>

namespace duorun::stencil
{
    void StencilConfig::validate() const
    {
        if (n < 1 || m < 1)
        {
            throw ConfigError("stencil domain extents must be positive");
        }
        if (iterations < 0 || warmups < 0)
        {
            throw ConfigError("stencil iteration counts must be non-negative");
        }
        if (odf < 1)
        {
            throw ConfigError("odf must be at least 1");
        }
        if (!initial.interior || !initial.boundary)
        {
            throw ConfigError("stencil initial condition is incomplete");
        }
    }

    namespace
    {
        constexpr Tag kVerticalTag = 0x5100;
        constexpr Tag kHorizontalTag = 0x5101;
        constexpr actor::CollectionId kBlocks = 0x5354;

        enum : actor::EntryId
        {
            kStart = 1,
            kHalo = 2,
            kDone = 3
        };

        void swap_with(spmd::Communicator &comm, BlockField &block, Side side, int peer, Tag tag)
        {
            const auto mine = block.edge(side);
            const auto got = comm.sendrecv(peer, spmd::TypedBuffer::of_float64(mine), peer, tag).to_float64();
            block.set_halo(side, got);
        }

        // Appends (block number, interior...) for each block.
        void append_block(std::vector<double> &out, int number, const BlockField &block)
        {
            out.push_back(number);
            const auto values = block.interior();
            out.insert(out.end(), values.begin(), values.end());
        }

        // Gathers every block's interior on rank 0 and broadcasts the checksum.
        void collect(spmd::Communicator &comm, const DecompositionPlan &plan, const std::vector<double> &mine,
                     bool keep_field, StencilResult &result)
        {
            auto parts = comm.gather(spmd::TypedBuffer::of_float64(mine), 0);
            double sum = 0.0;
            if (comm.rank() == 0)
            {
                std::vector<double> field(static_cast<std::size_t>(plan.n) * static_cast<std::size_t>(plan.m));
                for (const auto &part : parts)
                {
                    const auto values = part.to_float64();
                    std::size_t k = 0;
                    while (k < values.size())
                    {
                        const int number = static_cast<int>(values[k++]);
                        const int bi = number / plan.p2;
                        const int bj = number % plan.p2;
                        const int r0 = plan.row_begin(bi);
                        const int c0 = plan.col_begin(bj);
                        for (int r = 0; r < plan.block_rows(bi); ++r)
                        {
                            for (int c = 0; c < plan.block_cols(bj); ++c)
                            {
                                field[static_cast<std::size_t>(r0 + r) * static_cast<std::size_t>(plan.m) +
                                      static_cast<std::size_t>(c0 + c)] = values.at(k++);
                            }
                        }
                    }
                }
                sum = checksum(field);
                if (keep_field)
                {
                    result.field = std::move(field);
                }
            }
            const std::vector<double> one{sum};
            result.checksum = comm.broadcast(spmd::TypedBuffer::of_float64(one), 0).to_float64().at(0);
        }

        // Max over ranks of per-iteration compute and comm times plus the total.
        void reduce_timings(spmd::Communicator &comm, const std::vector<IterationTiming> &local, double total,
                            StencilResult &result)
        {
            std::vector<double> flat;
            flat.reserve(local.size() * 2 + 1);
            for (const auto &t : local)
            {
                flat.push_back(t.compute_s);
                flat.push_back(t.comm_s);
            }
            flat.push_back(total);
            const auto maxed = comm.allreduce(flat, ReduceOp::max);
            result.iterations.resize(local.size());
            for (std::size_t i = 0; i < local.size(); ++i)
            {
                result.iterations[i] = {maxed[2 * i], maxed[2 * i + 1]};
            }
            result.total_s = maxed.back();
        }

        StencilResult run_spmd(Endpoint &ep, const StencilConfig &cfg, const DecompositionPlan &plan)
        {
            spmd::Communicator comm(ep);
            const int bi = comm.rank() / plan.p2;
            const int bj = comm.rank() % plan.p2;
            BlockField block(plan, bi, bj);
            block.fill(cfg.initial, cfg.n, cfg.m);

            for (int w = 0; w < cfg.warmups; ++w)
            {
                exchange_halos(comm, plan, block);
                block.jacobi_step();
            }
            block.fill(cfg.initial, cfg.n, cfg.m);
            mark(cfg.hook, Phase::warmup, comm.rank(), cfg.warmups);

            std::vector<IterationTiming> timings(static_cast<std::size_t>(cfg.iterations));
            comm.barrier();
            mark(cfg.hook, Phase::barrier, comm.rank());
            mark(cfg.hook, Phase::timed_begin, comm.rank());
            const double start = monotonic_now();
            for (auto &t : timings)
            {
                const double t0 = monotonic_now();
                exchange_halos(comm, plan, block);
                const double t1 = monotonic_now();
                block.jacobi_step();
                const double t2 = monotonic_now();
                t.comm_s = t1 - t0;
                t.compute_s = t2 - t1;
            }
            comm.barrier();
            const double total = monotonic_now() - start;
            mark(cfg.hook, Phase::barrier, comm.rank());
            mark(cfg.hook, Phase::timed_end, comm.rank());

            StencilResult result;
            result.plan = plan;
            reduce_timings(comm, timings, total, result);
            std::vector<double> mine;
            append_block(mine, comm.rank(), block);
            collect(comm, plan, mine, cfg.collect_field, result);
            return result;
        }

        // Per-worker state shared by the local block chares.
        struct Shared
        {
            DecompositionPlan plan;
            const InitialCondition *initial = nullptr;
            int target = 0;
            /// Completion time of the last local chare per step, and summed
            /// compute time per step.
            std::vector<double> step_end;
            std::vector<double> compute;
        };

        class BlockChare : public actor::Chare
        {
        public:
            BlockChare(Shared &shared, std::uint32_t index) : m_shared(&shared)
            {
                const auto &plan = shared.plan;
                const int number = static_cast<int>(index);
                m_block = BlockField(plan, number / plan.p2, number % plan.p2);
                m_neighbors = neighbors(plan, m_block.bi(), m_block.bj());
            }

            void reset()
            {
                m_block.fill(*m_shared->initial, m_shared->plan.n, m_shared->plan.m);
                m_step = 0;
                m_received = 0;
                m_sent = false;
                set_epoch(0);
            }

            const BlockField &block() const { return m_block; }

            void pack(ByteWriter &out) const override
            {
                out.put_u32(static_cast<std::uint32_t>(m_step));
                out.put_u32(static_cast<std::uint32_t>(m_received));
                out.put_u8(m_sent ? 1 : 0);
                std::vector<double> all;
                for (int r = -1; r <= m_block.rows(); ++r)
                {
                    for (int c = -1; c <= m_block.cols(); ++c)
                    {
                        all.push_back(m_block.at(r, c));
                    }
                }
                out.put_vector(all);
            }

            void unpack(ByteReader &in)
            {
                m_step = static_cast<int>(in.get_u32());
                m_received = static_cast<int>(in.get_u32());
                m_sent = in.get_u8() != 0;
                const auto all = in.get_vector<double>();
                std::size_t k = 0;
                for (int r = -1; r <= m_block.rows(); ++r)
                {
                    for (int c = -1; c <= m_block.cols(); ++c)
                    {
                        m_block.at(r, c) = all.at(k++);
                    }
                }
            }

            void on_start(const actor::Envelope &)
            {
                if (m_step == m_shared->target)
                {
                    finish();
                    return;
                }
                send_halos();
                try_advance();
            }

            void on_halo(const actor::Envelope &env)
            {
                auto r = env.reader();
                const auto side = static_cast<Side>(r.get_u8());
                m_block.set_halo(side, r.get_vector<double>());
                ++m_received;
                try_advance();
            }

            void on_done(const actor::Envelope &) { runtime().exit(); }

        private:
            void send_halos()
            {
                for (const auto &nb : m_neighbors)
                {
                    ByteWriter w;
                    w.put_u8(static_cast<std::uint8_t>(opposite(nb.side)));
                    w.put_vector(m_block.edge(nb.side));
                    send(static_cast<std::uint32_t>(nb.block), kHalo, static_cast<std::uint32_t>(m_step),
                         std::move(w).take());
                }
                m_sent = true;
            }

            // Halos of the current step may arrive before this chare has sent its own.
            void try_advance()
            {
                if (m_sent && m_received == static_cast<int>(m_neighbors.size()))
                {
                    advance();
                }
            }

            // Runs steps while halos are complete; stops at the target.
            void advance()
            {
                auto &s = *m_shared;
                while (true)
                {
                    const double t0 = monotonic_now();
                    m_block.jacobi_step();
                    const double t1 = monotonic_now();
                    const auto k = static_cast<std::size_t>(m_step);
                    s.compute[k] += t1 - t0;
                    s.step_end[k] = std::max(s.step_end[k], t1);
                    ++m_step;
                    m_received = 0;
                    m_sent = false;
                    set_epoch(static_cast<std::uint32_t>(m_step));
                    if (m_step == s.target)
                    {
                        finish();
                        return;
                    }
                    send_halos();
                    if (!m_neighbors.empty())
                    {
                        return;
                    }
                }
            }

            void finish() { contribute(0.0, ReduceOp::sum, kDone, 0); }

            Shared *m_shared;
            BlockField m_block;
            std::vector<Neighbor> m_neighbors;
            int m_step = 0;
            int m_received = 0;
            bool m_sent = false;
        };

        std::vector<BlockChare *> local_blocks(actor::Runtime &rt)
        {
            std::vector<BlockChare *> out;
            for (auto *c : rt.local_chares(kBlocks))
            {
                out.push_back(static_cast<BlockChare *>(c));
            }
            return out;
        }

        // One run of `steps` sweeps from the initial field.
        void actor_sweeps(actor::Runtime &rt, Shared &shared, int steps)
        {
            shared.target = steps;
            shared.step_end.assign(static_cast<std::size_t>(steps), 0.0);
            shared.compute.assign(static_cast<std::size_t>(steps), 0.0);
            auto mine = local_blocks(rt);
            for (auto *c : mine)
            {
                c->reset();
            }
            if (steps == 0)
            {
                return;
            }
            for (auto *c : mine)
            {
                rt.send(c->id(), kStart, 0);
            }
            rt.run(actor::Termination::exit_call);
        }

        StencilResult run_actor(Endpoint &ep, const StencilConfig &cfg, const DecompositionPlan &plan)
        {
            Shared shared;
            shared.plan = plan;
            shared.initial = &cfg.initial;

            actor::ChareType<BlockChare> type("block");
            type.create([&shared](std::uint32_t i) { return std::make_unique<BlockChare>(shared, i); })
                .restore([&shared](std::uint32_t i, ByteReader &r) {
                    auto c = std::make_unique<BlockChare>(shared, i);
                    c->unpack(r);
                    return c;
                })
                .entry(kStart, &BlockChare::on_start, "start")
                .entry(kHalo, &BlockChare::on_halo, "halo")
                .entry(kDone, &BlockChare::on_done, "done");

            actor::Runtime rt(ep);
            rt.create_collection(kBlocks, actor::CollectionSpec::with_odf(static_cast<std::uint32_t>(cfg.odf),
                                                                          ep.world_size()),
                                 type.def());
            spmd::Communicator comm(ep);

            actor_sweeps(rt, shared, cfg.warmups);
            mark(cfg.hook, Phase::warmup, comm.rank(), cfg.warmups);

            comm.barrier();
            mark(cfg.hook, Phase::barrier, comm.rank());
            mark(cfg.hook, Phase::timed_begin, comm.rank());
            const double start = monotonic_now();
            actor_sweeps(rt, shared, cfg.iterations);
            comm.barrier();
            const double total = monotonic_now() - start;
            mark(cfg.hook, Phase::barrier, comm.rank());
            mark(cfg.hook, Phase::timed_end, comm.rank());

            std::vector<IterationTiming> timings(static_cast<std::size_t>(cfg.iterations));
            double prev = start;
            for (std::size_t k = 0; k < timings.size(); ++k)
            {
                const double end = std::max(shared.step_end[k], prev);
                timings[k].compute_s = shared.compute[k];
                timings[k].comm_s = std::max(0.0, end - prev - shared.compute[k]);
                prev = end;
            }

            StencilResult result;
            result.plan = plan;
            reduce_timings(comm, timings, total, result);
            std::vector<double> mine;
            for (auto *c : local_blocks(rt))
            {
                append_block(mine, static_cast<int>(c->index()), c->block());
            }
            collect(comm, plan, mine, cfg.collect_field, result);
            rt.destroy_collection(kBlocks);
            return result;
        }
    } // namespace

    void exchange_halos(spmd::Communicator &comm, const DecompositionPlan &plan, BlockField &block)
    {
        for (const auto &nb : neighbors(plan, block.bi(), block.bj()))
        {
            const bool vertical = nb.side == Side::north || nb.side == Side::south;
            swap_with(comm, block, nb.side, nb.block, vertical ? kVerticalTag : kHorizontalTag);
        }
    }

    StencilResult run_stencil(Endpoint &ep, const StencilConfig &config)
    {
        config.validate();
        const int chares = ep.world_size() * (config.runtime == RuntimeKind::actor ? config.odf : 1);
        const auto plan = config.allow_uneven ? plan_balanced(chares, config.n, config.m)
                                              : plan_decomposition(chares, config.n, config.m);
        return config.runtime == RuntimeKind::spmd ? run_spmd(ep, config, plan) : run_actor(ep, config, plan);
    }
} // namespace duorun::stencil
