#include "duorun/pic.hpp"

#include <cmath>

namespace duorun::pic
{
    namespace
    {
        constexpr Tag kParticleTag = 0x5043;

        // Index of the near-equal part of [0, n) split p ways that holds v.
        int part_of(int v, int n, int p)
        {
            return static_cast<int>((static_cast<long long>(v + 1) * p - 1) / n);
        }

        int part_begin(int b, int n, int p)
        {
            return static_cast<int>(static_cast<long long>(b) * n / p);
        }
    } // namespace

    Ownership::Ownership(int L, int workers, int odf)
        : m_L(L), m_workers(workers), m_odf(odf), m_outer(stencil::plan_balanced(workers, L, L))
    {
        if (odf < 1)
        {
            throw ConfigError("odf must be at least 1");
        }
        // Every worker block uses the same inner split, sized for the smallest block.
        const int min_rows = L / m_outer.p1;
        const int min_cols = L / m_outer.p2;
        const auto inner = stencil::plan_balanced(odf, min_rows, min_cols);
        m_o1 = inner.p1;
        m_o2 = inner.p2;
    }

    int Ownership::worker_of_cell(int ci, int cj) const
    {
        const int bi = part_of(cj, m_L, m_outer.p1);
        const int bj = part_of(ci, m_L, m_outer.p2);
        return bi * m_outer.p2 + bj;
    }

    int Ownership::block_of_cell(int ci, int cj) const
    {
        const int bi = part_of(cj, m_L, m_outer.p1);
        const int bj = part_of(ci, m_L, m_outer.p2);
        const int r0 = part_begin(bi, m_L, m_outer.p1);
        const int c0 = part_begin(bj, m_L, m_outer.p2);
        const int rows = part_begin(bi + 1, m_L, m_outer.p1) - r0;
        const int cols = part_begin(bj + 1, m_L, m_outer.p2) - c0;
        const int si = part_of(cj - r0, rows, m_o1);
        const int sj = part_of(ci - c0, cols, m_o2);
        return (bi * m_outer.p2 + bj) * m_odf + si * m_o2 + sj;
    }

    int Ownership::block_of(const PicMeshConfig &cfg, double x, double y) const
    {
        const auto [ci, cj] = cell_of(cfg, x, y);
        return block_of_cell(ci, cj);
    }

    ParticleSet exchange_particles(spmd::Communicator &comm, const Ownership &owner, const PicMeshConfig &cfg,
                                   ParticleSet particles, ExchangeStats *stats)
    {
        const int W = comm.size();
        const int me = comm.rank();
        if (owner.workers() != W)
        {
            throw ConfigError("ownership is for " + std::to_string(owner.workers()) + " workers, world has " +
                              std::to_string(W));
        }
        std::vector<ParticleSet> out(static_cast<std::size_t>(W));
        for (std::size_t k = 0; k < particles.size(); ++k)
        {
            if (!std::isfinite(particles.x[k]) || !std::isfinite(particles.y[k]))
            {
                throw Error("particle " + std::to_string(particles.id[k]) + " has a non-finite position");
            }
            const auto [ci, cj] = cell_of(cfg, particles.x[k], particles.y[k]);
            out[static_cast<std::size_t>(owner.worker_of_cell(ci, cj))].push(particles.at(k));
        }

        // Row `src` of the matrix holds how many particles src sends to each rank.
        std::vector<double> matrix(static_cast<std::size_t>(W) * static_cast<std::size_t>(W), 0.0);
        for (int d = 0; d < W; ++d)
        {
            matrix[static_cast<std::size_t>(me * W + d)] = static_cast<double>(out[static_cast<std::size_t>(d)].size());
        }
        if (W > 1)
        {
            matrix = comm.allreduce(matrix, ReduceOp::sum);
        }

        ExchangeStats local;
        for (int d = 0; d < W; ++d)
        {
            const auto &batch = out[static_cast<std::size_t>(d)];
            if (d == me || batch.empty())
            {
                continue;
            }
            ByteWriter w;
            batch.pack(w);
            comm.send(d, kParticleTag, spmd::TypedBuffer::of_bytes(std::move(w).take()));
            ++local.messages;
            local.particles_sent += batch.size();
        }

        ParticleSet result = std::move(out[static_cast<std::size_t>(me)]);
        for (int s = 0; s < W; ++s)
        {
            if (s == me || matrix[static_cast<std::size_t>(s * W + me)] == 0.0)
            {
                continue;
            }
            auto got = comm.recv_expect(spmd::ElementKind::raw_bytes, s, kParticleTag);
            ByteReader r(got.buffer.bytes());
            result.append(ParticleSet::unpack(r));
        }
        result.sort_by_id();
        if (stats != nullptr)
        {
            stats->messages += local.messages;
            stats->particles_sent += local.particles_sent;
        }
        return result;
    }
} // namespace duorun::pic
