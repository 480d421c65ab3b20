#pragma once

// Particle-in-cell proxy: a static L x L charge mesh with alternating column
// signs, a column-skewed particle distribution, a softened corner force law
// and symplectic-Euler pushes, with particles redistributed by the owner of
// their containing cell after every step.

#include "duorun/phase.hpp"
#include "duorun/runtime_kind.hpp"
#include "duorun/spmd.hpp"
#include "duorun/stencil2d.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace duorun::pic
{
    struct PicMeshConfig
    {
        int L = 256;
        double h = 1.0;
        double dt = 0.05;
        double eps = 1e-6;
        double q = 1.0;

        /// dt = 0.05 h, eps = 1e-6 h.
        static PicMeshConfig with_defaults(int L, double h = 1.0, double q = 1.0);
        void validate() const;
        double extent() const noexcept { return L * h; }
    };

    class ChargeMesh
    {
    public:
        explicit ChargeMesh(const PicMeshConfig &cfg) : m_L(cfg.L), m_q(cfg.q) {}

        int size() const noexcept { return m_L; }
        /// +q on odd columns, -q on even ones; i and j wrap periodically.
        double charge(int i, int j) const noexcept;

    private:
        int m_L;
        double m_q;
    };

    ChargeMesh init_mesh_charges(const PicMeshConfig &cfg);

    struct DistributionSpec
    {
        /// Column weight ratio: column i gets weight r^i.
        double r = 0.999;
        /// Carried through to metadata; only 0 is supported.
        int k = 0;
        std::uint64_t total = 0;
        std::uint64_t seed = 0;

        void validate() const;
    };

    struct Particle
    {
        std::uint64_t id = 0;
        double x = 0.0;
        double y = 0.0;
        double vx = 0.0;
        double vy = 0.0;

        friend bool operator==(const Particle &, const Particle &) = default;
    };

    /// Structure of arrays; all sequences have equal length.
    struct ParticleSet
    {
        std::vector<std::uint64_t> id;
        std::vector<double> x;
        std::vector<double> y;
        std::vector<double> vx;
        std::vector<double> vy;

        std::size_t size() const noexcept { return id.size(); }
        bool empty() const noexcept { return id.empty(); }
        void push(const Particle &p);
        Particle at(std::size_t k) const { return {id[k], x[k], y[k], vx[k], vy[k]}; }
        void append(const ParticleSet &other);
        void clear();
        void sort_by_id();

        void pack(ByteWriter &out) const;
        static ParticleSet unpack(ByteReader &in);
    };

    /// Largest-remainder apportionment of `total` over weights r^i, i < L
    /// (ties go to the lower column).
    std::vector<std::uint64_t> column_counts(int L, double r, std::uint64_t total);

    /// Every particle of the distribution; ids follow generation order
    /// (column by column). Positions come from a counter-based generator keyed
    /// by (seed, id), so any subset can be regenerated independently.
    ParticleSet distribute_particles(const PicMeshConfig &cfg, const DistributionSpec &dist);

    /// Uniform doubles in [0, 1) for particle `id`, stream 0 and 1.
    std::pair<double, double> particle_uniforms(std::uint64_t seed, std::uint64_t id);

    struct Accel
    {
        double ax = 0.0;
        double ay = 0.0;
    };

    /// Sum over the 4 corners of the containing cell of
    /// q_c (p - x_c) / (|p - x_c|^2 + eps^2)^(3/2), displacements taken under
    /// the minimum-image convention.
    Accel field_at(const ChargeMesh &mesh, const PicMeshConfig &cfg, double x, double y);

    /// v += a dt, then x += v dt, wrapped into [0, L h).
    void advance_particle(Particle &p, const Accel &a, const PicMeshConfig &cfg);

    double wrap(double v, double extent) noexcept;

    /// Containing cell (column, row) under the half-open convention.
    std::pair<int, int> cell_of(const PicMeshConfig &cfg, double x, double y);

    /// Spatial owner of each cell: a worker block grid, optionally split into
    /// `odf` chare blocks nested inside each worker block. Chare numbers are
    /// worker-major (worker * odf + local), so block placement of the chares
    /// reproduces the worker ownership.
    class Ownership
    {
    public:
        Ownership(int L, int workers, int odf = 1);

        int workers() const noexcept { return m_workers; }
        int odf() const noexcept { return m_odf; }
        int blocks() const noexcept { return m_workers * m_odf; }
        const stencil::DecompositionPlan &worker_plan() const noexcept { return m_outer; }

        int worker_of_cell(int ci, int cj) const;
        /// Chare number of a cell.
        int block_of_cell(int ci, int cj) const;
        int block_of(const PicMeshConfig &cfg, double x, double y) const;

    private:
        int m_L;
        int m_workers;
        int m_odf;
        stencil::DecompositionPlan m_outer;
        int m_o1 = 1;
        int m_o2 = 1;
    };

    /// Pushes every particle one step (field_at then advance_particle).
    void push_particles(ParticleSet &particles, const ChargeMesh &mesh, const PicMeshConfig &cfg);

    struct ExchangeStats
    {
        /// Particle batches this rank sent to other ranks.
        std::uint64_t messages = 0;
        std::uint64_t particles_sent = 0;
    };

    /// Collective. Moves every particle to the worker owning its cell; the
    /// result is sorted by id. Only non-empty batches travel. Throws Error
    /// naming the particle when a position is not finite.
    ParticleSet exchange_particles(spmd::Communicator &comm, const Ownership &owner, const PicMeshConfig &cfg,
                                   ParticleSet particles, ExchangeStats *stats = nullptr);

    struct PicConfig
    {
        PicMeshConfig mesh = PicMeshConfig::with_defaults(256);
        DistributionSpec dist{0.98, 0, 100'000, 1};
        int iterations = 200;
        int warmups = 10;
        RuntimeKind runtime = RuntimeKind::spmd;
        int odf = 1;
        /// Rebalance every lb_period iterations in actor mode; 0 disables.
        int lb_period = 0;
        /// Keep the final particle state (sorted by id) on rank 0.
        bool collect_particles = false;
        PhaseHook hook;

        void validate() const;
    };

    struct PicResult
    {
        /// Per timed iteration, the latest finish over workers minus the
        /// previous iteration's latest finish.
        std::vector<double> iteration_s;
        /// Per timed iteration, max over workers of busy CPU time divided by
        /// the mean.
        std::vector<double> imbalance;
        /// Rebalance time summed over the run (max over workers).
        double lb_s = 0.0;
        int rebalances = 0;
        /// Timed region, barrier to barrier.
        double total_s = 0.0;
        std::uint64_t particles = 0;
        /// Sum of x + 2y over particles in id order, single accumulator.
        double checksum = 0.0;
        std::vector<Particle> final_state;
    };

    /// Checksum of a particle list already sorted by id.
    double checksum(const std::vector<Particle> &sorted);

    /// Collective. Runs `warmups` steps without rebalancing, regenerates the
    /// initial distribution, then times `iterations` steps between barriers.
    PicResult run_pic(Endpoint &ep, const PicConfig &config);
} // namespace duorun::pic
