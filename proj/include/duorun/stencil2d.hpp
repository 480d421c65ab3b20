#pragma once

// Jacobi 2D proxy: block decomposition, halo exchange and timed sweeps on
// either runtime.
//
// The domain is n x m interior cells (row i, column j). A fixed ring of
// boundary cells surrounds it; blocks on the domain edge read those as halo.

#include "duorun/phase.hpp"
#include "duorun/runtime_kind.hpp"
#include "duorun/spmd.hpp"

#include <functional>
#include <string>
#include <vector>

namespace duorun::stencil
{
    struct DecompositionPlan
    {
        int P = 1;
        int n = 1;
        int m = 1;
        int p1 = 1;
        int p2 = 1;
        /// True when the blocks are only balanced (extents differ by at most
        /// one) because no factor pair divides the domain evenly.
        bool uneven = false;

        int row_begin(int bi) const;
        int col_begin(int bj) const;
        int block_rows(int bi) const { return row_begin(bi + 1) - row_begin(bi); }
        int block_cols(int bj) const { return col_begin(bj + 1) - col_begin(bj); }
        /// n/p1 + m/p2 for even plans; largest block's rows + cols otherwise.
        long long half_perimeter() const;

        friend bool operator==(const DecompositionPlan &, const DecompositionPlan &) = default;
    };

    /// Among (p1, p2) with p1 * p2 = P, n % p1 == 0 and m % p2 == 0, the pair
    /// with the smallest n/p1 + m/p2 (ties: smaller p1). Throws
    /// DecompositionError when no pair qualifies.
    DecompositionPlan plan_decomposition(int P, int n, int m);

    /// plan_decomposition when it succeeds; otherwise near-equal blocks, choosing
    /// the pair with the smallest largest-block half-perimeter.
    DecompositionPlan plan_balanced(int P, int n, int m);

    /// Values for the interior at iteration 0 and for the fixed boundary ring.
    /// Coordinates are global; the ring is row -1, row n, column -1, column m.
    struct InitialCondition
    {
        std::function<double(int, int)> interior;
        std::function<double(int, int)> boundary;
        /// Recorded in experiment metadata; empty for ad hoc conditions.
        std::string name;

        /// Interior zero; boundary 1 on the north edge (row -1), 0 elsewhere.
        static InitialCondition hot_north();
    };

    enum class Side
    {
        north,
        south,
        west,
        east
    };

    class BlockField
    {
    public:
        BlockField() = default;
        BlockField(const DecompositionPlan &plan, int bi, int bj);

        int bi() const noexcept { return m_bi; }
        int bj() const noexcept { return m_bj; }
        int rows() const noexcept { return m_rows; }
        int cols() const noexcept { return m_cols; }
        int row0() const noexcept { return m_row0; }
        int col0() const noexcept { return m_col0; }

        /// Local coordinates; -1 and rows()/cols() address the halo.
        double &at(int r, int c) { return m_data[index(r, c)]; }
        double at(int r, int c) const { return m_data[index(r, c)]; }

        /// Sets the interior and every halo cell from `ic`; halo cells facing
        /// another block are overwritten by the next exchange.
        void fill(const InitialCondition &ic, int n, int m);

        /// Interior cells next to `side` (the row or column a neighbor needs).
        std::vector<double> edge(Side side) const;
        /// Writes the halo on `side`.
        void set_halo(Side side, const std::vector<double> &values);

        std::vector<double> interior() const;
        void set_interior(const std::vector<double> &values);

        /// Replaces the interior with the 4-neighbor average; halos unchanged.
        void jacobi_step();

    private:
        std::size_t index(int r, int c) const
        {
            return static_cast<std::size_t>(r + 1) * static_cast<std::size_t>(m_cols + 2) +
                   static_cast<std::size_t>(c + 1);
        }

        int m_bi = 0;
        int m_bj = 0;
        int m_rows = 0;
        int m_cols = 0;
        int m_row0 = 0;
        int m_col0 = 0;
        std::vector<double> m_data;
        std::vector<double> m_next;
    };

    /// new[i][j] = (old[i-1][j] + old[i+1][j] + old[i][j-1] + old[i][j+1]) / 4.
    inline void jacobi_step(BlockField &block) { block.jacobi_step(); }

    struct Neighbor
    {
        Side side;
        int block;
    };

    /// Existing neighbors of block (bi, bj) in N, S, W, E order. Blocks are
    /// numbered row-major: bi * p2 + bj.
    std::vector<Neighbor> neighbors(const DecompositionPlan &plan, int bi, int bj);

    Side opposite(Side side) noexcept;

    /// SPMD halo exchange of a rank's block (rank = block number): sendrecv
    /// with the north and south neighbors, then west and east.
    void exchange_halos(spmd::Communicator &comm, const DecompositionPlan &plan, BlockField &block);

    struct StencilConfig
    {
        int n = 64;
        int m = 64;
        int iterations = 10;
        int warmups = 10;
        RuntimeKind runtime = RuntimeKind::spmd;
        /// Chares per worker in actor mode.
        int odf = 1;
        InitialCondition initial = InitialCondition::hot_north();
        /// Keep the assembled final field on rank 0.
        bool collect_field = false;
        /// Use near-equal blocks when no even decomposition exists.
        bool allow_uneven = true;
        PhaseHook hook;

        void validate() const;
    };

    struct IterationTiming
    {
        double compute_s = 0.0;
        double comm_s = 0.0;
    };

    struct StencilResult
    {
        DecompositionPlan plan;
        /// Per timed iteration, the maximum over workers.
        std::vector<IterationTiming> iterations;
        /// Timed region, barrier to barrier.
        double total_s = 0.0;
        /// Sum of all interior cells in global row-major order.
        double checksum = 0.0;
        /// Row-major n x m field on rank 0 when collect_field is set.
        std::vector<double> field;
    };

    /// Collective. Runs `warmups` sweeps, restores the initial field, then
    /// times `iterations` sweeps between barriers. Every rank gets the same
    /// checksum and timings.
    StencilResult run_stencil(Endpoint &ep, const StencilConfig &config);

    /// Row-major sum with a single accumulator.
    double checksum(const std::vector<double> &field);

    struct WeakScalingPoint
    {
        int workers = 1;
        int n = 1;
        int m = 1;
    };

    /// Doubles the worker count up to max_workers; each doubling doubles the
    /// domain in x (columns) and the next in y (rows), alternating.
    std::vector<WeakScalingPoint> weak_scaling_schedule(int n0, int m0, int max_workers);
} // namespace duorun::stencil
