#include "duorun/stencil2d.hpp"

#include <limits>

namespace duorun::stencil
{
    namespace
    {
        void check_extents(int P, int n, int m)
        {
            if (P < 1 || n < 1 || m < 1)
            {
                throw DecompositionError("decomposition needs P, n and m >= 1 (got P=" + std::to_string(P) +
                                         ", n=" + std::to_string(n) + ", m=" + std::to_string(m) + ")");
            }
        }

        long long ceil_div(long long a, long long b) { return (a + b - 1) / b; }
    } // namespace

    int DecompositionPlan::row_begin(int bi) const
    {
        return static_cast<int>(static_cast<long long>(bi) * n / p1);
    }

    int DecompositionPlan::col_begin(int bj) const
    {
        return static_cast<int>(static_cast<long long>(bj) * m / p2);
    }

    long long DecompositionPlan::half_perimeter() const
    {
        return ceil_div(n, p1) + ceil_div(m, p2);
    }

    DecompositionPlan plan_decomposition(int P, int n, int m)
    {
        check_extents(P, n, m);
        DecompositionPlan best;
        long long best_hp = std::numeric_limits<long long>::max();
        for (int p1 = 1; p1 <= P; ++p1)
        {
            if (P % p1 != 0)
            {
                continue;
            }
            const int p2 = P / p1;
            if (n % p1 != 0 || m % p2 != 0)
            {
                continue;
            }
            const long long hp = n / p1 + m / p2;
            if (hp < best_hp)
            {
                best_hp = hp;
                best = {P, n, m, p1, p2, false};
            }
        }
        if (best_hp == std::numeric_limits<long long>::max())
        {
            throw DecompositionError("no p1 x p2 = " + std::to_string(P) + " grid divides a " + std::to_string(n) +
                                     " x " + std::to_string(m) + " domain evenly");
        }
        return best;
    }

    DecompositionPlan plan_balanced(int P, int n, int m)
    {
        check_extents(P, n, m);
        try
        {
            return plan_decomposition(P, n, m);
        }
        catch (const DecompositionError &)
        {
        }
        DecompositionPlan best;
        long long best_hp = std::numeric_limits<long long>::max();
        for (int p1 = 1; p1 <= P; ++p1)
        {
            if (P % p1 != 0)
            {
                continue;
            }
            const int p2 = P / p1;
            if (p1 > n || p2 > m)
            {
                continue;
            }
            const long long hp = ceil_div(n, p1) + ceil_div(m, p2);
            if (hp < best_hp)
            {
                best_hp = hp;
                best = {P, n, m, p1, p2, true};
            }
        }
        if (best_hp == std::numeric_limits<long long>::max())
        {
            throw DecompositionError("a " + std::to_string(n) + " x " + std::to_string(m) +
                                     " domain cannot be split into " + std::to_string(P) + " non-empty blocks");
        }
        return best;
    }

    std::vector<WeakScalingPoint> weak_scaling_schedule(int n0, int m0, int max_workers)
    {
        if (n0 < 1 || m0 < 1 || max_workers < 1)
        {
            throw ConfigError("weak scaling needs positive extents and worker count");
        }
        std::vector<WeakScalingPoint> out;
        WeakScalingPoint p{1, n0, m0};
        bool grow_x = true;
        while (p.workers <= max_workers)
        {
            out.push_back(p);
            p.workers *= 2;
            (grow_x ? p.m : p.n) *= 2;
            grow_x = !grow_x;
        }
        return out;
    }
} // namespace duorun::stencil
