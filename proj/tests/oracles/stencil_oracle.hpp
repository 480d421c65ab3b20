#pragma once

// Serial references for the stencil tests, written against the kernel
// definition only (no library code).

#include <cstdint>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

namespace duorun::oracle
{
    using CellFn = std::function<double(int, int)>;

    // Full (n+2) x (m+2) grid including the fixed ring; returns the n x m
    // interior row-major after `iterations` sweeps.
    inline std::vector<double> serial_jacobi(int n, int m, int iterations, const CellFn &interior,
                                             const CellFn &boundary)
    {
        const int W = m + 2;
        std::vector<double> a(static_cast<std::size_t>((n + 2) * W));
        for (int i = -1; i <= n; ++i)
        {
            for (int j = -1; j <= m; ++j)
            {
                const bool inside = i >= 0 && i < n && j >= 0 && j < m;
                a[static_cast<std::size_t>((i + 1) * W + j + 1)] = inside ? interior(i, j) : boundary(i, j);
            }
        }
        auto b = a;
        for (int t = 0; t < iterations; ++t)
        {
            for (int i = 1; i <= n; ++i)
            {
                for (int j = 1; j <= m; ++j)
                {
                    const double north = a[static_cast<std::size_t>((i - 1) * W + j)];
                    const double south = a[static_cast<std::size_t>((i + 1) * W + j)];
                    const double west = a[static_cast<std::size_t>(i * W + j - 1)];
                    const double east = a[static_cast<std::size_t>(i * W + j + 1)];
                    b[static_cast<std::size_t>(i * W + j)] = (north + south + west + east) / 4;
                }
            }
            std::swap(a, b);
        }
        std::vector<double> out;
        for (int i = 1; i <= n; ++i)
        {
            for (int j = 1; j <= m; ++j)
            {
                out.push_back(a[static_cast<std::size_t>(i * W + j)]);
            }
        }
        return out;
    }

    struct Pair
    {
        int p1 = 0;
        int p2 = 0;
        long long half_perimeter = std::numeric_limits<long long>::max();
    };

    // Exhaustive search over every p1 in [1, P]: divisibility filter, minimal
    // n/p1 + m/p2, first (smallest p1) wins ties.
    inline Pair best_even_pair(int P, int n, int m)
    {
        Pair best;
        for (int p1 = 1; p1 <= P; ++p1)
        {
            for (int p2 = 1; p2 <= P; ++p2)
            {
                if (p1 * p2 != P || n % p1 != 0 || m % p2 != 0)
                {
                    continue;
                }
                const long long hp = n / p1 + m / p2;
                if (hp < best.half_perimeter)
                {
                    best = {p1, p2, hp};
                }
            }
        }
        return best;
    }

    // Deterministic pseudo-random cell value in [-1, 1).
    inline double hashed_cell(std::uint64_t seed, int i, int j)
    {
        std::uint64_t z = seed ^ (static_cast<std::uint64_t>(static_cast<std::uint32_t>(i)) << 32) ^
                          static_cast<std::uint32_t>(j);
        z += 0x9E3779B97F4A7C15ull;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        z ^= z >> 31;
        return static_cast<double>(z >> 11) * 0x1.0p-52 - 1.0;
    }
} // namespace duorun::oracle
