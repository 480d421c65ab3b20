#pragma once

// Brute-force references for the rank test and the trial shuffle.

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace duorun::oracle
{
    /// U for `a` by direct pair counting.
    inline double pair_u(const std::vector<double> &a, const std::vector<double> &b)
    {
        double u = 0.0;
        for (double x : a)
        {
            for (double y : b)
            {
                u += x > y ? 1.0 : (x == y ? 0.5 : 0.0);
            }
        }
        return u;
    }

    /// Exact two-sided p: every way of choosing |a| of the pooled values as
    /// group A, counting those whose U is at least as far from its mean.
    inline double enumerated_p(const std::vector<double> &a, const std::vector<double> &b)
    {
        std::vector<double> pool(a);
        pool.insert(pool.end(), b.begin(), b.end());
        const std::size_t n1 = a.size();
        const double mean = static_cast<double>(a.size() * b.size()) / 2.0;
        const double observed = pair_u(a, b) - mean;
        const double dist = observed < 0 ? -observed : observed;

        std::uint64_t extreme = 0;
        std::uint64_t total = 0;
        std::vector<std::size_t> pick;
        auto recurse = [&](auto &self, std::size_t next) -> void {
            if (pick.size() == n1)
            {
                std::vector<double> ga;
                std::vector<double> gb;
                std::size_t k = 0;
                for (std::size_t i = 0; i < pool.size(); ++i)
                {
                    if (k < pick.size() && pick[k] == i)
                    {
                        ga.push_back(pool[i]);
                        ++k;
                    }
                    else
                    {
                        gb.push_back(pool[i]);
                    }
                }
                const double d = pair_u(ga, gb) - mean;
                ++total;
                if ((d < 0 ? -d : d) >= dist)
                {
                    ++extreme;
                }
                return;
            }
            for (std::size_t i = next; i < pool.size(); ++i)
            {
                pick.push_back(i);
                self(self, i + 1);
                pick.pop_back();
            }
        };
        recurse(recurse, 0);
        return static_cast<double>(extreme) / static_cast<double>(total);
    }

    /// Textbook Fisher-Yates, drawing j uniformly from [0, i] with the high
    /// word of a 128-bit product.
    inline std::vector<int> shuffled(int n, std::uint64_t seed)
    {
        std::vector<int> v;
        for (int i = 0; i < n; ++i)
        {
            v.push_back(i);
        }
        std::mt19937_64 rng(seed);
        for (int i = n - 1; i >= 1; --i)
        {
            const auto r = static_cast<unsigned __int128>(rng()) * static_cast<unsigned>(i + 1);
            std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(r >> 64)]);
        }
        return v;
    }
} // namespace duorun::oracle
