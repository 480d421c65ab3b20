#include "duorun/harness.hpp"

#include "duorun/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace duorun::harness
{
    namespace
    {
        double quantile(const std::vector<double> &sorted, double p)
        {
            const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
            const auto i = static_cast<std::size_t>(std::floor(h));
            if (i + 1 >= sorted.size())
            {
                return sorted.back();
            }
            return sorted[i] + (h - static_cast<double>(i)) * (sorted[i + 1] - sorted[i]);
        }

        // Mid-ranks (1-based) of a ++ b, plus the tie term sum(t^3 - t).
        std::vector<double> mid_ranks(const std::vector<double> &a, const std::vector<double> &b, double &tie_term)
        {
            const std::size_t n = a.size() + b.size();
            std::vector<double> all(a);
            all.insert(all.end(), b.begin(), b.end());
            std::vector<std::size_t> order(n);
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return all[x] < all[y]; });
            std::vector<double> rank(n);
            tie_term = 0.0;
            for (std::size_t i = 0; i < n;)
            {
                std::size_t j = i + 1;
                while (j < n && all[order[j]] == all[order[i]])
                {
                    ++j;
                }
                const double r = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
                for (std::size_t k = i; k < j; ++k)
                {
                    rank[order[k]] = r;
                }
                const double t = static_cast<double>(j - i);
                tie_term += t * t * t - t;
                i = j;
            }
            return rank;
        }

        double exact_p(std::size_t n1, std::size_t n2, double u)
        {
            const std::size_t n = n1 + n2;
            const double prod = static_cast<double>(n1 * n2);
            const double observed = std::abs(2.0 * u - prod);
            const double offset = static_cast<double>(n1 * (n1 + 1) / 2);
            std::uint64_t extreme = 0;
            std::uint64_t total = 0;
            for (std::uint32_t mask = 0; mask < (1u << n); ++mask)
            {
                if (static_cast<std::size_t>(__builtin_popcount(mask)) != n1)
                {
                    continue;
                }
                double ranks = 0.0;
                for (std::size_t r = 0; r < n; ++r)
                {
                    if ((mask >> r) & 1u)
                    {
                        ranks += static_cast<double>(r + 1);
                    }
                }
                ++total;
                if (std::abs(2.0 * (ranks - offset) - prod) >= observed)
                {
                    ++extreme;
                }
            }
            return static_cast<double>(extreme) / static_cast<double>(total);
        }
    } // namespace

    StatsSummary bootstrap_ci(const std::vector<double> &samples, double level, int resamples, std::uint64_t seed)
    {
        if (samples.empty())
        {
            throw UsageError("bootstrap needs at least one sample");
        }
        if (!(level > 0.0 && level < 1.0) || resamples < 1)
        {
            throw UsageError("bootstrap needs 0 < level < 1 and at least one resample");
        }
        const std::size_t n = samples.size();
        StatsSummary s;
        s.level = level;
        s.n_samples = n;
        s.resamples = resamples;
        s.mean = std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(n);

        std::mt19937_64 rng(seed);
        std::vector<double> means(static_cast<std::size_t>(resamples));
        for (auto &m : means)
        {
            double sum = 0.0;
            for (std::size_t k = 0; k < n; ++k)
            {
                sum += samples[bounded(rng, n)];
            }
            m = sum / static_cast<double>(n);
        }
        std::sort(means.begin(), means.end());
        const double alpha = 1.0 - level;
        s.ci_low = quantile(means, alpha / 2.0);
        s.ci_high = quantile(means, 1.0 - alpha / 2.0);
        return s;
    }

    const char *to_string(UMethod method) noexcept
    {
        return method == UMethod::exact ? "exact" : "normal_approx";
    }

    UTestResult mann_whitney_u(const std::vector<double> &a, const std::vector<double> &b)
    {
        if (a.empty() || b.empty())
        {
            throw UsageError("Mann-Whitney U needs two non-empty samples");
        }
        const std::size_t n1 = a.size();
        const std::size_t n2 = b.size();
        double tie_term = 0.0;
        const auto rank = mid_ranks(a, b, tie_term);
        const double r1 = std::accumulate(rank.begin(), rank.begin() + static_cast<std::ptrdiff_t>(n1), 0.0);

        UTestResult out;
        out.u_statistic = r1 - static_cast<double>(n1 * (n1 + 1)) / 2.0;
        if (n1 + n2 <= kExactLimit && tie_term == 0.0)
        {
            out.method = UMethod::exact;
            out.p_two_sided = exact_p(n1, n2, out.u_statistic);
            return out;
        }

        out.method = UMethod::normal_approx;
        const double N = static_cast<double>(n1 + n2);
        const double prod = static_cast<double>(n1) * static_cast<double>(n2);
        const double var = prod / 12.0 * ((N + 1.0) - tie_term / (N * (N - 1.0)));
        if (!(var > 0.0))
        {
            out.p_two_sided = 1.0;
            return out;
        }
        const double z = std::max(0.0, std::abs(out.u_statistic - prod / 2.0) - 0.5) / std::sqrt(var);
        // erfc underflows to 0 for z beyond ~38; p stays positive.
        out.p_two_sided = std::clamp(std::erfc(z / std::sqrt(2.0)), std::numeric_limits<double>::min(), 1.0);
        return out;
    }

    std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t stream) noexcept
    {
        std::uint64_t z = seed + (stream + 1) * 0x9E3779B97F4A7C15ull;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    std::uint64_t bounded(std::mt19937_64 &rng, std::uint64_t n)
    {
        if (n == 0)
        {
            throw UsageError("bounded draw needs n > 0");
        }
        return static_cast<std::uint64_t>((static_cast<unsigned __int128>(rng()) * n) >> 64);
    }

    std::vector<int> trial_order(int trials, std::uint64_t seed)
    {
        if (trials < 1)
        {
            throw ConfigError("a group needs at least one trial");
        }
        std::vector<int> order(static_cast<std::size_t>(trials));
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 rng(seed);
        for (std::size_t i = order.size() - 1; i > 0; --i)
        {
            std::swap(order[i], order[bounded(rng, i + 1)]);
        }
        return order;
    }
} // namespace duorun::harness
