#pragma once

// Independent references for the particle kernel: apportionment, force law
// and a scalar trace of the integrator.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace duorun::oracle
{
    // Largest remainder written with an explicit selection loop.
    inline std::vector<std::uint64_t> apportion(int L, double r, std::uint64_t total)
    {
        std::vector<double> w;
        double sum = 0.0;
        for (int i = 0; i < L; ++i)
        {
            w.push_back(std::pow(r, i));
            sum += w.back();
        }
        std::vector<std::uint64_t> c(static_cast<std::size_t>(L));
        std::vector<double> rem(static_cast<std::size_t>(L));
        std::uint64_t given = 0;
        for (int i = 0; i < L; ++i)
        {
            const double s = static_cast<double>(total) * w[static_cast<std::size_t>(i)] / sum;
            c[static_cast<std::size_t>(i)] = static_cast<std::uint64_t>(s);
            rem[static_cast<std::size_t>(i)] = s - std::floor(s);
            given += c[static_cast<std::size_t>(i)];
        }
        std::vector<bool> used(static_cast<std::size_t>(L), false);
        while (given < total)
        {
            int best = -1;
            for (int i = 0; i < L; ++i)
            {
                if (!used[static_cast<std::size_t>(i)] &&
                    (best < 0 || rem[static_cast<std::size_t>(i)] > rem[static_cast<std::size_t>(best)]))
                {
                    best = i;
                }
            }
            used[static_cast<std::size_t>(best)] = true;
            ++c[static_cast<std::size_t>(best)];
            ++given;
        }
        return c;
    }

    struct Vec2
    {
        double x = 0.0;
        double y = 0.0;
    };

    // Direct evaluation: each corner's displacement is reduced to the nearest
    // periodic image by rounding, and the kernel uses pow(., 1.5).
    inline Vec2 corner_force(int L, double h, double q, double eps, double px, double py)
    {
        const double E = L * h;
        const int ci = std::min(static_cast<int>(px / h), L - 1);
        const int cj = std::min(static_cast<int>(py / h), L - 1);
        Vec2 a;
        for (int di = 0; di <= 1; ++di)
        {
            for (int dj = 0; dj <= 1; ++dj)
            {
                const int col = (ci + di) % L;
                const double charge = (col % 2 == 1) ? q : -q;
                double dx = px - (ci + di) * h;
                double dy = py - (cj + dj) * h;
                dx -= E * std::round(dx / E);
                dy -= E * std::round(dy / E);
                const double d = std::pow(dx * dx + dy * dy + eps * eps, 1.5);
                a.x += charge * dx / d;
                a.y += charge * dy / d;
            }
        }
        return a;
    }

    struct Scalar
    {
        double x, y, vx, vy;
    };

    inline double periodic(double v, double E)
    {
        while (v < 0.0)
        {
            v += E;
        }
        while (v >= E)
        {
            v -= E;
        }
        return v;
    }

    inline Scalar euler_step(Scalar s, Vec2 a, double dt, double E)
    {
        s.vx = s.vx + a.x * dt;
        s.vy = s.vy + a.y * dt;
        s.x = periodic(s.x + s.vx * dt, E);
        s.y = periodic(s.y + s.vy * dt, E);
        return s;
    }
} // namespace duorun::oracle
