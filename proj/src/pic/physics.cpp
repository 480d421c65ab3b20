#include "duorun/pic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace duorun::pic
{
    PicMeshConfig PicMeshConfig::with_defaults(int L, double h, double q)
    {
        PicMeshConfig cfg;
        cfg.L = L;
        cfg.h = h;
        cfg.dt = 0.05 * h;
        cfg.eps = 1e-6 * h;
        cfg.q = q;
        return cfg;
    }

    void PicMeshConfig::validate() const
    {
        if (L < 2)
        {
            throw ConfigError("mesh needs L >= 2");
        }
        if (!(h > 0.0) || !(dt > 0.0) || !(eps > 0.0) || !std::isfinite(q))
        {
            throw ConfigError("mesh needs h, dt, eps > 0 and a finite q");
        }
    }

    double ChargeMesh::charge(int i, int) const noexcept
    {
        const int col = ((i % m_L) + m_L) % m_L;
        return col % 2 == 1 ? m_q : -m_q;
    }

    ChargeMesh init_mesh_charges(const PicMeshConfig &cfg)
    {
        cfg.validate();
        return ChargeMesh(cfg);
    }

    void DistributionSpec::validate() const
    {
        if (!(r > 0.0) || r > 1.0)
        {
            throw ConfigError("distribution ratio r must be in (0, 1]");
        }
        if (k != 0)
        {
            throw ConfigError("only k = 0 is supported");
        }
    }

    void ParticleSet::push(const Particle &p)
    {
        id.push_back(p.id);
        x.push_back(p.x);
        y.push_back(p.y);
        vx.push_back(p.vx);
        vy.push_back(p.vy);
    }

    void ParticleSet::append(const ParticleSet &other)
    {
        id.insert(id.end(), other.id.begin(), other.id.end());
        x.insert(x.end(), other.x.begin(), other.x.end());
        y.insert(y.end(), other.y.begin(), other.y.end());
        vx.insert(vx.end(), other.vx.begin(), other.vx.end());
        vy.insert(vy.end(), other.vy.begin(), other.vy.end());
    }

    void ParticleSet::clear()
    {
        id.clear();
        x.clear();
        y.clear();
        vx.clear();
        vy.clear();
    }

    void ParticleSet::sort_by_id()
    {
        if (std::is_sorted(id.begin(), id.end()))
        {
            return;
        }
        std::vector<std::size_t> order(size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return id[a] < id[b]; });
        ParticleSet sorted;
        sorted.id.reserve(size());
        sorted.x.reserve(size());
        sorted.y.reserve(size());
        sorted.vx.reserve(size());
        sorted.vy.reserve(size());
        for (auto k : order)
        {
            sorted.push(at(k));
        }
        *this = std::move(sorted);
    }

    void ParticleSet::pack(ByteWriter &out) const
    {
        out.put_vector(id);
        out.put_vector(x);
        out.put_vector(y);
        out.put_vector(vx);
        out.put_vector(vy);
    }

    ParticleSet ParticleSet::unpack(ByteReader &in)
    {
        ParticleSet s;
        s.id = in.get_vector<std::uint64_t>();
        s.x = in.get_vector<double>();
        s.y = in.get_vector<double>();
        s.vx = in.get_vector<double>();
        s.vy = in.get_vector<double>();
        const auto n = s.id.size();
        if (s.x.size() != n || s.y.size() != n || s.vx.size() != n || s.vy.size() != n)
        {
            throw ProtocolError("particle batch with unequal array lengths");
        }
        return s;
    }

    std::vector<std::uint64_t> column_counts(int L, double r, std::uint64_t total)
    {
        if (L < 1)
        {
            throw ConfigError("column count needs L >= 1");
        }
        const auto n = static_cast<std::size_t>(L);
        std::vector<double> weight(n);
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i)
        {
            weight[i] = std::pow(r, static_cast<double>(i));
            sum += weight[i];
        }
        std::vector<std::uint64_t> counts(n);
        std::vector<double> frac(n);
        std::uint64_t assigned = 0;
        const double N = static_cast<double>(total);
        for (std::size_t i = 0; i < n; ++i)
        {
            const double share = N * weight[i] / sum;
            const double whole = std::floor(share);
            counts[i] = static_cast<std::uint64_t>(whole);
            frac[i] = share - whole;
            assigned += counts[i];
        }
        // Rounding in the shares can leave the floors a few above the total.
        for (std::size_t i = n; assigned > total && i-- > 0;)
        {
            const auto take = std::min(counts[i], assigned - total);
            counts[i] -= take;
            assigned -= take;
        }
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
        for (std::size_t k = 0; assigned < total; k = (k + 1) % n)
        {
            ++counts[order[k]];
            ++assigned;
        }
        return counts;
    }

    namespace
    {
        std::uint64_t mix(std::uint64_t z)
        {
            z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
            z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
            return z ^ (z >> 31);
        }

        double unit(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

        // Uniform in [lo, hi) even when rounding would land on hi.
        double inside(double lo, double hi, double u)
        {
            const double v = lo + u * (hi - lo);
            return v < hi ? v : std::nextafter(hi, lo);
        }

        double nearest_image(double d, double extent)
        {
            if (d > 0.5 * extent)
            {
                return d - extent;
            }
            if (d < -0.5 * extent)
            {
                return d + extent;
            }
            return d;
        }
    } // namespace

    std::pair<double, double> particle_uniforms(std::uint64_t seed, std::uint64_t id)
    {
        const std::uint64_t key = mix(seed + 0x9E3779B97F4A7C15ull) ^ (id * 0xD1B54A32D192ED03ull);
        return {unit(mix(key + 0x9E3779B97F4A7C15ull)), unit(mix(key + 2 * 0x9E3779B97F4A7C15ull))};
    }

    ParticleSet distribute_particles(const PicMeshConfig &cfg, const DistributionSpec &dist)
    {
        cfg.validate();
        dist.validate();
        const auto counts = column_counts(cfg.L, dist.r, dist.total);
        ParticleSet out;
        out.id.reserve(dist.total);
        out.x.reserve(dist.total);
        out.y.reserve(dist.total);
        out.vx.reserve(dist.total);
        out.vy.reserve(dist.total);
        const double extent = cfg.extent();
        std::uint64_t next = 0;
        for (int i = 0; i < cfg.L; ++i)
        {
            for (std::uint64_t c = 0; c < counts[static_cast<std::size_t>(i)]; ++c)
            {
                const auto [u, v] = particle_uniforms(dist.seed, next);
                out.push({next, inside(i * cfg.h, (i + 1) * cfg.h, u), inside(0.0, extent, v), 0.0, 0.0});
                ++next;
            }
        }
        return out;
    }

    Accel field_at(const ChargeMesh &mesh, const PicMeshConfig &cfg, double x, double y)
    {
        const auto [ci, cj] = cell_of(cfg, x, y);
        const double extent = cfg.extent();
        const double eps2 = cfg.eps * cfg.eps;
        Accel a;
        for (int corner = 0; corner < 4; ++corner)
        {
            const int i = ci + (corner & 1);
            const int j = cj + (corner >> 1);
            const double dx = nearest_image(x - i * cfg.h, extent);
            const double dy = nearest_image(y - j * cfg.h, extent);
            const double r2 = dx * dx + dy * dy + eps2;
            const double scale = mesh.charge(i, j) / (r2 * std::sqrt(r2));
            a.ax += scale * dx;
            a.ay += scale * dy;
        }
        return a;
    }

    double wrap(double v, double extent) noexcept
    {
        if (v >= 0.0 && v < extent)
        {
            return v;
        }
        double w = std::fmod(v, extent);
        if (w < 0.0)
        {
            w += extent;
        }
        if (w >= extent)
        {
            w -= extent;
        }
        return w;
    }

    void advance_particle(Particle &p, const Accel &a, const PicMeshConfig &cfg)
    {
        p.vx += a.ax * cfg.dt;
        p.vy += a.ay * cfg.dt;
        p.x = wrap(p.x + p.vx * cfg.dt, cfg.extent());
        p.y = wrap(p.y + p.vy * cfg.dt, cfg.extent());
    }

    std::pair<int, int> cell_of(const PicMeshConfig &cfg, double x, double y)
    {
        auto index = [&](double v) {
            const double c = std::floor(v / cfg.h);
            if (!(c >= 0.0))
            {
                return 0;
            }
            return c >= cfg.L - 1 ? cfg.L - 1 : static_cast<int>(c);
        };
        return {index(x), index(y)};
    }

    void push_particles(ParticleSet &particles, const ChargeMesh &mesh, const PicMeshConfig &cfg)
    {
        for (std::size_t k = 0; k < particles.size(); ++k)
        {
            Particle p = particles.at(k);
            advance_particle(p, field_at(mesh, cfg, p.x, p.y), cfg);
            particles.x[k] = p.x;
            particles.y[k] = p.y;
            particles.vx[k] = p.vx;
            particles.vy[k] = p.vy;
        }
    }

    double checksum(const std::vector<Particle> &sorted)
    {
        double sum = 0.0;
        for (const auto &p : sorted)
        {
            sum += p.x + 2.0 * p.y;
        }
        return sum;
    }
} // namespace duorun::pic
