#include "duorun/actor.hpp"

#include <algorithm>
#include <numeric>

namespace duorun::actor
{
    std::string to_string(const ChareId &id)
    {
        return std::to_string(id.collection) + ":" + std::to_string(id.index);
    }

    PlacementPolicy parse_placement(std::string_view text)
    {
        if (text == "block")
        {
            return PlacementPolicy::block;
        }
        if (text == "round_robin")
        {
            return PlacementPolicy::round_robin;
        }
        throw ConfigError("unknown placement policy '" + std::string(text) + "'");
    }

    CollectionSpec CollectionSpec::with_odf(std::uint32_t odf, int world_size, PlacementPolicy placement)
    {
        if (odf == 0 || world_size < 1)
        {
            throw ConfigError("odf and world size must be positive");
        }
        CollectionSpec spec;
        spec.n_chares = odf * static_cast<std::uint32_t>(world_size);
        spec.placement = placement;
        spec.odf = odf;
        return spec;
    }

    void CollectionSpec::validate() const
    {
        if (n_chares == 0)
        {
            throw ConfigError("a collection needs at least one chare");
        }
    }

    std::vector<int> initial_placement(std::uint32_t n_chares, int world_size, PlacementPolicy policy)
    {
        if (world_size < 1)
        {
            throw ConfigError("world size must be positive");
        }
        std::vector<int> owners(n_chares);
        const auto w = static_cast<std::uint32_t>(world_size);
        const auto chunk = (n_chares + w - 1) / w;
        for (std::uint32_t i = 0; i < n_chares; ++i)
        {
            owners[i] = static_cast<int>(policy == PlacementPolicy::block ? i / chunk : i % w);
        }
        return owners;
    }

    Bytes Envelope::encode() const
    {
        ByteWriter w(kEnvelopeHeaderBytes + payload.size());
        w.put_u32(target.collection);
        w.put_u32(target.index);
        w.put_u16(entry);
        w.put_u32(epoch);
        w.put_raw(payload);
        return std::move(w).take();
    }

    Envelope Envelope::decode(std::span<const std::uint8_t> wire)
    {
        if (wire.size() < kEnvelopeHeaderBytes)
        {
            throw ProtocolError("envelope shorter than its header");
        }
        ByteReader r(wire);
        Envelope env;
        env.target.collection = r.get_u32();
        env.target.index = r.get_u32();
        env.entry = r.get_u16();
        env.epoch = r.get_u32();
        auto rest = r.rest();
        env.payload.assign(rest.begin(), rest.end());
        return env;
    }

    PlacementMap::PlacementMap(std::vector<int> owners, int world_size)
        : m_owner(std::move(owners)), m_world(world_size)
    {
        for (int r : m_owner)
        {
            if (r < 0 || r >= world_size)
            {
                throw ConfigError("placement rank " + std::to_string(r) + " out of range");
            }
        }
    }

    void PlacementMap::set_owner(std::uint32_t index, int rank)
    {
        if (rank < 0 || rank >= m_world)
        {
            throw UsageError("placement rank " + std::to_string(rank) + " out of range");
        }
        m_owner.at(index) = rank;
    }

    void MigrationPlan::validate(const PlacementMap &current) const
    {
        for (const auto &m : moves)
        {
            if (m.from == m.to)
            {
                throw UsageError("migration of chare " + std::to_string(m.index) + " to its own worker");
            }
            if (m.index >= current.size() || current.owner(m.index) != m.from)
            {
                throw UsageError("migration of chare " + std::to_string(m.index) + " from a worker that does not host it");
            }
            if (m.to < 0 || m.to >= current.world_size())
            {
                throw UsageError("migration target rank " + std::to_string(m.to) + " out of range");
            }
        }
    }

    std::vector<int> MigrationPlan::apply(const std::vector<int> &owners) const
    {
        auto out = owners;
        for (const auto &m : moves)
        {
            out.at(m.index) = m.to;
        }
        return out;
    }

    std::vector<int> lpt_assign(const std::vector<double> &loads, int world_size)
    {
        if (world_size < 1)
        {
            throw UsageError("rebalance needs at least one worker");
        }
        std::vector<std::uint32_t> order(loads.size());
        std::iota(order.begin(), order.end(), 0u);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::uint32_t a, std::uint32_t b) { return loads[a] > loads[b]; });
        std::vector<double> worker_load(static_cast<std::size_t>(world_size), 0.0);
        std::vector<int> owners(loads.size(), 0);
        for (auto i : order)
        {
            std::size_t best = 0;
            for (std::size_t r = 1; r < worker_load.size(); ++r)
            {
                if (worker_load[r] < worker_load[best])
                {
                    best = r;
                }
            }
            owners[i] = static_cast<int>(best);
            worker_load[best] += loads[i];
        }
        return owners;
    }

    MigrationPlan plan_rebalance(const std::vector<LoadRecord> &loads, const std::vector<int> &current,
                                 int world_size)
    {
        if (loads.size() != current.size())
        {
            throw UsageError("loads must cover every chare exactly once");
        }
        std::vector<double> by_index(loads.size(), -1.0);
        for (const auto &rec : loads)
        {
            if (rec.chare.index >= by_index.size() || by_index[rec.chare.index] >= 0.0)
            {
                throw UsageError("loads must cover every chare exactly once");
            }
            by_index[rec.chare.index] = std::max(rec.busy_seconds, 0.0);
        }
        const auto owners = lpt_assign(by_index, world_size);
        MigrationPlan plan;
        for (std::uint32_t i = 0; i < owners.size(); ++i)
        {
            if (owners[i] != current[i])
            {
                plan.moves.push_back({i, current[i], owners[i]});
            }
        }
        return plan;
    }

    double makespan(const std::vector<double> &loads, const std::vector<int> &owners, int world_size)
    {
        std::vector<double> per(static_cast<std::size_t>(world_size), 0.0);
        for (std::size_t i = 0; i < loads.size(); ++i)
        {
            per.at(static_cast<std::size_t>(owners.at(i))) += loads[i];
        }
        return *std::max_element(per.begin(), per.end());
    }

    Strategy lpt_strategy()
    {
        return [](const std::vector<double> &loads, const std::vector<int> &, int world_size) {
            return lpt_assign(loads, world_size);
        };
    }
} // namespace duorun::actor
