#include "duorun/actor.hpp"

#include <algorithm>

namespace duorun::actor
{
    namespace
    {
        namespace atag
        {
            // Scheduler loop traffic.
            inline constexpr Tag envelope = tags::actor_first + 0x00;
            inline constexpr Tag exit_run = tags::actor_first + 0x01;
            inline constexpr Tag reduce = tags::actor_first + 0x02;
            inline constexpr Tag lb_ready = tags::actor_first + 0x03;
            inline constexpr Tag lb_start = tags::actor_first + 0x04;
            inline constexpr Tag qd_probe = tags::actor_first + 0x05;
            inline constexpr Tag qd_reply = tags::actor_first + 0x06;
            inline constexpr Tag loop_last = tags::actor_first + 0x7f;
            // Rebalance collective, received only by selective receives.
            inline constexpr Tag lb_loads = tags::actor_first + 0x80;
            inline constexpr Tag lb_plan = tags::actor_first + 0x81;
            inline constexpr Tag lb_vote = tags::actor_first + 0x82;
            inline constexpr Tag lb_decision = tags::actor_first + 0x83;
            inline constexpr Tag lb_migrate = tags::actor_first + 0x84;
        } // namespace atag

        struct LocalChare
        {
            std::unique_ptr<Chare> chare;
            double busy = 0.0;
            std::multimap<std::uint32_t, Envelope> buffered;
        };

        struct Collection
        {
            CollectionSpec spec;
            CollectionDef def;
            PlacementMap placement;
            std::vector<int> home;
            std::map<std::uint32_t, LocalChare> local;
            std::uint32_t sync_count = 0;
        };

        struct ReductionSlot
        {
            std::vector<std::optional<double>> values;
            ReduceOp op = ReduceOp::sum;
            EntryId callback = 0;
            std::uint32_t callback_index = 0;
            std::uint32_t count = 0;
        };

        std::string chare_name(const Collection &c, std::uint32_t index)
        {
            return c.def.name + "[" + std::to_string(index) + "]";
        }
    } // namespace

    struct Runtime::Impl
    {
        RuntimeOptions options;
        std::map<CollectionId, Collection> collections;
        std::deque<Envelope> ready;
        std::map<std::pair<CollectionId, std::uint64_t>, ReductionSlot> reductions;
        std::deque<CollectionId> pending_lb;

        std::uint64_t run_id = 0;
        bool exiting = false;
        std::uint64_t app_sent = 0;
        std::uint64_t app_received = 0;

        bool qd_open = false;
        std::uint64_t qd_wave = 0;
        int qd_replies = 0;
        std::uint64_t qd_sent = 0;
        std::uint64_t qd_received = 0;
        std::optional<std::pair<std::uint64_t, std::uint64_t>> qd_last;
        double qd_next_at = 0.0;

        Collection &collection(CollectionId id)
        {
            auto it = collections.find(id);
            if (it == collections.end())
            {
                throw DispatchError("unknown collection " + std::to_string(id));
            }
            return it->second;
        }
    };

    Runtime &Chare::runtime() const
    {
        if (m_runtime == nullptr)
        {
            throw UsageError("chare is not installed in a runtime");
        }
        return *m_runtime;
    }

    void Chare::send(std::uint32_t index, EntryId entry, std::uint32_t epoch, Bytes payload) const
    {
        runtime().send(ChareId{m_id.collection, index}, entry, epoch, std::move(payload));
    }

    void Chare::contribute(double value, ReduceOp op, EntryId callback, std::uint32_t callback_index)
    {
        const auto gen = m_reduction_generation++;
        runtime().contribute(*this, gen, value, op, callback, callback_index);
    }

    void Chare::contribute_to(std::uint64_t generation, double value, ReduceOp op, EntryId callback,
                              std::uint32_t callback_index)
    {
        runtime().contribute(*this, generation, value, op, callback, callback_index);
    }

    void Chare::at_sync() { runtime().at_sync(*this); }

    Runtime::Runtime(Endpoint &ep, RuntimeOptions options) : m_impl(std::make_unique<Impl>()), m_ep(&ep)
    {
        if (!options.strategy)
        {
            options.strategy = lpt_strategy();
        }
        m_impl->options = std::move(options);
    }

    Runtime::~Runtime() = default;

    void Runtime::create_collection(CollectionId id, const CollectionSpec &spec, CollectionDef def)
    {
        spec.validate();
        if (m_impl->collections.count(id) != 0)
        {
            throw UsageError("duplicate collection id " + std::to_string(id));
        }
        if (!def.create || !def.restore)
        {
            throw UsageError("collection '" + def.name + "' needs create and restore hooks");
        }
        Collection coll;
        coll.spec = spec;
        coll.home = initial_placement(spec.n_chares, world_size(), spec.placement);
        coll.placement = PlacementMap(coll.home, world_size());
        coll.def = std::move(def);
        for (std::uint32_t i = 0; i < spec.n_chares; ++i)
        {
            if (coll.home[i] != rank())
            {
                continue;
            }
            LocalChare lc;
            lc.chare = coll.def.create(i);
            lc.chare->m_id = ChareId{id, i};
            lc.chare->m_runtime = this;
            coll.local.emplace(i, std::move(lc));
        }
        m_impl->collections.emplace(id, std::move(coll));
        m_ep->barrier();
    }

    void Runtime::destroy_collection(CollectionId id)
    {
        m_ep->barrier();
        m_impl->collections.erase(id);
        std::erase_if(m_impl->ready, [id](const Envelope &e) { return e.target.collection == id; });
        std::erase_if(m_impl->reductions, [id](const auto &kv) { return kv.first.first == id; });
        std::erase(m_impl->pending_lb, id);
    }

    bool Runtime::has_collection(CollectionId id) const { return m_impl->collections.count(id) != 0; }

    const PlacementMap &Runtime::placement(CollectionId id) const { return m_impl->collection(id).placement; }

    int Runtime::home_of(ChareId id) const { return m_impl->collection(id.collection).home.at(id.index); }

    std::vector<Chare *> Runtime::local_chares(CollectionId id) const
    {
        std::vector<Chare *> out;
        for (auto &[index, lc] : m_impl->collection(id).local)
        {
            out.push_back(lc.chare.get());
        }
        return out;
    }

    Chare *Runtime::local_chare(ChareId id) const
    {
        auto &coll = m_impl->collection(id.collection);
        auto it = coll.local.find(id.index);
        return it == coll.local.end() ? nullptr : it->second.chare.get();
    }

    void Runtime::record_load(ChareId chare, double elapsed_seconds)
    {
        auto &coll = m_impl->collection(chare.collection);
        auto it = coll.local.find(chare.index);
        if (it == coll.local.end())
        {
            throw UsageError("chare " + to_string(chare) + " is not local");
        }
        it->second.busy += std::max(elapsed_seconds, 0.0);
    }

    std::vector<LoadRecord> Runtime::local_loads(CollectionId id) const
    {
        std::vector<LoadRecord> out;
        for (auto &[index, lc] : m_impl->collection(id).local)
        {
            out.push_back({ChareId{id, index}, lc.busy});
        }
        return out;
    }

    void Runtime::reset_loads(CollectionId id)
    {
        for (auto &[index, lc] : m_impl->collection(id).local)
        {
            lc.busy = 0.0;
        }
    }

    std::size_t Runtime::buffered_count(ChareId id) const
    {
        auto &coll = m_impl->collection(id.collection);
        auto it = coll.local.find(id.index);
        return it == coll.local.end() ? 0 : it->second.buffered.size();
    }

    void Runtime::send(ChareId target, EntryId entry, std::uint32_t epoch, Bytes payload)
    {
        send(Envelope{target, entry, epoch, std::move(payload)});
    }

    void Runtime::send(const Envelope &env)
    {
        auto it = m_impl->collections.find(env.target.collection);
        if (it == m_impl->collections.end())
        {
            throw UsageError("send to unknown collection " + std::to_string(env.target.collection));
        }
        auto &coll = it->second;
        if (env.target.index >= coll.spec.n_chares)
        {
            throw UsageError("send to chare index " + std::to_string(env.target.index) + " of a collection of " +
                             std::to_string(coll.spec.n_chares));
        }
        send_via(coll.placement.owner(env.target.index), env);
    }

    void Runtime::send_via(int dest, const Envelope &env)
    {
        if (dest == rank())
        {
            auto &coll = m_impl->collection(env.target.collection);
            if (coll.local.count(env.target.index) != 0)
            {
                ++m_stats.local_deliveries;
                m_impl->ready.push_back(env);
                return;
            }
            forward(env);
            return;
        }
        m_ep->send_bytes(dest, atag::envelope, env.encode());
        ++m_impl->app_sent;
    }

    void Runtime::forward(const Envelope &env)
    {
        auto &coll = m_impl->collection(env.target.collection);
        const auto index = env.target.index;
        if (index >= coll.spec.n_chares)
        {
            throw DispatchError("envelope for chare index " + std::to_string(index) + " beyond collection size");
        }
        const int home = coll.home[index];
        const int dest = rank() == home ? coll.placement.owner(index) : home;
        if (dest == rank())
        {
            throw ProtocolError("chare " + chare_name(coll, index) + " has no known location");
        }
        m_ep->send_bytes(dest, atag::envelope, env.encode());
        ++m_impl->app_sent;
        ++m_stats.forwarded;
    }

    void Runtime::deliver(Envelope &&env)
    {
        auto &coll = m_impl->collection(env.target.collection);
        if (coll.local.count(env.target.index) != 0)
        {
            m_impl->ready.push_back(std::move(env));
        }
        else
        {
            forward(env);
        }
    }

    void Runtime::execute(Envelope &&env)
    {
        auto &coll = m_impl->collection(env.target.collection);
        auto it = coll.local.find(env.target.index);
        if (it == coll.local.end())
        {
            forward(env);
            return;
        }
        auto &lc = it->second;
        Chare &chare = *lc.chare;
        std::string entry_name = "resume_from_sync";
        const CollectionDef::Handler *handler = nullptr;
        if (env.entry != kResumeEntry)
        {
            if (env.epoch > chare.epoch())
            {
                const auto epoch = env.epoch;
                lc.buffered.emplace(epoch, std::move(env));
                return;
            }
            auto h = coll.def.entries.find(env.entry);
            if (h == coll.def.entries.end())
            {
                throw DispatchError("chare " + chare_name(coll, env.target.index) + " has no entry " +
                                    std::to_string(env.entry));
            }
            entry_name = h->second.first;
            handler = &h->second.second;
        }

        const bool cpu_clock = m_impl->options.load_clock == LoadClock::thread_cpu;
        const double t0 = cpu_clock ? thread_cpu_now() : monotonic_now();
        try
        {
            if (handler != nullptr)
            {
                (*handler)(chare, env);
            }
            else
            {
                chare.resume_from_sync();
            }
        }
        catch (const EntryError &)
        {
            throw;
        }
        catch (const ShutdownError &)
        {
            throw;
        }
        catch (const std::exception &e)
        {
            throw EntryError("chare " + chare_name(coll, env.target.index) + " entry " + entry_name + ": " +
                             e.what());
        }
        lc.busy += (cpu_clock ? thread_cpu_now() : monotonic_now()) - t0;
        ++m_stats.executed;

        if (!lc.buffered.empty() && lc.buffered.begin()->first <= chare.epoch())
        {
            auto end = lc.buffered.upper_bound(chare.epoch());
            std::vector<Envelope> released;
            for (auto b = lc.buffered.begin(); b != end; ++b)
            {
                released.push_back(std::move(b->second));
            }
            lc.buffered.erase(lc.buffered.begin(), end);
            for (auto r = released.rbegin(); r != released.rend(); ++r)
            {
                m_impl->ready.push_front(std::move(*r));
            }
        }
    }

    void Runtime::contribute(Chare &chare, std::uint64_t generation, double value, ReduceOp op, EntryId callback,
                             std::uint32_t callback_index)
    {
        ByteWriter w(40);
        w.put_u32(chare.id().collection);
        w.put_u64(generation);
        w.put_u32(chare.index());
        w.put_f64(value);
        w.put_u32(static_cast<std::uint32_t>(op));
        w.put_u16(callback);
        w.put_u32(callback_index);
        if (rank() == 0)
        {
            const auto bytes = std::move(w).take();
            ByteReader r(bytes);
            on_contribution(r);
        }
        else
        {
            m_ep->send_bytes(0, atag::reduce, std::move(w).take());
        }
    }

    void Runtime::on_contribution(ByteReader &r)
    {
        const auto coll_id = r.get_u32();
        const auto gen = r.get_u64();
        const auto index = r.get_u32();
        const auto value = r.get_f64();
        const auto op = static_cast<ReduceOp>(r.get_u32());
        const auto callback = r.get_u16();
        const auto callback_index = r.get_u32();

        auto &coll = m_impl->collection(coll_id);
        auto [it, fresh] = m_impl->reductions.try_emplace({coll_id, gen});
        auto &slot = it->second;
        if (fresh)
        {
            slot.values.resize(coll.spec.n_chares);
            slot.op = op;
            slot.callback = callback;
            slot.callback_index = callback_index;
        }
        else if (slot.op != op || slot.callback != callback || slot.callback_index != callback_index)
        {
            throw ProtocolError("reduction generation " + std::to_string(gen) + " of '" + coll.def.name +
                                "' mixes ops or callbacks");
        }
        if (slot.values.at(index).has_value())
        {
            throw UsageError("chare " + chare_name(coll, index) + " contributed twice to reduction generation " +
                             std::to_string(gen));
        }
        slot.values[index] = value;
        if (++slot.count < coll.spec.n_chares)
        {
            return;
        }
        double acc = *slot.values[0];
        for (std::size_t i = 1; i < slot.values.size(); ++i)
        {
            acc = apply_reduce(slot.op, acc, *slot.values[i]);
        }
        ByteWriter payload(8);
        payload.put_f64(acc);
        const Envelope env{ChareId{coll_id, slot.callback_index}, slot.callback, 0, std::move(payload).take()};
        m_impl->reductions.erase(it);
        send(env);
    }

    void Runtime::at_sync(Chare &chare)
    {
        if (rank() == 0)
        {
            on_sync_ready(chare.id().collection, 1);
            return;
        }
        ByteWriter w(8);
        w.put_u32(chare.id().collection);
        w.put_u32(1);
        m_ep->send_bytes(0, atag::lb_ready, std::move(w).take());
    }

    void Runtime::on_sync_ready(CollectionId id, std::uint32_t count)
    {
        auto &coll = m_impl->collection(id);
        coll.sync_count += count;
        if (coll.sync_count == coll.spec.n_chares)
        {
            coll.sync_count = 0;
            m_impl->pending_lb.push_back(id);
        }
    }

    void Runtime::exit()
    {
        ByteWriter w(8);
        w.put_u64(m_impl->run_id);
        const auto msg = std::move(w).take();
        for (int r = 0; r < world_size(); ++r)
        {
            if (r != rank())
            {
                m_ep->send_bytes(r, atag::exit_run, msg);
            }
        }
        m_impl->exiting = true;
    }

    void Runtime::start_wave()
    {
        auto &s = *m_impl;
        s.qd_open = true;
        ++s.qd_wave;
        s.qd_replies = 0;
        s.qd_sent = s.app_sent;
        s.qd_received = s.app_received;
        ByteWriter w(8);
        w.put_u64(s.qd_wave);
        const auto msg = std::move(w).take();
        for (int r = 1; r < world_size(); ++r)
        {
            m_ep->send_bytes(r, atag::qd_probe, msg);
        }
        if (world_size() == 1)
        {
            finish_wave();
        }
    }

    void Runtime::finish_wave()
    {
        auto &s = *m_impl;
        s.qd_open = false;
        const std::pair totals{s.qd_sent, s.qd_received};
        if (totals.first == totals.second && s.qd_last == totals)
        {
            exit();
            return;
        }
        s.qd_next_at = monotonic_now() + (totals.first == totals.second ? 0.0 : 200e-6);
        s.qd_last = totals;
    }

    void Runtime::handle(Packet &&p, Termination until)
    {
        auto &s = *m_impl;
        switch (p.tag)
        {
        case atag::envelope:
            ++s.app_received;
            deliver(Envelope::decode(p.payload));
            break;
        case atag::exit_run: {
            ByteReader r(p.payload);
            if (r.get_u64() == s.run_id)
            {
                s.exiting = true;
            }
            break;
        }
        case atag::reduce: {
            ByteReader r(p.payload);
            on_contribution(r);
            break;
        }
        case atag::lb_ready: {
            ByteReader r(p.payload);
            const auto id = r.get_u32();
            on_sync_ready(id, r.get_u32());
            break;
        }
        case atag::lb_start: {
            ByteReader r(p.payload);
            rebalance(r.get_u32());
            break;
        }
        case atag::qd_probe: {
            ByteReader r(p.payload);
            ByteWriter w(24);
            w.put_u64(r.get_u64());
            w.put_u64(s.app_sent);
            w.put_u64(s.app_received);
            m_ep->send_bytes(0, atag::qd_reply, std::move(w).take());
            break;
        }
        case atag::qd_reply: {
            ByteReader r(p.payload);
            const auto wave = r.get_u64();
            if (until != Termination::quiescence || !s.qd_open || wave != s.qd_wave)
            {
                break;
            }
            s.qd_sent += r.get_u64();
            s.qd_received += r.get_u64();
            if (++s.qd_replies == world_size() - 1)
            {
                finish_wave();
            }
            break;
        }
        default:
            throw ProtocolError("unexpected actor control tag " + std::to_string(p.tag));
        }
    }

    void Runtime::run(Termination until)
    {
        auto &s = *m_impl;
        ++s.run_id;
        s.exiting = false;
        s.qd_open = false;
        s.qd_last.reset();
        s.qd_next_at = 0.0;
        const auto loop_match = Match::tag_range(atag::envelope, atag::loop_last);
        const bool detector = until == Termination::quiescence && rank() == 0;

        while (!s.exiting)
        {
            if (!s.pending_lb.empty())
            {
                const auto id = s.pending_lb.front();
                s.pending_lb.pop_front();
                ByteWriter w(4);
                w.put_u32(id);
                const auto msg = std::move(w).take();
                for (int r = 1; r < world_size(); ++r)
                {
                    m_ep->send_bytes(r, atag::lb_start, msg);
                }
                rebalance(id);
                continue;
            }
            if (!s.ready.empty())
            {
                auto env = std::move(s.ready.front());
                s.ready.pop_front();
                execute(std::move(env));
                continue;
            }
            if (detector && !s.qd_open)
            {
                const double wait = s.qd_next_at - monotonic_now();
                if (wait <= 0.0)
                {
                    start_wave();
                    continue;
                }
                if (auto p = m_ep->recv_for(loop_match, std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::duration<double>(wait))))
                {
                    handle(std::move(*p), until);
                }
                continue;
            }
            handle(m_ep->recv(loop_match), until);
        }
    }

    void Runtime::rebalance(CollectionId id)
    {
        auto &s = *m_impl;
        const double t0 = monotonic_now();
        auto &coll = m_impl->collection(id);
        const int me = rank();
        const int world = world_size();
        const auto n = coll.spec.n_chares;

        // Loads to rank 0. The reports also give rank 0 the true owners, which
        // its own map may not know when placement updates are not broadcast.
        std::vector<double> loads(n, 0.0);
        std::vector<int> actual(n, -1);
        if (me != 0)
        {
            ByteWriter w(8 + coll.local.size() * 12);
            w.put_u64(coll.local.size());
            for (auto &[index, lc] : coll.local)
            {
                w.put_u32(index);
                w.put_f64(lc.busy);
            }
            m_ep->send_bytes(0, atag::lb_loads, std::move(w).take());
        }
        else
        {
            for (auto &[index, lc] : coll.local)
            {
                loads[index] = lc.busy;
                actual[index] = 0;
            }
            for (int r = 1; r < world; ++r)
            {
                auto p = m_ep->recv(Match::from(r, atag::lb_loads));
                ByteReader rd(p.payload);
                for (auto k = rd.get_u64(); k > 0; --k)
                {
                    const auto index = rd.get_u32();
                    loads.at(index) = rd.get_f64();
                    actual.at(index) = r;
                }
            }
            if (std::count(actual.begin(), actual.end(), -1) != 0)
            {
                throw ProtocolError("rebalance of '" + coll.def.name + "' found chares hosted nowhere");
            }
        }

        // Plan at rank 0, then broadcast.
        MigrationPlan plan;
        if (me == 0)
        {
            const auto owners = s.options.strategy(loads, actual, world);
            if (owners.size() != n)
            {
                throw UsageError("rebalance strategy returned " + std::to_string(owners.size()) + " owners for " +
                                 std::to_string(n) + " chares");
            }
            for (std::uint32_t i = 0; i < n; ++i)
            {
                if (owners[i] != actual[i])
                {
                    plan.moves.push_back({i, actual[i], owners[i]});
                }
            }
            plan.validate(PlacementMap(actual, world));
            ByteWriter w(8 + plan.moves.size() * 12);
            w.put_u64(plan.moves.size());
            for (const auto &m : plan.moves)
            {
                w.put_u32(m.index);
                w.put_u32(static_cast<std::uint32_t>(m.from));
                w.put_u32(static_cast<std::uint32_t>(m.to));
            }
            const auto msg = std::move(w).take();
            for (int r = 1; r < world; ++r)
            {
                m_ep->send_bytes(r, atag::lb_plan, msg);
            }
        }
        else
        {
            auto p = m_ep->recv(Match::from(0, atag::lb_plan));
            ByteReader rd(p.payload);
            for (auto k = rd.get_u64(); k > 0; --k)
            {
                Move m;
                m.index = rd.get_u32();
                m.from = static_cast<int>(rd.get_u32());
                m.to = static_cast<int>(rd.get_u32());
                plan.moves.push_back(m);
            }
        }

        // Serialize outgoing chares with their queued envelopes.
        std::vector<ByteWriter> outgoing(static_cast<std::size_t>(world));
        std::vector<std::uint64_t> out_count(static_cast<std::size_t>(world), 0);
        std::vector<std::uint32_t> leaving;
        bool ok = true;
        try
        {
            for (const auto &m : plan.moves)
            {
                if (m.from != me)
                {
                    continue;
                }
                auto &lc = coll.local.at(m.index);
                auto &w = outgoing[static_cast<std::size_t>(m.to)];
                ByteWriter state;
                lc.chare->pack(state);
                w.put_u32(m.index);
                w.put_u32(lc.chare->m_epoch);
                w.put_u64(lc.chare->m_reduction_generation);
                w.put_blob(state.bytes());
                std::vector<const Envelope *> pending;
                for (const auto &e : s.ready)
                {
                    if (e.target.collection == id && e.target.index == m.index)
                    {
                        pending.push_back(&e);
                    }
                }
                for (const auto &[epoch, e] : lc.buffered)
                {
                    pending.push_back(&e);
                }
                w.put_u64(pending.size());
                for (const auto *e : pending)
                {
                    w.put_blob(e->encode());
                }
                ++out_count[static_cast<std::size_t>(m.to)];
                leaving.push_back(m.index);
            }
        }
        catch (const std::exception &)
        {
            ok = false;
        }

        // Commit only if every worker serialized its chares.
        bool commit = ok;
        if (me != 0)
        {
            m_ep->send_bytes(0, atag::lb_vote, Bytes{static_cast<std::uint8_t>(ok)});
            commit = m_ep->recv(Match::from(0, atag::lb_decision)).payload.at(0) != 0;
        }
        else
        {
            for (int r = 1; r < world; ++r)
            {
                commit = (m_ep->recv(Match::from(r, atag::lb_vote)).payload.at(0) != 0) && commit;
            }
            for (int r = 1; r < world; ++r)
            {
                m_ep->send_bytes(r, atag::lb_decision, Bytes{static_cast<std::uint8_t>(commit)});
            }
        }

        if (commit && world > 1)
        {
            for (auto index : leaving)
            {
                coll.local.erase(index);
                std::erase_if(s.ready, [&](const Envelope &e) {
                    return e.target.collection == id && e.target.index == index;
                });
            }
            m_stats.migrations_out += leaving.size();
            for (int r = 0; r < world; ++r)
            {
                if (r == me)
                {
                    continue;
                }
                ByteWriter w;
                w.put_u64(out_count[static_cast<std::size_t>(r)]);
                w.put_raw(outgoing[static_cast<std::size_t>(r)].bytes());
                m_ep->send_bytes(r, atag::lb_migrate, std::move(w).take());
            }
            for (int r = 0; r < world; ++r)
            {
                if (r == me)
                {
                    continue;
                }
                auto p = m_ep->recv(Match::from(r, atag::lb_migrate));
                ByteReader rd(p.payload);
                for (auto k = rd.get_u64(); k > 0; --k)
                {
                    const auto index = rd.get_u32();
                    const auto epoch = rd.get_u32();
                    const auto gen = rd.get_u64();
                    const auto state = rd.get_blob();
                    ByteReader sr(state);
                    LocalChare lc;
                    lc.chare = coll.def.restore(index, sr);
                    lc.chare->m_id = ChareId{id, index};
                    lc.chare->m_epoch = epoch;
                    lc.chare->m_reduction_generation = gen;
                    lc.chare->m_runtime = this;
                    coll.local.emplace(index, std::move(lc));
                    for (auto e = rd.get_u64(); e > 0; --e)
                    {
                        const auto wire = rd.get_blob();
                        s.ready.push_back(Envelope::decode(wire));
                    }
                    ++m_stats.migrations_in;
                }
            }
            for (const auto &m : plan.moves)
            {
                if (s.options.broadcast_placement || me == coll.home[m.index] || me == m.from || me == m.to)
                {
                    coll.placement.set_owner(m.index, m.to);
                }
            }
            coll.placement.bump_version();
        }
        else if (!commit)
        {
            ++m_stats.aborted_rebalances;
        }
        else
        {
            coll.placement.bump_version();
        }

        for (auto &[index, lc] : coll.local)
        {
            lc.busy = 0.0;
        }
        m_ep->barrier();
        for (auto &[index, lc] : coll.local)
        {
            s.ready.push_back(Envelope{ChareId{id, index}, kResumeEntry, 0, {}});
        }
        ++m_stats.rebalances;
        m_stats.lb_seconds += monotonic_now() - t0;
    }
} // namespace duorun::actor
