#pragma once

// Message-driven actor runtime. Chares live in indexed collections, are
// placed on workers, execute entry methods one at a time, and can migrate
// between workers during a stop-the-world rebalance.

#include "duorun/spmd.hpp"
#include "duorun/transport.hpp"
#include "duorun/wire.hpp"

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace duorun::actor
{
    using CollectionId = std::uint32_t;
    using EntryId = std::uint16_t;

    /// Entry id used by the runtime to call Chare::resume_from_sync.
    inline constexpr EntryId kResumeEntry = 0xFFFF;

    struct ChareId
    {
        CollectionId collection = 0;
        std::uint32_t index = 0;

        friend bool operator==(const ChareId &, const ChareId &) = default;
        friend auto operator<=>(const ChareId &, const ChareId &) = default;
    };

    std::string to_string(const ChareId &id);

    enum class PlacementPolicy
    {
        /// Contiguous ranges of ceil(n / W) indices per worker.
        block,
        /// Index i on worker i mod W.
        round_robin
    };

    PlacementPolicy parse_placement(std::string_view text);

    struct CollectionSpec
    {
        std::uint32_t n_chares = 1;
        PlacementPolicy placement = PlacementPolicy::block;
        /// Zero when the size was given directly.
        std::uint32_t odf = 0;

        static CollectionSpec with_odf(std::uint32_t odf, int world_size,
                                       PlacementPolicy placement = PlacementPolicy::block);
        void validate() const;
    };

    std::vector<int> initial_placement(std::uint32_t n_chares, int world_size, PlacementPolicy policy);

    struct Envelope
    {
        ChareId target;
        EntryId entry = 0;
        std::uint32_t epoch = 0;
        Bytes payload;

        /// 14-byte header (collection, index, entry, epoch) then the payload.
        Bytes encode() const;
        static Envelope decode(std::span<const std::uint8_t> wire);
        ByteReader reader() const { return ByteReader(payload); }
    };

    inline constexpr std::size_t kEnvelopeHeaderBytes = 14;

    class PlacementMap
    {
    public:
        PlacementMap() = default;
        PlacementMap(std::vector<int> owners, int world_size);

        int owner(std::uint32_t index) const { return m_owner.at(index); }
        std::uint32_t size() const noexcept { return static_cast<std::uint32_t>(m_owner.size()); }
        std::uint64_t version() const noexcept { return m_version; }
        const std::vector<int> &owners() const noexcept { return m_owner; }
        int world_size() const noexcept { return m_world; }

        void set_owner(std::uint32_t index, int rank);
        void bump_version() noexcept { ++m_version; }

    private:
        std::vector<int> m_owner;
        int m_world = 1;
        std::uint64_t m_version = 0;
    };

    struct LoadRecord
    {
        ChareId chare;
        double busy_seconds = 0.0;
    };

    struct Move
    {
        std::uint32_t index = 0;
        int from = 0;
        int to = 0;

        friend bool operator==(const Move &, const Move &) = default;
    };

    struct MigrationPlan
    {
        std::vector<Move> moves;

        /// Throws UsageError if a move is a no-op or disagrees with `current`.
        void validate(const PlacementMap &current) const;
        /// New owners after applying the moves (version not bumped).
        std::vector<int> apply(const std::vector<int> &owners) const;
    };

    /// Greedy LPT: chares by load descending (ties: lower index first), each to
    /// the least-loaded worker (ties: lower rank). Returns the new owner per index.
    std::vector<int> lpt_assign(const std::vector<double> &loads, int world_size);

    /// LPT assignment expressed as moves away from `current`.
    MigrationPlan plan_rebalance(const std::vector<LoadRecord> &loads, const std::vector<int> &current,
                                 int world_size);

    /// Maximum per-worker load for an assignment.
    double makespan(const std::vector<double> &loads, const std::vector<int> &owners, int world_size);

    /// Pluggable strategy: (loads by index, current owners, W) -> new owners.
    using Strategy = std::function<std::vector<int>(const std::vector<double> &, const std::vector<int> &, int)>;

    Strategy lpt_strategy();

    class Runtime;

    class Chare
    {
    public:
        virtual ~Chare() = default;

        ChareId id() const noexcept { return m_id; }
        std::uint32_t index() const noexcept { return m_id.index; }
        std::uint32_t epoch() const noexcept { return m_epoch; }

        /// Advancing the epoch releases buffered envelopes up to the new epoch.
        void set_epoch(std::uint32_t epoch) noexcept { m_epoch = epoch; }
        void advance_epoch() noexcept { ++m_epoch; }

        /// Serializes application state. Restored by the collection's restore hook.
        virtual void pack(ByteWriter &out) const = 0;
        /// Called once per chare after every rebalance.
        virtual void resume_from_sync() {}

        Runtime &runtime() const;

    protected:
        /// Sends to a chare of this chare's collection.
        void send(std::uint32_t index, EntryId entry, std::uint32_t epoch, Bytes payload = {}) const;
        /// Contributes to the next reduction generation of this chare.
        void contribute(double value, ReduceOp op, EntryId callback, std::uint32_t callback_index = 0);
        /// Contributes to an explicit generation (for protocols that track their own).
        void contribute_to(std::uint64_t generation, double value, ReduceOp op, EntryId callback,
                           std::uint32_t callback_index = 0);
        /// Marks this chare ready for a collection-wide rebalance.
        void at_sync();

    private:
        friend class Runtime;
        ChareId m_id;
        std::uint32_t m_epoch = 0;
        std::uint64_t m_reduction_generation = 0;
        Runtime *m_runtime = nullptr;
    };

    /// How a collection builds, restores and dispatches to its chares.
    struct CollectionDef
    {
        using Factory = std::function<std::unique_ptr<Chare>(std::uint32_t index)>;
        using Restorer = std::function<std::unique_ptr<Chare>(std::uint32_t index, ByteReader &state)>;
        using Handler = std::function<void(Chare &, const Envelope &)>;

        std::string name = "collection";
        Factory create;
        Restorer restore;
        std::map<EntryId, std::pair<std::string, Handler>> entries;
    };

    /// Typed builder: def.entry(1, &MyChare::on_halo, "on_halo").
    template <class T>
    class ChareType
    {
    public:
        explicit ChareType(std::string name)
        {
            m_def.name = std::move(name);
        }

        ChareType &create(std::function<std::unique_ptr<T>(std::uint32_t)> fn)
        {
            m_def.create = [fn = std::move(fn)](std::uint32_t i) -> std::unique_ptr<Chare> { return fn(i); };
            return *this;
        }

        ChareType &restore(std::function<std::unique_ptr<T>(std::uint32_t, ByteReader &)> fn)
        {
            m_def.restore = [fn = std::move(fn)](std::uint32_t i, ByteReader &r) -> std::unique_ptr<Chare> {
                return fn(i, r);
            };
            return *this;
        }

        ChareType &entry(EntryId id, void (T::*method)(const Envelope &), std::string name)
        {
            m_def.entries[id] = {std::move(name),
                                 [method](Chare &c, const Envelope &env) { (static_cast<T &>(c).*method)(env); }};
            return *this;
        }

        CollectionDef def() const { return m_def; }

    private:
        CollectionDef m_def;
    };

    enum class Termination
    {
        /// Loop exits when some worker calls Runtime::exit.
        exit_call,
        /// Loop exits once no messages are in flight or queued anywhere.
        quiescence
    };

    enum class LoadClock
    {
        /// Wall-clock time spent in entry methods.
        wall,
        /// CPU time of the worker thread; unaffected by workers sharing cores.
        thread_cpu
    };

    struct RuntimeOptions
    {
        /// When false, only a chare's home worker and the workers involved in a
        /// move learn its new location; everyone else keeps a stale map and
        /// relies on forwarding.
        bool broadcast_placement = true;
        Strategy strategy;
        LoadClock load_clock = LoadClock::wall;
    };

    struct RuntimeStats
    {
        std::uint64_t executed = 0;
        std::uint64_t forwarded = 0;
        std::uint64_t local_deliveries = 0;
        std::uint64_t rebalances = 0;
        std::uint64_t aborted_rebalances = 0;
        std::uint64_t migrations_in = 0;
        std::uint64_t migrations_out = 0;
        double lb_seconds = 0.0;
    };

    /// One scheduler per worker. Not thread-safe; owned by the worker context.
    class Runtime
    {
    public:
        explicit Runtime(Endpoint &ep, RuntimeOptions options = {});
        ~Runtime();
        Runtime(const Runtime &) = delete;
        Runtime &operator=(const Runtime &) = delete;

        int rank() const noexcept { return m_ep->rank(); }
        int world_size() const noexcept { return m_ep->world_size(); }
        Endpoint &endpoint() const noexcept { return *m_ep; }

        /// Collective. Instantiates the local chares; returns after every
        /// worker has done the same.
        void create_collection(CollectionId id, const CollectionSpec &spec, CollectionDef def);
        /// Collective. Drops the local chares and any queued envelopes.
        void destroy_collection(CollectionId id);
        bool has_collection(CollectionId id) const;

        void send(const Envelope &env);
        void send(ChareId target, EntryId entry, std::uint32_t epoch, Bytes payload = {});
        /// Sends as if the local placement said `rank` hosts the target.
        void send_via(int rank, const Envelope &env);

        void run(Termination until = Termination::exit_call);
        /// Ends the current run on every worker.
        void exit();

        const PlacementMap &placement(CollectionId id) const;
        int home_of(ChareId id) const;

        /// Local chares of a collection, ascending by index.
        std::vector<Chare *> local_chares(CollectionId id) const;
        Chare *local_chare(ChareId id) const;

        void record_load(ChareId chare, double elapsed_seconds);
        std::vector<LoadRecord> local_loads(CollectionId id) const;
        void reset_loads(CollectionId id);

        const RuntimeStats &stats() const noexcept { return m_stats; }

        /// Number of buffered future-epoch envelopes held for a local chare.
        std::size_t buffered_count(ChareId id) const;

    private:
        friend class Chare;
        struct Impl;
        std::unique_ptr<Impl> m_impl;
        Endpoint *m_ep;
        RuntimeStats m_stats;

        void contribute(Chare &chare, std::uint64_t generation, double value, ReduceOp op, EntryId callback,
                        std::uint32_t callback_index);
        void at_sync(Chare &chare);
        void on_contribution(ByteReader &r);
        void on_sync_ready(CollectionId id, std::uint32_t count);
        void deliver(Envelope &&env);
        void forward(const Envelope &env);
        void execute(Envelope &&env);
        void handle(Packet &&p, Termination until);
        void start_wave();
        void finish_wave();
        void rebalance(CollectionId id);
    };
} // namespace duorun::actor
