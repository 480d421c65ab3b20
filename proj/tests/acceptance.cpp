// Acceptance suite: one pass/fail line per criterion.
//
//   acceptance                  run every criterion
//   acceptance --criterion 3    run one

#include "duorun/actor.hpp"
#include "duorun/harness.hpp"
#include "duorun/launch.hpp"
#include "duorun/microbench.hpp"
#include "duorun/pic.hpp"
#include "duorun/stencil2d.hpp"

#include "oracles/stats_oracle.hpp"
#include "oracles/stencil_oracle.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>

using namespace duorun;
using namespace duorun::harness;

namespace
{
    // Pinned tolerances.
    constexpr double kExactPTolerance = 1e-12;
    constexpr double kCoverageTarget = 0.99;
    constexpr double kCoverageSlack = 0.02;
    constexpr double kMinSkew = 4.0;
    constexpr double kMinLbSpeedup = 1.3;
    constexpr double kMinImbalanceDrop = 0.30;

    struct Outcome
    {
        bool pass = false;
        std::string detail;
    };

    WorldConfig world(int workers, Backend backend)
    {
        WorldConfig w;
        w.n_workers = workers;
        w.backend = backend;
        return w;
    }

    Bytes encode_u64(std::uint64_t v)
    {
        ByteWriter w;
        w.put_u64(v);
        return std::move(w).take();
    }

    bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

    double median(std::vector<double> v)
    {
        if (v.empty())
        {
            return NAN;
        }
        std::sort(v.begin(), v.end());
        const auto n = v.size();
        return n % 2 == 1 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
    }

    std::string fmt(const char *f, double v)
    {
        char buf[64];
        std::snprintf(buf, sizeof buf, f, v);
        return buf;
    }

    // ---- 1 -------------------------------------------------------------------

    Outcome stencil_equivalence()
    {
        const std::uint64_t seed = 0x5eed;
        stencil::InitialCondition init{[seed](int i, int j) { return oracle::hashed_cell(seed, i, j); },
                                       [seed](int i, int j) { return oracle::hashed_cell(seed ^ 0xB0B, i, j); },
                                       ""};
        struct Variant
        {
            RuntimeKind runtime;
            int odf;
        };
        int runs = 0;
        std::vector<std::string> mismatches;
        for (auto [n, m] : {std::pair{32, 32}, std::pair{64, 64}, std::pair{64, 128}})
        {
            const auto want = oracle::serial_jacobi(n, m, 10, init.interior, init.boundary);
            for (int P : {1, 2, 4, 6, 8})
            {
                for (auto v : {Variant{RuntimeKind::spmd, 1}, Variant{RuntimeKind::actor, 1},
                               Variant{RuntimeKind::actor, 4}})
                {
                    for (auto backend : {Backend::in_process, Backend::tcp})
                    {
                        stencil::StencilConfig cfg;
                        cfg.n = n;
                        cfg.m = m;
                        cfg.iterations = 10;
                        cfg.runtime = v.runtime;
                        cfg.odf = v.odf;
                        cfg.initial = init;
                        cfg.collect_field = true;
                        std::vector<double> got;
                        std::mutex mu;
                        run_world(world(P, backend), [&](Endpoint &ep) {
                            auto r = stencil::run_stencil(ep, cfg);
                            if (ep.rank() == 0)
                            {
                                std::lock_guard lock(mu);
                                got = std::move(r.field);
                            }
                        });
                        ++runs;
                        bool equal = got.size() == want.size();
                        for (std::size_t k = 0; equal && k < want.size(); ++k)
                        {
                            equal = same_bits(got[k], want[k]);
                        }
                        if (!equal)
                        {
                            mismatches.push_back(std::to_string(n) + "x" + std::to_string(m) + " P=" +
                                                 std::to_string(P) + " " + to_string(v.runtime) + " odf=" +
                                                 std::to_string(v.odf) + " " + to_string(backend));
                        }
                    }
                }
            }
        }
        Outcome o;
        o.pass = mismatches.empty();
        o.detail = std::to_string(runs) + " runs, " + std::to_string(mismatches.size()) + " mismatches";
        if (!mismatches.empty())
        {
            o.detail += "; first: " + mismatches.front();
        }
        return o;
    }

    // ---- 2 -------------------------------------------------------------------

    pic::PicConfig pic_small_config()
    {
        pic::PicConfig cfg;
        cfg.mesh = pic::PicMeshConfig::with_defaults(256);
        cfg.dist = {0.98, 0, 100'000, 2024};
        cfg.iterations = 200;
        return cfg;
    }

    Outcome pic_equivalence()
    {
        auto cfg = pic_small_config();

        // Serial reference: every particle in id order, no decomposition.
        const auto mesh = pic::init_mesh_charges(cfg.mesh);
        auto all = pic::distribute_particles(cfg.mesh, cfg.dist);
        std::vector<pic::Particle> ps;
        for (std::size_t k = 0; k < all.size(); ++k)
        {
            ps.push_back(all.at(k));
        }
        for (int t = 0; t < cfg.iterations; ++t)
        {
            for (auto &p : ps)
            {
                pic::advance_particle(p, pic::field_at(mesh, cfg.mesh, p.x, p.y), cfg.mesh);
            }
        }
        const double want = pic::checksum(ps);

        struct Variant
        {
            RuntimeKind runtime;
            int odf;
        };
        int runs = 0;
        std::vector<std::string> mismatches;
        for (auto v : {Variant{RuntimeKind::spmd, 1}, Variant{RuntimeKind::actor, 1}, Variant{RuntimeKind::actor, 4},
                       Variant{RuntimeKind::actor, 8}})
        {
            for (int lb : {0, 80})
            {
                for (auto backend : {Backend::in_process, Backend::tcp})
                {
                    cfg.runtime = v.runtime;
                    cfg.odf = v.odf;
                    cfg.lb_period = lb;
                    std::vector<double> sums(4);
                    std::uint64_t count = 0;
                    std::mutex mu;
                    run_world(world(4, backend), [&](Endpoint &ep) {
                        const auto r = pic::run_pic(ep, cfg);
                        std::lock_guard lock(mu);
                        sums[static_cast<std::size_t>(ep.rank())] = r.checksum;
                        if (ep.rank() == 0)
                        {
                            count = r.particles;
                        }
                    });
                    ++runs;
                    bool ok = count == cfg.dist.total;
                    for (double s : sums)
                    {
                        ok = ok && same_bits(s, want);
                    }
                    if (!ok)
                    {
                        mismatches.push_back(to_string(v.runtime) + " odf=" + std::to_string(v.odf) + " lb=" +
                                             std::to_string(lb) + " " + to_string(backend) + " checksum " +
                                             fmt("%.17g", sums[0]));
                    }
                }
            }
        }
        Outcome o;
        o.pass = mismatches.empty();
        o.detail = std::to_string(runs) + " runs against serial checksum " + fmt("%.17g", want) + ", " +
                   std::to_string(mismatches.size()) + " mismatches";
        if (!mismatches.empty())
        {
            o.detail += "; first: " + mismatches.front();
        }
        return o;
    }

    // ---- 3 -------------------------------------------------------------------

    Outcome load_balancing_direction()
    {
        constexpr int kWorkers = 8;
        constexpr int kOdf = 8;
        constexpr int kPeriod = 80;
        pic::PicConfig base;
        // A weak mesh charge keeps particles near their starting columns, so
        // the column skew persists for the whole run.
        base.mesh = pic::PicMeshConfig::with_defaults(512, 1.0, 0.01);
        base.dist = {0.98, 0, 200'000, 7};
        base.iterations = 3 * kPeriod;

        // Skew precondition over the chare blocks.
        const pic::Ownership own(base.mesh.L, kWorkers, kOdf);
        const auto initial = pic::distribute_particles(base.mesh, base.dist);
        std::vector<double> per_block(static_cast<std::size_t>(own.blocks()), 0.0);
        for (std::size_t k = 0; k < initial.size(); ++k)
        {
            per_block[static_cast<std::size_t>(own.block_of(base.mesh, initial.x[k], initial.y[k]))] += 1.0;
        }
        const double skew = *std::max_element(per_block.begin(), per_block.end()) /
                            (static_cast<double>(initial.size()) / own.blocks());

        ExperimentPlan plan;
        auto group = [&](const std::string &label, RuntimeKind rt, int odf, int lb) {
            GroupConfig g;
            g.kind = BenchmarkKind::pic;
            g.world = world(kWorkers, Backend::in_process);
            g.pic = base;
            g.pic.runtime = rt;
            g.pic.odf = odf;
            g.pic.lb_period = lb;
            plan.groups.push_back({label, g, 10});
        };
        group("actor lb", RuntimeKind::actor, kOdf, kPeriod);
        group("actor no lb", RuntimeKind::actor, kOdf, 0);
        group("spmd static", RuntimeKind::spmd, 1, 0);
        RunnerOptions opts;
        opts.resamples = 1000;
        const auto res = run_experiment(plan, 3, opts);
        if (!res.incomplete_groups.empty())
        {
            return {false, "experiment had failed trials"};
        }

        std::map<std::string, std::vector<double>> totals;
        std::map<int, std::vector<double>> lb_imbalance;
        const auto lb_hash = config_hash(plan.groups[0].config);
        std::map<std::string, std::string> name_of;
        for (const auto &g : plan.groups)
        {
            name_of[config_hash(g.config)] = g.label;
        }
        std::map<int, std::vector<double>> pre;
        std::map<int, std::vector<double>> post;
        for (const auto &r : res.records)
        {
            if (r.metric == "total_s")
            {
                totals[name_of[r.config_hash]].push_back(r.value);
            }
            if (r.metric == "imbalance" && r.config_hash == lb_hash)
            {
                if (r.iteration < kPeriod)
                {
                    pre[r.trial].push_back(r.value);
                }
                else if (r.iteration < 2 * kPeriod)
                {
                    post[r.trial].push_back(r.value);
                }
            }
        }
        std::vector<double> drops;
        std::vector<double> pre_m;
        std::vector<double> post_m;
        for (const auto &[trial, values] : pre)
        {
            pre_m.push_back(median(values));
            post_m.push_back(median(post[trial]));
            drops.push_back(1.0 - post_m.back() / pre_m.back());
        }
        const double t_lb = median(totals["actor lb"]);
        const double vs_actor = median(totals["actor no lb"]) / t_lb;
        const double vs_spmd = median(totals["spmd static"]) / t_lb;
        const double drop = median(drops);

        Outcome o;
        o.pass = skew >= kMinSkew && vs_actor >= kMinLbSpeedup && vs_spmd >= kMinLbSpeedup &&
                 drop >= kMinImbalanceDrop;
        o.detail = "busiest block " + fmt("%.2f", skew) + "x mean; median total s: lb " + fmt("%.3f", t_lb) +
                   ", actor no lb " + fmt("%.3f", median(totals["actor no lb"])) + ", spmd " +
                   fmt("%.3f", median(totals["spmd static"])) + "; speedup vs actor " + fmt("%.2f", vs_actor) +
                   "x, vs spmd " + fmt("%.2f", vs_spmd) + "x (need " + fmt("%.1f", kMinLbSpeedup) +
                   "x); imbalance " + fmt("%.2f", median(pre_m)) + " -> " + fmt("%.2f", median(post_m)) +
                   " after first rebalance, drop " + fmt("%.0f", drop * 100) + "% (need " +
                   fmt("%.0f", kMinImbalanceDrop * 100) + "%)";
        return o;
    }

    // ---- 4 -------------------------------------------------------------------

    Outcome overhead_direction()
    {
        ExperimentPlan plan;
        for (auto rt : {RuntimeKind::spmd, RuntimeKind::actor})
        {
            GroupConfig g;
            g.kind = BenchmarkKind::latency;
            g.world = world(2, Backend::in_process);
            g.bench.runtime = rt;
            g.bench.sweep = {16, std::size_t{4} << 20};
            plan.groups.push_back({to_string(rt), g, 10});
        }
        RunnerOptions opts;
        opts.resamples = 1000;
        const auto res = run_experiment(plan, 4, opts);
        if (!res.incomplete_groups.empty())
        {
            return {false, "experiment had failed trials"};
        }
        std::map<std::pair<std::string, std::uint64_t>, std::vector<double>> lat;
        for (const auto &r : res.records)
        {
            lat[{r.runtime, *r.size_bytes}].push_back(r.value);
        }
        int sizes = 0;
        std::vector<std::string> violations;
        double worst = INFINITY;
        for (auto size : microbench::MessageSizeSweep{}.sizes())
        {
            const double s = median(lat[{"spmd", size}]);
            const double a = median(lat[{"actor", size}]);
            ++sizes;
            worst = std::min(worst, a / s);
            if (!(a >= s))
            {
                violations.push_back(std::to_string(size) + "B (actor " + fmt("%.3g", a) + " < spmd " +
                                     fmt("%.3g", s) + " us)");
            }
        }
        Outcome o;
        o.pass = sizes == 19 && violations.empty();
        o.detail = std::to_string(sizes) + " sizes, smallest actor/spmd median ratio " + fmt("%.3f", worst);
        for (const auto &v : violations)
        {
            o.detail += "; " + v;
        }
        return o;
    }

    // ---- 5 -------------------------------------------------------------------

    Outcome schedule_conformance()
    {
        using microbench::BenchKind;
        int checked = 0;
        bool ok = true;
        std::vector<std::size_t> probes{1, 16, 4096, 8191, 8192, 8193, std::size_t{4} << 20};
        const auto sizes = microbench::MessageSizeSweep{16, std::size_t{4} << 20}.sizes();
        probes.insert(probes.end(), sizes.begin(), sizes.end());
        for (auto size : probes)
        {
            for (auto kind : {BenchKind::latency, BenchKind::bandwidth})
            {
                const auto s = microbench::iteration_schedule(size, kind);
                ok = ok && s.iterations == (size < 8192 ? 1000 : 100);
                ok = ok && s.warmups == (kind == BenchKind::latency ? 60 : 10);
                ++checked;
            }
        }
        std::vector<std::size_t> want;
        for (std::size_t s = 16; s <= (std::size_t{4} << 20); s *= 2)
        {
            want.push_back(s);
        }
        ok = ok && want.size() == 19 && sizes == want;
        return {ok, std::to_string(checked) + " schedule probes, sweep of " + std::to_string(sizes.size()) + " sizes"};
    }

    // ---- 6 -------------------------------------------------------------------

    Outcome statistics_oracles()
    {
        std::mt19937_64 rng(606);
        std::uniform_real_distribution<double> val(0.0, 1.0);
        int u_mismatch = 0;
        double worst_p = 0.0;
        for (int c = 0; c < 200; ++c)
        {
            std::vector<double> a(1 + bounded(rng, 5));
            std::vector<double> b(1 + bounded(rng, 5));
            for (auto &v : a)
            {
                v = val(rng);
            }
            for (auto &v : b)
            {
                v = val(rng) + 0.25 * static_cast<double>(c % 4);
            }
            const auto r = mann_whitney_u(a, b);
            u_mismatch += r.u_statistic == oracle::pair_u(a, b) && r.method == UMethod::exact ? 0 : 1;
            worst_p = std::max(worst_p, std::abs(r.p_two_sided - oracle::enumerated_p(a, b)));
        }
        const auto example = mann_whitney_u({1, 2, 3}, {4, 5, 6});

        std::normal_distribution<double> nd;
        int covered = 0;
        constexpr int kDatasets = 1000;
        for (int d = 0; d < kDatasets; ++d)
        {
            std::vector<double> x(30);
            for (auto &v : x)
            {
                v = nd(rng);
            }
            const auto s = bootstrap_ci(x, 0.99, 10'000, static_cast<std::uint64_t>(d));
            covered += s.ci_low <= 0.0 && 0.0 <= s.ci_high ? 1 : 0;
        }
        const double coverage = static_cast<double>(covered) / kDatasets;

        Outcome o;
        o.pass = u_mismatch == 0 && worst_p <= kExactPTolerance && example.u_statistic == 0.0 &&
                 example.p_two_sided == 0.1 && std::abs(coverage - kCoverageTarget) <= kCoverageSlack;
        o.detail = "U mismatches " + std::to_string(u_mismatch) + "/200, max |dp| " + fmt("%.3g", worst_p) +
                   ", [1,2,3] vs [4,5,6] p=" + fmt("%.17g", example.p_two_sided) + ", 99% CI coverage " +
                   fmt("%.3f", coverage);
        return o;
    }

    // ---- 7 -------------------------------------------------------------------

    Outcome decomposition_optimality()
    {
        int feasible = 0;
        int infeasible = 0;
        std::vector<std::string> wrong;
        for (int n : {720, 1024, 5040, 24576, 720720})
        {
            for (int P = 1; P <= 1024; ++P)
            {
                const auto want = oracle::best_even_pair(P, n, n);
                if (want.p1 == 0)
                {
                    try
                    {
                        stencil::plan_decomposition(P, n, n);
                        wrong.push_back("P=" + std::to_string(P) + " n=" + std::to_string(n) + " accepted");
                    }
                    catch (const DecompositionError &)
                    {
                        ++infeasible;
                    }
                    continue;
                }
                const auto got = stencil::plan_decomposition(P, n, n);
                if (got.half_perimeter() != want.half_perimeter || got.p1 * got.p2 != P)
                {
                    wrong.push_back("P=" + std::to_string(P) + " n=" + std::to_string(n));
                }
                ++feasible;
            }
        }
        const auto large = stencil::plan_decomposition(48, 24576, 24576);
        Outcome o;
        o.pass = wrong.empty() && large.p1 == 6 && large.p2 == 8;
        o.detail = std::to_string(feasible) + " feasible and " + std::to_string(infeasible) +
                   " infeasible cases agree with brute force; (48, 24576, 24576) -> (" + std::to_string(large.p1) +
                   ", " + std::to_string(large.p2) + ")";
        if (!wrong.empty())
        {
            o.detail += "; " + std::to_string(wrong.size()) + " wrong, first " + wrong.front();
        }
        return o;
    }

    // ---- 8 -------------------------------------------------------------------

    enum : actor::EntryId
    {
        kHit = 1,
        kSync = 2,
        kDone = 3
    };

    /// Logs (sender, stream, sequence) of every hit; the log migrates with it.
    class SoakChare : public actor::Chare
    {
    public:
        std::vector<std::uint64_t> log;

        void pack(ByteWriter &out) const override { out.put_vector(log); }

        void hit(const actor::Envelope &env) { log.push_back(env.reader().get_u64()); }
        void sync(const actor::Envelope &) { at_sync(); }
        void resume_from_sync() override { contribute(1.0, ReduceOp::sum, kDone); }
        void done(const actor::Envelope &) { runtime().exit(); }
    };

    std::uint64_t hit_word(int src, int stream, std::uint64_t seq)
    {
        return (static_cast<std::uint64_t>(src) << 48) | (static_cast<std::uint64_t>(stream) << 40) | seq;
    }

    Outcome transport_soak()
    {
        constexpr int kWorkers = 4;
        constexpr std::uint64_t kMessages = 100'000;
        constexpr int kMigrationRounds = 50;
        constexpr std::uint32_t kChares = 16;
        std::ostringstream detail;
        bool pass = true;

        for (auto backend : {Backend::in_process, Backend::tcp})
        {
            // Raw transport: random destinations and tags, sequence per triple.
            std::atomic<std::uint64_t> received{0};
            std::atomic<std::uint64_t> disorder{0};
            std::atomic<std::uint64_t> duplicates{0};
            run_world(world(kWorkers, backend), [&](Endpoint &ep) {
                constexpr std::uint64_t kPerRank = kMessages / kWorkers;
                std::mt19937_64 rng(static_cast<std::uint64_t>(ep.rank()) + 17);
                std::map<std::pair<int, Tag>, std::uint64_t> next_out;
                std::vector<std::uint64_t> to_rank(kWorkers, 0);
                for (std::uint64_t k = 0; k < kPerRank; ++k)
                {
                    const int dest = static_cast<int>(bounded(rng, kWorkers));
                    const Tag tag = static_cast<Tag>(bounded(rng, 4));
                    ep.send_bytes(dest, tag, encode_u64(next_out[{dest, tag}]++));
                    ++to_rank[static_cast<std::size_t>(dest)];
                }
                // Everyone learns how many messages to expect.
                for (int d = 0; d < kWorkers; ++d)
                {
                    ep.send_bytes(d, 99, encode_u64(to_rank[static_cast<std::size_t>(d)]));
                }
                std::uint64_t expected = 0;
                for (int s = 0; s < kWorkers; ++s)
                {
                    auto p = ep.recv_bytes(s, 99);
                    ByteReader r(p.payload);
                    expected += r.get_u64();
                }
                std::map<std::pair<int, Tag>, std::uint64_t> next_in;
                for (std::uint64_t k = 0; k < expected; ++k)
                {
                    auto p = ep.recv(Match::tag_range(0, 3));
                    ByteReader r(p.payload);
                    const auto seq = r.get_u64();
                    auto &want = next_in[{p.src, p.tag}];
                    if (seq < want)
                    {
                        ++duplicates;
                    }
                    else if (seq > want)
                    {
                        ++disorder;
                    }
                    want = seq + 1;
                    ++received;
                }
                if (ep.try_recv(Match::any()).has_value())
                {
                    ++duplicates;
                }
            });

            // Actor layer: hits to chares that migrate every round, half of
            // them sent through the previous owner.
            std::mutex mu;
            std::multiset<std::uint64_t> seen;
            std::uint64_t actor_disorder = 0;
            std::atomic<std::uint64_t> migrations{0};
            std::atomic<std::uint64_t> rebalances{0};
            run_world(world(kWorkers, backend), [&](Endpoint &ep) {
                actor::RuntimeOptions opts;
                opts.strategy = [round = std::uint64_t{0}](const std::vector<double> &, const std::vector<int> &cur,
                                                           int W) mutable {
                    std::mt19937_64 rng(0xC0FFEE + round++);
                    auto owners = cur;
                    for (auto &o : owners)
                    {
                        o = (o + 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(W - 1))) % W;
                    }
                    return owners;
                };
                actor::Runtime rt(ep, opts);
                actor::CollectionSpec spec;
                spec.n_chares = kChares;
                rt.create_collection(1, spec,
                                     actor::ChareType<SoakChare>("soak")
                                         .create([](std::uint32_t) { return std::make_unique<SoakChare>(); })
                                         .restore([](std::uint32_t, ByteReader &in) {
                                             auto c = std::make_unique<SoakChare>();
                                             c->log = in.get_vector<std::uint64_t>();
                                             return c;
                                         })
                                         .entry(kHit, &SoakChare::hit, "hit")
                                         .entry(kSync, &SoakChare::sync, "sync")
                                         .entry(kDone, &SoakChare::done, "done")
                                         .def());
                std::mt19937_64 rng(static_cast<std::uint64_t>(ep.rank()) + 1000);
                constexpr std::uint64_t kPerRound = kMessages / kWorkers / kMigrationRounds;
                std::vector<std::uint64_t> seq(kChares * 2, 0);
                auto previous = rt.placement(1).owners();
                for (int round = 0; round < kMigrationRounds; ++round)
                {
                    for (std::uint64_t k = 0; k < kPerRound; ++k)
                    {
                        const auto c = static_cast<std::uint32_t>(bounded(rng, kChares));
                        const int stream = static_cast<int>(k % 2);
                        const auto word = hit_word(ep.rank(), stream, seq[c * 2 + static_cast<std::uint32_t>(stream)]++);
                        ByteWriter w;
                        w.put_u64(word);
                        actor::Envelope env{actor::ChareId{1, c}, kHit, 0, std::move(w).take()};
                        if (stream == 1)
                        {
                            rt.send_via(previous[c], env);
                        }
                        else
                        {
                            rt.send(env);
                        }
                    }
                    rt.run(actor::Termination::quiescence);
                    previous = rt.placement(1).owners();
                    for (auto *c : rt.local_chares(1))
                    {
                        rt.send(c->id(), kSync, 0);
                    }
                    rt.run();
                }
                migrations += rt.stats().migrations_in;
                rebalances += ep.rank() == 0 ? rt.stats().rebalances : 0;
                std::lock_guard lock(mu);
                for (auto *c : rt.local_chares(1))
                {
                    const auto &log = static_cast<SoakChare *>(c)->log;
                    std::map<std::uint64_t, std::uint64_t> last;
                    for (auto word : log)
                    {
                        seen.insert(word | (static_cast<std::uint64_t>(c->index()) << 56));
                        const auto key = word >> 40;
                        const auto s = word & ((std::uint64_t{1} << 40) - 1);
                        if (last.count(key) && s <= last[key])
                        {
                            ++actor_disorder;
                        }
                        last[key] = s;
                    }
                }
            });
            std::uint64_t actor_dupes = 0;
            for (auto it = seen.begin(); it != seen.end(); it = seen.upper_bound(*it))
            {
                actor_dupes += seen.count(*it) - 1;
            }
            const std::uint64_t actor_sent = kMessages;
            const bool ok = received == kMessages && disorder == 0 && duplicates == 0 && seen.size() == actor_sent &&
                            actor_dupes == 0 && actor_disorder == 0 && rebalances == kMigrationRounds &&
                            migrations >= static_cast<std::uint64_t>(kMigrationRounds);
            pass = pass && ok;
            detail << to_string(backend) << ": transport " << received << "/" << kMessages << " delivered, "
                   << disorder << " reordered, " << duplicates << " duplicated; actor " << seen.size() << "/"
                   << actor_sent << " delivered, " << actor_dupes << " duplicated, " << actor_disorder
                   << " reordered across " << rebalances << " rebalances (" << migrations << " chare moves). ";
        }
        return {pass, detail.str()};
    }

    // ---- 9 -------------------------------------------------------------------

    Outcome methodology()
    {
        ExperimentPlan plan;
        {
            GroupConfig g;
            g.kind = BenchmarkKind::stencil;
            g.world = world(2, Backend::in_process);
            g.stencil.n = 32;
            g.stencil.m = 32;
            g.stencil.iterations = 5;
            plan.groups.push_back({"stencil", g, 10});
        }
        {
            GroupConfig g;
            g.kind = BenchmarkKind::pic;
            g.world = world(2, Backend::in_process);
            g.pic.mesh = pic::PicMeshConfig::with_defaults(32);
            g.pic.dist = {0.95, 0, 2000, 1};
            g.pic.iterations = 10;
            g.pic.runtime = RuntimeKind::actor;
            g.pic.odf = 2;
            g.pic.lb_period = 5;
            plan.groups.push_back({"pic", g, 10});
        }
        {
            GroupConfig g;
            g.kind = BenchmarkKind::latency;
            g.world = world(2, Backend::in_process);
            g.bench.sweep = {16, 64};
            plan.groups.push_back({"latency", g, 3});
        }
        constexpr std::uint64_t kSeed = 909;
        const auto res = run_experiment(plan, kSeed);

        std::vector<std::string> problems;
        auto require = [&](bool cond, const std::string &what) {
            if (!cond)
            {
                problems.push_back(what);
            }
        };
        require(res.incomplete_groups.empty(), "all groups complete");

        std::map<int, std::vector<int>> order;
        std::map<int, std::vector<int>> begun;
        std::map<std::tuple<int, int, int>, std::vector<PhaseEvent>> phases;
        for (const auto &e : res.events)
        {
            if (e.kind == EventKind::order)
            {
                order[e.group] = e.order;
            }
            else if (e.kind == EventKind::trial_begin)
            {
                begun[e.group].push_back(e.trial);
            }
            else if (e.kind == EventKind::phase)
            {
                phases[{e.group, e.trial, e.phase.rank}].push_back(e.phase);
            }
        }
        for (int g = 0; g < static_cast<int>(plan.groups.size()); ++g)
        {
            const int trials = plan.groups[static_cast<std::size_t>(g)].trials;
            const auto gs = std::to_string(g);
            auto sorted = order[g];
            std::sort(sorted.begin(), sorted.end());
            std::vector<int> ident(static_cast<std::size_t>(trials));
            std::iota(ident.begin(), ident.end(), 0);
            require(sorted == ident, "group " + gs + " order is a permutation");
            require(order[g] == oracle::shuffled(trials, substream_seed(substream_seed(kSeed, g), 0)),
                    "group " + gs + " order matches the seeded shuffle");
            require(begun[g] == order[g], "group " + gs + " executed in permuted order");
        }
        require(order[0] != order[1], "groups draw independent orders");

        int app_trials = 0;
        int micro_sizes = 0;
        for (const auto &[key, seq] : phases)
        {
            const auto [g, trial, rank] = key;
            const auto kind = plan.groups[static_cast<std::size_t>(g)].config.kind;
            if (kind != BenchmarkKind::latency)
            {
                const bool shape = seq.size() == 5 && seq[0].phase == Phase::warmup && seq[0].count == 10 &&
                                   seq[1].phase == Phase::barrier && seq[2].phase == Phase::timed_begin &&
                                   seq[3].phase == Phase::barrier && seq[4].phase == Phase::timed_end;
                require(shape, "group " + std::to_string(g) + " trial " + std::to_string(trial) +
                                   ": 10 warmups, then a barrier-bracketed timed region");
                ++app_trials;
                continue;
            }
            // Per size: barrier, (rank 0) warmups and timed region, barrier.
            std::size_t i = 0;
            while (i < seq.size())
            {
                bool ok = seq[i].phase == Phase::barrier;
                const auto size = seq[i].size_bytes;
                ++i;
                if (rank == 0)
                {
                    ok = ok && i + 3 < seq.size() + 0 && seq[i].phase == Phase::warmup &&
                         seq[i].count == microbench::iteration_schedule(size, microbench::BenchKind::latency).warmups &&
                         seq[i + 1].phase == Phase::timed_begin && seq[i + 2].phase == Phase::timed_end;
                    i += 3;
                }
                ok = ok && i < seq.size() && seq[i].phase == Phase::barrier && seq[i].size_bytes == size;
                ++i;
                require(ok, "latency trial " + std::to_string(trial) + " rank " + std::to_string(rank) +
                                ": barrier-bracketed size " + std::to_string(size));
                micro_sizes += rank == 0 ? 1 : 0;
            }
        }
        require(app_trials == 2 * (10 + 10), "phase logs for every app trial and rank");
        require(micro_sizes == 3 * 3, "phase logs for every latency size");

        int summaries = 0;
        for (const auto &s : res.summaries)
        {
            const auto trials = static_cast<std::size_t>(plan.groups[static_cast<std::size_t>(s.group)].trials);
            const double mean = std::accumulate(s.trial_values.begin(), s.trial_values.end(), 0.0) /
                                static_cast<double>(s.trial_values.size());
            require(s.trial_values.size() == trials && s.stats.n_samples == trials && s.stats.level == 0.99 &&
                        s.stats.resamples == 10'000 && s.stats.mean == mean && s.stats.ci_low <= s.stats.ci_high,
                    "summary of " + s.metric + " is a 99% bootstrap CI of the trial mean");
            ++summaries;
        }
        require(summaries > 0, "summaries reported");

        Outcome o;
        o.pass = problems.empty();
        o.detail = std::to_string(res.events.size()) + " events, " + std::to_string(summaries) + " summaries";
        if (!problems.empty())
        {
            o.detail += "; " + std::to_string(problems.size()) + " problems, first: " + problems.front();
        }
        return o;
    }

    struct Criterion
    {
        int number;
        const char *title;
        Outcome (*run)();
    };

    const Criterion kCriteria[] = {
        {1, "stencil oracle equivalence", stencil_equivalence},
        {2, "particle-in-cell determinism and equivalence", pic_equivalence},
        {3, "load-balancing direction", load_balancing_direction},
        {4, "actor overhead direction", overhead_direction},
        {5, "microbenchmark schedule conformance", schedule_conformance},
        {6, "statistics oracles", statistics_oracles},
        {7, "decomposition optimality", decomposition_optimality},
        {8, "transport soak with migrations", transport_soak},
        {9, "methodology conformance", methodology},
    };
} // namespace

int main(int argc, char **argv)
{
    CLI::App app{"Acceptance checks"};
    std::vector<int> only;
    app.add_option("--criterion", only, "Criterion numbers to run (default: all)");
    CLI11_PARSE(app, argc, argv);

    int failed = 0;
    for (const auto &c : kCriteria)
    {
        if (!only.empty() && std::find(only.begin(), only.end(), c.number) == only.end())
        {
            continue;
        }
        const double t0 = monotonic_now();
        Outcome o;
        try
        {
            o = c.run();
        }
        catch (const std::exception &e)
        {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = monotonic_now() - t0;
        std::printf("%s criterion %d: %s [%.1f s] %s\n", o.pass ? "PASS" : "FAIL", c.number, c.title, secs,
                    o.detail.c_str());
        std::fflush(stdout);
        failed += o.pass ? 0 : 1;
    }
    return failed == 0 ? 0 : 1;
}
