#include "duorun/harness.hpp"

#include "duorun/errors.hpp"
#include "duorun/launch.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <mutex>

namespace duorun::harness
{
    const char *to_string(EventKind kind) noexcept
    {
        switch (kind)
        {
        case EventKind::group_begin:
            return "group_begin";
        case EventKind::order:
            return "order";
        case EventKind::trial_begin:
            return "trial_begin";
        case EventKind::phase:
            return "phase";
        case EventKind::trial_end:
            return "trial_end";
        case EventKind::trial_failed:
            return "trial_failed";
        case EventKind::summary:
            return "summary";
        case EventKind::group_end:
            return "group_end";
        }
        return "unknown";
    }

    void ExperimentPlan::validate() const
    {
        for (const auto &g : groups)
        {
            if (g.trials < 1)
            {
                throw ConfigError("group '" + g.label + "' needs at least one trial");
            }
            g.config.world.validate();
        }
    }

    namespace
    {
        struct TrialContext
        {
            const GroupConfig *config = nullptr;
            int trial = 0;
            std::uint64_t seed = 0;
            std::string hash;
        };

        TrialRecord base_record(const TrialContext &ctx)
        {
            const auto &c = *ctx.config;
            TrialRecord r;
            r.benchmark = to_string(c.kind);
            r.runtime = to_string(c.runtime());
            r.backend = to_string(c.world.backend);
            r.workers = c.world.n_workers;
            r.odf = c.odf();
            r.lb_period = c.lb_period();
            r.trial = ctx.trial;
            r.seed = ctx.seed;
            r.config_hash = ctx.hash;
            return r;
        }

        void add(std::vector<TrialRecord> &out, const TrialContext &ctx, int iteration, const std::string &metric,
                 double value, const std::string &unit, std::optional<std::uint64_t> size = std::nullopt)
        {
            auto r = base_record(ctx);
            r.iteration = iteration;
            r.metric = metric;
            r.value = value;
            r.unit = unit;
            r.size_bytes = size;
            out.push_back(std::move(r));
        }

        std::vector<TrialRecord> run_trial(const TrialContext &ctx, const PhaseHook &hook)
        {
            const auto &c = *ctx.config;
            std::vector<TrialRecord> out;
            std::mutex mu;
            run_world(c.world, [&](Endpoint &ep) {
                switch (c.kind)
                {
                case BenchmarkKind::latency:
                case BenchmarkKind::bandwidth: {
                    auto opts = c.bench;
                    opts.hook = hook;
                    const bool latency = c.kind == BenchmarkKind::latency;
                    const auto res = latency ? microbench::run_latency(ep, opts) : microbench::run_bandwidth(ep, opts);
                    if (ep.rank() == 0)
                    {
                        std::lock_guard lock(mu);
                        for (const auto &s : res)
                        {
                            add(out, ctx, 0, to_string(c.kind), s.value, latency ? "us" : "MB/s", s.size_bytes);
                        }
                    }
                    break;
                }
                case BenchmarkKind::stencil: {
                    auto cfg = c.stencil;
                    cfg.hook = hook;
                    cfg.collect_field = false;
                    const auto res = stencil::run_stencil(ep, cfg);
                    if (ep.rank() == 0)
                    {
                        std::lock_guard lock(mu);
                        for (std::size_t i = 0; i < res.iterations.size(); ++i)
                        {
                            add(out, ctx, static_cast<int>(i), "compute_s", res.iterations[i].compute_s, "s");
                            add(out, ctx, static_cast<int>(i), "comm_s", res.iterations[i].comm_s, "s");
                        }
                        add(out, ctx, 0, "total_s", res.total_s, "s");
                        add(out, ctx, 0, "checksum", res.checksum, "1");
                    }
                    break;
                }
                case BenchmarkKind::pic: {
                    auto cfg = c.pic;
                    cfg.hook = hook;
                    cfg.collect_particles = false;
                    const auto res = pic::run_pic(ep, cfg);
                    if (ep.rank() == 0)
                    {
                        std::lock_guard lock(mu);
                        for (std::size_t i = 0; i < res.iteration_s.size(); ++i)
                        {
                            add(out, ctx, static_cast<int>(i), "iteration_s", res.iteration_s[i], "s");
                            add(out, ctx, static_cast<int>(i), "imbalance", res.imbalance[i], "ratio");
                        }
                        add(out, ctx, 0, "total_s", res.total_s, "s");
                        add(out, ctx, 0, "lb_s", res.lb_s, "s");
                        add(out, ctx, 0, "rebalances", res.rebalances, "count");
                        add(out, ctx, 0, "particles", static_cast<double>(res.particles), "count");
                        add(out, ctx, 0, "checksum", res.checksum, "1");
                    }
                    break;
                }
                }
            });
            return out;
        }

        // Per-trial means of every (metric, size) in one group's records.
        std::vector<MetricSummary> summarize_group(int group, const std::vector<TrialRecord> &records, int trials,
                                                   const RunnerOptions &options, std::uint64_t seed)
        {
            using Key = std::pair<std::string, std::optional<std::uint64_t>>;
            std::map<Key, std::map<int, std::pair<double, int>>> acc;
            for (const auto &r : records)
            {
                auto &slot = acc[{r.metric, r.size_bytes}][r.trial];
                slot.first += r.value;
                ++slot.second;
            }
            std::vector<MetricSummary> out;
            std::uint64_t stream = 0;
            for (const auto &[key, per_trial] : acc)
            {
                MetricSummary m;
                m.group = group;
                m.metric = key.first;
                m.size_bytes = key.second;
                for (int t = 0; t < trials; ++t)
                {
                    const auto it = per_trial.find(t);
                    if (it != per_trial.end())
                    {
                        m.trial_values.push_back(it->second.first / it->second.second);
                    }
                }
                m.stats = bootstrap_ci(m.trial_values, options.level, options.resamples,
                                       substream_seed(seed, stream++));
                out.push_back(std::move(m));
            }
            return out;
        }

        ExperimentEvent event(EventKind kind, int group, int trial = -1)
        {
            ExperimentEvent e;
            e.kind = kind;
            e.group = group;
            e.trial = trial;
            return e;
        }

        std::string describe(const MetricSummary &m)
        {
            std::string s = m.metric;
            if (m.size_bytes)
            {
                s += " @" + std::to_string(*m.size_bytes) + "B";
            }
            char buf[128];
            std::snprintf(buf, sizeof buf, ": mean %.6g, %g%% CI [%.6g, %.6g], n=%zu", m.stats.mean,
                          m.stats.level * 100.0, m.stats.ci_low, m.stats.ci_high, m.stats.n_samples);
            return s + buf;
        }
    } // namespace

    ExperimentResult run_experiment(const ExperimentPlan &plan, std::uint64_t seed, const RunnerOptions &options)
    {
        plan.validate();
        ExperimentResult result;
        std::mutex mu;
        auto log = [&](ExperimentEvent e) {
            if (options.on_event)
            {
                options.on_event(e);
            }
            std::lock_guard lock(mu);
            result.events.push_back(std::move(e));
        };

        for (std::size_t gi = 0; gi < plan.groups.size(); ++gi)
        {
            const int g = static_cast<int>(gi);
            const auto &group = plan.groups[gi];
            TrialContext ctx;
            ctx.config = &group.config;
            ctx.seed = seed;
            ctx.hash = config_hash(group.config);

            auto begin = event(EventKind::group_begin, g);
            begin.detail = group.label + " " + config_json(group.config);
            log(begin);

            // Stream 0 of the group seed orders trials; stream 1 feeds the bootstrap.
            const auto group_seed = substream_seed(seed, gi);
            auto order = event(EventKind::order, g);
            order.order = trial_order(group.trials, substream_seed(group_seed, 0));
            log(order);

            std::vector<TrialRecord> group_records;
            bool failed = false;
            for (int trial : order.order)
            {
                ctx.trial = trial;
                log(event(EventKind::trial_begin, g, trial));
                const PhaseHook hook = [&, g, trial](const PhaseEvent &pe) {
                    auto e = event(EventKind::phase, g, trial);
                    e.phase = pe;
                    std::lock_guard lock(mu);
                    result.events.push_back(std::move(e));
                };
                try
                {
                    auto recs = run_trial(ctx, hook);
                    group_records.insert(group_records.end(), recs.begin(), recs.end());
                    log(event(EventKind::trial_end, g, trial));
                }
                catch (const std::exception &ex)
                {
                    failed = true;
                    auto e = event(EventKind::trial_failed, g, trial);
                    e.detail = ex.what();
                    log(e);
                }
            }

            // Records are stored in trial index order regardless of execution order.
            std::stable_sort(group_records.begin(), group_records.end(),
                             [](const TrialRecord &a, const TrialRecord &b) { return a.trial < b.trial; });
            if (!group_records.empty())
            {
                for (auto &m : summarize_group(g, group_records, group.trials, options,
                                               substream_seed(group_seed, 1)))
                {
                    auto e = event(EventKind::summary, g);
                    e.detail = describe(m);
                    e.summary = m;
                    log(e);
                    result.summaries.push_back(std::move(m));
                }
            }
            result.records.insert(result.records.end(), group_records.begin(), group_records.end());
            if (failed)
            {
                result.incomplete_groups.push_back(g);
            }
            auto end = event(EventKind::group_end, g);
            end.detail = failed ? "incomplete" : "complete";
            log(end);
        }
        return result;
    }
} // namespace duorun::harness
