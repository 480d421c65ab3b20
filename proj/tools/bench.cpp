// Command-line driver: runs benchmark trial groups into CSV and renders reports.

#include "duorun/errors.hpp"
#include "duorun/harness.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <set>

using namespace duorun;
using namespace duorun::harness;

namespace
{
    struct Common
    {
        std::vector<int> workers{2};
        std::string backend = "inproc";
        std::vector<std::string> runtimes{"spmd"};
        int trials = 10;
        std::uint64_t seed = 1;
        std::string out;
        bool quiet = false;
    };

    void add_common(CLI::App &cmd, Common &c, const std::string &default_out)
    {
        c.out = default_out;
        cmd.add_option("--workers", c.workers, "Worker counts (one group each)")->capture_default_str();
        cmd.add_option("--backend", c.backend, "inproc or tcp")->capture_default_str();
        cmd.add_option("--runtime", c.runtimes, "spmd and/or actor")->capture_default_str();
        cmd.add_option("--trials", c.trials, "Trials per group")->capture_default_str();
        cmd.add_option("--out", c.out, "CSV output path")->capture_default_str();
        cmd.add_flag("--quiet", c.quiet, "Only report failures");
    }

    WorldConfig world_of(const Common &c, int workers)
    {
        WorldConfig w;
        w.n_workers = workers;
        w.backend = parse_backend(c.backend);
        return w;
    }

    std::string label_of(const GroupConfig &g)
    {
        std::string s = to_string(g.kind) + " " + to_string(g.runtime()) + " W=" +
                        std::to_string(g.world.n_workers) + " " + to_string(g.world.backend);
        if (g.runtime() == RuntimeKind::actor && g.kind != BenchmarkKind::latency &&
            g.kind != BenchmarkKind::bandwidth)
        {
            s += " odf=" + std::to_string(g.odf());
        }
        if (g.lb_period() > 0)
        {
            s += " lb=" + std::to_string(g.lb_period());
        }
        return s;
    }

    // Adds the group unless an identical configuration is already planned.
    void add_group(ExperimentPlan &plan, std::set<std::string> &seen, const GroupConfig &g, int trials)
    {
        if (seen.insert(config_hash(g)).second)
        {
            plan.groups.push_back({label_of(g), g, trials});
        }
    }

    int execute(const ExperimentPlan &plan, const Common &c)
    {
        RunnerOptions opts;
        opts.on_event = [&](const ExperimentEvent &e) {
            const bool always = e.kind == EventKind::trial_failed;
            if (c.quiet && !always)
            {
                return;
            }
            switch (e.kind)
            {
            case EventKind::group_begin:
                std::cerr << "group " << e.group << ": " << plan.groups[static_cast<std::size_t>(e.group)].label
                          << '\n';
                break;
            case EventKind::trial_failed:
                std::cerr << "  trial " << e.trial << " failed: " << e.detail << '\n';
                break;
            case EventKind::summary:
                std::cerr << "  " << e.detail << '\n';
                break;
            case EventKind::group_end:
                std::cerr << "  " << e.detail << '\n';
                break;
            default:
                break;
            }
        };
        const auto result = run_experiment(plan, c.seed, opts);
        write_csv(c.out, result.records);
        write_metadata(c.out + ".meta.json", plan, result, c.seed, opts);
        if (!c.quiet)
        {
            std::cerr << "wrote " << result.records.size() << " records to " << c.out << '\n';
        }
        return result.incomplete_groups.empty() ? 0 : 3;
    }
} // namespace

int main(int argc, char **argv)
{
    CLI::App app{"Message-passing and actor runtime benchmarks"};
    app.require_subcommand(1);

    std::optional<std::uint64_t> seed_opt;

    // latency / bandwidth
    Common micro;
    std::size_t min_size = 16;
    std::size_t max_size = std::size_t{4} << 20;
    int window = microbench::kDefaultWindow;
    auto *latency = app.add_subcommand("latency", "Ping-pong latency over a message size sweep");
    auto *bandwidth = app.add_subcommand("bandwidth", "Windowed streaming bandwidth over a message size sweep");
    for (auto *cmd : {latency, bandwidth})
    {
        add_common(*cmd, micro, cmd->get_name() + ".csv");
        cmd->add_option("--min-size", min_size, "Smallest message in bytes")->capture_default_str();
        cmd->add_option("--max-size", max_size, "Largest message in bytes")->capture_default_str();
        cmd->add_option("--seed", seed_opt, "Trial-order seed (default: DUORUN_SEED or 1)");
    }
    bandwidth->add_option("--window", window, "Messages per acknowledgement")->capture_default_str();

    // stencil
    Common sten;
    stencil::StencilConfig scfg;
    std::vector<int> sodf{1};
    auto *stencil_cmd = app.add_subcommand("stencil", "2D Jacobi stencil");
    add_common(*stencil_cmd, sten, "stencil.csv");
    stencil_cmd->add_option("--n", scfg.n, "Interior rows")->capture_default_str();
    stencil_cmd->add_option("--m", scfg.m, "Interior columns")->capture_default_str();
    stencil_cmd->add_option("--iters", scfg.iterations, "Timed iterations")->capture_default_str();
    stencil_cmd->add_option("--warmups", scfg.warmups, "Untimed iterations")->capture_default_str();
    stencil_cmd->add_option("--odf", sodf, "Chares per worker in actor mode")->capture_default_str();
    stencil_cmd->add_option("--seed", seed_opt, "Trial-order seed (default: DUORUN_SEED or 1)");

    // pic
    Common part;
    pic::PicConfig pcfg;
    int L = pcfg.mesh.L;
    double q = pcfg.mesh.q;
    std::vector<int> podf{1};
    std::vector<int> lb{0};
    auto *pic_cmd = app.add_subcommand("pic", "Particle-in-cell proxy");
    add_common(*pic_cmd, part, "pic.csv");
    pic_cmd->add_option("--l", L, "Cells per side")->capture_default_str();
    pic_cmd->add_option("--particles", pcfg.dist.total, "Particle count")->capture_default_str();
    pic_cmd->add_option("--iters", pcfg.iterations, "Timed iterations")->capture_default_str();
    pic_cmd->add_option("--warmups", pcfg.warmups, "Untimed iterations")->capture_default_str();
    pic_cmd->add_option("--r", pcfg.dist.r, "Column decay ratio")->capture_default_str();
    pic_cmd->add_option("--k", pcfg.dist.k, "Distribution parameter (only 0)")->capture_default_str();
    pic_cmd->add_option("--q", q, "Mesh charge magnitude")->capture_default_str();
    pic_cmd->add_option("--odf", podf, "Chares per worker in actor mode")->capture_default_str();
    pic_cmd->add_option("--lb-period", lb, "Iterations between rebalances (0: never)")->capture_default_str();
    pic_cmd->add_option("--seed", seed_opt, "Particle and trial-order seed (default: DUORUN_SEED or 1)");

    // report
    std::vector<std::string> inputs;
    std::string out_dir;
    double alpha = 0.01;
    auto *report = app.add_subcommand("report", "Charts, interval summaries and rank tests from CSV files");
    report->add_option("--input", inputs, "CSV files")->required();
    report->add_option("--out", out_dir, "Output directory")->required();
    report->add_option("--alpha", alpha, "Significance threshold")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try
    {
        const std::uint64_t seed = seed_opt ? *seed_opt : resolve_seed(1);
        ExperimentPlan plan;
        std::set<std::string> seen;

        if (latency->parsed() || bandwidth->parsed())
        {
            micro.seed = seed;
            for (const auto &rt : micro.runtimes)
            {
                for (int w : micro.workers)
                {
                    GroupConfig g;
                    g.kind = latency->parsed() ? BenchmarkKind::latency : BenchmarkKind::bandwidth;
                    g.world = world_of(micro, w);
                    g.bench.runtime = parse_runtime(rt);
                    g.bench.sweep = {min_size, max_size};
                    g.bench.window = window;
                    add_group(plan, seen, g, micro.trials);
                }
            }
            return execute(plan, micro);
        }
        if (stencil_cmd->parsed())
        {
            sten.seed = seed;
            for (const auto &rt : sten.runtimes)
            {
                for (int w : sten.workers)
                {
                    for (int odf : sodf)
                    {
                        GroupConfig g;
                        g.kind = BenchmarkKind::stencil;
                        g.world = world_of(sten, w);
                        g.stencil = scfg;
                        g.stencil.runtime = parse_runtime(rt);
                        g.stencil.odf = g.stencil.runtime == RuntimeKind::actor ? odf : 1;
                        add_group(plan, seen, g, sten.trials);
                    }
                }
            }
            return execute(plan, sten);
        }
        if (pic_cmd->parsed())
        {
            part.seed = seed;
            pcfg.mesh = pic::PicMeshConfig::with_defaults(L, 1.0, q);
            pcfg.dist.seed = seed;
            for (const auto &rt : part.runtimes)
            {
                for (int w : part.workers)
                {
                    for (int odf : podf)
                    {
                        for (int period : lb)
                        {
                            GroupConfig g;
                            g.kind = BenchmarkKind::pic;
                            g.world = world_of(part, w);
                            g.pic = pcfg;
                            g.pic.runtime = parse_runtime(rt);
                            const bool actor = g.pic.runtime == RuntimeKind::actor;
                            g.pic.odf = actor ? odf : 1;
                            g.pic.lb_period = actor ? period : 0;
                            g.pic.validate();
                            add_group(plan, seen, g, part.trials);
                        }
                    }
                }
            }
            return execute(plan, part);
        }
        if (report->parsed())
        {
            const auto r = write_report(inputs, out_dir, alpha);
            for (const auto &w : r.warnings)
            {
                std::cerr << "warning: " << w << '\n';
            }
            if (r.malformed > 0)
            {
                std::cerr << "skipped " << r.malformed << " malformed rows\n";
            }
            for (const auto &f : r.files)
            {
                std::cout << f << '\n';
            }
            return 0;
        }
    }
    catch (const ConfigError &e)
    {
        std::cerr << "configuration error: " << e.what() << '\n';
        return 2;
    }
    catch (const std::exception &e)
    {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
