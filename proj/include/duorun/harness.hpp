#pragma once

// Experiment orchestration: trial groups run in a seeded random order,
// records persisted as CSV, bootstrap confidence intervals, Mann-Whitney U
// tests and SVG charts.

#include "duorun/microbench.hpp"
#include "duorun/phase.hpp"
#include "duorun/pic.hpp"
#include "duorun/stencil2d.hpp"
#include "duorun/transport.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace duorun::harness
{
    // ---- statistics ---------------------------------------------------------

    struct StatsSummary
    {
        double mean = 0.0;
        double ci_low = 0.0;
        double ci_high = 0.0;
        double level = 0.99;
        std::size_t n_samples = 0;
        int resamples = 0;
    };

    inline constexpr double kDefaultLevel = 0.99;
    inline constexpr int kDefaultResamples = 10'000;

    /// Percentile bootstrap of the mean. Quantiles of the sorted resampled
    /// means use linear interpolation between order statistics. Throws
    /// UsageError on empty input or a level outside (0, 1).
    StatsSummary bootstrap_ci(const std::vector<double> &samples, double level = kDefaultLevel,
                              int resamples = kDefaultResamples, std::uint64_t seed = 0);

    enum class UMethod
    {
        exact,
        normal_approx
    };

    const char *to_string(UMethod method) noexcept;

    struct UTestResult
    {
        /// U for the first sample: pairs (x, y) with x > y, ties counted half.
        double u_statistic = 0.0;
        double p_two_sided = 1.0;
        UMethod method = UMethod::exact;
    };

    /// Combined sample sizes up to this use full enumeration when there are no ties.
    inline constexpr std::size_t kExactLimit = 12;

    /// Two-sided test. Exact p counts rank splits with |U - mean| at least the
    /// observed distance; otherwise a normal approximation with tie and
    /// continuity corrections. Throws UsageError on empty input.
    UTestResult mann_whitney_u(const std::vector<double> &a, const std::vector<double> &b);

    // ---- seeded streams -----------------------------------------------------

    /// Seed for independent sub-stream `stream` of `seed` (splitmix64 finalizer).
    std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t stream) noexcept;

    /// Uniform integer in [0, n) from the high half of a 64x64 multiply.
    std::uint64_t bounded(std::mt19937_64 &rng, std::uint64_t n);

    /// Fisher-Yates permutation of 0..trials-1 drawn from mt19937_64(seed).
    std::vector<int> trial_order(int trials, std::uint64_t seed);

    // ---- records ------------------------------------------------------------

    struct TrialRecord
    {
        std::string benchmark;
        std::string runtime;
        std::string backend;
        int workers = 1;
        int odf = 1;
        int lb_period = 0;
        int trial = 0;
        int iteration = 0;
        std::optional<std::uint64_t> size_bytes;
        std::string metric;
        double value = 0.0;
        std::string unit;
        std::uint64_t seed = 0;
        std::string config_hash;

        friend bool operator==(const TrialRecord &, const TrialRecord &) = default;
    };

    extern const char *const kCsvHeader;

    /// RFC 4180: CRLF line ends, fields quoted only when they need it, floats
    /// with 17 significant digits, empty field for a missing size.
    void write_csv(std::ostream &out, const std::vector<TrialRecord> &records);
    /// Throws Error when the file cannot be written.
    void write_csv(const std::string &path, const std::vector<TrialRecord> &records);

    struct CsvContents
    {
        std::vector<TrialRecord> records;
        /// Rows skipped because they had the wrong shape or an unparseable field.
        std::size_t malformed = 0;
        std::vector<std::string> warnings;
    };

    /// Throws ConfigError when the header does not match kCsvHeader.
    CsvContents parse_csv(std::istream &in);
    CsvContents read_csv(const std::string &path);

    // ---- plans --------------------------------------------------------------

    enum class BenchmarkKind
    {
        latency,
        bandwidth,
        stencil,
        pic
    };

    std::string to_string(BenchmarkKind kind);
    BenchmarkKind parse_benchmark(std::string_view text);

    /// Full configuration of one trial group. Only the member matching `kind` is used.
    struct GroupConfig
    {
        BenchmarkKind kind = BenchmarkKind::latency;
        WorldConfig world;
        microbench::BenchOptions bench;
        stencil::StencilConfig stencil;
        pic::PicConfig pic;

        RuntimeKind runtime() const;
        int odf() const;
        int lb_period() const;
    };

    /// Canonical JSON of the parts of a config that affect results (ports and
    /// timeouts excluded).
    std::string config_json(const GroupConfig &config);
    /// FNV-1a 64 of config_json, 16 hex digits.
    std::string config_hash(const GroupConfig &config);

    struct ExperimentGroup
    {
        std::string label;
        GroupConfig config;
        int trials = 10;
    };

    struct ExperimentPlan
    {
        std::vector<ExperimentGroup> groups;

        void validate() const;
    };

    // ---- runner -------------------------------------------------------------

    enum class EventKind
    {
        group_begin,
        /// `order` holds the execution order of the group's trials.
        order,
        trial_begin,
        /// A benchmark phase reported by a worker; see `phase`.
        phase,
        trial_end,
        trial_failed,
        /// `summary` holds the statistics of one metric.
        summary,
        group_end
    };

    const char *to_string(EventKind kind) noexcept;

    struct MetricSummary
    {
        int group = 0;
        std::string metric;
        std::optional<std::uint64_t> size_bytes;
        /// Per-trial values (mean over the trial's iterations), in trial index order.
        std::vector<double> trial_values;
        StatsSummary stats;
    };

    struct ExperimentEvent
    {
        EventKind kind = EventKind::group_begin;
        int group = -1;
        int trial = -1;
        PhaseEvent phase;
        std::vector<int> order;
        std::optional<MetricSummary> summary;
        std::string detail;
    };

    struct RunnerOptions
    {
        double level = kDefaultLevel;
        int resamples = kDefaultResamples;
        /// Progress callback, called on the orchestrating thread for
        /// non-phase events.
        std::function<void(const ExperimentEvent &)> on_event;
    };

    struct ExperimentResult
    {
        std::vector<TrialRecord> records;
        std::vector<ExperimentEvent> events;
        std::vector<MetricSummary> summaries;
        /// Indices of groups with at least one failed trial.
        std::vector<int> incomplete_groups;
    };

    /// Runs every group in plan order. Within a group, trials execute in the
    /// order trial_order(trials, substream_seed(seed, group)). A failing trial
    /// is logged and marks its group incomplete; the remaining trials still run.
    ExperimentResult run_experiment(const ExperimentPlan &plan, std::uint64_t seed,
                                    const RunnerOptions &options = {});

    /// Sidecar describing the plan, seed and statistical method.
    void write_metadata(const std::string &path, const ExperimentPlan &plan, const ExperimentResult &result,
                        std::uint64_t seed, const RunnerOptions &options = {});

    // ---- reporting ----------------------------------------------------------

    /// One chart point: a series at one x value.
    struct PointSummary
    {
        std::string benchmark;
        std::string metric;
        std::string unit;
        std::string series;
        /// size_bytes for sweeps, otherwise workers.
        double x = 0.0;
        bool x_is_size = false;
        std::vector<double> trial_values;
        StatsSummary stats;
    };

    /// Groups records by (benchmark, metric, series, x). Series names are the
    /// runtime, extended with backend/odf/lb when those vary inside a chart.
    /// Each trial contributes the mean of its iterations.
    std::vector<PointSummary> summarize(const std::vector<TrialRecord> &records, double level = kDefaultLevel,
                                        int resamples = kDefaultResamples, std::uint64_t seed = 0);

    struct PlotReport
    {
        std::vector<std::string> files;
        std::size_t malformed = 0;
        std::vector<std::string> warnings;
    };

    /// One SVG per (benchmark, metric) with CI bars; log-scaled x for size sweeps.
    PlotReport emit_plots(const std::vector<std::string> &csv_paths, const std::string &out_dir);
    PlotReport emit_plots(const std::vector<TrialRecord> &records, const std::string &out_dir);

    /// Writes plots, summary.csv (point statistics) and comparisons.csv
    /// (pairwise Mann-Whitney between series at equal x, flagged significant
    /// when p <= alpha).
    PlotReport write_report(const std::vector<std::string> &csv_paths, const std::string &out_dir,
                            double alpha = 0.01);
} // namespace duorun::harness
