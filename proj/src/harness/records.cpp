#include "duorun/harness.hpp"

#include "duorun/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace duorun::harness
{
    const char *const kCsvHeader =
        "benchmark,runtime,backend,workers,odf,lb_period,trial,iteration,size_bytes,metric,value,unit,seed,config_hash";

    namespace
    {
        constexpr std::size_t kFields = 14;

        void put_field(std::ostream &out, const std::string &v)
        {
            if (v.find_first_of(",\"\r\n") == std::string::npos)
            {
                out << v;
                return;
            }
            out << '"';
            for (char c : v)
            {
                if (c == '"')
                {
                    out << '"';
                }
                out << c;
            }
            out << '"';
        }

        std::string format_double(double v)
        {
            char buf[40];
            std::snprintf(buf, sizeof buf, "%.17g", v);
            return buf;
        }

        // Splits RFC 4180 text into rows. Returns false when a quoted field is
        // still open at the end of input; the partial row is then dropped.
        bool split_rows(const std::string &text, std::vector<std::vector<std::string>> &rows)
        {
            std::vector<std::string> row;
            std::string field;
            bool quoted = false;
            bool any = false;
            for (std::size_t i = 0; i < text.size(); ++i)
            {
                const char c = text[i];
                if (quoted)
                {
                    if (c == '"')
                    {
                        if (i + 1 < text.size() && text[i + 1] == '"')
                        {
                            field += '"';
                            ++i;
                        }
                        else
                        {
                            quoted = false;
                        }
                    }
                    else
                    {
                        field += c;
                    }
                    continue;
                }
                if (c == '"' && field.empty())
                {
                    quoted = true;
                    any = true;
                }
                else if (c == ',')
                {
                    row.push_back(std::move(field));
                    field.clear();
                    any = true;
                }
                else if (c == '\r' || c == '\n')
                {
                    if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n')
                    {
                        ++i;
                    }
                    if (any || !field.empty())
                    {
                        row.push_back(std::move(field));
                        rows.push_back(std::move(row));
                    }
                    row.clear();
                    field.clear();
                    any = false;
                }
                else
                {
                    field += c;
                    any = true;
                }
            }
            if (quoted)
            {
                return false;
            }
            if (any || !field.empty())
            {
                row.push_back(std::move(field));
                rows.push_back(std::move(row));
            }
            return true;
        }

        template <typename T> bool parse_number(const std::string &s, T &out)
        {
            if (s.empty())
            {
                return false;
            }
            const auto *end = s.data() + s.size();
            const auto [ptr, ec] = std::from_chars(s.data(), end, out);
            return ec == std::errc() && ptr == end;
        }

        bool parse_row(const std::vector<std::string> &f, TrialRecord &r)
        {
            r.benchmark = f[0];
            r.runtime = f[1];
            r.backend = f[2];
            r.metric = f[9];
            r.unit = f[11];
            r.config_hash = f[13];
            if (!parse_number(f[3], r.workers) || !parse_number(f[4], r.odf) || !parse_number(f[5], r.lb_period) ||
                !parse_number(f[6], r.trial) || !parse_number(f[7], r.iteration) || !parse_number(f[10], r.value) ||
                !parse_number(f[12], r.seed))
            {
                return false;
            }
            if (f[8].empty())
            {
                r.size_bytes.reset();
                return true;
            }
            std::uint64_t size = 0;
            if (!parse_number(f[8], size))
            {
                return false;
            }
            r.size_bytes = size;
            return true;
        }

        std::vector<std::string> header_fields()
        {
            std::vector<std::vector<std::string>> rows;
            split_rows(kCsvHeader, rows);
            return rows.front();
        }
    } // namespace

    void write_csv(std::ostream &out, const std::vector<TrialRecord> &records)
    {
        out << kCsvHeader << "\r\n";
        for (const auto &r : records)
        {
            put_field(out, r.benchmark);
            out << ',';
            put_field(out, r.runtime);
            out << ',';
            put_field(out, r.backend);
            out << ',' << r.workers << ',' << r.odf << ',' << r.lb_period << ',' << r.trial << ',' << r.iteration
                << ',';
            if (r.size_bytes)
            {
                out << *r.size_bytes;
            }
            out << ',';
            put_field(out, r.metric);
            out << ',' << format_double(r.value) << ',';
            put_field(out, r.unit);
            out << ',' << r.seed << ',';
            put_field(out, r.config_hash);
            out << "\r\n";
        }
    }

    void write_csv(const std::string &path, const std::vector<TrialRecord> &records)
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out)
        {
            throw Error("cannot open " + path + " for writing");
        }
        write_csv(out, records);
        out.flush();
        if (!out)
        {
            throw Error("write to " + path + " failed");
        }
    }

    CsvContents parse_csv(std::istream &in)
    {
        std::stringstream buf;
        buf << in.rdbuf();
        const std::string text = buf.str();
        std::vector<std::vector<std::string>> rows;
        CsvContents out;
        if (!split_rows(text, rows))
        {
            ++out.malformed;
            out.warnings.push_back("unterminated quoted field at end of input");
        }
        if (rows.empty() || rows.front() != header_fields())
        {
            throw ConfigError("CSV header does not match the trial record schema");
        }
        for (std::size_t i = 1; i < rows.size(); ++i)
        {
            const auto &f = rows[i];
            TrialRecord r;
            if (f.size() != kFields)
            {
                ++out.malformed;
                out.warnings.push_back("row " + std::to_string(i) + ": expected " + std::to_string(kFields) +
                                       " fields, found " + std::to_string(f.size()));
                continue;
            }
            if (!parse_row(f, r))
            {
                ++out.malformed;
                out.warnings.push_back("row " + std::to_string(i) + ": unparseable numeric field");
                continue;
            }
            out.records.push_back(std::move(r));
        }
        return out;
    }

    CsvContents read_csv(const std::string &path)
    {
        std::ifstream in(path, std::ios::binary);
        if (!in)
        {
            throw Error("cannot open " + path);
        }
        return parse_csv(in);
    }

    std::string to_string(BenchmarkKind kind)
    {
        switch (kind)
        {
        case BenchmarkKind::latency:
            return "latency";
        case BenchmarkKind::bandwidth:
            return "bandwidth";
        case BenchmarkKind::stencil:
            return "stencil";
        case BenchmarkKind::pic:
            return "pic";
        }
        return "unknown";
    }

    BenchmarkKind parse_benchmark(std::string_view text)
    {
        for (auto k : {BenchmarkKind::latency, BenchmarkKind::bandwidth, BenchmarkKind::stencil, BenchmarkKind::pic})
        {
            if (text == to_string(k))
            {
                return k;
            }
        }
        throw ConfigError("unknown benchmark '" + std::string(text) + "'");
    }

    RuntimeKind GroupConfig::runtime() const
    {
        switch (kind)
        {
        case BenchmarkKind::stencil:
            return stencil.runtime;
        case BenchmarkKind::pic:
            return pic.runtime;
        default:
            return bench.runtime;
        }
    }

    int GroupConfig::odf() const
    {
        if (runtime() == RuntimeKind::spmd)
        {
            return 1;
        }
        switch (kind)
        {
        case BenchmarkKind::stencil:
            return stencil.odf;
        case BenchmarkKind::pic:
            return pic.odf;
        default:
            return 1;
        }
    }

    int GroupConfig::lb_period() const
    {
        return kind == BenchmarkKind::pic && pic.runtime == RuntimeKind::actor ? pic.lb_period : 0;
    }

    namespace
    {
        nlohmann::json config_object(const GroupConfig &c)
        {
            nlohmann::json j;
            j["benchmark"] = to_string(c.kind);
            j["workers"] = c.world.n_workers;
            j["backend"] = to_string(c.world.backend);
            j["world_seed"] = c.world.seed;
            j["max_payload"] = c.world.max_payload;
            j["runtime"] = to_string(c.runtime());
            switch (c.kind)
            {
            case BenchmarkKind::latency:
            case BenchmarkKind::bandwidth: {
                const auto kind = c.kind == BenchmarkKind::latency ? microbench::BenchKind::latency
                                                                    : microbench::BenchKind::bandwidth;
                nlohmann::json schedule = nlohmann::json::array();
                for (auto size : c.bench.sweep.sizes())
                {
                    const auto s = c.bench.schedule ? c.bench.schedule(size, kind)
                                                    : microbench::iteration_schedule(size, kind);
                    schedule.push_back({size, s.iterations, s.warmups});
                }
                j["min_bytes"] = c.bench.sweep.min_bytes;
                j["max_bytes"] = c.bench.sweep.max_bytes;
                j["window"] = c.bench.window;
                j["schedule"] = schedule;
                break;
            }
            case BenchmarkKind::stencil:
                j["n"] = c.stencil.n;
                j["m"] = c.stencil.m;
                j["iterations"] = c.stencil.iterations;
                j["warmups"] = c.stencil.warmups;
                j["odf"] = c.odf();
                j["initial"] = c.stencil.initial.name.empty() ? "custom" : c.stencil.initial.name;
                j["allow_uneven"] = c.stencil.allow_uneven;
                break;
            case BenchmarkKind::pic:
                j["L"] = c.pic.mesh.L;
                j["h"] = c.pic.mesh.h;
                j["dt"] = c.pic.mesh.dt;
                j["eps"] = c.pic.mesh.eps;
                j["q"] = c.pic.mesh.q;
                j["distribution"] = "geometric";
                j["r"] = c.pic.dist.r;
                j["k"] = c.pic.dist.k;
                j["particles"] = c.pic.dist.total;
                j["seed"] = c.pic.dist.seed;
                j["iterations"] = c.pic.iterations;
                j["warmups"] = c.pic.warmups;
                j["odf"] = c.odf();
                j["lb_period"] = c.lb_period();
                break;
            }
            return j;
        }
    } // namespace

    std::string config_json(const GroupConfig &config) { return config_object(config).dump(); }

    std::string config_hash(const GroupConfig &config)
    {
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (unsigned char c : config_json(config))
        {
            h ^= c;
            h *= 0x100000001b3ull;
        }
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
        return buf;
    }

    void write_metadata(const std::string &path, const ExperimentPlan &plan, const ExperimentResult &result,
                        std::uint64_t seed, const RunnerOptions &options)
    {
        nlohmann::json j;
        j["seed"] = seed;
        j["csv_header"] = kCsvHeader;
        j["bootstrap"] = {{"method", "percentile"},
                          {"statistic", "mean"},
                          {"level", options.level},
                          {"resamples", options.resamples},
                          {"quantiles", "linear interpolation between order statistics"}};
        j["mann_whitney"] = {{"exact_max_combined_n", kExactLimit},
                             {"approximation", "normal with tie and continuity correction"}};
        j["trial_order"] = "Fisher-Yates over mt19937_64, one sub-stream per group";
        nlohmann::json groups = nlohmann::json::array();
        for (std::size_t g = 0; g < plan.groups.size(); ++g)
        {
            const auto &grp = plan.groups[g];
            const bool incomplete = std::find(result.incomplete_groups.begin(), result.incomplete_groups.end(),
                                              static_cast<int>(g)) != result.incomplete_groups.end();
            std::vector<int> order;
            for (const auto &e : result.events)
            {
                if (e.kind == EventKind::order && e.group == static_cast<int>(g))
                {
                    order = e.order;
                }
            }
            groups.push_back({{"label", grp.label},
                              {"trials", grp.trials},
                              {"config", config_object(grp.config)},
                              {"config_hash", config_hash(grp.config)},
                              {"order", order},
                              {"complete", !incomplete}});
        }
        j["groups"] = groups;
        std::ofstream out(path, std::ios::trunc);
        if (!out)
        {
            throw Error("cannot open " + path + " for writing");
        }
        out << j.dump(2) << '\n';
        if (!out)
        {
            throw Error("write to " + path + " failed");
        }
    }
} // namespace duorun::harness
