#include "duorun/harness.hpp"

#include "duorun/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace duorun::harness
{
    namespace
    {
        using ChartKey = std::pair<std::string, std::string>;

        struct ChartShape
        {
            bool x_is_size = false;
            std::set<std::string> backends;
            std::set<int> odfs;
            std::set<int> lbs;
            std::set<int> workers;
        };

        std::string series_of(const TrialRecord &r, const ChartShape &shape)
        {
            std::string s = r.runtime;
            if (shape.backends.size() > 1)
            {
                s += "/" + r.backend;
            }
            if (shape.odfs.size() > 1)
            {
                s += " odf=" + std::to_string(r.odf);
            }
            if (shape.lbs.size() > 1)
            {
                s += " lb=" + std::to_string(r.lb_period);
            }
            if (shape.x_is_size && shape.workers.size() > 1)
            {
                s += " W=" + std::to_string(r.workers);
            }
            return s;
        }

        std::string fmt(const char *f, double v)
        {
            char buf[64];
            std::snprintf(buf, sizeof buf, f, v);
            return buf;
        }

        std::string xml_escape(const std::string &s)
        {
            std::string out;
            for (char c : s)
            {
                switch (c)
                {
                case '&':
                    out += "&amp;";
                    break;
                case '<':
                    out += "&lt;";
                    break;
                case '>':
                    out += "&gt;";
                    break;
                case '"':
                    out += "&quot;";
                    break;
                default:
                    out += c;
                }
            }
            return out;
        }

        std::string size_label(double bytes)
        {
            const auto b = static_cast<std::uint64_t>(bytes);
            if (b >= (1u << 20) && b % (1u << 20) == 0)
            {
                return std::to_string(b >> 20) + " MiB";
            }
            if (b >= 1024 && b % 1024 == 0)
            {
                return std::to_string(b >> 10) + " KiB";
            }
            return std::to_string(b) + " B";
        }

        double nice_step(double range)
        {
            const double raw = range / 5.0;
            const double mag = std::pow(10.0, std::floor(std::log10(raw)));
            for (double m : {1.0, 2.0, 2.5, 5.0})
            {
                if (raw <= m * mag)
                {
                    return m * mag;
                }
            }
            return 10.0 * mag;
        }

        std::string file_stem(const std::string &s)
        {
            std::string out;
            for (char c : s)
            {
                out += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
            }
            return out;
        }

        constexpr const char *kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                            "#9467bd", "#8c564b", "#e377c2", "#17becf"};

        std::string render_svg(const std::vector<const PointSummary *> &pts)
        {
            const double W = 760, H = 480, left = 80, right = 190, top = 40, bottom = 60;
            const double pw = W - left - right;
            const double ph = H - top - bottom;
            const bool logx = pts.front()->x_is_size;
            auto tx = [&](double x) { return logx ? std::log2(x) : x; };

            double x0 = tx(pts.front()->x), x1 = x0;
            double y0 = 0.0, y1 = 0.0;
            for (const auto *p : pts)
            {
                x0 = std::min(x0, tx(p->x));
                x1 = std::max(x1, tx(p->x));
                y0 = std::min({y0, p->stats.ci_low, p->stats.mean});
                y1 = std::max({y1, p->stats.ci_high, p->stats.mean});
            }
            if (x1 == x0)
            {
                x0 -= 1.0;
                x1 += 1.0;
            }
            if (y1 == y0)
            {
                y1 = y0 + 1.0;
            }
            const double ystep = nice_step(y1 - y0);
            y0 = std::floor(y0 / ystep) * ystep;
            y1 = std::ceil(y1 / ystep) * ystep;
            auto px = [&](double x) { return left + (tx(x) - x0) / (x1 - x0) * pw; };
            auto py = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };

            std::ostringstream o;
            const auto &first = *pts.front();
            o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
              << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
            o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
            o << "<text x=\"" << left + pw / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
              << xml_escape(first.benchmark + ": " + first.metric) << "</text>\n";

            // y grid and ticks
            for (double y = y0; y <= y1 + ystep / 2; y += ystep)
            {
                o << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << py(y) << "\" y2=\"" << py(y)
                  << "\" stroke=\"#ddd\"/>\n";
                o << "<text x=\"" << left - 6 << "\" y=\"" << py(y) + 4 << "\" text-anchor=\"end\">"
                  << fmt("%g", y) << "</text>\n";
            }
            // x ticks
            std::vector<double> xticks;
            if (logx)
            {
                const int lo = static_cast<int>(std::ceil(x0));
                const int hi = static_cast<int>(std::floor(x1));
                const int stride = std::max(1, (hi - lo + 1 + 9) / 10);
                for (int e = lo; e <= hi; e += stride)
                {
                    xticks.push_back(std::ldexp(1.0, e));
                }
            }
            else
            {
                std::set<double> xs;
                for (const auto *p : pts)
                {
                    xs.insert(p->x);
                }
                xticks.assign(xs.begin(), xs.end());
            }
            for (double x : xticks)
            {
                o << "<line x1=\"" << px(x) << "\" x2=\"" << px(x) << "\" y1=\"" << top + ph << "\" y2=\""
                  << top + ph + 5 << "\" stroke=\"black\"/>\n";
                o << "<text x=\"" << px(x) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">"
                  << xml_escape(logx ? size_label(x) : fmt("%g", x)) << "</text>\n";
            }
            o << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
              << "\" fill=\"none\" stroke=\"black\"/>\n";
            o << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 15 << "\" text-anchor=\"middle\">"
              << (logx ? "message size (log scale)" : "workers") << "</text>\n";
            o << "<text transform=\"translate(18," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
              << xml_escape(first.metric + " (" + first.unit + ")") << "</text>\n";

            std::map<std::string, std::vector<const PointSummary *>> series;
            for (const auto *p : pts)
            {
                series[p->series].push_back(p);
            }
            std::size_t si = 0;
            for (auto &[name, list] : series)
            {
                const char *color = kPalette[si % std::size(kPalette)];
                std::sort(list.begin(), list.end(), [](auto *a, auto *b) { return a->x < b->x; });
                o << "<g class=\"series\" data-name=\"" << xml_escape(name) << "\">\n";
                o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
                for (const auto *p : list)
                {
                    o << px(p->x) << ',' << py(p->stats.mean) << ' ';
                }
                o << "\"/>\n";
                for (const auto *p : list)
                {
                    const double x = px(p->x);
                    o << "<g class=\"point\"><line x1=\"" << x << "\" x2=\"" << x << "\" y1=\"" << py(p->stats.ci_low)
                      << "\" y2=\"" << py(p->stats.ci_high) << "\" stroke=\"" << color << "\"/>";
                    for (double y : {p->stats.ci_low, p->stats.ci_high})
                    {
                        o << "<line x1=\"" << x - 4 << "\" x2=\"" << x + 4 << "\" y1=\"" << py(y) << "\" y2=\""
                          << py(y) << "\" stroke=\"" << color << "\"/>";
                    }
                    o << "<circle cx=\"" << x << "\" cy=\"" << py(p->stats.mean) << "\" r=\"3\" fill=\"" << color
                      << "\"/></g>\n";
                }
                o << "</g>\n";
                const double ly = top + 10 + 18.0 * static_cast<double>(si);
                o << "<g class=\"legend\"><line x1=\"" << left + pw + 15 << "\" x2=\"" << left + pw + 35
                  << "\" y1=\"" << ly << "\" y2=\"" << ly << "\" stroke=\"" << color
                  << "\" stroke-width=\"2\"/><text x=\"" << left + pw + 40 << "\" y=\"" << ly + 4 << "\">"
                  << xml_escape(name) << "</text></g>\n";
                ++si;
            }
            o << "</svg>\n";
            return o.str();
        }

        std::vector<TrialRecord> load_all(const std::vector<std::string> &paths, PlotReport &report)
        {
            std::vector<TrialRecord> all;
            for (const auto &path : paths)
            {
                auto c = read_csv(path);
                report.malformed += c.malformed;
                for (auto &w : c.warnings)
                {
                    report.warnings.push_back(path + ": " + w);
                }
                all.insert(all.end(), c.records.begin(), c.records.end());
            }
            return all;
        }

        void write_text(const std::filesystem::path &path, const std::string &text, PlotReport &report)
        {
            std::ofstream out(path, std::ios::binary | std::ios::trunc);
            out << text;
            if (!out)
            {
                throw Error("cannot write " + path.string());
            }
            report.files.push_back(path.string());
        }
    } // namespace

    std::vector<PointSummary> summarize(const std::vector<TrialRecord> &records, double level, int resamples,
                                        std::uint64_t seed)
    {
        std::map<ChartKey, ChartShape> shapes;
        for (const auto &r : records)
        {
            auto &s = shapes[{r.benchmark, r.metric}];
            s.x_is_size = s.x_is_size || r.size_bytes.has_value();
            s.backends.insert(r.backend);
            s.odfs.insert(r.odf);
            s.lbs.insert(r.lb_period);
            s.workers.insert(r.workers);
        }

        struct Acc
        {
            std::string unit;
            std::map<std::pair<std::string, int>, std::pair<double, int>> trials;
        };
        // (benchmark, metric, series, x)
        std::map<std::tuple<std::string, std::string, std::string, double>, Acc> points;
        for (const auto &r : records)
        {
            const auto &shape = shapes[{r.benchmark, r.metric}];
            const double x = shape.x_is_size ? static_cast<double>(r.size_bytes.value_or(0)) : r.workers;
            auto &acc = points[{r.benchmark, r.metric, series_of(r, shape), x}];
            acc.unit = r.unit;
            auto &t = acc.trials[{r.config_hash, r.trial}];
            t.first += r.value;
            ++t.second;
        }

        std::vector<PointSummary> out;
        std::uint64_t stream = 0;
        for (const auto &[key, acc] : points)
        {
            PointSummary p;
            std::tie(p.benchmark, p.metric, p.series, p.x) = key;
            p.unit = acc.unit;
            p.x_is_size = shapes[{p.benchmark, p.metric}].x_is_size;
            for (const auto &[_, t] : acc.trials)
            {
                p.trial_values.push_back(t.first / t.second);
            }
            p.stats = bootstrap_ci(p.trial_values, level, resamples, substream_seed(seed, stream++));
            out.push_back(std::move(p));
        }
        return out;
    }

    PlotReport emit_plots(const std::vector<TrialRecord> &records, const std::string &out_dir)
    {
        PlotReport report;
        if (records.empty())
        {
            report.warnings.push_back("no records to plot");
            return report;
        }
        std::filesystem::create_directories(out_dir);
        const auto points = summarize(records);
        std::map<ChartKey, std::vector<const PointSummary *>> charts;
        for (const auto &p : points)
        {
            charts[{p.benchmark, p.metric}].push_back(&p);
        }
        for (const auto &[key, pts] : charts)
        {
            const auto path = std::filesystem::path(out_dir) / (file_stem(key.first + "_" + key.second) + ".svg");
            write_text(path, render_svg(pts), report);
        }
        return report;
    }

    PlotReport emit_plots(const std::vector<std::string> &csv_paths, const std::string &out_dir)
    {
        PlotReport report;
        const auto records = load_all(csv_paths, report);
        auto plots = emit_plots(records, out_dir);
        report.files = std::move(plots.files);
        report.warnings.insert(report.warnings.end(), plots.warnings.begin(), plots.warnings.end());
        return report;
    }

    PlotReport write_report(const std::vector<std::string> &csv_paths, const std::string &out_dir, double alpha)
    {
        if (!(alpha > 0.0 && alpha < 1.0))
        {
            throw ConfigError("alpha must be in (0, 1)");
        }
        auto report = emit_plots(csv_paths, out_dir);
        std::vector<TrialRecord> records;
        {
            PlotReport ignored;
            records = load_all(csv_paths, ignored);
        }
        if (records.empty())
        {
            return report;
        }
        const auto points = summarize(records);

        std::ostringstream summary;
        summary << "benchmark,metric,unit,series,x,n,mean,ci_low,ci_high,level\n";
        for (const auto &p : points)
        {
            summary << p.benchmark << ',' << p.metric << ',' << p.unit << ",\"" << p.series << "\","
                    << fmt("%.17g", p.x) << ',' << p.stats.n_samples << ',' << fmt("%.17g", p.stats.mean) << ','
                    << fmt("%.17g", p.stats.ci_low) << ',' << fmt("%.17g", p.stats.ci_high) << ','
                    << fmt("%g", p.stats.level) << '\n';
        }
        write_text(std::filesystem::path(out_dir) / "summary.csv", summary.str(), report);

        std::ostringstream cmp;
        cmp << "benchmark,metric,x,series_a,series_b,u,p,method,significant\n";
        for (std::size_t i = 0; i < points.size(); ++i)
        {
            for (std::size_t j = i + 1; j < points.size(); ++j)
            {
                const auto &a = points[i];
                const auto &b = points[j];
                if (a.benchmark != b.benchmark || a.metric != b.metric || a.x != b.x)
                {
                    continue;
                }
                const auto u = mann_whitney_u(a.trial_values, b.trial_values);
                cmp << a.benchmark << ',' << a.metric << ',' << fmt("%.17g", a.x) << ",\"" << a.series << "\",\""
                    << b.series << "\"," << fmt("%.17g", u.u_statistic) << ',' << fmt("%.17g", u.p_two_sided)
                    << ',' << to_string(u.method) << ',' << (u.p_two_sided <= alpha ? "yes" : "no") << '\n';
            }
        }
        write_text(std::filesystem::path(out_dir) / "comparisons.csv", cmp.str(), report);
        return report;
    }
} // namespace duorun::harness
