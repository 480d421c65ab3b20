#include "duorun/microbench.hpp"

#include "support.hpp"

#include <cmath>
#include <mutex>

using namespace duorun;
using namespace duorun::microbench;

namespace
{
    BenchSchedule quick(std::size_t, BenchKind)
    {
        return {20, 3};
    }

    std::vector<SizeResult> measure(int workers, Backend backend, RuntimeKind runtime, BenchKind kind,
                                    MessageSizeSweep sweep, int window = kDefaultWindow,
                                    ScheduleFn schedule = quick)
    {
        std::mutex mu;
        std::vector<std::vector<SizeResult>> per_rank(static_cast<std::size_t>(workers));
        testing::run(workers, backend, [&](Endpoint &ep) {
            BenchOptions opt;
            opt.runtime = runtime;
            opt.sweep = sweep;
            opt.window = window;
            opt.schedule = schedule;
            auto rows = kind == BenchKind::latency ? run_latency(ep, opt) : run_bandwidth(ep, opt);
            std::lock_guard lock(mu);
            per_rank[static_cast<std::size_t>(ep.rank())] = std::move(rows);
        });
        for (const auto &rows : per_rank)
        {
            REQUIRE(rows.size() == per_rank[0].size());
            for (std::size_t i = 0; i < rows.size(); ++i)
            {
                CHECK(rows[i].value == per_rank[0][i].value);
            }
        }
        return per_rank[0];
    }
} // namespace

TEST_CASE("iteration schedule examples")
{
    CHECK(iteration_schedule(4096, BenchKind::latency) == BenchSchedule{1000, 60});
    CHECK(iteration_schedule(8192, BenchKind::bandwidth) == BenchSchedule{100, 10});
    CHECK(iteration_schedule(16, BenchKind::bandwidth) == BenchSchedule{1000, 10});
    CHECK(iteration_schedule(8191, BenchKind::latency) == BenchSchedule{1000, 60});
    CHECK(iteration_schedule(0, BenchKind::latency).iterations == 1000);
    CHECK(iteration_schedule(std::size_t{4} << 20, BenchKind::latency) == BenchSchedule{100, 60});
}

TEST_CASE("default sweep covers 16 B to 4 MiB in 19 doublings")
{
    const auto sizes = MessageSizeSweep{}.sizes();
    REQUIRE(sizes.size() == 19);
    for (std::size_t k = 0; k < sizes.size(); ++k)
    {
        CHECK(sizes[k] == (std::size_t{16} << k));
    }
    CHECK(sizes.back() == std::size_t{4} << 20);
}

TEST_CASE("sweep bounds")
{
    CHECK((MessageSizeSweep{16, 16}.sizes() == std::vector<std::size_t>{16}));
    CHECK((MessageSizeSweep{16, 100}.sizes() == std::vector<std::size_t>{16, 32, 64}));
    CHECK_THROWS_AS((MessageSizeSweep{0, 16}.sizes()), ConfigError);
    CHECK_THROWS_AS((MessageSizeSweep{32, 16}.sizes()), ConfigError);
}

TEST_CASE("single worker is rejected")
{
    CHECK_THROWS_AS(testing::run(1, Backend::in_process,
                                 [](Endpoint &ep) {
                                     BenchOptions opt;
                                     run_latency(ep, opt);
                                 }),
                    ConfigError);
}

TEST_CASE("latency rows are finite and grow at the extremes")
{
    for (auto backend : testing::kBackends)
    {
        for (auto runtime : {RuntimeKind::spmd, RuntimeKind::actor})
        {
            CAPTURE(to_string(backend));
            CAPTURE(to_string(runtime));
            const auto rows = measure(2, backend, runtime, BenchKind::latency, {16, std::size_t{4} << 20});
            REQUIRE(rows.size() == 19);
            for (std::size_t i = 0; i < rows.size(); ++i)
            {
                CHECK(std::isfinite(rows[i].value));
                CHECK(rows[i].value >= 0.0);
                if (i > 0)
                {
                    CHECK(rows[i].size_bytes > rows[i - 1].size_bytes);
                }
            }
            CHECK(rows.back().value > rows.front().value);
        }
    }
}

TEST_CASE("bandwidth rows are positive and amortize per-message overhead")
{
    for (auto runtime : {RuntimeKind::spmd, RuntimeKind::actor})
    {
        CAPTURE(to_string(runtime));
        const auto rows = measure(2, Backend::in_process, runtime, BenchKind::bandwidth, {16, std::size_t{1} << 20},
                                  8);
        REQUIRE(rows.size() == 17);
        for (const auto &r : rows)
        {
            CHECK(std::isfinite(r.value));
            CHECK(r.value > 0.0);
        }
        CHECK(rows.back().value > rows.front().value);
    }
}

TEST_CASE("window of one still measures")
{
    for (auto backend : testing::kBackends)
    {
        const auto rows = measure(2, backend, RuntimeKind::actor, BenchKind::bandwidth, {64, 256}, 1);
        REQUIRE(rows.size() == 3);
        for (const auto &r : rows)
        {
            CHECK(std::isfinite(r.value));
            CHECK(r.value > 0.0);
        }
    }
}

TEST_CASE("extra ranks idle through the sweep")
{
    for (auto runtime : {RuntimeKind::spmd, RuntimeKind::actor})
    {
        const auto lat = measure(4, Backend::in_process, runtime, BenchKind::latency, {16, 1024});
        CHECK(lat.size() == 7);
        const auto bw = measure(3, Backend::tcp, runtime, BenchKind::bandwidth, {16, 1024}, 4);
        CHECK(bw.size() == 7);
    }
}

TEST_CASE("bad window is rejected")
{
    CHECK_THROWS_AS(measure(2, Backend::in_process, RuntimeKind::spmd, BenchKind::bandwidth, {16, 16}, 0),
                    ConfigError);
}
