#pragma once

// Point-to-point latency (ping-pong) and bandwidth (windowed streaming)
// between ranks 0 and 1, over either runtime.

#include "duorun/phase.hpp"
#include "duorun/runtime_kind.hpp"
#include "duorun/transport.hpp"

#include <cstddef>
#include <functional>
#include <vector>

namespace duorun::microbench
{
    enum class BenchKind
    {
        latency,
        bandwidth
    };

    std::string to_string(BenchKind kind);

    struct BenchSchedule
    {
        int iterations = 1;
        int warmups = 0;

        friend bool operator==(const BenchSchedule &, const BenchSchedule &) = default;
    };

    /// 1000 iterations below 8192 bytes, 100 otherwise; 60 latency warmups,
    /// 10 bandwidth warmups.
    BenchSchedule iteration_schedule(std::size_t size_bytes, BenchKind kind);

    struct MessageSizeSweep
    {
        std::size_t min_bytes = 16;
        std::size_t max_bytes = std::size_t{4} << 20;

        void validate() const;
        /// min * 2^k for every k with min * 2^k <= max.
        std::vector<std::size_t> sizes() const;
    };

    using ScheduleFn = std::function<BenchSchedule(std::size_t, BenchKind)>;

    struct BenchOptions
    {
        RuntimeKind runtime = RuntimeKind::spmd;
        MessageSizeSweep sweep;
        /// Messages per bandwidth iteration before the receiver acks.
        int window = 64;
        /// Defaults to iteration_schedule.
        ScheduleFn schedule;
        PhaseHook hook;
    };

    inline constexpr int kDefaultWindow = 64;
    inline constexpr std::size_t kAckBytes = 4;

    struct SizeResult
    {
        std::size_t size_bytes = 0;
        /// One-way latency in microseconds, or bandwidth in MB/s (1e6 bytes).
        double value = 0.0;
    };

    /// Collective over the whole world; W >= 2. Ranks other than 0 and 1 wait
    /// in barriers. Every rank returns rank 0's measurements.
    std::vector<SizeResult> run_latency(Endpoint &ep, const BenchOptions &options);
    std::vector<SizeResult> run_bandwidth(Endpoint &ep, const BenchOptions &options);
} // namespace duorun::microbench
