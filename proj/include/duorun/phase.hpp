#pragma once

#include <cstddef>
#include <functional>

namespace duorun
{
    /// Points in a benchmark's life reported to an optional observer.
    enum class Phase
    {
        /// `count` untimed iterations have completed.
        warmup,
        /// A global barrier has returned.
        barrier,
        timed_begin,
        timed_end
    };

    const char *to_string(Phase phase) noexcept;

    struct PhaseEvent
    {
        Phase phase = Phase::warmup;
        int rank = 0;
        int count = 0;
        /// Message size for microbenchmarks, 0 otherwise.
        std::size_t size_bytes = 0;
    };

    /// Called on the worker thread that reached the phase; must be thread safe.
    using PhaseHook = std::function<void(const PhaseEvent &)>;

    inline void mark(const PhaseHook &hook, Phase phase, int rank, int count = 0, std::size_t size_bytes = 0)
    {
        if (hook)
        {
            hook(PhaseEvent{phase, rank, count, size_bytes});
        }
    }
} // namespace duorun
