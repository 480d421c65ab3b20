#pragma once

#include "duorun/transport.hpp"

#include <functional>
#include <string_view>

namespace duorun
{
    enum class LaunchMode
    {
        /// Every rank is a thread of the calling process.
        threads,
        /// Ranks 1..W-1 are forked child processes; rank 0 runs in the caller.
        /// Requires the tcp backend and a single-threaded caller.
        processes
    };

    LaunchMode parse_launch_mode(std::string_view text);

    using WorkerBody = std::function<void(Endpoint &)>;

    /// Forms a world of `config.n_workers` ranks, runs `body` on each, then
    /// finalizes. A base_port of 0 is replaced by a fresh port (tcp) or a
    /// unique fabric key (in_process). Rethrows the first root-cause error.
    void run_world(WorldConfig config, const WorkerBody &body, LaunchMode mode = LaunchMode::threads);

    /// An ephemeral TCP port that was free at the time of the call.
    std::uint32_t pick_free_port();
} // namespace duorun
