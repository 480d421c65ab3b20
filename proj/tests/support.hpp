#pragma once

#include "duorun/launch.hpp"

#include <doctest.h>

#include <array>

namespace duorun::testing
{
    inline constexpr std::array<Backend, 2> kBackends{Backend::in_process, Backend::tcp};

    inline WorldConfig world(int workers, Backend backend)
    {
        WorldConfig cfg;
        cfg.n_workers = workers;
        cfg.backend = backend;
        cfg.join_timeout = std::chrono::milliseconds(20'000);
        return cfg;
    }

    inline void run(int workers, Backend backend, const WorkerBody &body)
    {
        run_world(world(workers, backend), body);
    }
} // namespace duorun::testing
