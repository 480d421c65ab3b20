#include "duorun/phase.hpp"

namespace duorun
{
    const char *to_string(Phase phase) noexcept
    {
        switch (phase)
        {
        case Phase::warmup:
            return "warmup";
        case Phase::barrier:
            return "barrier";
        case Phase::timed_begin:
            return "timed_begin";
        case Phase::timed_end:
            return "timed_end";
        }
        return "unknown";
    }
} // namespace duorun
