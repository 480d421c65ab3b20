#pragma once

#include <string>
#include <string_view>

namespace duorun
{
    /// Which execution model drives a benchmark.
    enum class RuntimeKind
    {
        spmd,
        actor
    };

    std::string to_string(RuntimeKind kind);
    RuntimeKind parse_runtime(std::string_view text);
} // namespace duorun
