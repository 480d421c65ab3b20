#include "duorun/runtime_kind.hpp"

#include "duorun/errors.hpp"

namespace duorun
{
    std::string to_string(RuntimeKind kind)
    {
        return kind == RuntimeKind::spmd ? "spmd" : "actor";
    }

    RuntimeKind parse_runtime(std::string_view text)
    {
        if (text == "spmd")
        {
            return RuntimeKind::spmd;
        }
        if (text == "actor")
        {
            return RuntimeKind::actor;
        }
        throw ConfigError("unknown runtime '" + std::string(text) + "'");
    }
} // namespace duorun
