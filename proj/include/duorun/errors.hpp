#pragma once

#include <stdexcept>
#include <string>

namespace duorun
{
    struct Error : std::runtime_error
    {
        using std::runtime_error::runtime_error;
    };

    /// Invalid WorldConfig, rank, collection spec, or benchmark parameters.
    struct ConfigError : Error
    {
        using Error::Error;
    };

    /// A world could not be formed (join timeout, rendezvous failure).
    struct WorldFormationError : Error
    {
        using Error::Error;
    };

    /// The world was finalized or aborted while an operation was pending.
    struct ShutdownError : Error
    {
        using Error::Error;
    };

    /// A malformed frame, header, or collective mismatch.
    struct ProtocolError : Error
    {
        using Error::Error;
    };

    /// A typed receive found a different element kind than expected.
    struct TypeMismatchError : Error
    {
        using Error::Error;
    };

    struct DecompositionError : Error
    {
        using Error::Error;
    };

    /// Envelope addressed to an unknown chare or entry method.
    struct DispatchError : Error
    {
        using Error::Error;
    };

    /// An entry method threw; the message names the chare and entry.
    struct EntryError : Error
    {
        using Error::Error;
    };

    /// A runtime invariant was violated by the application (e.g. double
    /// contribution to one reduction generation).
    struct UsageError : Error
    {
        using Error::Error;
    };
} // namespace duorun
