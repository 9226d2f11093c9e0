#pragma once

#include <stdexcept>
#include <string>

namespace ccs {

/// Failure categories surfaced by the library.  The CLI maps these onto
/// stable exit codes, so the enumerators are part of the public contract.
enum class errc {
    mixed_rings,
    dimension_mismatch,
    not_a_unit,
    outside_precision,
    precision_exhausted,
    unstable_precision,
    invalid_endo,
    not_invertible,
    not_q_algebra,
    not_a_field,
    parse_error,
    unsupported_ring,
    unknown_variable,
    bad_coefficient,
    internal,
};

inline const char* errc_name(errc k) {
    switch (k) {
        case errc::mixed_rings: return "MixedRings";
        case errc::dimension_mismatch: return "DimensionMismatch";
        case errc::not_a_unit: return "NotAUnit";
        case errc::outside_precision: return "OutsidePrecision";
        case errc::precision_exhausted: return "PrecisionExhausted";
        case errc::unstable_precision: return "UnstablePrecision";
        case errc::invalid_endo: return "InvalidEndo";
        case errc::not_invertible: return "NotInvertible";
        case errc::not_q_algebra: return "NotQAlgebra";
        case errc::not_a_field: return "NotAField";
        case errc::parse_error: return "ParseError";
        case errc::unsupported_ring: return "UnsupportedRing";
        case errc::unknown_variable: return "UnknownVariable";
        case errc::bad_coefficient: return "BadCoefficient";
        case errc::internal: return "Internal";
    }
    return "Internal";
}

class error : public std::runtime_error {
public:
    error(errc kind, const std::string& msg)
        : std::runtime_error(std::string(errc_name(kind)) + ": " + msg), kind_(kind) {}

    errc kind() const noexcept { return kind_; }

private:
    errc kind_;
};

[[noreturn]] inline void fail(errc kind, const std::string& msg) { throw error(kind, msg); }

} // namespace ccs
