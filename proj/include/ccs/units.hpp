#pragma once

#include <vector>

#include "ccs/series.hpp"

namespace ccs {

/// The four factors of an invertible iterated Laurent series per the
/// decomposition L^n Gm = Z^n x Gm x V+ x V-:
///   f = t^nu * c * plus * minus
/// with c a unit of A, plus in V_{n,+} (constant term 1, strictly
/// lex-positive tail) and minus in V_{n,-} (constant term 1, strictly
/// lex-negative nilpotent tail).
struct unit_decomposition {
    std::vector<zfunc> nu; // n entries, one zfunc per variable
    ring_value c;
    series plus;
    series minus;
};

/// t^{nu} as an exact series (componentwise monomials on product rings).
inline series monomial_z(const ring_ptr& ring, int n, const std::vector<zfunc>& nu) {
    if (static_cast<int>(nu.size()) != n) fail(errc::dimension_mismatch, "nu entry count mismatch");
    const int nc = ring->components();
    for (const auto& z : nu)
        if (z.components() != nc) fail(errc::internal, "zfunc component mismatch");
    if (ring->kind() != ring_kind::product) {
        exp_vec e(n);
        for (int i = 0; i < n; ++i) e[i] = static_cast<std::int32_t>(nu[static_cast<std::size_t>(i)][0]);
        return series::monomial(ring, n, e, ring_value::one(ring));
    }
    std::vector<series> comps;
    for (int j = 0; j < nc; ++j) {
        exp_vec e(n);
        for (int i = 0; i < n; ++i) e[i] = static_cast<std::int32_t>(nu[static_cast<std::size_t>(i)][j]);
        const auto& fr = ring->factors()[static_cast<std::size_t>(j)];
        comps.push_back(series::monomial(fr, n, e, ring_value::one(fr)));
    }
    return detail::combine_components(ring, comps);
}

namespace detail {

inline void require_exact_input(const series& f, const char* who) {
    if (!f.exact()) fail(errc::not_a_unit, std::string(who) + " needs an exact series");
}

} // namespace detail

/// The Z^n-valued valuation of an invertible series, computed per connected
/// component by the recursive least-unit-coefficient rule.
inline std::vector<zfunc> nu(const series& f) {
    detail::require_exact_input(f, "nu");
    const int n = f.vars();
    const int nc = f.ring()->components();
    auto comps = detail::split_components(f);
    std::vector<zfunc> out(static_cast<std::size_t>(n), zfunc(0, nc));
    for (int j = 0; j < nc; ++j) {
        auto v = detail::valuation(comps[static_cast<std::size_t>(j)]);
        if (!v) fail(errc::not_a_unit, "series is not a unit of L^n(A)");
        for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)][j] = (*v)[i];
    }
    return out;
}

/// True when the series is invertible in L^n(A) (a valid nu exists on every
/// component).
inline bool is_unit_series(const series& f) {
    if (!f.exact()) return false;
    for (const auto& comp : detail::split_components(f))
        if (!detail::valuation(comp)) return false;
    return true;
}

/// The valuation as a plain vector; requires it to be constant on Spec(A).
inline exp_vec nu_constant(const series& f) {
    auto v = nu(f);
    exp_vec e(f.vars());
    for (int i = 0; i < f.vars(); ++i) {
        if (!v[static_cast<std::size_t>(i)].is_constant())
            fail(errc::internal, "valuation is not constant on Spec(A)");
        e[i] = static_cast<std::int32_t>(v[static_cast<std::size_t>(i)].constant());
    }
    return e;
}

/// The unique four-factor decomposition of an exact unit.
inline unit_decomposition decompose(const series& f) {
    detail::require_exact_input(f, "decompose");
    const auto& ring = f.ring();
    const int n = f.vars();
    const int nc = ring->components();
    auto comps = detail::split_components(f);
    std::vector<zfunc> nus(static_cast<std::size_t>(n), zfunc(0, nc));
    std::vector<ring_value> cs;
    std::vector<series> pluses, minuses;
    for (int j = 0; j < nc; ++j) {
        auto parts = detail::four_factor(comps[static_cast<std::size_t>(j)]);
        for (int i = 0; i < n; ++i) nus[static_cast<std::size_t>(i)][j] = parts.nu[i];
        cs.push_back(std::move(parts.c));
        pluses.push_back(std::move(parts.plus));
        minuses.push_back(std::move(parts.minus));
    }
    unit_decomposition d{std::move(nus),
                         nc == 1 ? std::move(cs[0]) : ring_value::from_components(ring, std::move(cs)),
                         detail::combine_components(ring, pluses),
                         detail::combine_components(ring, minuses)};
    return d;
}

/// pi : L^n Gm -> Gm, the constant-unit factor of the decomposition.  Not
/// the coefficient at nu in general: the two differ by a nilpotent.
inline ring_value pi(const series& f) { return decompose(f).c; }

/// Membership in the sharp subgroup: 1 minus the lex-<=0 truncation of f is
/// nilpotent (equivalently (f-1)^i -> 0 for exact series).
inline bool is_sharp(const series& f) {
    detail::require_exact_input(f, "is_sharp");
    series d = series::one(f.ring(), f.vars()) - f.lexnonpos_part();
    return d.all_coeffs_nilpotent();
}

/// Reassemble a decomposition (test hook for the uniqueness contract).
inline series reassemble(const ring_ptr& ring, int n, const unit_decomposition& d) {
    return monomial_z(ring, n, d.nu)
        .scaled(d.c)
        * d.plus * d.minus;
}

} // namespace ccs
