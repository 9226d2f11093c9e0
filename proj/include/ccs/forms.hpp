#pragma once

#include <vector>

#include "ccs/units.hpp"

namespace ccs {

/// A top-degree form density * dt_1 ^ ... ^ dt_n in the reduced module of
/// forms.  Every computation in the library factors through this reduced
/// representation.
struct top_form {
    series density;
};

inline exp_vec residue_point(int n) {
    exp_vec r(n);
    for (int i = 0; i < n; ++i) r[i] = -1;
    return r;
}

/// res : density |-> coefficient at (-1,...,-1).  A-linear by construction.
inline ring_value residue(const top_form& w) {
    return w.density.coeff(residue_point(w.density.vars()));
}

/// Determinant of the matrix of partial derivatives (dg_i / dt_j); exact.
inline series jacobian(const std::vector<series>& g) {
    if (g.empty()) fail(errc::dimension_mismatch, "jacobian needs at least one series");
    const int n = g[0].vars();
    if (static_cast<int>(g.size()) != n)
        fail(errc::dimension_mismatch, "jacobian needs exactly n series in n variables");
    for (const auto& s : g) {
        if (s.vars() != n) fail(errc::dimension_mismatch, "jacobian variable mismatch");
        if (!s.exact()) fail(errc::internal, "jacobian needs exact series");
    }
    std::vector<std::vector<series>> m(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) m[static_cast<std::size_t>(i)].push_back(derivative(g[static_cast<std::size_t>(i)], j));
    // cofactor expansion along the first row; n <= kmax_vars keeps this cheap
    auto det = [&](auto&& self, std::vector<std::vector<series>> a) -> series {
        std::size_t k = a.size();
        if (k == 1) return a[0][0];
        series acc = series::zero(g[0].ring(), n);
        for (std::size_t j = 0; j < k; ++j) {
            if (a[0][j].is_zero()) continue;
            std::vector<std::vector<series>> sub(k - 1);
            for (std::size_t r = 1; r < k; ++r)
                for (std::size_t c = 0; c < k; ++c)
                    if (c != j) sub[r - 1].push_back(a[r][c]);
            series minor = self(self, std::move(sub));
            series t = a[0][j] * minor;
            acc = (j % 2 == 0) ? acc + t : acc - t;
        }
        return acc;
    };
    return det(det, std::move(m));
}

namespace detail {

/// Internal certification box for wedge densities: the requested box,
/// enlarged to cover the residue point and the input support hulls, padded
/// by the coefficient ring's nilpotency bound.
inline precision_box wedge_box(const std::vector<series>& fs, const precision_box& requested) {
    const int n = requested.dim();
    std::vector<std::pair<std::int32_t, std::int32_t>> b;
    for (int i = 0; i < n; ++i) b.emplace_back(std::min(requested.lo(i), -1), std::max(requested.hi(i), -1));
    for (const auto& f : fs) {
        auto h = f.hull();
        if (!h) continue;
        for (int i = 0; i < n; ++i) {
            b[static_cast<std::size_t>(i)].first = std::min(b[static_cast<std::size_t>(i)].first, h->lo[i]);
            b[static_cast<std::size_t>(i)].second = std::max(b[static_cast<std::size_t>(i)].second, h->hi[i]);
        }
    }
    std::int32_t pad = fs.empty() ? 1 : fs[0].ring()->nilpotency_bound();
    for (auto& [lo, hi] : b) {
        lo -= pad;
        hi += pad;
    }
    return precision_box(b);
}

/// det(df_i/dt_j) * (prod f_i)^{-1} certified on `box`.  The product of the
/// f_i is inverted in one step so the result box stays soundly certified.
inline series dlog_density(const std::vector<series>& fs, const precision_box& box) {
    const int n = box.dim();
    const auto& ring = fs[0].ring();
    series prod = series::one(ring, n);
    for (const auto& f : fs) prod = prod * f;
    series det = jacobian(fs);
    std::vector<std::pair<std::int32_t, std::int32_t>> wb;
    auto h = det.hull();
    for (int i = 0; i < n; ++i) {
        std::int32_t hi_off = h ? h->hi[i] : 0;
        std::int32_t lo_off = h ? h->lo[i] : 0;
        wb.emplace_back(box.lo(i) - hi_off, box.hi(i) - lo_off);
    }
    series inv = invert_unit(prod, precision_box(wb));
    return det * inv;
}

inline void check_wedge_inputs(const std::vector<series>& fs, const precision_box& box) {
    if (fs.empty()) fail(errc::dimension_mismatch, "wedge needs n series");
    const int n = fs[0].vars();
    if (static_cast<int>(fs.size()) != n) fail(errc::dimension_mismatch, "wedge needs exactly n series");
    if (box.dim() != n) fail(errc::dimension_mismatch, "box dimension mismatch");
    for (const auto& f : fs) {
        if (!f.exact()) fail(errc::not_a_unit, "wedge entries must be exact");
        if (!is_unit_series(f)) fail(errc::not_a_unit, "wedge entries must be units");
    }
}

} // namespace detail

/// Density of df_1/f_1 ^ ... ^ df_n/f_n, certified on an internally enlarged
/// box; the residue is verified stable under one box doubling.
inline top_form dlog_wedge(const std::vector<series>& fs, const precision_box& box) {
    detail::check_wedge_inputs(fs, box);
    precision_box b1 = detail::wedge_box(fs, box);
    series d1 = detail::dlog_density(fs, b1);
    series d2 = detail::dlog_density(fs, b1.padded(std::max<std::int32_t>(2, b1.hi(0) - b1.lo(0))));
    exp_vec r = residue_point(box.dim());
    if (d1.coeff_raw(r) != d2.coeff_raw(r))
        fail(errc::unstable_precision, "dlog residue changed under box doubling");
    return top_form{std::move(d1)};
}

/// Density of g * df_1/f_1 ^ ... ^ df_n/f_n.  g may be exact or boxed with
/// enough certified coefficients.
inline top_form mixed_wedge(const series& g, const std::vector<series>& fs, const precision_box& box) {
    detail::check_wedge_inputs(fs, box);
    if (g.vars() != box.dim()) fail(errc::dimension_mismatch, "g variable mismatch");
    precision_box b1 = detail::wedge_box(fs, box);
    series d1 = g * detail::dlog_density(fs, b1);
    series d2 = g * detail::dlog_density(fs, b1.padded(std::max<std::int32_t>(2, b1.hi(0) - b1.lo(0))));
    exp_vec r = residue_point(box.dim());
    if (d1.coeff_raw(r) != d2.coeff_raw(r))
        fail(errc::unstable_precision, "mixed wedge residue changed under box doubling");
    return top_form{std::move(d1)};
}

} // namespace ccs
