#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ccs/forms.hpp"

namespace ccs {

/// A continuous endomorphism of L^n(A) given by the images of t_1..t_n.
/// Valid iff the matrix Upsilon = (nu(g_1) | ... | nu(g_n)) is
/// upper-triangular with positive diagonal entries on every component of
/// Spec(A); d = det(Upsilon) governs how the endomorphism scales residues
/// and symbols.
struct endo_map {
    ring_ptr ring;
    int n = 0;
    std::vector<series> images;
    std::vector<std::vector<zfunc>> upsilon; // [row][col]
    zfunc d;
};

inline endo_map make_endo(std::vector<series> images) {
    if (images.empty()) fail(errc::invalid_endo, "endomorphism needs images");
    const int n = images[0].vars();
    if (static_cast<int>(images.size()) != n)
        fail(errc::invalid_endo, "need exactly n images in n variables");
    const auto& ring = images[0].ring();
    for (const auto& g : images) {
        if (g.vars() != n) fail(errc::dimension_mismatch, "image variable mismatch");
        if (!g.ring()->same(*ring)) fail(errc::mixed_rings, "image ring mismatch");
        if (!g.exact()) fail(errc::invalid_endo, "images must be exact");
    }
    endo_map phi;
    phi.ring = ring;
    phi.n = n;
    const int nc = ring->components();
    phi.upsilon.assign(static_cast<std::size_t>(n),
                       std::vector<zfunc>(static_cast<std::size_t>(n), zfunc(0, nc)));
    for (int c = 0; c < n; ++c) {
        auto col = nu(images[static_cast<std::size_t>(c)]); // throws NotAUnit for non-units
        for (int r = 0; r < n; ++r) phi.upsilon[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] = col[static_cast<std::size_t>(r)];
    }
    for (int j = 0; j < nc; ++j)
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c) {
                std::int64_t v = phi.upsilon[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)][j];
                if (r > c && v != 0)
                    fail(errc::invalid_endo, "valuation matrix is not upper-triangular");
                if (r == c && v <= 0)
                    fail(errc::invalid_endo, "valuation matrix diagonal must be positive");
            }
    phi.d = zfunc_det(phi.upsilon);
    phi.images = std::move(images);
    return phi;
}

inline bool is_identity_images(const std::vector<series>& g) {
    for (std::size_t i = 0; i < g.size(); ++i)
        if (g[i] != series::variable(g[i].ring(), g[i].vars(), static_cast<int>(i))) return false;
    return true;
}

/// Substitution f(g_1,...,g_n) for exact f.  Monomials with negative
/// exponents go through a single inversion of the corresponding exact
/// positive power, so each term's certified box is sound; the sum is exact
/// whenever every term is.
inline series apply(const endo_map& phi, const series& f, const precision_box& box) {
    if (!f.exact()) fail(errc::precision_exhausted, "apply substitutes into exact series only");
    if (f.vars() != phi.n) fail(errc::dimension_mismatch, "variable count mismatch");
    if (!f.ring()->same(*phi.ring)) fail(errc::mixed_rings, "ring mismatch");
    const int n = phi.n;
    const auto& ring = phi.ring;

    // cache of positive powers g_i^k
    std::vector<std::vector<series>> pows(static_cast<std::size_t>(n));
    auto power = [&](int i, std::int32_t k) -> const series& {
        auto& tab = pows[static_cast<std::size_t>(i)];
        if (tab.empty()) tab.push_back(series::one(ring, n));
        while (static_cast<std::int32_t>(tab.size()) <= k)
            tab.push_back(tab.back() * phi.images[static_cast<std::size_t>(i)]);
        return tab[static_cast<std::size_t>(k)];
    };

    series acc = series::zero(ring, n);
    bool any_boxed = false;
    for (const auto& [l, a] : f.terms()) {
        series pos = series::constant(ring, n, a);
        series neg = series::one(ring, n);
        bool has_neg = false;
        for (int i = 0; i < n; ++i) {
            if (l[i] > 0) pos = pos * power(i, l[i]);
            if (l[i] < 0) {
                neg = neg * power(i, -l[i]);
                has_neg = true;
            }
        }
        series term = std::move(pos);
        if (has_neg) {
            auto h = term.hull();
            std::vector<std::pair<std::int32_t, std::int32_t>> wb;
            for (int i = 0; i < n; ++i) {
                std::int32_t hi_off = h ? h->hi[i] : 0;
                std::int32_t lo_off = h ? h->lo[i] : 0;
                wb.emplace_back(box.lo(i) - hi_off, box.hi(i) - lo_off);
            }
            series inv = invert_unit(neg, precision_box(wb));
            if (!inv.exact()) any_boxed = true;
            term = term * inv;
        }
        acc = acc + term;
    }
    if (any_boxed && !acc.exact()) return acc.restricted(box);
    return acc;
}

/// Composition phi . psi; requires the substituted images to stay exact
/// (inverses of nilpotent-tail and monomial units are exact, so this covers
/// every composable pair the library constructs).
inline endo_map compose(const endo_map& phi, const endo_map& psi) {
    if (phi.n != psi.n) fail(errc::dimension_mismatch, "variable count mismatch");
    if (!phi.ring->same(*psi.ring)) fail(errc::mixed_rings, "ring mismatch");
    std::vector<series> images;
    precision_box dummy(phi.n, -2, 2);
    for (const auto& im : psi.images) {
        series s = apply(phi, im, dummy);
        if (!s.exact())
            fail(errc::precision_exhausted, "composition images are not exactly representable");
        images.push_back(std::move(s));
    }
    return make_endo(std::move(images));
}

/// Transport of a reduced top form along phi: density -> (density o phi) * J.
inline top_form transport(const endo_map& phi, const top_form& w, const precision_box& box) {
    series sub = apply(phi, w.density, box);
    return top_form{sub * jacobian(phi.images)};
}

namespace detail {

/// Sound single-coefficient preimage extraction:
///   coefficient of phi_g^{-1}(f) at l  =  res(f * g^{-l-1} * J(g)).
/// The negative powers go through one inversion whose certified box is
/// arranged to pin exactly the residue point.
struct inverse_ctx {
    std::vector<series> g;
    series ef; // f * J(g)
    int n;
    ring_ptr ring;
    std::vector<std::vector<series>> pows; // cache of positive powers per axis
};

inline inverse_ctx make_inverse_ctx(const std::vector<series>& g, const series& f) {
    inverse_ctx cx;
    cx.g = g;
    cx.n = f.vars();
    cx.ring = f.ring();
    cx.ef = f * jacobian(g);
    cx.pows.assign(static_cast<std::size_t>(cx.n), {});
    return cx;
}

inline const series& ctx_power(inverse_ctx& cx, int i, std::int32_t k) {
    auto& tab = cx.pows[static_cast<std::size_t>(i)];
    if (tab.empty()) tab.push_back(series::one(cx.ring, cx.n));
    while (static_cast<std::int32_t>(tab.size()) <= k)
        tab.push_back(tab.back() * cx.g[static_cast<std::size_t>(i)]);
    return tab[static_cast<std::size_t>(k)];
}

inline ring_value preimage_coeff(inverse_ctx& cx, const exp_vec& l) {
    const int n = cx.n;
    exp_vec r = residue_point(n);
    series t = cx.ef;
    series neg = series::one(cx.ring, n);
    bool has_neg = false;
    for (int i = 0; i < n; ++i) {
        std::int32_t a = -l[i] - 1;
        if (a > 0) t = t * ctx_power(cx, i, a);
        if (a < 0) {
            neg = neg * ctx_power(cx, i, -a);
            has_neg = true;
        }
    }
    if (!has_neg) return t.coeff_raw(r);
    auto h = t.hull();
    if (!h) return ring_value::zero(cx.ring);
    std::vector<std::pair<std::int32_t, std::int32_t>> wb;
    for (int i = 0; i < n; ++i) wb.emplace_back(r[i] - h->hi[i], r[i] - h->lo[i]);
    series inv = invert_unit(neg, precision_box(wb));
    return (t * inv).coeff_raw(r);
}

} // namespace detail

/// The explicit inverse formula: phi_g^{-1}(f) restricted to `box`, as the
/// sum over l in the box of res(f * g^{-l-1} * J(g)) t^l.  Requires the
/// endomorphism to be invertible (d = 1).
inline series inverse_apply(const std::vector<series>& g, const series& f, const precision_box& box) {
    endo_map phi = make_endo(g);
    for (int j = 0; j < phi.ring->components(); ++j)
        if (phi.d[j] != 1) fail(errc::not_invertible, "endomorphism has d != 1");
    if (!f.exact()) fail(errc::not_a_unit, "inverse_apply needs an exact series");
    if (!is_unit_series(f)) fail(errc::not_a_unit, "inverse_apply needs a unit");
    if (box.dim() != phi.n) fail(errc::dimension_mismatch, "box dimension mismatch");
    const int n = phi.n;
    auto cx = detail::make_inverse_ctx(g, f);
    std::vector<series::term> out;
    exp_vec l(n);
    // iterate the box lattice
    for (int i = 0; i < n; ++i) l[i] = box.lo(i);
    while (true) {
        ring_value v = detail::preimage_coeff(cx, l);
        if (!v.is_zero()) out.emplace_back(l, std::move(v));
        int i = 0;
        for (; i < n; ++i) {
            if (l[i] < box.hi(i)) {
                ++l[i];
                break;
            }
            l[i] = box.lo(i);
        }
        if (i == n) break;
    }
    return series::from_terms(f.ring(), n, std::move(out), false, box);
}

inline series inverse_apply(const endo_map& phi, const series& f, const precision_box& box) {
    return inverse_apply(phi.images, f, box);
}

namespace detail {

/// Heuristically windowed preimage truncation used by the pairing on rings
/// with nilpotents; the caller certifies the extracted value by a
/// stabilization doubling.  Builds per-axis power tables of u_i = g_i t^{-c_i}
/// and walks the exponent grid so every grid step is one truncated product.
inline series preimage_window(const std::vector<series>& g, const series& f,
                              const precision_box& win, const std::vector<exp_vec>& ucols) {
    const int n = f.vars();
    const auto& ring = f.ring();
    exp_vec r = residue_point(n);

    // u_i = g_i * t^{-col_i}; nu(u_i) = 0
    std::vector<series> u;
    for (int i = 0; i < n; ++i) u.push_back(g[static_cast<std::size_t>(i)].shifted(-ucols[static_cast<std::size_t>(i)]));

    series ef = f * jacobian(g);

    // coefficient of the preimage at l:  res(E * g^{-l-1} J) with
    // g^a = t^{Upsilon a} * prod u_i^{a_i}; extraction point q = r - Upsilon a.
    std::vector<std::int32_t> alo(static_cast<std::size_t>(n)), ahi(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        alo[static_cast<std::size_t>(i)] = -win.hi(i) - 1;
        ahi[static_cast<std::size_t>(i)] = -win.lo(i) - 1;
    }

    // window radii: spread of the u-power supports that can still reach the
    // extraction points; heuristic, certified downstream
    std::int32_t hu = 1;
    for (const auto& ui : u) {
        auto h = (ui - series::one(ring, n)).hull();
        if (h)
            for (int i = 0; i < n; ++i)
                hu = std::max({hu, std::abs(h->lo[i]), std::abs(h->hi[i])});
    }
    std::int32_t amax = 0;
    for (int i = 0; i < n; ++i)
        amax += std::max(std::abs(alo[static_cast<std::size_t>(i)]), std::abs(ahi[static_cast<std::size_t>(i)]));
    std::int32_t pad = ring->nilpotency_bound() + 2;
    std::int32_t radius = amax * hu + pad;

    // extraction targets q = r - Upsilon a over the whole grid
    std::vector<std::pair<std::int32_t, std::int32_t>> qb(static_cast<std::size_t>(n));
    for (int c = 0; c < n; ++c) qb[static_cast<std::size_t>(c)] = {r[c], r[c]};
    for (int i = 0; i < n; ++i) {
        for (int c = 0; c < n; ++c) {
            std::int32_t w1 = -ucols[static_cast<std::size_t>(i)][c] * alo[static_cast<std::size_t>(i)];
            std::int32_t w2 = -ucols[static_cast<std::size_t>(i)][c] * ahi[static_cast<std::size_t>(i)];
            qb[static_cast<std::size_t>(c)].first += std::min(w1, w2);
            qb[static_cast<std::size_t>(c)].second += std::max(w1, w2);
        }
    }

    std::vector<std::pair<std::int32_t, std::int32_t>> ub(static_cast<std::size_t>(n));
    for (int c = 0; c < n; ++c) ub[static_cast<std::size_t>(c)] = {-radius, radius};
    precision_box uwin(ub);
    precision_box uwin2 = uwin.padded(radius);

    std::vector<std::pair<std::int32_t, std::int32_t>> pb(static_cast<std::size_t>(n));
    for (int c = 0; c < n; ++c)
        pb[static_cast<std::size_t>(c)] = {qb[static_cast<std::size_t>(c)].first - radius,
                                           qb[static_cast<std::size_t>(c)].second + radius};
    precision_box pwin(pb);

    auto trunc = [&](const series& s, const precision_box& w) {
        std::vector<series::term> kept;
        for (const auto& t : s.terms())
            if (w.contains(t.first)) kept.push_back(t);
        return series::from_terms(ring, n, std::move(kept), false, w);
    };

    // per-axis power tables of u_i on uwin
    std::vector<std::vector<series>> table(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        auto& tab = table[static_cast<std::size_t>(i)];
        std::int32_t lo = alo[static_cast<std::size_t>(i)], hi = ahi[static_cast<std::size_t>(i)];
        tab.assign(static_cast<std::size_t>(hi - lo + 1), series());
        series uinv = invert_unit(u[static_cast<std::size_t>(i)], uwin2);
        series cur = series::one(ring, n);
        std::int32_t a = 0;
        // walk up from 0 to hi, then down from 0 to lo
        auto put = [&](std::int32_t idx, const series& s) {
            if (idx >= lo && idx <= hi) tab[static_cast<std::size_t>(idx - lo)] = s;
        };
        put(0, cur);
        series up = cur;
        for (a = 1; a <= hi; ++a) {
            up = trunc(up * u[static_cast<std::size_t>(i)], uwin);
            put(a, up);
        }
        series down = cur;
        for (a = -1; a >= lo; --a) {
            down = trunc(down * uinv, uwin);
            put(a, down);
        }
    }

    // snake over (a_2..a_n), extracting all a_1 values at each cell
    std::vector<series::term> out;
    exp_vec a(n);
    auto extract_cell = [&](const series& p) {
        // q = r - Upsilon a depends on a_1 too
        std::int32_t lo1 = alo[0], hi1 = ahi[0];
        for (std::int32_t a1 = lo1; a1 <= hi1; ++a1) {
            a[0] = a1;
            exp_vec q = r;
            for (int i = 0; i < n; ++i)
                for (int c = 0; c < n; ++c) q[c] -= ucols[static_cast<std::size_t>(i)][c] * a[i];
            const series& t1 = table[0][static_cast<std::size_t>(a1 - alo[0])];
            ring_value v = ring_value::zero(ring);
            for (const auto& [b, cb] : p.terms()) {
                ring_value w = t1.coeff_raw(q - b);
                if (!w.is_zero()) v = v + cb * w;
            }
            if (v.is_zero()) continue;
            exp_vec l(n);
            for (int i = 0; i < n; ++i) l[i] = -a[i] - 1;
            out.emplace_back(l, std::move(v));
        }
    };

    if (n == 1) {
        extract_cell(trunc(ef, pwin));
    } else {
        // per-cell partial products over the outer axes (a_2..a_n); the
        // a_1 scan inside extract_cell uses the axis-1 table directly
        std::vector<std::int32_t> c2(static_cast<std::size_t>(n));
        std::function<void(int)> rec = [&](int axis) {
            if (axis == 0) {
                series prod = ef;
                for (int i = 1; i < n; ++i) {
                    a[i] = c2[static_cast<std::size_t>(i)];
                    prod = trunc(prod * table[static_cast<std::size_t>(i)][static_cast<std::size_t>(
                                            c2[static_cast<std::size_t>(i)] - alo[static_cast<std::size_t>(i)])],
                                 pwin);
                }
                extract_cell(prod);
                return;
            }
            for (std::int32_t v = alo[static_cast<std::size_t>(axis)]; v <= ahi[static_cast<std::size_t>(axis)]; ++v) {
                c2[static_cast<std::size_t>(axis)] = v;
                rec(axis - 1);
            }
        };
        rec(n - 1);
    }
    return series::from_terms(ring, n, std::move(out), false, win);
}

} // namespace detail

/// Memo table shared across the multilinear expansions of one symbol
/// evaluation; pairings repeat heavily there.
struct eval_context {
    std::unordered_map<std::string, ring_value> memo;
};

namespace detail {

/// Columns of Upsilon^{-1} for an invertible (d = 1) endomorphism on one
/// component: unipotent back substitution.
inline std::vector<exp_vec> unipotent_inverse_cols(const endo_map& phi, int comp) {
    const int n = phi.n;
    std::vector<std::vector<std::int64_t>> m(static_cast<std::size_t>(n),
                                             std::vector<std::int64_t>(static_cast<std::size_t>(n)));
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c)
            m[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] =
                phi.upsilon[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)][comp];
    std::vector<exp_vec> cols;
    for (int i = 0; i < n; ++i) {
        std::vector<std::int64_t> x(static_cast<std::size_t>(n), 0);
        for (int r = n - 1; r >= 0; --r) {
            std::int64_t rhs = (r == i) ? 1 : 0;
            for (int c = r + 1; c < n; ++c)
                rhs -= m[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] * x[static_cast<std::size_t>(c)];
            x[static_cast<std::size_t>(r)] = rhs; // diagonal is 1
        }
        exp_vec e(n);
        for (int r = 0; r < n; ++r) e[r] = static_cast<std::int32_t>(x[static_cast<std::size_t>(r)]);
        cols.push_back(e);
    }
    return cols;
}

inline std::string pairing_key(const series& f, const std::vector<series>& g) {
    std::string k = "P" + f.key();
    for (const auto& gi : g) k += "#" + gi.key();
    return k;
}

/// <f, g> over a connected coefficient ring.
inline ring_value pairing_connected(const series& f, const std::vector<series>& g,
                                    const std::optional<precision_box>& box, eval_context* ctx) {
    const auto& ring = f.ring();
    const int n = f.vars();

    // <f, t_1,...,t_n> = pi(f)
    if (is_identity_images(g)) return pi(f);

    std::string key;
    if (ctx) {
        key = pairing_key(f, g);
        auto it = ctx->memo.find(key);
        if (it != ctx->memo.end()) return it->second;
    }

    endo_map phi = make_endo(g);
    if (phi.d[0] != 1) fail(errc::not_invertible, "pairing needs d = 1");
    if (!f.exact()) fail(errc::not_a_unit, "pairing needs an exact series");
    auto m = valuation(f);
    if (!m) fail(errc::not_a_unit, "pairing needs a unit");

    auto remember = [&](ring_value v) {
        if (ctx) ctx->memo.emplace(key, v);
        return v;
    };

    std::vector<exp_vec> ucols(static_cast<std::size_t>(n), exp_vec(n));
    for (int i = 0; i < n; ++i)
        for (int r = 0; r < n; ++r)
            ucols[static_cast<std::size_t>(i)][r] =
                static_cast<std::int32_t>(phi.upsilon[static_cast<std::size_t>(r)][static_cast<std::size_t>(i)][0]);

    if (ring->reduced()) {
        // With no nilpotents V- is trivial, so pi picks the coefficient at
        // the valuation and the lex-positive tail pairs to 1:
        //   <f,g> = coeff_m(f) * prod_i rho_i^{m_i},
        // rho_i the coefficient of phi^{-1}(t_i) at its valuation
        // Upsilon^{-1} e_i, a single sound residue of the inverse formula.
        ring_value acc = f.coeff_raw(*m);
        if (!m->is_zero()) {
            auto cols = unipotent_inverse_cols(phi, 0);
            for (int i = 0; i < n; ++i) {
                if ((*m)[i] == 0) continue;
                ring_value rho = ring_value::zero(ring);
                std::string rkey;
                bool have = false;
                if (ctx) {
                    rkey = "R" + std::to_string(i);
                    for (const auto& gi : g) rkey += "#" + gi.key();
                    auto it = ctx->memo.find(rkey);
                    if (it != ctx->memo.end()) {
                        rho = it->second;
                        have = true;
                    }
                }
                if (!have) {
                    auto cx = make_inverse_ctx(g, series::variable(ring, n, i));
                    rho = preimage_coeff(cx, cols[static_cast<std::size_t>(i)]);
                    if (ctx) ctx->memo.emplace(rkey, rho);
                }
                auto rinv = rho.inverse();
                if (!rinv) fail(errc::internal, "leading preimage coefficient must be a unit");
                acc = acc * ((*m)[i] > 0 ? rho.pow((*m)[i]) : rinv->pow(-(*m)[i]));
            }
        }
        return remember(std::move(acc));
    }

    // Rings with nilpotents: pi of a windowed preimage truncation, certified
    // by one stabilization doubling (an extra escalation retries once when
    // the first window is too small to even decompose).
    std::int32_t spread = 1;
    auto widen = [&](const series& s, const exp_vec& center) {
        for (const auto& [e, c] : s.terms())
            for (int i = 0; i < n; ++i)
                spread = std::max({spread, std::abs(e[i] - center[i])});
    };
    widen(f, *m);
    exp_vec zero_c(n);
    for (int i = 0; i < n; ++i)
        widen(g[static_cast<std::size_t>(i)].shifted(-ucols[static_cast<std::size_t>(i)]), zero_c);
    std::int32_t r0 = ring->nilpotency_bound() + spread;

    std::vector<std::pair<std::int32_t, std::int32_t>> wb;
    for (int i = 0; i < n; ++i) wb.emplace_back((*m)[i] - r0, (*m)[i] + r0);
    precision_box base = box ? *box : precision_box(wb);

    auto attempt = [&](std::int32_t pad) -> std::optional<ring_value> {
        series h = preimage_window(g, f, base.padded(pad), ucols);
        try {
            return pi(h.as_exact_truncation());
        } catch (const error& e) {
            if (e.kind() == errc::not_a_unit) return std::nullopt;
            throw;
        }
    };

    auto v0 = attempt(0);
    auto v1 = attempt(r0);
    if (v0 && v1 && *v0 == *v1) return remember(std::move(*v1));
    auto v2 = attempt(3 * r0);
    if (v1 && v2 && *v1 == *v2) return remember(std::move(*v2));
    fail(errc::unstable_precision, "pairing did not stabilize under box doubling");
}

} // namespace detail

/// <f, g_1,...,g_n> := pi(phi_g^{-1}(f)) for an invertible valuation matrix.
/// Splits product coefficient rings componentwise.  The optional box narrows
/// the internal certification window; `ctx` memoizes repeated pairings.
inline ring_value pairing(const series& f, const std::vector<series>& g,
                          const std::optional<precision_box>& box = {}, eval_context* ctx = nullptr) {
    if (g.size() != static_cast<std::size_t>(f.vars()))
        fail(errc::dimension_mismatch, "pairing needs n images");
    const auto& ring = f.ring();
    if (ring->kind() != ring_kind::product) return detail::pairing_connected(f, g, box, ctx);
    auto fc = detail::split_components(f);
    std::vector<std::vector<series>> gc;
    for (const auto& gi : g) gc.push_back(detail::split_components(gi));
    std::vector<ring_value> vals;
    for (int j = 0; j < ring->components(); ++j) {
        std::vector<series> gj;
        for (const auto& parts : gc) gj.push_back(parts[static_cast<std::size_t>(j)]);
        vals.push_back(detail::pairing_connected(fc[static_cast<std::size_t>(j)], gj, box, ctx));
    }
    return ring_value::from_components(ring, std::move(vals));
}

} // namespace ccs
