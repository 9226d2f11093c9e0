#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ccs/endo.hpp"

namespace ccs {

// ---------------------------------------------------------------------------
// sgn : (Z^n)^{n+1} -> Z/2
// ---------------------------------------------------------------------------

/// The unique multilinear symmetric map with
/// sgn(l, l, l_2,...,l_n) = det(l, l_2,...,l_n) mod 2, computed by full
/// multilinear expansion over the standard basis.  A basis tuple of n+1
/// indices contributes 1 exactly when it covers {1..n} (pigeonhole forces
/// one duplicate; removing it leaves a permutation matrix with odd
/// determinant).
inline int sgn(const std::vector<exp_vec>& ls) {
    if (ls.empty()) fail(errc::dimension_mismatch, "sgn needs n+1 vectors");
    const int n = ls[0].dim();
    if (static_cast<int>(ls.size()) != n + 1)
        fail(errc::dimension_mismatch, "sgn needs exactly n+1 vectors");
    for (const auto& l : ls)
        if (l.dim() != n) fail(errc::dimension_mismatch, "sgn vector dimension mismatch");
    int acc = 0;
    std::vector<int> choice(static_cast<std::size_t>(n + 1), 0);
    while (true) {
        // parity of the term prod_i ls[i][choice_i] over a covering tuple
        int covered_mask = 0;
        int parity = 1;
        for (int i = 0; i <= n && parity; ++i) {
            parity &= static_cast<int>(ls[static_cast<std::size_t>(i)][choice[static_cast<std::size_t>(i)]] & 1);
            covered_mask |= 1 << choice[static_cast<std::size_t>(i)];
        }
        if (parity && covered_mask == (1 << n) - 1) acc ^= 1;
        int i = 0;
        for (; i <= n; ++i) {
            if (choice[static_cast<std::size_t>(i)] < n - 1) {
                ++choice[static_cast<std::size_t>(i)];
                break;
            }
            choice[static_cast<std::size_t>(i)] = 0;
        }
        if (i == n + 1) break;
    }
    return acc;
}

// ---------------------------------------------------------------------------
// the (K, kappa) index set and the v-basis of Lemma 4.1
// ---------------------------------------------------------------------------

/// A subset K of {1..n} together with an order-preserving injection
/// kappa : K -> {1..n}.  Since kappa is increasing it is determined by its
/// image, so both halves are stored as bitmasks (bit i = element i+1).
struct kkappa {
    std::uint32_t kmask = 0;
    std::uint32_t imask = 0;

    std::vector<int> k_elems(int /*n*/ = 0) const { return bits(kmask); }
    std::vector<int> kappa_elems(int /*n*/ = 0) const { return bits(imask); }

    /// kappa(k) for k in K (0-based; position of k in K picks the matching
    /// image element).
    int kappa_of(int k) const {
        auto ks = bits(kmask);
        auto is = bits(imask);
        for (std::size_t i = 0; i < ks.size(); ++i)
            if (ks[i] == k) return is[i];
        fail(errc::internal, "kappa_of outside K");
    }

    friend bool operator<(const kkappa& a, const kkappa& b) {
        return a.kmask != b.kmask ? a.kmask < b.kmask : a.imask < b.imask;
    }
    friend bool operator==(const kkappa& a, const kkappa& b) = default;

    std::string to_string() const {
        auto ks = bits(kmask);
        std::string s = "{";
        for (std::size_t i = 0; i < ks.size(); ++i) s += (i ? "," : "") + std::to_string(ks[i] + 1);
        s += "}->{";
        auto is = bits(imask);
        for (std::size_t i = 0; i < is.size(); ++i) s += (i ? "," : "") + std::to_string(is[i] + 1);
        return s + "}";
    }

private:
    static std::vector<int> bits(std::uint32_t m) {
        std::vector<int> out;
        for (int i = 0; i < 32; ++i)
            if (m & (1u << i)) out.push_back(i);
        return out;
    }
};

/// All C(2n, n) pairs (K, kappa).
inline std::vector<kkappa> enumerate_kkappa(int n) {
    std::vector<std::vector<std::uint32_t>> by_size(static_cast<std::size_t>(n + 1));
    for (std::uint32_t m = 0; m < (1u << n); ++m)
        by_size[static_cast<std::size_t>(__builtin_popcount(m))].push_back(m);
    std::vector<kkappa> out;
    for (int s = 0; s <= n; ++s)
        for (auto km : by_size[static_cast<std::size_t>(s)])
            for (auto im : by_size[static_cast<std::size_t>(s)]) out.push_back(kkappa{km, im});
    return out;
}

namespace detail {

/// Standard wedge monomial in Lambda^n of the rank-2n module with basis
/// e_0..e_{n-1}, x_0..x_{n-1} (x_i encoded as n + i): a strictly increasing
/// index tuple.
using wedge_key = std::vector<int>;

/// Expansion of (e.col_1 + x_1) ^ ... ^ (e.col_n + x_n) on the standard
/// basis, integer coefficients.
inline std::map<wedge_key, std::int64_t> wedge_expand(const std::vector<exp_vec>& cols) {
    const int n = static_cast<int>(cols.size());
    std::map<wedge_key, std::int64_t> acc;
    std::vector<int> picked(static_cast<std::size_t>(n));
    auto rec = [&](auto&& self, int factor, std::int64_t coeff) -> void {
        if (coeff == 0) return;
        if (factor == n) {
            // sort picked indices, tracking parity; duplicates kill the term
            wedge_key key(picked.begin(), picked.end());
            int swaps = 0;
            for (std::size_t i = 0; i < key.size(); ++i)
                for (std::size_t j = i + 1; j < key.size(); ++j) {
                    if (key[i] == key[j]) return;
                    if (key[i] > key[j]) ++swaps;
                }
            std::sort(key.begin(), key.end());
            acc[key] += (swaps % 2 == 0) ? coeff : -coeff;
            return;
        }
        for (int j = 0; j < n; ++j) {
            std::int64_t c = cols[static_cast<std::size_t>(factor)][j];
            if (c == 0) continue;
            picked[static_cast<std::size_t>(factor)] = j;
            self(self, factor + 1, coeff * c);
        }
        picked[static_cast<std::size_t>(factor)] = n + factor; // x_{factor}
        self(self, factor + 1, coeff);
    };
    rec(rec, 0, 1);
    std::erase_if(acc, [](const auto& kv) { return kv.second == 0; });
    return acc;
}

/// Rewrite one standard monomial e_{p.} ^ x_{r.} on the v-basis by opening
/// the brackets of x_{r_i} = (e_{q_i} + x_{r_i}) - e_{q_i}.
inline void standard_to_v(const wedge_key& key, std::int64_t coeff, int n,
                          std::map<kkappa, std::int64_t>& out) {
    std::vector<int> p, r;
    for (int idx : key)
        (idx < n ? p : r).push_back(idx < n ? idx : idx - n);
    const int m = static_cast<int>(p.size());
    std::vector<int> q;
    {
        std::uint32_t pm = 0;
        for (int v : p) pm |= 1u << v;
        for (int v = 0; v < n; ++v)
            if (!(pm & (1u << v))) q.push_back(v);
    }
    // parity of sigma : (1..n) -> (p_1..p_m, q_1..q_{n-m})
    std::vector<int> sigma(p);
    sigma.insert(sigma.end(), q.begin(), q.end());
    int s = 0;
    for (std::size_t i = 0; i < sigma.size(); ++i)
        for (std::size_t j = i + 1; j < sigma.size(); ++j)
            if (sigma[i] > sigma[j]) ++s;
    int base_sign = ((s + (n - m)) % 2 == 0) ? 1 : -1;
    // mu sends q_i to r_i; K runs over subsets of {q_1..q_{n-m}}
    const int nm = n - m;
    for (std::uint32_t sub = 0; sub < (1u << nm); ++sub) {
        std::uint32_t kmask = 0, imask = 0;
        int bitsset = 0;
        for (int i = 0; i < nm; ++i)
            if (sub & (1u << i)) {
                kmask |= 1u << q[static_cast<std::size_t>(i)];
                imask |= 1u << r[static_cast<std::size_t>(i)];
                ++bitsset;
            }
        std::int64_t sgn_term = (bitsset % 2 == 0) ? 1 : -1;
        out[kkappa{kmask, imask}] += coeff * base_sign * sgn_term;
    }
}

/// Coefficients C(K, kappa) on the v-basis for integer valuation columns.
inline std::map<kkappa, std::int64_t> exterior_coeffs_int(const std::vector<exp_vec>& cols) {
    const int n = static_cast<int>(cols.size());
    std::map<kkappa, std::int64_t> out;
    for (const auto& [key, c] : wedge_expand(cols)) standard_to_v(key, c, n, out);
    std::erase_if(out, [](const auto& kv) { return kv.second == 0; });
    return out;
}

/// Expansion of v_{(K,kappa)} on the standard basis (test oracle hook for
/// the basis property).
inline std::map<wedge_key, std::int64_t> v_to_standard(const kkappa& kk, int n) {
    std::map<wedge_key, std::int64_t> acc;
    auto ks = kk.k_elems();
    auto is = kk.kappa_elems();
    std::uint32_t kmask = kk.kmask;
    const auto sz = ks.size();
    for (std::uint32_t sub = 0; sub < (1u << sz); ++sub) {
        std::vector<int> key;
        std::size_t pos = 0;
        for (int i = 0; i < n; ++i) {
            if (kmask & (1u << i)) {
                std::size_t which = 0;
                for (std::size_t t = 0; t < sz; ++t)
                    if (ks[t] == i) which = t;
                key.push_back((sub & (1u << which)) ? n + is[which] : i);
            } else {
                key.push_back(i);
            }
            (void)pos;
        }
        int swaps = 0;
        bool dead = false;
        for (std::size_t i = 0; i < key.size() && !dead; ++i)
            for (std::size_t j = i + 1; j < key.size() && !dead; ++j) {
                if (key[i] == key[j]) dead = true;
                if (key[i] > key[j]) ++swaps;
            }
        if (dead) continue;
        std::sort(key.begin(), key.end());
        acc[key] += (swaps % 2 == 0) ? 1 : -1;
    }
    std::erase_if(acc, [](const auto& kv) { return kv.second == 0; });
    return acc;
}

} // namespace detail

/// Public exterior-coefficient map on locally constant valuation columns.
inline std::map<kkappa, zfunc> exterior_coeffs(const std::vector<std::vector<zfunc>>& cols) {
    if (cols.empty()) fail(errc::dimension_mismatch, "exterior_coeffs needs n columns");
    const int n = static_cast<int>(cols.size());
    const int nc = cols[0][0].components();
    std::map<kkappa, zfunc> out;
    for (int comp = 0; comp < nc; ++comp) {
        std::vector<exp_vec> ic;
        for (const auto& col : cols) {
            if (static_cast<int>(col.size()) != n)
                fail(errc::dimension_mismatch, "column entry count mismatch");
            exp_vec e(n);
            for (int r = 0; r < n; ++r) e[r] = static_cast<std::int32_t>(col[static_cast<std::size_t>(r)][comp]);
            ic.push_back(e);
        }
        for (const auto& [kk, c] : detail::exterior_coeffs_int(ic)) {
            auto it = out.find(kk);
            if (it == out.end()) it = out.emplace(kk, zfunc(0, nc)).first;
            it->second[comp] = c;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// symbol inputs and the g-families of Definition 4.2
// ---------------------------------------------------------------------------

/// The argument tuple of CC_n: n+1 exact invertible series over one ring.
struct symbol_input {
    std::vector<series> fs;

    explicit symbol_input(std::vector<series> v) : fs(std::move(v)) {
        if (fs.empty()) fail(errc::dimension_mismatch, "empty symbol input");
        const int n = fs[0].vars();
        if (static_cast<int>(fs.size()) != n + 1)
            fail(errc::dimension_mismatch, "CC_n needs n+1 series in n variables");
        for (const auto& f : fs) {
            if (f.vars() != n) fail(errc::dimension_mismatch, "mixed variable counts");
            if (!f.ring()->same(*fs[0].ring())) fail(errc::mixed_rings, "mixed coefficient rings");
            if (!f.exact()) fail(errc::not_a_unit, "symbol arguments must be exact");
            if (!is_unit_series(f)) fail(errc::not_a_unit, "symbol arguments must be units");
        }
    }

    int vars() const { return fs[0].vars(); }
    const ring_ptr& ring() const { return fs[0].ring(); }
};

/// g_{(K,kappa)}: g_i = t_i off K and t_i * f_{kappa(i)+1} * t^{-nu(...)} on K.
inline std::vector<series> g_family(const symbol_input& in, const kkappa& kk) {
    const int n = in.vars();
    const auto& ring = in.ring();
    std::vector<series> out;
    for (int i = 0; i < n; ++i) {
        if (!(kk.kmask & (1u << i))) {
            out.push_back(series::variable(ring, n, i));
            continue;
        }
        int slot = kk.kappa_of(i) + 1; // f_{kappa(i)+1}, 0-based tuple index
        const series& f = in.fs[static_cast<std::size_t>(slot)];
        series tnu = monomial_z(ring, n, nu(f));
        series tinv = invert_unit(tnu, precision_box(n, -1, 1)); // monomial: exact
        out.push_back(series::variable(ring, n, i) * f * tinv);
    }
    return out;
}

// ---------------------------------------------------------------------------
// the symbol evaluators
// ---------------------------------------------------------------------------

inline precision_box default_cc_box(int n) { return precision_box(n, -8, 8); }

namespace detail {

inline exp_vec valuation_or_throw(const series& f) {
    auto v = valuation(f);
    if (!v) fail(errc::not_a_unit, "series is not a unit of L^n(A)");
    return *v;
}

inline ring_value sign_value(const ring_ptr& ring, int bit) {
    ring_value one = ring_value::one(ring);
    return bit ? -one : one;
}

/// Formula (CCtilde) over a connected ring.
inline ring_value cc_tilde_connected(const symbol_input& in, const std::optional<precision_box>& box,
                                     eval_context& ctx) {
    const auto& ring = in.ring();
    std::vector<exp_vec> nus;
    nus.reserve(in.fs.size());
    for (const auto& f : in.fs) nus.push_back(valuation_or_throw(f));
    ring_value acc = sign_value(ring, sgn(nus));
    std::vector<exp_vec> cols(nus.begin() + 1, nus.end());
    for (const auto& [kk, c] : exterior_coeffs_int(cols)) {
        auto g = g_family(in, kk);
        ring_value p = pairing(in.fs[0], g, box, &ctx);
        acc = acc * p.pow(c);
    }
    return acc;
}

/// log(1 + w) for nilpotent w: the alternating sum terminates exactly.
inline series log_nilpotent_tail(const series& w) {
    const auto& ring = w.ring();
    const int n = w.vars();
    series acc = series::zero(ring, n);
    series pw = series::one(ring, n);
    std::size_t cap = static_cast<std::size_t>(ring->nilpotency_bound() - 1) *
                          std::max<std::size_t>(w.terms().size(), 1) +
                      1;
    for (std::size_t k = 1; k <= cap; ++k) {
        pw = pw * w;
        if (pw.is_zero()) return acc;
        ring_value c = ring_value::from_rational(ring, (k % 2 == 1) ? 1 : -1, bigint(k));
        acc = acc + pw.scaled(c);
    }
    fail(errc::internal, "nilpotent log did not terminate");
}

/// log(1 + p) for strictly lex-positive p, lambda-truncated to `win`.
inline series log_positive_tail(const series& p, const precision_box& win) {
    const auto& ring = p.ring();
    const int n = p.vars();
    std::vector<exp_vec> supp;
    for (const auto& [e, c] : p.terms()) supp.push_back(e);
    lex_weight lw = make_lex_weight(n, supp);
    bigrat cap = lw.box_max(win);
    series acc = series::zero(ring, n);
    series pw = series::one(ring, n);
    bool dropped = false;
    std::int64_t kmax = 0;
    if (cap > 0) {
        bigrat kr = cap / lw.delta;
        kmax = (boost::multiprecision::numerator(kr) / boost::multiprecision::denominator(kr))
                   .convert_to<std::int64_t>() +
               1;
    }
    for (std::int64_t k = 1; k <= kmax + 1; ++k) {
        pw = pw * p;
        std::vector<series::term> kept;
        for (const auto& t : pw.terms()) {
            if (lw.value(t.first) <= cap) kept.push_back(t);
            else dropped = true;
        }
        if (kept.size() != pw.terms().size()) pw = series::from_terms(ring, n, std::move(kept), true);
        if (pw.is_zero()) break;
        ring_value c = ring_value::from_rational(ring, (k % 2 == 1) ? 1 : -1, bigint(k));
        acc = acc + pw.scaled(c);
    }
    if (!pw.is_zero()) fail(errc::internal, "positive log failed to exit");
    if (!dropped) return acc;
    std::vector<series::term> ts = acc.terms();
    return series::from_terms(ring, n, std::move(ts), false, win);
}

/// exp of a nilpotent ring element (Q-algebra coefficients).
inline ring_value exp_nilpotent(const ring_value& x) {
    auto idx = x.nilpotency_index();
    if (!idx) fail(errc::unstable_precision, "exp applied to a non-nilpotent element");
    const auto& ring = x.spec();
    ring_value acc = ring_value::one(ring);
    ring_value pw = ring_value::one(ring);
    bigint fact = 1;
    for (int k = 1; k < *idx; ++k) {
        pw = pw * x;
        fact *= k;
        acc = acc + pw * ring_value::from_rational(ring, 1, fact);
    }
    return acc;
}

inline std::int64_t int_det(std::vector<std::vector<std::int64_t>> a) {
    const std::size_t n = a.size();
    if (n == 1) return a[0][0];
    std::int64_t acc = 0;
    for (std::size_t j = 0; j < n; ++j) {
        if (a[0][j] == 0) continue;
        std::vector<std::vector<std::int64_t>> sub(n - 1);
        for (std::size_t r = 1; r < n; ++r)
            for (std::size_t c = 0; c < n; ++c)
                if (c != j) sub[r - 1].push_back(a[r][c]);
        std::int64_t s = (j % 2 == 0) ? 1 : -1;
        acc += s * a[0][j] * int_det(std::move(sub));
    }
    return acc;
}

inline std::int64_t nu_det(const std::vector<exp_vec>& cols) {
    const std::size_t n = cols.size();
    std::vector<std::vector<std::int64_t>> a(n, std::vector<std::int64_t>(n));
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c) a[r][c] = cols[c][static_cast<int>(r)];
    return int_det(std::move(a));
}

/// The Q-algebra evaluator: peel each slot through the four-factor
/// decomposition; constants go through formula (CC1), sharp factors through
/// (CC3) with log/exp, and the residual all-monomial tuple through (CC2).
inline ring_value cc_q_connected(const symbol_input& in, const std::optional<precision_box>& box,
                                 eval_context& /*ctx*/) {
    const auto& ring = in.ring();
    const int n = in.vars();
    if (!ring->q_algebra()) fail(errc::not_q_algebra, "cc_q needs a Q-algebra coefficient ring");
    precision_box wb = box ? *box : default_cc_box(n);

    std::vector<exp_vec> prefix; // monomial exponents accumulated so far
    ring_value acc = ring_value::one(ring);

    auto others_of = [&](std::size_t idx) {
        std::vector<series> others;
        for (const auto& m : prefix)
            others.push_back(series::monomial(ring, n, m, ring_value::one(ring)));
        for (std::size_t j = idx + 1; j < in.fs.size(); ++j) others.push_back(in.fs[j]);
        return others;
    };

    for (std::size_t idx = 0; idx < in.fs.size(); ++idx) {
        auto parts = four_factor(in.fs[idx]);
        bool flip = (idx % 2) == 1; // moving this slot to the front costs idx swaps
        std::vector<series> others = others_of(idx);

        ring_value cpart = parts.c;
        if (!cpart.is_one()) {
            std::vector<exp_vec> cols;
            for (const auto& o : others) cols.push_back(valuation_or_throw(o));
            ring_value v = cpart.pow(nu_det(cols));
            acc = acc * (flip ? *v.inverse() : v);
        }
        series pplus = parts.plus - series::one(ring, n);
        if (!pplus.is_zero()) {
            series lg = log_positive_tail(pplus, detail::wedge_box(others, wb));
            ring_value r = residue(mixed_wedge(lg, others, wb));
            ring_value v = exp_nilpotent(r);
            acc = acc * (flip ? *v.inverse() : v);
        }
        series pminus = parts.minus - series::one(ring, n);
        if (!pminus.is_zero()) {
            series lg = log_nilpotent_tail(pminus);
            ring_value r = residue(mixed_wedge(lg, others, wb));
            ring_value v = exp_nilpotent(r);
            acc = acc * (flip ? *v.inverse() : v);
        }
        prefix.push_back(parts.nu);
    }
    return acc * sign_value(ring, sgn(prefix));
}

/// One base case of the Remark 4.8 procedure: a tuple whose entries are
/// single variables t_p or nu-zero units, all expansions already done.
inline ring_value cc_base_connected(const std::vector<series>& tup,
                                    const std::optional<precision_box>& box, eval_context& ctx) {
    const auto& ring = tup[0].ring();
    const int n = tup[0].vars();
    std::vector<exp_vec> nus;
    for (const auto& s : tup) nus.push_back(valuation_or_throw(s));

    // step 3: repeated arguments resolve through the parity of the reduced
    // determinant, taking the lexicographically smallest equal pair
    for (std::size_t i = 0; i + 1 < tup.size(); ++i)
        for (std::size_t j = i + 1; j < tup.size(); ++j)
            if (tup[i] == tup[j]) {
                std::vector<exp_vec> cols;
                for (std::size_t s = 0; s < tup.size(); ++s)
                    if (s != j) cols.push_back(nus[s]);
                return sign_value(ring, static_cast<int>(nu_det(cols) & 1));
            }

    // step 4: the unique order-preserving rearrangement of slots 2..n+1 into
    // (t_{p_1},...,t_{p_m}, h_{m+1},...,h_n)
    struct entry {
        int key0, key1, orig;
    };
    std::vector<entry> order;
    for (int s = 1; s <= n; ++s) {
        const exp_vec& v = nus[static_cast<std::size_t>(s)];
        if (v.is_zero()) order.push_back({1, s, s});
        else {
            int var = -1;
            for (int i = 0; i < n; ++i)
                if (v[i] != 0) var = i;
            // expansion slots with nonzero valuation are single variables
            order.push_back({0, var, s});
        }
    }
    std::vector<entry> sorted = order;
    std::sort(sorted.begin(), sorted.end(), [](const entry& a, const entry& b) {
        return a.key0 != b.key0 ? a.key0 < b.key0 : a.key1 < b.key1;
    });
    int swap_parity = 0;
    for (std::size_t i = 0; i < sorted.size(); ++i)
        for (std::size_t j = i + 1; j < sorted.size(); ++j)
            if (sorted[i].orig > sorted[j].orig) swap_parity ^= 1;

    std::vector<series> rt; // rearranged tuple
    rt.push_back(tup[0]);
    std::vector<int> pvars;
    for (const auto& e : sorted) {
        rt.push_back(tup[static_cast<std::size_t>(e.orig)]);
        if (e.key0 == 0) pvars.push_back(e.key1);
    }
    const int m = static_cast<int>(pvars.size());

    // step 5: formula (Denis) for (f_1, t_{p_1..p_m}, h's with nu = 0)
    std::vector<exp_vec> rnus;
    for (const auto& s : rt) rnus.push_back(valuation_or_throw(s));
    ring_value acc = sign_value(ring, sgn(rnus));

    std::vector<int> q;
    {
        std::uint32_t pm = 0;
        for (int v : pvars) pm |= 1u << v;
        for (int v = 0; v < n; ++v)
            if (!(pm & (1u << v))) q.push_back(v);
    }
    std::vector<int> sigma(pvars);
    sigma.insert(sigma.end(), q.begin(), q.end());
    int s2 = 0;
    for (std::size_t i = 0; i < sigma.size(); ++i)
        for (std::size_t j = i + 1; j < sigma.size(); ++j)
            if (sigma[i] > sigma[j]) s2 ^= 1;

    const int nm = n - m;
    for (std::uint32_t sub = 0; sub < (1u << nm); ++sub) {
        std::vector<series> g;
        int ksize = 0;
        for (int i = 0; i < n; ++i) g.push_back(series::variable(ring, n, i));
        for (int i = 0; i < nm; ++i)
            if (sub & (1u << i)) {
                int qi = q[static_cast<std::size_t>(i)];
                // kappa(q_i) = m + i, referencing slot m + i + 1 (nu = 0)
                g[static_cast<std::size_t>(qi)] =
                    series::variable(ring, n, qi) * rt[static_cast<std::size_t>(m + i + 1)];
                ++ksize;
            }
        ring_value pr = pairing(rt[0], g, box, &ctx);
        int e = (ksize + s2 + nm) & 1;
        acc = acc * (e ? *pr.inverse() : pr);
    }
    if (swap_parity) {
        auto inv = acc.inverse();
        if (!inv) fail(errc::internal, "symbol value must be a unit");
        acc = *inv;
    }
    return acc;
}

/// Remark 4.8 evaluator over a connected ring: factor every slot into
/// t-monomial parts and a nu-zero part, expand by multilinearity, resolve
/// each base tuple through steps 3-5.
inline ring_value cc_procedural_connected(const symbol_input& in, const std::optional<precision_box>& box,
                                          eval_context& ctx) {
    const auto& ring = in.ring();
    const int n = in.vars();
    struct part {
        series elem;
        std::int64_t mult;
    };
    std::vector<std::vector<part>> slots;
    for (const auto& f : in.fs) {
        exp_vec m = valuation_or_throw(f);
        series h = f.shifted(-m);
        std::vector<part> list;
        if (h != series::one(ring, n)) list.push_back({h, 1});
        for (int i = 0; i < n; ++i)
            if (m[i] != 0) list.push_back({series::variable(ring, n, i), m[i]});
        if (list.empty()) return ring_value::one(ring); // a slot equal to 1 kills the symbol
        slots.push_back(std::move(list));
    }
    ring_value acc = ring_value::one(ring);
    std::vector<series> tuple(in.fs.size(), series::zero(ring, n));
    auto rec = [&](auto&& self, std::size_t idx, std::int64_t mult) -> void {
        if (idx == slots.size()) {
            ring_value v = cc_base_connected(tuple, box, ctx);
            acc = acc * v.pow(mult);
            return;
        }
        for (const auto& p : slots[idx]) {
            tuple[idx] = p.elem;
            self(self, idx + 1, mult * p.mult);
        }
    };
    rec(rec, 0, 1);
    return acc;
}

} // namespace detail

// ---------------------------------------------------------------------------
// public engines (all split product rings componentwise first)
// ---------------------------------------------------------------------------

enum class cc_engine { tilde, procedural, q, tame };

inline const char* engine_name(cc_engine e) {
    switch (e) {
        case cc_engine::tilde: return "tilde";
        case cc_engine::procedural: return "procedural";
        case cc_engine::q: return "q";
        case cc_engine::tame: return "tame";
    }
    return "?";
}

/// The one-dimensional tame symbol over a field:
/// (-1)^{nu(f)nu(g)} (f^{nu(g)} / g^{nu(f)})(0); the independent field
/// oracle, evaluated through leading coefficients.
inline ring_value tame(const series& f, const series& g) {
    if (f.vars() != 1 || g.vars() != 1) fail(errc::dimension_mismatch, "tame symbol is one-dimensional");
    const auto& ring = f.ring();
    if (!ring->same(*g.ring())) fail(errc::mixed_rings, "mixed rings");
    if (!ring->is_field()) fail(errc::not_a_field, "tame symbol needs a field");
    auto va = detail::valuation_or_throw(f);
    auto vb = detail::valuation_or_throw(g);
    std::int64_t a = va[0], b = vb[0];
    ring_value lf = f.coeff_raw(va);
    ring_value lg = g.coeff_raw(vb);
    ring_value v = lf.pow(b) * lg.pow(-a);
    if ((a * b) & 1) v = -v;
    return v;
}

namespace detail {

template <class F>
inline ring_value per_component(const symbol_input& in, F&& engine) {
    const auto& ring = in.ring();
    if (ring->kind() != ring_kind::product) {
        eval_context ctx;
        return engine(in, ctx);
    }
    std::vector<std::vector<series>> split;
    for (const auto& f : in.fs) split.push_back(detail::split_components(f));
    std::vector<ring_value> vals;
    for (int j = 0; j < ring->components(); ++j) {
        std::vector<series> fj;
        for (const auto& parts : split) fj.push_back(parts[static_cast<std::size_t>(j)]);
        symbol_input cj(std::move(fj));
        eval_context ctx;
        vals.push_back(engine(cj, ctx));
    }
    return ring_value::from_components(ring, std::move(vals));
}

} // namespace detail

/// Formula (CCtilde): the K-theory-free explicit formula.
inline ring_value cc_tilde(const symbol_input& in, const std::optional<precision_box>& box = {}) {
    return detail::per_component(in, [&](const symbol_input& c, eval_context& ctx) {
        return detail::cc_tilde_connected(c, box, ctx);
    });
}

/// The step-by-step procedure of the explicit-computation remark.
inline ring_value cc_procedural(const symbol_input& in, const std::optional<precision_box>& box = {}) {
    return detail::per_component(in, [&](const symbol_input& c, eval_context& ctx) {
        return detail::cc_procedural_connected(c, box, ctx);
    });
}

/// The log/exp formula over Q-algebras.
inline ring_value cc_q(const symbol_input& in, const std::optional<precision_box>& box = {}) {
    return detail::per_component(in, [&](const symbol_input& c, eval_context& ctx) {
        return detail::cc_q_connected(c, box, ctx);
    });
}

/// CC_n(1 + g eps, f_1,...,f_n) = 1 + res(g dlog f_1 ^ ... ^ dlog f_n) eps
/// over a dual-number extension; an independent differential oracle.
inline ring_value cc_eps(const series& g, const std::vector<series>& fs,
                         const std::optional<precision_box>& box = {}) {
    if (fs.empty()) fail(errc::dimension_mismatch, "cc_eps needs n series");
    const auto& ring = g.ring();
    if (ring->kind() != ring_kind::extension || ring->degrees().back() != 2)
        fail(errc::unsupported_ring, "cc_eps needs a dual-number extension (last generator squares to zero)");
    const int n = g.vars();
    precision_box wb = box ? *box : default_cc_box(n);
    ring_value r = residue(mixed_wedge(g, fs, wb));
    ring_value eps = ring_value::generator(ring, ring->degrees().size() - 1, 1);
    return ring_value::one(ring) + r * eps;
}

inline ring_value cc(const symbol_input& in, cc_engine e, const std::optional<precision_box>& box = {}) {
    switch (e) {
        case cc_engine::tilde: return cc_tilde(in, box);
        case cc_engine::procedural: return cc_procedural(in, box);
        case cc_engine::q: return cc_q(in, box);
        case cc_engine::tame:
            if (in.vars() != 1) fail(errc::dimension_mismatch, "tame engine is one-dimensional");
            return tame(in.fs[0], in.fs[1]);
    }
    fail(errc::internal, "bad engine");
}

/// Every engine applicable to the input, with an agreement verdict.
struct cc_comparison {
    std::vector<std::pair<cc_engine, ring_value>> values;
    bool agree = true;
};

inline cc_comparison cc_compare(const symbol_input& in, const std::optional<precision_box>& box = {}) {
    cc_comparison out;
    out.values.emplace_back(cc_engine::tilde, cc_tilde(in, box));
    out.values.emplace_back(cc_engine::procedural, cc_procedural(in, box));
    if (in.ring()->q_algebra()) out.values.emplace_back(cc_engine::q, cc_q(in, box));
    if (in.vars() == 1 && in.ring()->is_field())
        out.values.emplace_back(cc_engine::tame, tame(in.fs[0], in.fs[1]));
    for (const auto& [e, v] : out.values)
        if (!(v == out.values[0].second)) out.agree = false;
    return out;
}

} // namespace ccs
