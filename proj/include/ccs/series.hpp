#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ccs/ring.hpp"

namespace ccs {

/// Hard cap on the number of series variables.  Everything downstream is
/// combinatorial in n (the K-pair count is C(2n,n)), so desk scale means
/// small n; 6 keeps exponent vectors flat and cheap.
inline constexpr int kmax_vars = 6;

/// Exponent vector l in Z^n, n >= 1.
class exp_vec {
public:
    exp_vec() : n_(0) { v_.fill(0); }
    explicit exp_vec(int n) : n_(n) {
        if (n < 1 || n > kmax_vars) fail(errc::dimension_mismatch, "variable count out of range");
        v_.fill(0);
    }
    exp_vec(std::initializer_list<std::int32_t> xs) : exp_vec(static_cast<int>(xs.size())) {
        int i = 0;
        for (auto x : xs) v_[static_cast<std::size_t>(i++)] = x;
    }

    static exp_vec unit(int n, int i) {
        exp_vec e(n);
        e[i] = 1;
        return e;
    }

    int dim() const { return n_; }
    std::int32_t operator[](int i) const { return v_[static_cast<std::size_t>(i)]; }
    std::int32_t& operator[](int i) { return v_[static_cast<std::size_t>(i)]; }

    friend exp_vec operator+(const exp_vec& a, const exp_vec& b) {
        check_dims(a, b);
        exp_vec r(a.n_);
        for (int i = 0; i < a.n_; ++i) r[i] = a[i] + b[i];
        return r;
    }
    friend exp_vec operator-(const exp_vec& a, const exp_vec& b) {
        check_dims(a, b);
        exp_vec r(a.n_);
        for (int i = 0; i < a.n_; ++i) r[i] = a[i] - b[i];
        return r;
    }
    exp_vec operator-() const {
        exp_vec r(n_);
        for (int i = 0; i < n_; ++i) r[i] = -v_[static_cast<std::size_t>(i)];
        return r;
    }

    friend bool operator==(const exp_vec& a, const exp_vec& b) {
        return a.n_ == b.n_ && a.v_ == b.v_;
    }
    friend bool operator!=(const exp_vec& a, const exp_vec& b) { return !(a == b); }

    bool is_zero() const {
        for (int i = 0; i < n_; ++i)
            if (v_[static_cast<std::size_t>(i)] != 0) return false;
        return true;
    }

    /// Drop the last coordinate (view into L^{n-1}).
    exp_vec head() const {
        exp_vec r(n_ - 1);
        for (int i = 0; i + 1 < n_; ++i) r[i] = v_[static_cast<std::size_t>(i)];
        return r;
    }

    /// Append a last coordinate.
    exp_vec with_last(std::int32_t j) const {
        exp_vec r(n_ + 1);
        for (int i = 0; i < n_; ++i) r[i] = v_[static_cast<std::size_t>(i)];
        r[n_] = j;
        return r;
    }

    std::string to_string() const {
        std::string s = "(";
        for (int i = 0; i < n_; ++i) {
            if (i) s += ",";
            s += std::to_string(v_[static_cast<std::size_t>(i)]);
        }
        return s + ")";
    }

private:
    static void check_dims(const exp_vec& a, const exp_vec& b) {
        if (a.n_ != b.n_) fail(errc::dimension_mismatch, "exponent dimension mismatch");
    }

    int n_;
    std::array<std::int32_t, kmax_vars> v_;
};

/// Lexicographic order with the last coordinate dominant:
/// l <= l' iff l_n < l'_n, or l_n = l'_n and the first n-1 coordinates
/// compare recursively.
inline int lex_cmp(const exp_vec& a, const exp_vec& b) {
    if (a.dim() != b.dim()) fail(errc::dimension_mismatch, "lex_cmp dimension mismatch");
    for (int i = a.dim() - 1; i >= 0; --i) {
        if (a[i] < b[i]) return -1;
        if (a[i] > b[i]) return 1;
    }
    return 0;
}

inline bool lex_less(const exp_vec& a, const exp_vec& b) { return lex_cmp(a, b) < 0; }

struct exp_vec_hash {
    std::size_t operator()(const exp_vec& e) const {
        std::size_t h = static_cast<std::size_t>(e.dim());
        for (int i = 0; i < e.dim(); ++i)
            h = h * 1000003u + static_cast<std::size_t>(static_cast<std::uint32_t>(e[i]));
        return h;
    }
};

/// Per-variable inclusive exponent bounds certifying where coefficients of a
/// non-exact series are known exactly.
class precision_box {
public:
    precision_box() : n_(0) {}
    precision_box(int n, std::int32_t lo, std::int32_t hi) : n_(n) {
        if (lo > hi) fail(errc::internal, "empty precision box");
        for (int i = 0; i < n; ++i) {
            lo_[static_cast<std::size_t>(i)] = lo;
            hi_[static_cast<std::size_t>(i)] = hi;
        }
    }
    precision_box(const std::vector<std::pair<std::int32_t, std::int32_t>>& bounds)
        : n_(static_cast<int>(bounds.size())) {
        if (n_ < 1 || n_ > kmax_vars) fail(errc::dimension_mismatch, "box dimension out of range");
        for (int i = 0; i < n_; ++i) {
            auto [l, h] = bounds[static_cast<std::size_t>(i)];
            if (l > h) fail(errc::internal, "box has lo > hi");
            lo_[static_cast<std::size_t>(i)] = l;
            hi_[static_cast<std::size_t>(i)] = h;
        }
    }

    int dim() const { return n_; }
    std::int32_t lo(int i) const { return lo_[static_cast<std::size_t>(i)]; }
    std::int32_t hi(int i) const { return hi_[static_cast<std::size_t>(i)]; }

    bool contains(const exp_vec& e) const {
        if (e.dim() != n_) return false;
        for (int i = 0; i < n_; ++i)
            if (e[i] < lo(i) || e[i] > hi(i)) return false;
        return true;
    }

    bool contains(const precision_box& o) const {
        if (o.n_ != n_) return false;
        for (int i = 0; i < n_; ++i)
            if (o.lo(i) < lo(i) || o.hi(i) > hi(i)) return false;
        return true;
    }

    std::optional<precision_box> intersect(const precision_box& o) const {
        if (o.n_ != n_) fail(errc::dimension_mismatch, "box dimension mismatch");
        std::vector<std::pair<std::int32_t, std::int32_t>> b;
        for (int i = 0; i < n_; ++i) {
            std::int32_t l = std::max(lo(i), o.lo(i));
            std::int32_t h = std::min(hi(i), o.hi(i));
            if (l > h) return std::nullopt;
            b.emplace_back(l, h);
        }
        return precision_box(b);
    }

    precision_box shifted(const exp_vec& e) const {
        std::vector<std::pair<std::int32_t, std::int32_t>> b;
        for (int i = 0; i < n_; ++i) b.emplace_back(lo(i) + e[i], hi(i) + e[i]);
        return precision_box(b);
    }

    precision_box padded(std::int32_t p) const {
        std::vector<std::pair<std::int32_t, std::int32_t>> b;
        for (int i = 0; i < n_; ++i) b.emplace_back(lo(i) - p, hi(i) + p);
        return precision_box(b);
    }

    precision_box doubled() const {
        std::vector<std::pair<std::int32_t, std::int32_t>> b;
        for (int i = 0; i < n_; ++i) b.emplace_back(2 * lo(i), 2 * hi(i));
        return precision_box(b);
    }

    std::int64_t volume() const {
        std::int64_t v = 1;
        for (int i = 0; i < n_; ++i) v *= static_cast<std::int64_t>(hi(i)) - lo(i) + 1;
        return v;
    }

    friend bool operator==(const precision_box& a, const precision_box& b) {
        if (a.n_ != b.n_) return false;
        for (int i = 0; i < a.n_; ++i)
            if (a.lo(i) != b.lo(i) || a.hi(i) != b.hi(i)) return false;
        return true;
    }

    std::string to_string() const {
        std::string s;
        for (int i = 0; i < n_; ++i) {
            if (i) s += ",";
            s += std::to_string(lo(i)) + ":" + std::to_string(hi(i));
        }
        return s;
    }

private:
    int n_;
    std::array<std::int32_t, kmax_vars> lo_{}, hi_{};
};

/// Coordinate-wise hull [min, max] of a finite exponent set.
struct exp_hull {
    exp_vec lo, hi;
};

/// A finitely supported approximation of an iterated Laurent series in
/// L^n(A).  When `exact` is set, the stored terms are the whole series (a
/// Laurent polynomial).  Otherwise the stored coefficients are exact inside
/// `box` and nothing is asserted outside it.
///
/// Terms are kept sorted in the last-coordinate-dominant lexicographic
/// order, with no explicit zeros.
class series {
public:
    using term = std::pair<exp_vec, ring_value>;

    series() = default;

    static series zero(const ring_ptr& ring, int n) {
        series s;
        s.ring_ = ring;
        s.n_ = check_n(n);
        s.exact_ = true;
        return s;
    }

    static series constant(const ring_ptr& ring, int n, const ring_value& c) {
        return monomial(ring, n, exp_vec(n), c);
    }

    static series one(const ring_ptr& ring, int n) {
        return constant(ring, n, ring_value::one(ring));
    }

    static series monomial(const ring_ptr& ring, int n, const exp_vec& e, const ring_value& c) {
        series s = zero(ring, n);
        if (!c.spec()->same(*ring)) fail(errc::mixed_rings, "coefficient ring mismatch");
        if (!c.is_zero()) s.terms_.emplace_back(e, c);
        return s;
    }

    /// Variable t_{i+1} as a series.
    static series variable(const ring_ptr& ring, int n, int i) {
        return monomial(ring, n, exp_vec::unit(n, i), ring_value::one(ring));
    }

    static series from_terms(const ring_ptr& ring, int n, std::vector<term> terms,
                             bool exact = true, std::optional<precision_box> box = {}) {
        series s = zero(ring, n);
        s.terms_ = std::move(terms);
        s.exact_ = exact;
        if (!exact) {
            if (!box) fail(errc::internal, "non-exact series needs a box");
            s.box_ = *box;
        }
        s.normalize();
        return s;
    }

    const ring_ptr& ring() const { return ring_; }
    int vars() const { return n_; }
    bool exact() const { return exact_; }
    const precision_box& box() const {
        if (exact_) fail(errc::internal, "exact series carries no box");
        return box_;
    }
    const std::vector<term>& terms() const { return terms_; }
    bool is_zero() const { return terms_.empty(); }

    /// Stored coefficient (zero if absent); throws OutsidePrecision when the
    /// exponent is not certified.
    ring_value coeff(const exp_vec& l) const {
        if (l.dim() != n_) fail(errc::dimension_mismatch, "coeff exponent dimension mismatch");
        if (!exact_ && !box_.contains(l))
            fail(errc::outside_precision, "coefficient at " + l.to_string() + " outside box " + box_.to_string());
        return coeff_raw(l);
    }

    /// Stored coefficient without the precision check.
    ring_value coeff_raw(const exp_vec& l) const {
        auto it = std::lower_bound(terms_.begin(), terms_.end(), l,
                                   [](const term& t, const exp_vec& e) { return lex_less(t.first, e); });
        if (it != terms_.end() && it->first == l) return it->second;
        return ring_value::zero(ring_);
    }

    std::optional<exp_hull> hull() const {
        if (terms_.empty()) return std::nullopt;
        exp_hull h{terms_[0].first, terms_[0].first};
        for (const auto& [e, c] : terms_)
            for (int i = 0; i < n_; ++i) {
                h.lo[i] = std::min(h.lo[i], e[i]);
                h.hi[i] = std::max(h.hi[i], e[i]);
            }
        return h;
    }

    /// Strictly lex-negative part (exponents < 0).
    series lexneg_part() const {
        series s = zero(ring_, n_);
        s.exact_ = exact_;
        s.box_ = box_;
        exp_vec z(n_);
        for (const auto& t : terms_)
            if (lex_cmp(t.first, z) < 0) s.terms_.push_back(t);
        return s;
    }

    /// Strictly lex-positive part (exponents > 0).
    series lexpos_part() const {
        series s = zero(ring_, n_);
        s.exact_ = exact_;
        s.box_ = box_;
        exp_vec z(n_);
        for (const auto& t : terms_)
            if (lex_cmp(t.first, z) > 0) s.terms_.push_back(t);
        return s;
    }

    /// Lex-<= 0 part (used by the sharp-subgroup test).
    series lexnonpos_part() const {
        series s = zero(ring_, n_);
        s.exact_ = exact_;
        s.box_ = box_;
        exp_vec z(n_);
        for (const auto& t : terms_)
            if (lex_cmp(t.first, z) <= 0) s.terms_.push_back(t);
        return s;
    }

    /// Multiply by the monomial t^e (exponent shift).
    series shifted(const exp_vec& e) const {
        series s = *this;
        for (auto& t : s.terms_) t.first = t.first + e;
        if (!s.exact_) s.box_ = s.box_.shifted(e);
        return s;
    }

    series scaled(const ring_value& c) const {
        series s = zero(ring_, n_);
        s.exact_ = exact_;
        s.box_ = box_;
        for (const auto& [e, v] : terms_) {
            ring_value w = v * c;
            if (!w.is_zero()) s.terms_.emplace_back(e, std::move(w));
        }
        return s;
    }

    /// Truncation to a box; the result is marked non-exact unless this
    /// series is exact and already fits inside the box.
    series restricted(const precision_box& b) const {
        if (b.dim() != n_) fail(errc::dimension_mismatch, "box dimension mismatch");
        if (exact_) {
            auto h = hull();
            bool inside = true;
            if (h)
                for (int i = 0; i < n_ && inside; ++i)
                    inside = h->lo[i] >= b.lo(i) && h->hi[i] <= b.hi(i);
            if (inside) return *this;
        } else if (!b.contains(box_) && !box_.contains(b)) {
            auto common = box_.intersect(b);
            if (!common) fail(errc::precision_exhausted, "restriction outside certified box");
        }
        series s = zero(ring_, n_);
        s.exact_ = false;
        s.box_ = exact_ ? b : *box_.intersect(b);
        for (const auto& t : terms_)
            if (s.box_.contains(t.first)) s.terms_.push_back(t);
        return s;
    }

    /// Reinterpret the stored terms as an exact Laurent polynomial (the
    /// truncation).  Downstream certification must justify this.
    series as_exact_truncation() const {
        series s = *this;
        s.exact_ = true;
        return s;
    }

    /// All coefficients nilpotent (for exact series this decides nilpotency
    /// of the element itself).
    bool all_coeffs_nilpotent() const {
        for (const auto& [e, c] : terms_)
            if (!c.is_nilpotent()) return false;
        return true;
    }

    friend bool operator==(const series& a, const series& b) {
        if (a.n_ != b.n_ || a.exact_ != b.exact_) return false;
        if (!a.ring_ || !b.ring_) return !a.ring_ && !b.ring_;
        if (!a.ring_->same(*b.ring_)) return false;
        if (!a.exact_ && !(a.box_ == b.box_)) return false;
        return a.terms_ == b.terms_;
    }
    friend bool operator!=(const series& a, const series& b) { return !(a == b); }

    /// Structural key for memoization tables.
    std::string key() const {
        std::string s = exact_ ? "E" : "B" + box_.to_string();
        for (const auto& [e, c] : terms_) {
            s += "|";
            s += e.to_string();
            s += c.to_string();
        }
        return s;
    }

    std::string to_string() const;

private:
    static int check_n(int n) {
        if (n < 1 || n > kmax_vars) fail(errc::dimension_mismatch, "variable count out of range");
        return n;
    }

    void normalize() {
        std::sort(terms_.begin(), terms_.end(),
                  [](const term& a, const term& b) { return lex_less(a.first, b.first); });
        std::vector<term> out;
        out.reserve(terms_.size());
        for (auto& t : terms_) {
            if (t.first.dim() != n_) fail(errc::dimension_mismatch, "term dimension mismatch");
            if (!t.second.spec()->same(*ring_)) fail(errc::mixed_rings, "term coefficient ring mismatch");
            if (!exact_ && !box_.contains(t.first)) continue;
            if (!out.empty() && out.back().first == t.first) {
                out.back().second = out.back().second + t.second;
            } else {
                out.push_back(std::move(t));
            }
        }
        std::erase_if(out, [](const term& t) { return t.second.is_zero(); });
        terms_ = std::move(out);
    }

    friend series add_sub(const series& a, const series& b, bool sub);
    friend series operator*(const series& a, const series& b);

    ring_ptr ring_;
    int n_ = 0;
    bool exact_ = true;
    precision_box box_;
    std::vector<term> terms_;
};

namespace detail {

inline void check_compatible(const series& a, const series& b) {
    if (a.vars() != b.vars()) fail(errc::dimension_mismatch, "variable count mismatch");
    if (!a.ring()->same(*b.ring())) fail(errc::mixed_rings, a.ring()->to_string() + " vs " + b.ring()->to_string());
}

} // namespace detail

inline series add_sub(const series& a, const series& b, bool sub) {
    detail::check_compatible(a, b);
    series s = series::zero(a.ring(), a.vars());
    if (a.exact() && b.exact()) {
        s.exact_ = true;
    } else {
        s.exact_ = false;
        if (a.exact()) {
            s.box_ = b.box();
        } else if (b.exact()) {
            s.box_ = a.box();
        } else {
            auto common = a.box().intersect(b.box());
            if (!common) fail(errc::precision_exhausted, "disjoint precision boxes in add/sub");
            s.box_ = *common;
        }
    }
    s.terms_ = a.terms();
    for (const auto& [e, c] : b.terms()) s.terms_.emplace_back(e, sub ? -c : c);
    s.normalize();
    return s;
}

inline series operator+(const series& a, const series& b) { return add_sub(a, b, false); }
inline series operator-(const series& a, const series& b) { return add_sub(a, b, true); }
inline series operator-(const series& a) { return a.scaled(-ring_value::one(a.ring())); }

/// Cauchy product.  Box bookkeeping:
///  - exact * exact is exact;
///  - when exactly one factor is exact with support S, the result is certified
///    on the intersection of the other factor's box translated along S;
///  - when both factors are boxed, the same intersection rule is applied to
///    both stored supports; this trusts the stored truncations, so any value
///    extracted from such a product must be certified downstream (the
///    residue/pi extraction points do this by stabilization doubling).
inline series operator*(const series& a, const series& b) {
    detail::check_compatible(a, b);
    series s = series::zero(a.ring(), a.vars());
    const int n = a.vars();

    auto shrink = [&](const precision_box& bx, const series& exact_side) -> std::optional<precision_box> {
        auto h = exact_side.hull();
        if (!h) return precision_box(n, INT32_MIN / 4, INT32_MAX / 4); // zero factor: anything goes
        std::vector<std::pair<std::int32_t, std::int32_t>> bounds;
        for (int i = 0; i < n; ++i) {
            std::int32_t lo = bx.lo(i) + h->hi[i];
            std::int32_t hi = bx.hi(i) + h->lo[i];
            if (lo > hi) return std::nullopt;
            bounds.emplace_back(lo, hi);
        }
        return precision_box(bounds);
    };

    bool bounded = false;
    if (a.exact() && b.exact()) {
        s.exact_ = true;
    } else {
        s.exact_ = false;
        bounded = true;
        std::optional<precision_box> bx;
        if (a.exact()) {
            bx = shrink(b.box(), a);
        } else if (b.exact()) {
            bx = shrink(a.box(), b);
        } else {
            auto bx1 = shrink(a.box(), b);
            auto bx2 = shrink(b.box(), a);
            if (bx1 && bx2) bx = bx1->intersect(*bx2);
            else bx = std::nullopt;
        }
        if (!bx) fail(errc::precision_exhausted, "empty certified box in product");
        s.box_ = *bx;
    }

    std::unordered_map<exp_vec, ring_value, exp_vec_hash> acc;
    acc.reserve(a.terms().size() * 2 + 8);
    for (const auto& [ea, ca] : a.terms()) {
        for (const auto& [eb, cb] : b.terms()) {
            exp_vec e = ea + eb;
            if (bounded && !s.box_.contains(e)) continue;
            auto [it, fresh] = acc.try_emplace(e, ring_value::zero(a.ring()));
            it->second = fresh ? ca * cb : it->second + ca * cb;
        }
    }
    s.terms_.reserve(acc.size());
    for (auto& [e, c] : acc)
        if (!c.is_zero()) s.terms_.emplace_back(e, std::move(c));
    std::sort(s.terms_.begin(), s.terms_.end(),
              [](const series::term& x, const series::term& y) { return lex_less(x.first, y.first); });
    return s;
}

/// Spec-facing arithmetic entry point.
enum class series_op { add, sub, mul };

inline series s_arith(const series& f, const series& g, series_op o) {
    switch (o) {
        case series_op::add: return f + g;
        case series_op::sub: return f - g;
        case series_op::mul: return f * g;
    }
    fail(errc::internal, "bad op");
}

/// Termwise partial derivative d/dt_{i+1}; exponent l_i scales the
/// coefficient as an integer.
inline series derivative(const series& f, int i) {
    if (i < 0 || i >= f.vars()) fail(errc::dimension_mismatch, "derivative variable out of range");
    std::vector<series::term> out;
    for (const auto& [e, c] : f.terms()) {
        if (e[i] == 0) continue;
        ring_value v = c.scale(bigint(e[i]));
        if (v.is_zero()) continue;
        exp_vec d = e;
        d[i] -= 1;
        out.emplace_back(d, std::move(v));
    }
    if (f.exact()) return series::from_terms(f.ring(), f.vars(), std::move(out), true);
    // coefficient at l needs l + e_i certified
    auto b = f.box().shifted(-exp_vec::unit(f.vars(), i));
    return series::from_terms(f.ring(), f.vars(), std::move(out), false, b);
}

inline ring_value coeff(const series& f, const exp_vec& l) { return f.coeff(l); }

// --------------------------------------------------------------------------
// valuation and the four-factor decomposition (non-product coefficient rings)
// --------------------------------------------------------------------------

namespace detail {

/// Extract the coefficient of t_n^j as a series in n-1 variables, or a ring
/// value when n == 1.
inline series last_var_coeff(const series& f, std::int32_t j) {
    const int n = f.vars();
    series s = series::zero(f.ring(), n - 1);
    std::vector<series::term> out;
    for (const auto& [e, c] : f.terms())
        if (e[n - 1] == j) out.emplace_back(e.head(), c);
    return series::from_terms(f.ring(), n - 1, std::move(out), true);
}

/// Valuation of an exact series over a connected (non-product) ring:
/// the recursive least-index-of-a-unit-coefficient rule.  Empty when the
/// series is not a unit of L^n(A).
inline std::optional<exp_vec> valuation(const series& f) {
    if (f.is_zero()) return std::nullopt;
    const int n = f.vars();
    if (n == 1) {
        bool lower_ok = true;
        for (const auto& [e, c] : f.terms()) { // ascending lex == ascending exponent
            if (c.is_unit()) {
                if (!lower_ok) return std::nullopt;
                return e;
            }
            if (!c.is_nilpotent()) lower_ok = false;
        }
        return std::nullopt;
    }
    // group by the last coordinate, ascending (terms are sorted with the
    // last coordinate dominant, so groups are contiguous)
    std::vector<std::int32_t> levels;
    for (const auto& [e, c] : f.terms())
        if (levels.empty() || levels.back() != e[n - 1]) levels.push_back(e[n - 1]);
    for (std::int32_t j : levels) {
        series cj = last_var_coeff(f, j);
        auto sub = valuation(cj);
        if (sub) return sub->with_last(j);
        if (!cj.all_coeffs_nilpotent()) return std::nullopt;
    }
    return std::nullopt;
}

/// (1 + w)^{-1} for a Laurent polynomial w with nilpotent coefficients:
/// the geometric series terminates exactly.
inline series geometric_inverse_nilpotent(const series& w) {
    const auto& ring = w.ring();
    series acc = series::one(ring, w.vars());
    series pw = acc;
    series mw = -w;
    std::size_t cap = static_cast<std::size_t>(ring->nilpotency_bound() - 1) * std::max<std::size_t>(w.terms().size(), 1) + 1;
    for (std::size_t k = 0; k < cap; ++k) {
        pw = pw * mw;
        if (pw.is_zero()) return acc;
        acc = acc + pw;
    }
    fail(errc::internal, "nilpotent geometric series did not terminate");
}

struct four_factor_parts {
    exp_vec nu;        // valuation
    ring_value c;      // unit of A
    series plus;       // in V_{n,+}: 1 + strictly lex-positive tail
    series minus;      // in V_{n,-}: 1 + strictly lex-negative nilpotent tail
};

struct lex_weight;
inline lex_weight make_lex_weight(int n, const std::vector<exp_vec>& support);

/// Unique decomposition f = t^nu * c * plus * minus of an exact unit over a
/// connected ring, peeling the lex-negative (nilpotent) tail iteratively.
///
/// Termination certificate: every lex-negative term produced in round r is a
/// product of at least r-1 terms of the original lex-positive tail p and at
/// least one (at most (B-1)s, by nilpotency) term of the original
/// lex-negative tail w, where B is the ring's nilpotency bound and s the
/// size of supp(w).  Measuring with a functional that is >= delta on supp(p)
/// and >= -M on supp(w), a lex-negative term needs
///   (r-1) delta - (B-1) s M < 0,
/// so the loop exits after at most (B-1) s M / delta + 2 rounds.
inline four_factor_parts four_factor(const series& f);

// --------------------------------------------------------------------------
// weight functionals for strictly lex-positive supports
// --------------------------------------------------------------------------

/// A positive rational functional lambda with lambda(l) > 0 on every vector
/// of the given strictly lex-positive finite support.  Multiplying series
/// whose supports all have lambda >= delta adds lambda-mass, which yields a
/// provable exit bound for geometric series truncated to a box.
struct lex_weight {
    std::vector<bigrat> w; // per coordinate, last dominant
    bigrat delta;          // min lambda over the generating support

    bigrat value(const exp_vec& e) const {
        bigrat v = 0;
        for (int i = 0; i < e.dim(); ++i) v += w[static_cast<std::size_t>(i)] * e[i];
        return v;
    }

    /// Max of lambda over a box (weights are positive, so the hi corner).
    bigrat box_max(const precision_box& b) const {
        bigrat v = 0;
        for (int i = 0; i < b.dim(); ++i) v += w[static_cast<std::size_t>(i)] * b.hi(i);
        return v;
    }
};

inline lex_weight make_lex_weight(int n, const std::vector<exp_vec>& support) {
    std::int64_t m = 1;
    for (const auto& e : support)
        for (int i = 0; i < n; ++i) {
            std::int64_t v = e[i];
            m = std::max<std::int64_t>(m, v < 0 ? -v : v);
        }
    bigrat c(1, 2 * m + 1);
    lex_weight lw;
    lw.w.resize(static_cast<std::size_t>(n));
    bigrat cur = 1;
    for (int i = n - 1; i >= 0; --i) {
        lw.w[static_cast<std::size_t>(i)] = cur;
        cur *= c;
    }
    lw.delta = 0;
    bool first = true;
    for (const auto& e : support) {
        bigrat v = lw.value(e);
        if (v <= 0) fail(errc::internal, "weight functional not positive on support");
        if (first || v < lw.delta) lw.delta = v;
        first = false;
    }
    if (first) lw.delta = 1;
    return lw;
}

/// (1 + p)^{-1} restricted to `window`, for exact strictly lex-positive p.
/// Powers are truncated to {lambda <= Lambda(window)}; each extra factor of p
/// adds at least delta of lambda-mass, so dropped exponents can never
/// re-enter the truncation region and the loop provably exits.  Returns an
/// exact series when the geometric series terminated without dropping
/// anything (nilpotent tails).
inline series geometric_inverse_positive(const series& p, const precision_box& window) {
    const auto& ring = p.ring();
    const int n = p.vars();
    std::vector<exp_vec> supp;
    for (const auto& [e, c] : p.terms()) supp.push_back(e);
    lex_weight lw = make_lex_weight(n, supp);
    bigrat cap = lw.box_max(window);

    series acc = series::one(ring, n);
    series pw = acc;
    series mp = -p;
    bool dropped = false;
    // k > cap/delta implies lambda(every term of p^k) > cap
    std::int64_t kmax = 0;
    if (cap > 0) {
        bigrat kmax_r = cap / lw.delta;
        kmax = (boost::multiprecision::numerator(kmax_r) / boost::multiprecision::denominator(kmax_r))
                   .convert_to<std::int64_t>() +
               1;
    }
    for (std::int64_t k = 1; k <= kmax + 1; ++k) {
        pw = pw * mp;
        std::vector<series::term> kept;
        for (const auto& t : pw.terms()) {
            if (lw.value(t.first) <= cap) kept.push_back(t);
            else dropped = true;
        }
        if (kept.size() != pw.terms().size())
            pw = series::from_terms(ring, n, std::move(kept), true);
        if (pw.is_zero()) break;
        acc = acc + pw;
    }
    if (!pw.is_zero()) fail(errc::internal, "positive geometric series failed to exit");
    if (dropped) {
        std::vector<series::term> ts = acc.terms();
        return series::from_terms(ring, n, std::move(ts), false, window);
    }
    return acc;
}

inline four_factor_parts four_factor(const series& f) {
    auto nu = valuation(f);
    if (!nu) fail(errc::not_a_unit, "series is not a unit of L^n(A)");
    const auto& ring = f.ring();
    const int n = f.vars();
    series u = f.shifted(-*nu);
    ring_value c = ring_value::one(ring);
    series minus = series::one(ring, n);

    std::int64_t guard = 3;
    {
        series w0 = u.lexneg_part();
        series p0 = u.lexpos_part();
        if (!w0.is_zero() && !p0.is_zero()) {
            std::vector<exp_vec> psupp;
            for (const auto& [e, cv] : p0.terms()) psupp.push_back(e);
            lex_weight lw = make_lex_weight(n, psupp);
            bigrat m_w = 0;
            for (const auto& [e, cv] : w0.terms()) {
                bigrat v = lw.value(e);
                if (v < 0) v = -v;
                if (v > m_w) m_w = v;
            }
            bigrat rounds = bigrat(ring->nilpotency_bound() - 1) *
                            bigrat(static_cast<std::int64_t>(w0.terms().size())) * m_w / lw.delta;
            guard = (boost::multiprecision::numerator(rounds) / boost::multiprecision::denominator(rounds))
                        .convert_to<std::int64_t>() +
                    3;
        }
    }
    for (std::int64_t round = 0; round <= guard; ++round) {
        ring_value c0 = u.coeff_raw(exp_vec(n));
        auto c0inv = c0.inverse();
        if (!c0inv) fail(errc::internal, "constant term of nu-zero unit is not a unit");
        if (!c0.is_one()) {
            u = u.scaled(*c0inv);
            c = c * c0;
        }
        series w = u.lexneg_part();
        if (w.is_zero()) {
            four_factor_parts out{*nu, std::move(c), std::move(u), std::move(minus)};
            return out;
        }
        if (!w.all_coeffs_nilpotent())
            fail(errc::internal, "lex-negative tail of a nu-zero unit must be nilpotent");
        u = u * geometric_inverse_nilpotent(w);
        minus = minus * (series::one(ring, n) + w);
    }
    fail(errc::precision_exhausted, "V- peeling did not stabilize");
}

std::vector<series> split_components(const series& f);
series combine_components(const ring_ptr& ring, const std::vector<series>& comps);

} // namespace detail

// --------------------------------------------------------------------------
// product-ring splitting
// --------------------------------------------------------------------------

namespace detail {

inline std::vector<series> split_components(const series& f) {
    const auto& ring = f.ring();
    if (ring->kind() != ring_kind::product) return {f};
    std::vector<series> out;
    int nc = ring->components();
    for (int j = 0; j < nc; ++j) {
        std::vector<series::term> ts;
        for (const auto& [e, c] : f.terms()) {
            ring_value cj = c.component(j);
            if (!cj.is_zero()) ts.emplace_back(e, std::move(cj));
        }
        out.push_back(series::from_terms(ring->factors()[static_cast<std::size_t>(j)], f.vars(), std::move(ts),
                                         f.exact(), f.exact() ? std::optional<precision_box>{} : f.box()));
    }
    return out;
}

inline series combine_components(const ring_ptr& ring, const std::vector<series>& comps) {
    if (ring->kind() != ring_kind::product) {
        if (comps.size() != 1) fail(errc::internal, "component count mismatch");
        return comps[0];
    }
    int nc = ring->components();
    if (static_cast<int>(comps.size()) != nc) fail(errc::internal, "component count mismatch");
    const int n = comps[0].vars();
    bool exact = true;
    std::optional<precision_box> box;
    for (const auto& s : comps) {
        if (s.vars() != n) fail(errc::dimension_mismatch, "component variable mismatch");
        if (!s.exact()) {
            exact = false;
            if (!box) {
                box = s.box();
            } else {
                auto common = box->intersect(s.box());
                if (!common) fail(errc::precision_exhausted, "disjoint component boxes");
                box = *common;
            }
        }
    }
    std::unordered_map<exp_vec, std::vector<ring_value>, exp_vec_hash> acc;
    for (int j = 0; j < nc; ++j) {
        for (const auto& [e, c] : comps[static_cast<std::size_t>(j)].terms()) {
            auto it = acc.find(e);
            if (it == acc.end()) {
                std::vector<ring_value> tuple;
                tuple.reserve(static_cast<std::size_t>(nc));
                for (int k = 0; k < nc; ++k)
                    tuple.push_back(ring_value::zero(ring->factors()[static_cast<std::size_t>(k)]));
                it = acc.emplace(e, std::move(tuple)).first;
            }
            it->second[static_cast<std::size_t>(j)] = c;
        }
    }
    std::vector<series::term> ts;
    ts.reserve(acc.size());
    for (auto& [e, tuple] : acc)
        ts.emplace_back(e, ring_value::from_components(ring, std::move(tuple)));
    return series::from_terms(ring, n, std::move(ts), exact, box);
}

} // namespace detail

// --------------------------------------------------------------------------
// unit inversion
// --------------------------------------------------------------------------

/// Inverse of an exact unit f, certified on `box`.  Factors f through the
/// four-factor decomposition; the V- and constant factors invert exactly and
/// the V+ factor by a window-truncated geometric series.  The result is
/// exact whenever no truncation actually happened (monomial units,
/// nilpotent-tail units).
inline series invert_unit(const series& f, const precision_box& box) {
    if (!f.exact()) fail(errc::not_a_unit, "invert_unit needs an exact series");
    if (box.dim() != f.vars()) fail(errc::dimension_mismatch, "box dimension mismatch");
    const auto& ring = f.ring();
    if (ring->kind() == ring_kind::product) {
        auto comps = detail::split_components(f);
        for (auto& c : comps) c = invert_unit(c, box);
        return detail::combine_components(ring, comps);
    }
    auto parts = detail::four_factor(f);
    const int n = f.vars();
    series minus_inv = detail::geometric_inverse_nilpotent(parts.minus - series::one(ring, n));
    ring_value cinv = *parts.c.inverse();
    series prefix = minus_inv.scaled(cinv).shifted(-parts.nu); // exact
    series p = parts.plus - series::one(ring, n);
    if (p.is_zero()) return prefix;
    if (p.all_coeffs_nilpotent()) {
        series plus_inv = detail::geometric_inverse_nilpotent(p);
        return prefix * plus_inv;
    }
    // window W such that prefix * (plus^{-1} on W) is certified on `box`
    auto h = prefix.hull();
    if (!h) fail(errc::internal, "prefix of a unit cannot vanish");
    std::vector<std::pair<std::int32_t, std::int32_t>> bounds;
    for (int i = 0; i < n; ++i)
        bounds.emplace_back(box.lo(i) - h->hi[i], box.hi(i) - h->lo[i]);
    precision_box window(bounds);
    series plus_inv = detail::geometric_inverse_positive(p, window);
    series out = prefix * plus_inv;
    if (out.exact()) return out;
    return out.restricted(box);
}

inline std::string series::to_string() const {
    if (terms_.empty()) return "0";
    std::string out;
    auto var_part = [&](const exp_vec& e) {
        std::string m;
        for (int i = 0; i < e.dim(); ++i) {
            if (e[i] == 0) continue;
            if (!m.empty()) m += "*";
            m += "t" + std::to_string(i + 1);
            if (e[i] != 1) m += "^" + std::to_string(e[i]);
        }
        return m;
    };
    auto append = [&](const std::string& coeff, const std::string& mono) {
        std::string t;
        bool neg = !coeff.empty() && coeff[0] == '-';
        std::string c = neg ? coeff.substr(1) : coeff;
        if (mono.empty()) t = c;
        else if (c == "1") t = mono;
        else t = c + "*" + mono;
        if (out.empty()) out = (neg ? "-" : "") + t;
        else out += (neg ? " - " : " + ") + t;
    };
    for (const auto& [e, c] : terms_) {
        std::string vars = var_part(e);
        if (ring_->kind() == ring_kind::extension) {
            // distribute the extension monomials so the output stays inside
            // the series grammar
            const auto& coeffs = c.ext_coeffs();
            for (std::size_t idx = 0; idx < coeffs.size(); ++idx) {
                if (coeffs[idx].is_zero()) continue;
                auto exps = ring_->ext_exponents(idx);
                std::string mono;
                for (std::size_t i = 0; i < exps.size(); ++i) {
                    if (exps[i] == 0) continue;
                    if (!mono.empty()) mono += "*";
                    mono += "e" + std::to_string(i + 1);
                    if (exps[i] > 1) mono += "^" + std::to_string(exps[i]);
                }
                if (!vars.empty()) mono += (mono.empty() ? "" : "*") + vars;
                append(coeffs[idx].to_string(), mono);
            }
        } else {
            append(c.to_string(), vars);
        }
    }
    return out;
}

/// f^k with negative exponents going through a single inversion of the exact
/// power (so the certified box stays tight).
inline series pow_series(const series& f, std::int64_t k, const std::optional<precision_box>& box = {}) {
    if (!f.exact()) fail(errc::internal, "pow_series needs an exact series");
    const auto& ring = f.ring();
    const int n = f.vars();
    std::int64_t a = k < 0 ? -k : k;
    series acc = series::one(ring, n);
    series base = f;
    while (a > 0) {
        if (a & 1) acc = acc * base;
        base = base * base;
        a >>= 1;
    }
    if (k >= 0) return acc;
    if (!box) fail(errc::internal, "negative power needs a box");
    return invert_unit(acc, *box);
}

} // namespace ccs
