#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "ccs/error.hpp"

namespace ccs {

using bigint = boost::multiprecision::cpp_int;
using bigrat = boost::multiprecision::cpp_rational;

class ring_spec;
using ring_ptr = std::shared_ptr<const ring_spec>;

enum class ring_kind { integers, rationals, modular, extension, product };

/// Description of a coefficient ring.  Supported families: Z, Q, Z/m,
/// GF(p), monomial local extensions base[e1..ek]/(e1^d1,...,ek^dk) over a
/// non-product base, and flat finite products of the former.  All relations
/// are monomial powers, so every element has a finite canonical normal form
/// and unit/nilpotency questions are decidable.
///
/// Specs are immutable and shared; values keep a shared_ptr to their spec.
class ring_spec {
public:
    static ring_ptr integers() { return make(ring_kind::integers); }

    static ring_ptr rationals() { return make(ring_kind::rationals); }

    static ring_ptr integers_mod(const bigint& m) {
        if (m < 2) fail(errc::unsupported_ring, "modulus must be >= 2");
        auto s = make(ring_kind::modular);
        s->modulus_ = m;
        s->factor_modulus();
        s->field_ = s->mod_factors_.size() == 1 && s->mod_factors_[0].second == 1;
        return s;
    }

    static ring_ptr prime_field(const bigint& p) {
        auto s = integers_mod(p);
        if (!s->field_) fail(errc::unsupported_ring, "GF modulus is not prime");
        return s;
    }

    /// base[e1..ek]/(e1^d1,...,ek^dk), optionally truncating all monomials of
    /// total degree >= cross_cap.  The base must not be a product or another
    /// extension (iterated monomial extensions flatten into one).
    static ring_ptr local_extension(ring_ptr base, std::vector<unsigned> degrees,
                                    std::optional<unsigned> cross_cap = {}) {
        if (!base) fail(errc::unsupported_ring, "extension needs a base ring");
        if (base->kind() == ring_kind::product || base->kind() == ring_kind::extension)
            fail(errc::unsupported_ring, "extension base must be Z, Q, Z/m or GF(p)");
        if (degrees.empty()) fail(errc::unsupported_ring, "extension needs generators");
        std::size_t size = 1;
        for (unsigned d : degrees) {
            if (d < 2) fail(errc::unsupported_ring, "generator relation degree must be >= 2");
            size *= d;
            if (size > 65536) fail(errc::unsupported_ring, "extension monomial table too large");
        }
        auto s = make(ring_kind::extension);
        s->base_ = std::move(base);
        s->degrees_ = std::move(degrees);
        s->cross_cap_ = cross_cap;
        s->ext_size_ = size;
        return s;
    }

    static ring_ptr product(std::vector<ring_ptr> factors) {
        if (factors.size() < 2) fail(errc::unsupported_ring, "product needs >= 2 factors");
        for (const auto& f : factors)
            if (!f || f->kind() == ring_kind::product)
                fail(errc::unsupported_ring, "product factors must be non-product specs");
        auto s = make(ring_kind::product);
        s->factors_ = std::move(factors);
        return s;
    }

    ring_kind kind() const { return kind_; }
    const bigint& modulus() const { return modulus_; }
    bool modular_field() const { return field_; }
    const bigint& radical() const { return radical_; }
    const std::vector<std::pair<bigint, unsigned>>& modulus_factors() const { return mod_factors_; }
    const ring_ptr& base() const { return base_; }
    const std::vector<unsigned>& degrees() const { return degrees_; }
    std::optional<unsigned> cross_cap() const { return cross_cap_; }
    std::size_t ext_size() const { return ext_size_; }
    const std::vector<ring_ptr>& factors() const { return factors_; }

    /// Number of connected components of Spec (product factor count).
    int components() const {
        return kind_ == ring_kind::product ? static_cast<int>(factors_.size()) : 1;
    }

    /// Upper bound N such that x^N = 0 for every nilpotent x.
    int nilpotency_bound() const {
        switch (kind_) {
            case ring_kind::integers:
            case ring_kind::rationals:
                return 1;
            case ring_kind::modular: {
                unsigned e = 1;
                for (const auto& [p, k] : mod_factors_) e = std::max(e, k);
                return static_cast<int>(e);
            }
            case ring_kind::extension: {
                int b = base_->nilpotency_bound() - 1;
                unsigned g = 0;
                for (unsigned d : degrees_) g += d - 1;
                if (cross_cap_ && *cross_cap_ - 1 < g) g = *cross_cap_ - 1;
                return b + static_cast<int>(g) + 1;
            }
            case ring_kind::product: {
                int b = 1;
                for (const auto& f : factors_) b = std::max(b, f->nilpotency_bound());
                return b;
            }
        }
        return 1;
    }

    bool reduced() const { return nilpotency_bound() == 1; }

    bool is_field() const {
        return kind_ == ring_kind::rationals || (kind_ == ring_kind::modular && field_);
    }

    /// True when the ring contains Q (so log/exp coefficients make sense).
    bool q_algebra() const {
        switch (kind_) {
            case ring_kind::rationals: return true;
            case ring_kind::extension: return base_->q_algebra();
            case ring_kind::product: {
                for (const auto& f : factors_)
                    if (!f->q_algebra()) return false;
                return true;
            }
            default: return false;
        }
    }

    bool same(const ring_spec& o) const {
        if (this == &o) return true;
        if (kind_ != o.kind_) return false;
        switch (kind_) {
            case ring_kind::integers:
            case ring_kind::rationals:
                return true;
            case ring_kind::modular:
                return modulus_ == o.modulus_ && field_ == o.field_;
            case ring_kind::extension:
                return degrees_ == o.degrees_ && cross_cap_ == o.cross_cap_ &&
                       base_->same(*o.base_);
            case ring_kind::product: {
                if (factors_.size() != o.factors_.size()) return false;
                for (std::size_t i = 0; i < factors_.size(); ++i)
                    if (!factors_[i]->same(*o.factors_[i])) return false;
                return true;
            }
        }
        return false;
    }

    std::string to_string() const {
        switch (kind_) {
            case ring_kind::integers: return "Z";
            case ring_kind::rationals: return "Q";
            case ring_kind::modular:
                if (field_) return "GF(" + modulus_.str() + ")";
                return "Z/" + modulus_.str();
            case ring_kind::extension: {
                std::ostringstream os;
                os << base_->to_string() << "[";
                for (std::size_t i = 0; i < degrees_.size(); ++i)
                    os << (i ? "," : "") << "e" << (i + 1);
                os << "]/(";
                for (std::size_t i = 0; i < degrees_.size(); ++i)
                    os << (i ? "," : "") << "e" << (i + 1) << "^" << degrees_[i];
                os << ")";
                return os.str();
            }
            case ring_kind::product: {
                std::string s;
                for (std::size_t i = 0; i < factors_.size(); ++i) {
                    if (i) s += " x ";
                    s += factors_[i]->to_string();
                }
                return s;
            }
        }
        return "?";
    }

    // --- extension monomial table -------------------------------------

    /// Dense index of a generator-exponent tuple (exps[i] < degrees[i]).
    std::size_t ext_index(const std::vector<unsigned>& exps) const {
        std::size_t idx = 0, stride = 1;
        for (std::size_t i = 0; i < degrees_.size(); ++i) {
            idx += exps[i] * stride;
            stride *= degrees_[i];
        }
        return idx;
    }

    std::vector<unsigned> ext_exponents(std::size_t idx) const {
        std::vector<unsigned> e(degrees_.size());
        for (std::size_t i = 0; i < degrees_.size(); ++i) {
            e[i] = static_cast<unsigned>(idx % degrees_[i]);
            idx /= degrees_[i];
        }
        return e;
    }

    /// False when the cross-term cap kills this monomial.
    bool ext_alive(std::size_t idx) const {
        if (!cross_cap_) return true;
        auto e = ext_exponents(idx);
        unsigned total = 0;
        for (unsigned x : e) total += x;
        return total < *cross_cap_;
    }

private:
    static std::shared_ptr<ring_spec> make(ring_kind k) {
        auto s = std::shared_ptr<ring_spec>(new ring_spec());
        s->kind_ = k;
        return s;
    }

    ring_spec() = default;

    void factor_modulus() {
        bigint m = modulus_;
        for (bigint p = 2; p * p <= m; ++p) {
            if (m % p == 0) {
                unsigned e = 0;
                while (m % p == 0) { m /= p; ++e; }
                mod_factors_.emplace_back(p, e);
            }
        }
        if (m > 1) mod_factors_.emplace_back(m, 1);
        radical_ = 1;
        for (const auto& [p, e] : mod_factors_) radical_ *= p;
    }

    ring_kind kind_ = ring_kind::integers;
    bigint modulus_;
    bool field_ = false;
    std::vector<std::pair<bigint, unsigned>> mod_factors_;
    bigint radical_;
    ring_ptr base_;
    std::vector<unsigned> degrees_;
    std::optional<unsigned> cross_cap_;
    std::size_t ext_size_ = 0;
    std::vector<ring_ptr> factors_;
};

/// Z-valued locally constant function on Spec(A): one integer per connected
/// component (a single integer unless the spec is a product).
class zfunc {
public:
    zfunc() : c_(1, 0) {}
    explicit zfunc(std::int64_t v, int components = 1) : c_(components, v) {}
    explicit zfunc(std::vector<std::int64_t> c) : c_(std::move(c)) {
        if (c_.empty()) fail(errc::internal, "zfunc needs >= 1 component");
    }

    int components() const { return static_cast<int>(c_.size()); }
    std::int64_t operator[](int i) const { return c_[static_cast<std::size_t>(i)]; }
    std::int64_t& operator[](int i) { return c_[static_cast<std::size_t>(i)]; }

    bool is_constant() const {
        for (auto v : c_)
            if (v != c_[0]) return false;
        return true;
    }

    /// The common value; precondition: is_constant().
    std::int64_t constant() const {
        if (!is_constant()) fail(errc::internal, "zfunc is not constant");
        return c_[0];
    }

    bool is_zero() const {
        for (auto v : c_)
            if (v != 0) return false;
        return true;
    }

    friend zfunc operator+(const zfunc& a, const zfunc& b) { return zip(a, b, [](auto x, auto y) { return x + y; }); }
    friend zfunc operator-(const zfunc& a, const zfunc& b) { return zip(a, b, [](auto x, auto y) { return x - y; }); }
    friend zfunc operator*(const zfunc& a, const zfunc& b) { return zip(a, b, [](auto x, auto y) { return x * y; }); }
    zfunc operator-() const {
        zfunc r = *this;
        for (auto& v : r.c_) v = -v;
        return r;
    }
    friend bool operator==(const zfunc& a, const zfunc& b) { return a.c_ == b.c_; }
    friend bool operator!=(const zfunc& a, const zfunc& b) { return !(a == b); }

    std::string to_string() const {
        if (c_.size() == 1) return std::to_string(c_[0]);
        std::string s = "(";
        for (std::size_t i = 0; i < c_.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(c_[i]);
        }
        return s + ")";
    }

private:
    template <class F>
    static zfunc zip(const zfunc& a, const zfunc& b, F f) {
        if (a.components() != b.components()) fail(errc::internal, "zfunc component mismatch");
        zfunc r = a;
        for (std::size_t i = 0; i < r.c_.size(); ++i) r.c_[i] = f(a.c_[i], b.c_[i]);
        return r;
    }

    std::vector<std::int64_t> c_;
};

/// Determinant of a square matrix of zfuncs, computed per component by
/// integer cofactor expansion (matrices here are at most 4x4).
inline zfunc zfunc_det(const std::vector<std::vector<zfunc>>& m) {
    const std::size_t n = m.size();
    if (n == 0) fail(errc::internal, "empty matrix");
    int comps = m[0][0].components();
    auto det_int = [&](auto&& self, std::vector<std::vector<std::int64_t>> a) -> std::int64_t {
        std::size_t k = a.size();
        if (k == 1) return a[0][0];
        std::int64_t acc = 0;
        for (std::size_t j = 0; j < k; ++j) {
            if (a[0][j] == 0) continue;
            std::vector<std::vector<std::int64_t>> sub(k - 1, std::vector<std::int64_t>(k - 1));
            for (std::size_t r = 1; r < k; ++r) {
                std::size_t cc = 0;
                for (std::size_t c = 0; c < k; ++c) {
                    if (c == j) continue;
                    sub[r - 1][cc++] = a[r][c];
                }
            }
            std::int64_t s = (j % 2 == 0) ? 1 : -1;
            acc += s * a[0][j] * self(self, std::move(sub));
        }
        return acc;
    };
    std::vector<std::int64_t> out(static_cast<std::size_t>(comps));
    for (int comp = 0; comp < comps; ++comp) {
        std::vector<std::vector<std::int64_t>> a(n, std::vector<std::int64_t>(n));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) a[i][j] = m[i][j][comp];
        out[static_cast<std::size_t>(comp)] = det_int(det_int, std::move(a));
    }
    return zfunc(std::move(out));
}

namespace detail {

struct mod_small {
    std::int64_t v; // canonical in [0, m), m < 2^31
    friend bool operator==(const mod_small&, const mod_small&) = default;
};
struct mod_big {
    bigint v; // canonical in [0, m)
    friend bool operator==(const mod_big&, const mod_big&) = default;
};

} // namespace detail

/// An element of a ring_spec in canonical normal form.  Immutable in spirit:
/// all operations return new values.  Equality is structural.
class ring_value {
public:
    struct ext_data {
        std::vector<ring_value> c; // dense over the monomial table, entries in the base ring
        friend bool operator==(const ext_data&, const ext_data&) = default;
    };
    struct prod_data {
        std::vector<ring_value> c; // one entry per factor
        friend bool operator==(const prod_data&, const prod_data&) = default;
    };
    using payload = std::variant<bigint, bigrat, detail::mod_small, detail::mod_big, ext_data, prod_data>;

    ring_value() = default;

    // --- constructors ---------------------------------------------------

    static ring_value zero(const ring_ptr& s) { return from_int(s, 0); }
    static ring_value one(const ring_ptr& s) { return from_int(s, 1); }

    static ring_value from_int(const ring_ptr& s, const bigint& v) {
        switch (s->kind()) {
            case ring_kind::integers: return ring_value(s, payload(v));
            case ring_kind::rationals: return ring_value(s, payload(bigrat(v)));
            case ring_kind::modular: return make_mod(s, v);
            case ring_kind::extension: {
                ext_data d;
                d.c.assign(s->ext_size(), zero(s->base()));
                d.c[0] = from_int(s->base(), v);
                return ring_value(s, payload(std::move(d)));
            }
            case ring_kind::product: {
                prod_data d;
                d.c.reserve(s->factors().size());
                for (const auto& f : s->factors()) d.c.push_back(from_int(f, v));
                return ring_value(s, payload(std::move(d)));
            }
        }
        fail(errc::internal, "bad ring kind");
    }

    /// num/den as an element of the ring; den must map to a unit.
    static ring_value from_rational(const ring_ptr& s, const bigint& num, const bigint& den) {
        if (den == 0) fail(errc::bad_coefficient, "zero denominator");
        if (den == 1) return from_int(s, num);
        if (s->kind() == ring_kind::rationals)
            return ring_value(s, payload(bigrat(num, den)));
        ring_value d = from_int(s, den);
        auto inv = d.inverse();
        if (!inv) fail(errc::bad_coefficient, "denominator " + den.str() + " is not a unit in " + s->to_string());
        return from_int(s, num) * *inv;
    }

    /// Generator e_{i+1} of a local extension.
    static ring_value generator(const ring_ptr& s, std::size_t i, unsigned power = 1) {
        if (s->kind() != ring_kind::extension) fail(errc::bad_coefficient, "ring has no nilpotent generators");
        if (i >= s->degrees().size()) fail(errc::bad_coefficient, "no such generator");
        ext_data d;
        d.c.assign(s->ext_size(), zero(s->base()));
        if (power < s->degrees()[i]) {
            std::vector<unsigned> e(s->degrees().size(), 0);
            e[i] = power;
            std::size_t idx = s->ext_index(e);
            if (s->ext_alive(idx)) d.c[idx] = one(s->base());
        }
        return ring_value(s, payload(std::move(d)));
    }

    static ring_value from_components(const ring_ptr& s, std::vector<ring_value> comps) {
        if (s->kind() != ring_kind::product) fail(errc::internal, "not a product ring");
        if (comps.size() != s->factors().size()) fail(errc::internal, "component count mismatch");
        for (std::size_t i = 0; i < comps.size(); ++i)
            if (!comps[i].spec()->same(*s->factors()[i])) fail(errc::mixed_rings, "component spec mismatch");
        return ring_value(s, payload(prod_data{std::move(comps)}));
    }

    /// Lift a base-ring value into an extension (constant term).
    static ring_value from_base(const ring_ptr& s, const ring_value& b) {
        if (s->kind() != ring_kind::extension) fail(errc::internal, "not an extension ring");
        if (!b.spec()->same(*s->base())) fail(errc::mixed_rings, "base spec mismatch");
        ext_data d;
        d.c.assign(s->ext_size(), zero(s->base()));
        d.c[0] = b;
        return ring_value(s, payload(std::move(d)));
    }

    const ring_ptr& spec() const { return spec_; }
    const payload& data() const { return p_; }

    // --- predicates -----------------------------------------------------

    bool is_zero() const {
        switch (spec_->kind()) {
            case ring_kind::integers: return std::get<bigint>(p_) == 0;
            case ring_kind::rationals: return std::get<bigrat>(p_) == 0;
            case ring_kind::modular:
                if (auto* sm = std::get_if<detail::mod_small>(&p_)) return sm->v == 0;
                return std::get<detail::mod_big>(p_).v == 0;
            case ring_kind::extension: {
                for (const auto& x : std::get<ext_data>(p_).c)
                    if (!x.is_zero()) return false;
                return true;
            }
            case ring_kind::product: {
                for (const auto& x : std::get<prod_data>(p_).c)
                    if (!x.is_zero()) return false;
                return true;
            }
        }
        return false;
    }

    bool is_one() const { return *this == one(spec_); }

    friend bool operator==(const ring_value& a, const ring_value& b) {
        if (!a.spec_ || !b.spec_) return !a.spec_ && !b.spec_;
        if (!a.spec_->same(*b.spec_)) return false;
        return a.p_ == b.p_;
    }
    friend bool operator!=(const ring_value& a, const ring_value& b) { return !(a == b); }

    // --- arithmetic -----------------------------------------------------

    friend ring_value operator+(const ring_value& a, const ring_value& b) { return a.binop(b, op::add); }
    friend ring_value operator-(const ring_value& a, const ring_value& b) { return a.binop(b, op::sub); }
    friend ring_value operator*(const ring_value& a, const ring_value& b) { return a.binop(b, op::mul); }

    ring_value operator-() const { return zero(spec_) - *this; }

    /// Integer scaling (the Z-module action; used by formal derivatives).
    ring_value scale(const bigint& k) const { return *this * from_int(spec_, k); }

    /// Componentwise scaling by a locally constant integer function.
    ring_value scale(const zfunc& k) const {
        if (k.components() != spec_->components()) fail(errc::internal, "zfunc/ring component mismatch");
        if (spec_->kind() != ring_kind::product) return scale(bigint(k[0]));
        auto comps = components();
        for (int i = 0; i < static_cast<int>(comps.size()); ++i)
            comps[static_cast<std::size_t>(i)] = comps[static_cast<std::size_t>(i)].scale(bigint(k[i]));
        return from_components(spec_, std::move(comps));
    }

    /// Two-sided inverse when this is a unit, empty otherwise.
    std::optional<ring_value> inverse() const {
        switch (spec_->kind()) {
            case ring_kind::integers: {
                const auto& v = std::get<bigint>(p_);
                if (v == 1 || v == -1) return *this;
                return std::nullopt;
            }
            case ring_kind::rationals: {
                const auto& v = std::get<bigrat>(p_);
                if (v == 0) return std::nullopt;
                return ring_value(spec_, payload(bigrat(1) / v));
            }
            case ring_kind::modular: {
                bigint v = mod_as_big();
                bigint g, x;
                ext_gcd(v, spec_->modulus(), g, x);
                if (g != 1) return std::nullopt;
                return make_mod(spec_, x);
            }
            case ring_kind::extension: {
                // a = c + n with n in the (nilpotent) generator ideal: a is a
                // unit iff c is a unit in the base; invert by a terminating
                // geometric series in 1 - c^{-1} a.
                const auto& d = std::get<ext_data>(p_);
                auto c0inv = d.c[0].inverse();
                if (!c0inv) return std::nullopt;
                ring_value u = from_base(spec_, *c0inv);
                ring_value x = one(spec_) - u * (*this);
                ring_value acc = one(spec_);
                ring_value pw = one(spec_);
                int bound = spec_->nilpotency_bound();
                for (int k = 1; k <= bound; ++k) {
                    pw = pw * x;
                    if (pw.is_zero()) break;
                    acc = acc + pw;
                }
                if (!pw.is_zero()) fail(errc::internal, "geometric inverse did not terminate");
                return u * acc;
            }
            case ring_kind::product: {
                auto comps = components();
                for (auto& c : comps) {
                    auto inv = c.inverse();
                    if (!inv) return std::nullopt;
                    c = *inv;
                }
                return from_components(spec_, std::move(comps));
            }
        }
        return std::nullopt;
    }

    bool is_unit() const { return inverse().has_value(); }

    /// Least k >= 1 with a^k = 0, empty when a is not nilpotent.
    std::optional<int> nilpotency_index() const {
        if (is_zero()) return 1;
        switch (spec_->kind()) {
            case ring_kind::integers:
            case ring_kind::rationals:
                return std::nullopt;
            case ring_kind::modular: {
                // nilpotent iff rad(m) | v
                if (mod_as_big() % spec_->radical() != 0) return std::nullopt;
                break;
            }
            case ring_kind::extension: {
                const auto& d = std::get<ext_data>(p_);
                if (!d.c[0].is_zero() && !d.c[0].nilpotency_index()) return std::nullopt;
                break;
            }
            case ring_kind::product: {
                int worst = 0;
                for (const auto& c : components()) {
                    auto k = c.nilpotency_index();
                    if (!k) return std::nullopt;
                    worst = std::max(worst, *k);
                }
                return worst;
            }
        }
        ring_value pw = *this;
        int bound = spec_->nilpotency_bound();
        for (int k = 1; k <= bound; ++k) {
            if (pw.is_zero()) return k; // unreachable for k == 1 (handled above)
            if (k == bound) break;
            pw = pw * (*this);
        }
        if (pw.is_zero()) return bound;
        fail(errc::internal, "nilpotency iteration exceeded ring bound");
    }

    bool is_nilpotent() const { return nilpotency_index().has_value(); }

    /// Integer power; negative exponents require a unit.
    ring_value pow(std::int64_t k) const {
        ring_value base = *this;
        if (k < 0) {
            auto inv = inverse();
            if (!inv) fail(errc::not_a_unit, "negative power of a non-unit");
            base = *inv;
            k = -k;
        }
        ring_value acc = one(spec_);
        while (k > 0) {
            if (k & 1) acc = acc * base;
            base = base * base;
            k >>= 1;
        }
        return acc;
    }

    /// Componentwise power by a locally constant exponent.
    ring_value pow(const zfunc& k) const {
        if (k.components() != spec_->components()) fail(errc::internal, "zfunc/ring component mismatch");
        if (spec_->kind() != ring_kind::product) return pow(k[0]);
        auto comps = components();
        for (int i = 0; i < static_cast<int>(comps.size()); ++i)
            comps[static_cast<std::size_t>(i)] = comps[static_cast<std::size_t>(i)].pow(k[i]);
        return from_components(spec_, std::move(comps));
    }

    // --- product access ---------------------------------------------------

    /// The component values (a singleton vector for non-product rings).
    std::vector<ring_value> components() const {
        if (spec_->kind() != ring_kind::product) return {*this};
        return std::get<prod_data>(p_).c;
    }

    ring_value component(int i) const {
        if (spec_->kind() != ring_kind::product) {
            if (i != 0) fail(errc::internal, "component index out of range");
            return *this;
        }
        return std::get<prod_data>(p_).c.at(static_cast<std::size_t>(i));
    }

    // --- extension access --------------------------------------------------

    /// Constant term of an extension element (image under e_i -> 0).
    ring_value augmentation() const {
        if (spec_->kind() != ring_kind::extension) fail(errc::internal, "not an extension value");
        return std::get<ext_data>(p_).c[0];
    }

    const std::vector<ring_value>& ext_coeffs() const { return std::get<ext_data>(p_).c; }

    // --- printing ----------------------------------------------------------

    std::string to_string() const {
        switch (spec_->kind()) {
            case ring_kind::integers: return std::get<bigint>(p_).str();
            case ring_kind::rationals: {
                const auto& v = std::get<bigrat>(p_);
                bigint num = boost::multiprecision::numerator(v);
                bigint den = boost::multiprecision::denominator(v);
                if (den == 1) return num.str();
                return num.str() + "/" + den.str();
            }
            case ring_kind::modular: return mod_as_big().str();
            case ring_kind::extension: {
                const auto& d = std::get<ext_data>(p_);
                std::string s;
                for (std::size_t idx = 0; idx < d.c.size(); ++idx) {
                    if (d.c[idx].is_zero()) continue;
                    std::string term = d.c[idx].to_string();
                    auto exps = spec_->ext_exponents(idx);
                    for (std::size_t i = 0; i < exps.size(); ++i) {
                        if (exps[i] == 0) continue;
                        term += "*e" + std::to_string(i + 1);
                        if (exps[i] > 1) term += "^" + std::to_string(exps[i]);
                    }
                    if (s.empty()) {
                        s = term;
                    } else if (!term.empty() && term[0] == '-') {
                        s += term;
                    } else {
                        s += "+" + term;
                    }
                }
                return s.empty() ? "0" : s;
            }
            case ring_kind::product: {
                const auto& d = std::get<prod_data>(p_);
                std::string s = "(";
                for (std::size_t i = 0; i < d.c.size(); ++i) {
                    if (i) s += ",";
                    s += d.c[i].to_string();
                }
                return s + ")";
            }
        }
        return "?";
    }

private:
    enum class op { add, sub, mul };

    ring_value(ring_ptr s, payload p) : spec_(std::move(s)), p_(std::move(p)) {}

    static ring_value make_mod(const ring_ptr& s, const bigint& v) {
        bigint r = v % s->modulus();
        if (r < 0) r += s->modulus();
        if (s->modulus() <= (std::numeric_limits<std::int64_t>::max)() / 4 && s->modulus() < bigint(1) << 31)
            return ring_value(s, payload(detail::mod_small{static_cast<std::int64_t>(r)}));
        return ring_value(s, payload(detail::mod_big{r}));
    }

    bigint mod_as_big() const {
        if (auto* sm = std::get_if<detail::mod_small>(&p_)) return bigint(sm->v);
        return std::get<detail::mod_big>(p_).v;
    }

    static void ext_gcd(const bigint& a, const bigint& b, bigint& g, bigint& x) {
        // g = gcd(a, b), x with a*x == g (mod b)
        bigint old_r = a, r = b, old_s = 1, s = 0;
        while (r != 0) {
            bigint q = old_r / r;
            bigint t = old_r - q * r;
            old_r = r; r = t;
            t = old_s - q * s;
            old_s = s; s = t;
        }
        g = old_r; x = old_s;
        if (g < 0) { g = -g; x = -x; }
    }

    ring_value binop(const ring_value& b, op o) const {
        if (!spec_ || !b.spec_) fail(errc::internal, "uninitialized ring value");
        if (!spec_->same(*b.spec_)) fail(errc::mixed_rings, spec_->to_string() + " vs " + b.spec_->to_string());
        switch (spec_->kind()) {
            case ring_kind::integers: {
                const auto& x = std::get<bigint>(p_);
                const auto& y = std::get<bigint>(b.p_);
                bigint r;
                switch (o) {
                    case op::add: r = x + y; break;
                    case op::sub: r = x - y; break;
                    case op::mul: r = x * y; break;
                }
                return ring_value(spec_, payload(std::move(r)));
            }
            case ring_kind::rationals: {
                const auto& x = std::get<bigrat>(p_);
                const auto& y = std::get<bigrat>(b.p_);
                bigrat r;
                switch (o) {
                    case op::add: r = x + y; break;
                    case op::sub: r = x - y; break;
                    case op::mul: r = x * y; break;
                }
                return ring_value(spec_, payload(std::move(r)));
            }
            case ring_kind::modular: {
                if (auto* xs = std::get_if<detail::mod_small>(&p_)) {
                    auto ys = std::get<detail::mod_small>(b.p_);
                    std::int64_t m = static_cast<std::int64_t>(spec_->modulus());
                    std::int64_t r;
                    switch (o) {
                        case op::add: r = xs->v + ys.v; if (r >= m) r -= m; break;
                        case op::sub: r = xs->v - ys.v; if (r < 0) r += m; break;
                        default: r = (xs->v * ys.v) % m; break;
                    }
                    return ring_value(spec_, payload(detail::mod_small{r}));
                }
                const auto& x = std::get<detail::mod_big>(p_).v;
                const auto& y = std::get<detail::mod_big>(b.p_).v;
                bigint r;
                switch (o) {
                    case op::add: r = x + y; break;
                    case op::sub: r = x - y; break;
                    case op::mul: r = x * y; break;
                }
                return make_mod(spec_, r);
            }
            case ring_kind::extension: {
                const auto& x = std::get<ext_data>(p_);
                const auto& y = std::get<ext_data>(b.p_);
                ext_data out;
                if (o != op::mul) {
                    out.c.reserve(x.c.size());
                    for (std::size_t i = 0; i < x.c.size(); ++i)
                        out.c.push_back(o == op::add ? x.c[i] + y.c[i] : x.c[i] - y.c[i]);
                    return ring_value(spec_, payload(std::move(out)));
                }
                out.c.assign(x.c.size(), zero(spec_->base()));
                const auto& degs = spec_->degrees();
                std::size_t k = degs.size();
                std::vector<unsigned> ex(k), ey(k), ez(k);
                for (std::size_t i = 0; i < x.c.size(); ++i) {
                    if (x.c[i].is_zero()) continue;
                    ex = spec_->ext_exponents(i);
                    for (std::size_t j = 0; j < y.c.size(); ++j) {
                        if (y.c[j].is_zero()) continue;
                        ey = spec_->ext_exponents(j);
                        bool dead = false;
                        for (std::size_t t = 0; t < k; ++t) {
                            ez[t] = ex[t] + ey[t];
                            if (ez[t] >= degs[t]) { dead = true; break; }
                        }
                        if (dead) continue;
                        std::size_t idx = spec_->ext_index(ez);
                        if (!spec_->ext_alive(idx)) continue;
                        out.c[idx] = out.c[idx] + x.c[i] * y.c[j];
                    }
                }
                return ring_value(spec_, payload(std::move(out)));
            }
            case ring_kind::product: {
                const auto& x = std::get<prod_data>(p_);
                const auto& y = std::get<prod_data>(b.p_);
                prod_data out;
                out.c.reserve(x.c.size());
                for (std::size_t i = 0; i < x.c.size(); ++i)
                    out.c.push_back(o == op::add ? x.c[i] + y.c[i]
                                                 : o == op::sub ? x.c[i] - y.c[i]
                                                                : x.c[i] * y.c[i]);
                return ring_value(spec_, payload(std::move(out)));
            }
        }
        fail(errc::internal, "bad ring kind");
    }

    ring_ptr spec_;
    payload p_ = bigint(0);
};

/// Spec-level operation entry points matching the module contract.  The
/// operator overloads above are what the rest of the library uses.
enum class ring_op { add, sub, mul };

inline ring_value arith(const ring_value& a, const ring_value& b, ring_op o) {
    switch (o) {
        case ring_op::add: return a + b;
        case ring_op::sub: return a - b;
        case ring_op::mul: return a * b;
    }
    fail(errc::internal, "bad op");
}

inline std::optional<ring_value> is_unit(const ring_value& a) { return a.inverse(); }
inline std::optional<int> is_nilpotent(const ring_value& a) { return a.nilpotency_index(); }

// --- ring homomorphisms ----------------------------------------------------

/// Functorial maps used to test naturality of the symbol: modulus reduction,
/// Z -> Q and Z -> Z/m, augmentation of a local extension (generators -> 0),
/// base change of an extension along a hom of its base, and product
/// projections.
class ring_hom {
public:
    static ring_hom mod_reduce(ring_ptr src, ring_ptr dst) {
        require(src->kind() == ring_kind::modular && dst->kind() == ring_kind::modular,
                "mod_reduce needs modular rings");
        require(src->modulus() % dst->modulus() == 0, "target modulus must divide source modulus");
        return ring_hom(kind::reduce, std::move(src), std::move(dst));
    }

    static ring_hom int_to_mod(ring_ptr src, ring_ptr dst) {
        require(src->kind() == ring_kind::integers && dst->kind() == ring_kind::modular,
                "int_to_mod needs Z -> Z/m");
        return ring_hom(kind::reduce, std::move(src), std::move(dst));
    }

    static ring_hom rationalize(ring_ptr src, ring_ptr dst) {
        require(src->kind() == ring_kind::integers && dst->kind() == ring_kind::rationals,
                "rationalize needs Z -> Q");
        return ring_hom(kind::reduce, std::move(src), std::move(dst));
    }

    static ring_hom augment(ring_ptr src) {
        require(src->kind() == ring_kind::extension, "augment needs an extension");
        ring_ptr dst = src->base();
        return ring_hom(kind::augmentation, std::move(src), std::move(dst));
    }

    static ring_hom base_change(ring_ptr src, const ring_hom& base_map, ring_ptr dst) {
        require(src->kind() == ring_kind::extension && dst->kind() == ring_kind::extension,
                "base_change needs extensions");
        require(src->degrees() == dst->degrees() && src->cross_cap() == dst->cross_cap(),
                "base_change requires identical generator relations");
        require(base_map.src_->same(*src->base()) && base_map.dst_->same(*dst->base()),
                "inner map must go between the base rings");
        ring_hom h(kind::basechange, std::move(src), std::move(dst));
        h.inner_ = std::make_shared<ring_hom>(base_map);
        return h;
    }

    static ring_hom project(ring_ptr src, int factor) {
        require(src->kind() == ring_kind::product, "project needs a product ring");
        require(factor >= 0 && factor < src->components(), "factor index out of range");
        ring_ptr dst = src->factors()[static_cast<std::size_t>(factor)];
        ring_hom h(kind::projection, std::move(src), std::move(dst));
        h.factor_ = factor;
        return h;
    }

    const ring_ptr& source() const { return src_; }
    const ring_ptr& target() const { return dst_; }

    ring_value operator()(const ring_value& v) const {
        if (!v.spec()->same(*src_)) fail(errc::mixed_rings, "hom applied to value of a different ring");
        switch (kind_) {
            case kind::reduce: {
                // integer-carried maps: Z/m -> Z/m', Z -> Z/m, Z -> Q
                bigint rep;
                if (src_->kind() == ring_kind::integers) rep = std::get<bigint>(v.data());
                else if (auto* sm = std::get_if<detail::mod_small>(&v.data())) rep = sm->v;
                else rep = std::get<detail::mod_big>(v.data()).v;
                return ring_value::from_int(dst_, rep);
            }
            case kind::augmentation:
                return v.augmentation();
            case kind::basechange: {
                const auto& c = v.ext_coeffs();
                ring_value out = ring_value::zero(dst_);
                for (std::size_t idx = 0; idx < c.size(); ++idx) {
                    if (c[idx].is_zero()) continue;
                    auto exps = src_->ext_exponents(idx);
                    ring_value term = ring_value::from_base(dst_, (*inner_)(c[idx]));
                    for (std::size_t i = 0; i < exps.size(); ++i)
                        if (exps[i] > 0) term = term * ring_value::generator(dst_, i, exps[i]);
                    out = out + term;
                }
                return out;
            }
            case kind::projection:
                return v.component(factor_);
        }
        fail(errc::internal, "bad hom kind");
    }

private:
    enum class kind { reduce, augmentation, basechange, projection };

    ring_hom(kind k, ring_ptr s, ring_ptr d) : kind_(k), src_(std::move(s)), dst_(std::move(d)) {}

    static void require(bool ok, const char* msg) {
        if (!ok) fail(errc::unsupported_ring, msg);
    }

    kind kind_;
    ring_ptr src_, dst_;
    std::shared_ptr<ring_hom> inner_;
    int factor_ = 0;
};

} // namespace ccs
