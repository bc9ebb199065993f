#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>
#include <mutex>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "ext_complex.hpp"

namespace bcocycle {

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

// A point of the Riemann sphere; `infinite` tags the point at infinity.
struct ExtendedPoint {
    bool infinite = false;
    cplx value{0.0, 0.0};
};

// T(z) = zeta * prod (z - zeta_j) / (1 - conj(zeta_j) z), zeta = exp(2 pi i phase).
class BlaschkeProduct {
public:
    static constexpr double kMaxZeroModulus = 1.0 - 1e-8;

    BlaschkeProduct(double rotation_phase, std::vector<cplx> zeros)
        : phase_(rotation_phase - std::floor(rotation_phase)), zeros_(std::move(zeros)) {
        for (const auto& z : zeros_)
            if (!(std::abs(z) <= kMaxZeroModulus))
                throw DomainError("Blaschke zero outside the disc of radius 1-1e-8");
        rot_ = std::polar(1.0, kTwoPi * phase_);
    }

    double rotation_phase() const { return phase_; }
    cplx rotation() const { return rot_; }
    const std::vector<cplx>& zeros() const { return zeros_; }
    int degree() const { return int(zeros_.size()); }

    cplx eval(cplx z) const {
        cplx v = rot_;
        for (const auto& a : zeros_) v *= (z - a) / denom(a, z);
        return v;
    }

    // Product rule over the factors; avoids dividing by T(z) near zeros.
    cplx deriv(cplx z) const {
        const std::size_t n = zeros_.size();
        std::vector<cplx> f(n), df(n);
        for (std::size_t j = 0; j < n; ++j) {
            const cplx a = zeros_[j];
            const cplx d = denom(a, z);
            f[j] = (z - a) / d;
            df[j] = (1.0 - std::norm(a)) / (d * d);
        }
        cplx s{0.0, 0.0};
        for (std::size_t j = 0; j < n; ++j) {
            cplx t = df[j];
            for (std::size_t i = 0; i < n; ++i)
                if (i != j) t *= f[i];
            s += t;
        }
        return rot_ * s;
    }

    ExtendedPoint at_infinity() const {
        cplx v = rot_;
        for (const auto& a : zeros_) {
            if (a == cplx(0.0, 0.0)) return {true, {}};
            v *= -1.0 / std::conj(a);
        }
        return {false, v};
    }

    // Martin's sufficient condition for expansion on C_1.
    std::pair<bool, double> martin_expanding_check() const {
        double s = 0.0;
        for (const auto& a : zeros_) s += (1.0 - std::abs(a)) / (1.0 + std::abs(a));
        return {s > 1.0, s};
    }

    std::string describe() const {
        std::ostringstream os;
        os << "B(phase=" << phase_ << ";";
        for (const auto& a : zeros_) os << " (" << a.real() << "," << a.imag() << ")";
        os << ")";
        return os.str();
    }

private:
    static cplx denom(cplx a, cplx z) {
        cplx d = 1.0 - std::conj(a) * z;
        if (std::abs(d) < 1e-300) throw DomainError("evaluation at a Blaschke pole");
        return d;
    }

    double phase_;
    std::vector<cplx> zeros_;
    cplx rot_;
};

// M_a(z) = (z + a)/(1 + conj(a) z): the degree-1 product with zero -a.
inline BlaschkeProduct mobius_product(cplx a) {
    if (!(std::abs(a) < 1.0)) throw DomainError("Mobius parameter must satisfy |a| < 1");
    return BlaschkeProduct(0.0, {-a});
}

inline void to_json(nlohmann::json& j, const BlaschkeProduct& b) {
    nlohmann::json zs = nlohmann::json::array();
    for (const auto& z : b.zeros()) zs.push_back({z.real(), z.imag()});
    j = {{"rotation_phase", b.rotation_phase()}, {"zeros", zs}};
}

inline BlaschkeProduct blaschke_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("Blaschke product must be an object");
    double phase = 0.0;
    if (j.contains("rotation_phase")) {
        if (!j["rotation_phase"].is_number()) throw ConfigError("rotation_phase: expected number");
        phase = j["rotation_phase"].get<double>();
    }
    if (!j.contains("zeros") || !j["zeros"].is_array()) throw ConfigError("zeros: expected array");
    std::vector<cplx> zs;
    std::size_t idx = 0;
    for (const auto& z : j["zeros"]) {
        if (!z.is_array() || z.size() != 2 || !z[0].is_number() || !z[1].is_number())
            throw ConfigError("zeros[" + std::to_string(idx) + "]: expected [re, im]");
        zs.emplace_back(z[0].get<double>(), z[1].get<double>());
        ++idx;
    }
    try {
        return BlaschkeProduct(phase, std::move(zs));
    } catch (const DomainError& e) {
        throw ConfigError(std::string("zeros: ") + e.what());
    }
}

// Leading Taylor data at the origin, used when the argument is below the
// double range (|x| < 1e-150).
struct TaylorGerm {
    std::vector<cplx> c;    // c_0 .. c_K
    int value_order = -1;   // first k with |c_k| > threshold
    int deriv_order = -1;   // first k >= 1 with |c_k| > threshold
};

namespace detail {

struct MapNode {
    virtual ~MapNode() = default;
    virtual cplx eval(cplx z) const = 0;
    virtual cplx deriv(cplx z) const = 0;
    virtual std::string describe() const = 0;
    virtual const BlaschkeProduct* param_form() const { return nullptr; }

    mutable std::once_flag germ_once;
    mutable TaylorGerm germ;
};

struct BlaschkeNode final : MapNode {
    explicit BlaschkeNode(BlaschkeProduct b) : b(std::move(b)) {}
    cplx eval(cplx z) const override { return b.eval(z); }
    cplx deriv(cplx z) const override { return b.deriv(z); }
    std::string describe() const override { return b.describe(); }
    const BlaschkeProduct* param_form() const override { return &b; }
    BlaschkeProduct b;
};

}  // namespace detail

// Immutable evaluable analytic self-map of the closed disc with exact derivative.
class AnalyticMap {
public:
    AnalyticMap() = default;
    AnalyticMap(const BlaschkeProduct& b) : node_(std::make_shared<detail::BlaschkeNode>(b)) {}
    explicit AnalyticMap(std::shared_ptr<const detail::MapNode> n) : node_(std::move(n)) {}

    cplx eval(cplx z) const { return node_->eval(z); }
    cplx deriv(cplx z) const { return node_->deriv(z); }
    cplx operator()(cplx z) const { return node_->eval(z); }
    std::string describe() const { return node_->describe(); }
    const BlaschkeProduct* param_form() const { return node_->param_form(); }
    const detail::MapNode* node() const { return node_.get(); }
    bool same_object(const AnalyticMap& o) const { return node_ == o.node_; }
    explicit operator bool() const { return bool(node_); }

    const TaylorGerm& germ() const {
        std::call_once(node_->germ_once, [this] { node_->germ = compute_germ(); });
        return node_->germ;
    }

private:
    TaylorGerm compute_germ() const {
        constexpr int K = 24;
        constexpr int M = 128;
        constexpr double rho = 0.5;
        TaylorGerm g;
        g.c.assign(K + 1, cplx(0.0, 0.0));
        std::vector<cplx> vals(M);
        for (int j = 0; j < M; ++j) vals[j] = eval(std::polar(rho, kTwoPi * j / M));
        for (int k = 2; k <= K; ++k) {
            cplx s{0.0, 0.0};
            for (int j = 0; j < M; ++j) s += vals[j] * std::polar(1.0, -kTwoPi * double(k) * j / M);
            g.c[k] = s / (double(M) * std::pow(rho, k));
        }
        g.c[0] = eval(0.0);
        g.c[1] = deriv(0.0);
        constexpr double thr = 1e-12;
        for (int k = 0; k <= K && g.value_order < 0; ++k)
            if (std::abs(g.c[k]) > thr) g.value_order = k;
        for (int k = 1; k <= K && g.deriv_order < 0; ++k)
            if (std::abs(g.c[k]) > thr) g.deriv_order = k;
        return g;
    }

    std::shared_ptr<const detail::MapNode> node_;
};

namespace detail {

struct ComposeNode final : MapNode {
    ComposeNode(AnalyticMap o, AnalyticMap i) : outer(std::move(o)), inner(std::move(i)) {}
    cplx eval(cplx z) const override { return outer.eval(inner.eval(z)); }
    cplx deriv(cplx z) const override { return outer.deriv(inner.eval(z)) * inner.deriv(z); }
    std::string describe() const override { return outer.describe() + " o " + inner.describe(); }
    AnalyticMap outer, inner;
};

struct ProductNode final : MapNode {
    ProductNode(AnalyticMap f, AnalyticMap g) : f(std::move(f)), g(std::move(g)) {}
    cplx eval(cplx z) const override { return f.eval(z) * g.eval(z); }
    cplx deriv(cplx z) const override { return f.deriv(z) * g.eval(z) + f.eval(z) * g.deriv(z); }
    std::string describe() const override { return "(" + f.describe() + ")*(" + g.describe() + ")"; }
    AnalyticMap f, g;
};

// P(z) = T(z)/z with P(0) = T'(0).
struct DivideByZNode final : MapNode {
    explicit DivideByZNode(AnalyticMap t) : t(std::move(t)) {}
    cplx eval(cplx z) const override {
        if (z == cplx(0.0, 0.0)) return t.deriv(z);
        return t.eval(z) / z;
    }
    cplx deriv(cplx z) const override {
        if (std::abs(z) < 1e-6) {
            // Taylor: P'(0) = T''(0)/2, via the germ of T.
            const auto& g = t.germ();
            cplx s{0.0, 0.0}, zp{1.0, 0.0};
            for (std::size_t k = 2; k < g.c.size(); ++k) {
                s += double(k - 1) * g.c[k] * zp;
                zp *= z;
            }
            return s;
        }
        return (t.deriv(z) * z - t.eval(z)) / (z * z);
    }
    std::string describe() const override { return "(" + t.describe() + ")/z"; }
    AnalyticMap t;
};

}  // namespace detail

inline AnalyticMap mobius(cplx a) { return AnalyticMap(mobius_product(a)); }
inline AnalyticMap identity_map() { return AnalyticMap(BlaschkeProduct(0.0, {cplx(0.0, 0.0)})); }

inline AnalyticMap compose(const AnalyticMap& outer, const AnalyticMap& inner) {
    return AnalyticMap(std::make_shared<detail::ComposeNode>(outer, inner));
}

inline AnalyticMap multiply(const AnalyticMap& f, const AnalyticMap& g) {
    return AnalyticMap(std::make_shared<detail::ProductNode>(f, g));
}

inline AnalyticMap divide_out_zero(const AnalyticMap& t) {
    if (!(std::abs(t.eval(0.0)) < 1e-10)) throw DomainError("divide_out_zero: T(0) != 0");
    return AnalyticMap(std::make_shared<detail::DivideByZNode>(t));
}

// T(infinity) via T o I = I o T for circle-preserving maps.
inline ExtendedPoint at_infinity(const AnalyticMap& t) {
    if (const auto* b = t.param_form()) return b->at_infinity();
    cplx t0 = t.eval(0.0);
    if (t0 == cplx(0.0, 0.0)) return {true, {}};
    return {false, 1.0 / std::conj(t0)};
}

// max_{|z|=R} |T(z)|: 4096 samples plus golden-section refinement.
inline double r_at_radius(const AnalyticMap& t, double R) {
    constexpr int S = 4096;
    auto f = [&](double th) { return std::abs(t.eval(std::polar(R, th))); };
    double best = -1.0, best_th = 0.0;
    for (int k = 0; k < S; ++k) {
        double th = kTwoPi * k / S;
        double v = f(th);
        if (v > best) {
            best = v;
            best_th = th;
        }
    }
    const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = best_th - kTwoPi / S, b = best_th + kTwoPi / S;
    double c = b - gr * (b - a), d = a + gr * (b - a);
    double fc = f(c), fd = f(d);
    for (int it = 0; it < 80; ++it) {
        if (fc > fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - gr * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + gr * (b - a);
            fd = f(d);
        }
    }
    return std::max({best, fc, fd});
}

inline double family_r(const std::vector<AnalyticMap>& family, double R) {
    double r = 0.0;
    for (const auto& t : family) r = std::max(r, r_at_radius(t, R));
    return r;
}

inline bool radius_feasible(const std::vector<AnalyticMap>& family, double R) {
    return family_r(family, R) < R - 1e-12;
}

// Some R in (0,1) with r_T(R) < R for every map of the family.
inline double admissible_radius(const std::vector<AnalyticMap>& family,
                                std::optional<double> R_hint = std::nullopt) {
    if (family.empty()) throw InfeasibilityError("admissible_radius: empty family");
    if (R_hint && *R_hint > 0.0 && *R_hint < 1.0 && radius_feasible(family, *R_hint)) return *R_hint;
    double lo = 1e-3;
    for (const auto& t : family)
        if (const auto* b = t.param_form())
            for (const auto& z : b->zeros()) lo = std::max(lo, std::abs(z));
    const double hi = 1.0 - 1e-3;
    if (lo >= hi || !radius_feasible(family, hi))
        throw InfeasibilityError("no admissible R in (1e-3, 1-1e-3)");
    if (radius_feasible(family, lo)) return 0.5 * (lo + hi);
    double bad = lo, good = hi;
    for (int it = 0; it < 60; ++it) {
        double mid = 0.5 * (bad + good);
        (radius_feasible(family, mid) ? good : bad) = mid;
    }
    return 0.5 * (good + hi);
}

// Hyperbolic metric of the disc D_R.
inline double hyperbolic_distance(cplx z, cplx w, double R) {
    cplx u = z / R, v = w / R;
    double q = std::abs(u - v) / std::abs(1.0 - std::conj(u) * v);
    return 2.0 * std::atanh(std::min(q, 1.0));
}

// One step of T applied to a point kept in extended-exponent form.
struct ExtStep {
    ExtComplex value;
    double log_abs_deriv = 0.0;
    bool deriv_zero = false;
};

inline constexpr double kGermThreshold = 1e-150;
inline constexpr double kZeroDerivThreshold = 1e-300;

inline ExtStep ext_step(const AnalyticMap& t, const ExtComplex& x) {
    ExtStep s;
    if (x.is_zero() || x.log_abs() >= std::log(kGermThreshold)) {
        const cplx xd = x.to_cplx();
        s.value = ExtComplex(t.eval(xd));
        const double d = std::abs(t.deriv(xd));
        s.deriv_zero = d < kZeroDerivThreshold;
        s.log_abs_deriv = s.deriv_zero ? -HUGE_VAL : std::log(d);
        return s;
    }
    const TaylorGerm& g = t.germ();
    if (g.value_order < 0) {
        s.value = ExtComplex();
    } else if (g.value_order == 0) {
        s.value = ExtComplex(g.c[0]);
    } else {
        s.value = ExtComplex(g.c[g.value_order]) * x.pow(g.value_order);
    }
    if (g.deriv_order < 0) {
        s.deriv_zero = true;
        s.log_abs_deriv = -HUGE_VAL;
    } else {
        const int k = g.deriv_order;
        s.log_abs_deriv = std::log(double(k) * std::abs(g.c[k])) + double(k - 1) * x.log_abs();
    }
    return s;
}

}  // namespace bcocycle
