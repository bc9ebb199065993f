#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <vector>

#include <json.hpp>

#include "blaschke.hpp"
#include "driving.hpp"
#include "errors.hpp"

namespace bcocycle {

// A real number in nats or the tagged value -infinity.
struct LogValue {
    double value = 0.0;
    bool neg_inf = false;

    static LogValue minus_infinity() { return {0.0, true}; }
    double as_double() const { return neg_inf ? -std::numeric_limits<double>::infinity() : value; }
};

inline void to_json(nlohmann::json& j, const LogValue& v) {
    if (v.neg_inf)
        j = "-inf";
    else
        j = v.value;
}

struct FixedPointTrace {
    std::int64_t position = 0;
    ExtComplex x;
    std::int64_t depth = 0;
    double residual = 0.0;
    double contraction_ratio = 0.0;

    cplx value() const { return x.to_cplx(); }
};

inline void to_json(nlohmann::json& j, const FixedPointTrace& t) {
    const cplx v = t.value();
    j = {{"position", t.position},
         {"x", {v.real(), v.imag()}},
         {"log10_abs_x", t.x.is_zero() ? nlohmann::json("-inf") : nlohmann::json(t.x.log10_abs())},
         {"depth", t.depth},
         {"residual", t.residual},
         {"contraction_ratio", t.contraction_ratio}};
}

inline double family_contraction_r(const CocycleFamily& fam, double R) {
    if (fam.r_bound) return *fam.r_bound;
    if (fam.maps.empty()) throw InfeasibilityError("family without maps has no r bound");
    return family_r(fam.maps, R);
}

// Smallest d with L (r/R)^(d-1) < tol, L = 4 atanh(r/R) the d_R-diameter of D_r.
inline std::int64_t backward_depth(double ratio, double tol) {
    if (!(ratio < 1.0)) throw InfeasibilityError("r_T(R) >= R: no contraction");
    if (ratio <= 0.0) return 1;
    const double L = 4.0 * std::atanh(ratio);
    if (L < tol) return 1;
    const double d = 1.0 + std::ceil(std::log(tol / L) / std::log(ratio));
    if (d > 1e6) throw ConvergenceError("backward depth exceeds 1e6 (r/R too close to 1)");
    return std::max<std::int64_t>(1, std::int64_t(d));
}

inline ExtComplex backward_orbit_of_zero(const CocycleFamily& fam, const SymbolProcess& proc,
                                         std::int64_t position, std::int64_t depth) {
    ExtComplex x;
    for (std::int64_t j = depth; j >= 1; --j) x = ext_step(map_at(fam, proc, position - j), x).value;
    return x;
}

inline FixedPointTrace random_fixed_point(const CocycleFamily& fam, const SymbolProcess& proc,
                                          std::int64_t position, double R, double tol = 1e-13) {
    FixedPointTrace t;
    t.position = position;
    if (fam.fixed_point) {
        t.x = fam.fixed_point(proc, position);
        return t;
    }
    const double r = family_contraction_r(fam, R);
    t.contraction_ratio = r / R;
    t.depth = backward_depth(t.contraction_ratio, tol);
    t.x = backward_orbit_of_zero(fam, proc, position, t.depth);
    if (t.depth > 1) {
        ExtComplex y = backward_orbit_of_zero(fam, proc, position, t.depth - 1);
        t.residual = std::abs(t.x.to_cplx() - y.to_cplx());
    }
    return t;
}

inline FixedPointTrace push_fixed_point(const CocycleFamily& fam, const SymbolProcess& proc,
                                        const FixedPointTrace& t) {
    FixedPointTrace n = t;
    n.position = t.position + 1;
    n.x = ext_step(map_at(fam, proc, t.position), t.x).value;
    return n;
}

// Memoized fixed points of one orbit, filled forward from a single backward solve.
class FixedPointCache {
public:
    FixedPointCache(CocycleFamily fam, SymbolProcess proc, double R, double tol)
        : fam_(std::move(fam)), proc_(std::move(proc)), R_(R), tol_(tol) {}

    ExtComplex at(std::int64_t i) {
        std::lock_guard<std::mutex> lk(mu_);
        if (auto it = memo_.find(i); it != memo_.end()) return it->second;
        if (auto it = memo_.find(i - 1); it != memo_.end()) {
            ExtComplex x = ext_step(map_at(fam_, proc_, i - 1), it->second).value;
            memo_.emplace(i, x);
            return x;
        }
        ExtComplex x = random_fixed_point(fam_, proc_, i, R_, tol_).x;
        memo_.emplace(i, x);
        return x;
    }

    const CocycleFamily& family() const { return fam_; }
    const SymbolProcess& process() const { return proc_; }

private:
    CocycleFamily fam_;
    SymbolProcess proc_;
    double R_, tol_;
    std::mutex mu_;
    std::map<std::int64_t, ExtComplex> memo_;
};

struct LambdaOptions {
    std::int64_t start = 0;
    double tol = 1e-13;
    std::vector<std::int64_t> checkpoints;  // running means reported at these n
    bool keep_terms = false;
};

struct LambdaEstimate {
    LogValue lambda;
    double stderr_ = 0.0;
    double min_log_term = 0.0;
    std::int64_t min_position = 0;
    std::int64_t n = 0;
    std::int64_t burn_in = 0;
    std::uint64_t seed = 0;
    bool sentinel = false;
    std::int64_t sentinel_position = 0;
    double hill_index = std::numeric_limits<double>::infinity();
    bool heavy_tail = false;
    std::vector<std::pair<std::int64_t, double>> running;  // (n, running mean)
    std::vector<double> terms;
};

inline void to_json(nlohmann::json& j, const LambdaEstimate& e) {
    j = {{"Lambda_hat", e.lambda},
         {"stderr", e.stderr_},
         {"min_log_term", e.min_log_term},
         {"n", e.n},
         {"burn_in", e.burn_in},
         {"seed", e.seed},
         {"sentinel", e.sentinel},
         {"hill_index", e.hill_index},
         {"heavy_tail", e.heavy_tail}};
}

// Hill estimate of the tail index of -log|T'| using the top sqrt(n) order statistics.
inline double hill_tail_index(const std::vector<double>& terms) {
    std::vector<double> x;
    x.reserve(terms.size());
    for (double t : terms)
        if (t < 0.0 && std::isfinite(t)) x.push_back(-t);
    const std::size_t n = x.size();
    const std::size_t k = std::size_t(std::floor(std::sqrt(double(n))));
    if (k < 2 || k + 1 > n) return std::numeric_limits<double>::infinity();
    std::nth_element(x.begin(), x.begin() + std::ptrdiff_t(k), x.end(), std::greater<>());
    const double ref = x[k];
    std::sort(x.begin(), x.begin() + std::ptrdiff_t(k), std::greater<>());
    double h = 0.0;
    for (std::size_t i = 0; i < k; ++i) h += std::log(x[i] / ref);
    h /= double(k);
    return h > 0.0 ? 1.0 / h : std::numeric_limits<double>::infinity();
}

// Sum_n (2p)^n, finite iff p < 1/2.
inline std::optional<double> collapse_series_sum(double p) {
    if (p < 0.5) return 1.0 / (1.0 - 2.0 * p);
    return std::nullopt;
}

// Birkhoff average of log|T'_w(x_w)| along one forward-propagated orbit.
inline LambdaEstimate lambda_birkhoff(const CocycleFamily& fam, const SymbolProcess& proc, double R,
                                      std::int64_t n_steps, std::int64_t burn_in,
                                      const LambdaOptions& opt = {}) {
    if (n_steps < 1) throw DomainError("lambda_birkhoff: n_steps must be >= 1");
    LambdaEstimate est;
    est.burn_in = burn_in;
    est.seed = proc.seed();
    FixedPointTrace tr = random_fixed_point(fam, proc, opt.start, R, opt.tol);
    ExtComplex x = tr.x;
    std::int64_t i = opt.start;
    for (std::int64_t b = 0; b < burn_in; ++b, ++i)
        x = fam.fixed_point ? fam.fixed_point(proc, i + 1) : ext_step(map_at(fam, proc, i), x).value;

    std::vector<double> terms;
    terms.reserve(std::size_t(n_steps));
    double mean = 0.0, m2 = 0.0;
    double mn = std::numeric_limits<double>::infinity();
    std::size_t cp = 0;
    std::vector<std::int64_t> cps = opt.checkpoints;
    std::sort(cps.begin(), cps.end());
    for (std::int64_t k = 0; k < n_steps; ++k, ++i) {
        ExtStep s = ext_step(map_at(fam, proc, i), x);
        if (s.deriv_zero) {
            est.sentinel = true;
            est.sentinel_position = i;
            est.n = k + 1;
            est.lambda = LogValue::minus_infinity();
            est.min_log_term = -std::numeric_limits<double>::infinity();
            est.min_position = i;
            return est;
        }
        const double t = s.log_abs_deriv;
        terms.push_back(t);
        const double d = t - mean;
        mean += d / double(k + 1);
        m2 += d * (t - mean);
        if (t < mn) {
            mn = t;
            est.min_position = i;
        }
        while (cp < cps.size() && cps[cp] == k + 1) est.running.emplace_back(cps[cp++], mean);
        x = fam.fixed_point ? fam.fixed_point(proc, i + 1) : s.value;
    }
    est.n = n_steps;
    est.lambda = {mean, false};
    est.stderr_ = n_steps > 1 ? std::sqrt(m2 / double(n_steps - 1) / double(n_steps)) : 0.0;
    est.min_log_term = mn;
    est.hill_index = hill_tail_index(terms);
    est.heavy_tail = est.hill_index <= 1.0;
    if (opt.keep_terms) est.terms = std::move(terms);
    return est;
}

struct SpectrumModel {
    LogValue Lambda;
    std::vector<LogValue> values;  // listed with multiplicity
};

inline void to_json(nlohmann::json& j, const SpectrumModel& s) {
    j = {{"lambda_top", 0.0}, {"Lambda", s.Lambda}, {"exponents", s.values}};
}

// [0, L, L, 2L, 2L, ...] truncated to `count` entries.
inline SpectrumModel analytic_spectrum(LogValue Lambda, int count) {
    if (!Lambda.neg_inf && !(Lambda.value < 0.0)) throw DomainError("analytic_spectrum: Lambda must be < 0");
    SpectrumModel s;
    s.Lambda = Lambda;
    for (int j = 0; j < count; ++j) {
        if (j == 0) {
            s.values.push_back({0.0, false});
        } else if (Lambda.neg_inf) {
            s.values.push_back(LogValue::minus_infinity());
        } else {
            s.values.push_back({double((j + 1) / 2) * Lambda.value, false});
        }
    }
    return s;
}

namespace detail {

class MapMemo {
public:
    template <class F>
    AnalyticMap get(std::int64_t i, F&& make) {
        {
            std::lock_guard<std::mutex> lk(mu_);
            if (auto it = memo_.find(i); it != memo_.end()) return it->second;
        }
        AnalyticMap m = make();
        std::lock_guard<std::mutex> lk(mu_);
        return memo_.emplace(i, std::move(m)).first->second;
    }

private:
    std::mutex mu_;
    std::map<std::int64_t, AnalyticMap> memo_;
};

}  // namespace detail

// T~_w = M_{-x_{sw}} o T_w o M_{x_w}, which fixes 0.
inline CocycleFamily conjugate_to_zero(const CocycleFamily& fam, const SymbolProcess& proc, double R,
                                       double tol = 1e-13) {
    auto cache = std::make_shared<FixedPointCache>(fam, proc, R, tol);
    auto memo = std::make_shared<detail::MapMemo>();
    CocycleFamily d;
    d.derived = [cache, memo](const SymbolProcess&, std::int64_t i) {
        return memo->get(i, [&] {
            const cplx x = cache->at(i).to_cplx();
            const cplx xs = cache->at(i + 1).to_cplx();
            const AnalyticMap t = map_at(cache->family(), cache->process(), i);
            return compose(mobius(-xs), compose(t, mobius(x)));
        });
    };
    d.fixed_point = [](const SymbolProcess&, std::int64_t) { return ExtComplex(); };
    return d;
}

struct StabilityEstimate {
    double essinf_estimate = 0.0;
    double log_essinf = 0.0;
    std::int64_t argmin = 0;
    bool stable = false;
};

// Orbit minimum of |T'_w(x_w)| over n_samples positions.
inline StabilityEstimate stability_criterion(const CocycleFamily& fam, const SymbolProcess& proc, double R,
                                             std::int64_t n_samples, double threshold = 1e-6,
                                             double tol = 1e-13) {
    StabilityEstimate s;
    s.log_essinf = std::numeric_limits<double>::infinity();
    ExtComplex x = random_fixed_point(fam, proc, 0, R, tol).x;
    for (std::int64_t i = 0; i < n_samples; ++i) {
        ExtStep st = ext_step(map_at(fam, proc, i), x);
        const double l = st.deriv_zero ? -std::numeric_limits<double>::infinity() : st.log_abs_deriv;
        if (l < s.log_essinf) {
            s.log_essinf = l;
            s.argmin = i;
        }
        x = fam.fixed_point ? fam.fixed_point(proc, i + 1) : st.value;
    }
    s.essinf_estimate = std::exp(s.log_essinf);
    s.stable = s.log_essinf > std::log(threshold);
    return s;
}

inline double sup_distance_on_circle(const AnalyticMap& s, const AnalyticMap& t, int points = 512) {
    double d = 0.0;
    for (int k = 0; k < points; ++k) {
        const cplx z = std::polar(1.0, kTwoPi * k / points);
        d = std::max(d, std::abs(s.eval(z) - t.eval(z)));
    }
    return d;
}

struct PerturbedCocycle {
    CocycleFamily family;
    double delta = 0.0;
    double r = 0.0;
    // True when the map at position i differs from the base map.
    std::function<bool(std::int64_t)> modified;
};

namespace detail {

enum class PerturbKind { collapse, stabilize };

inline PerturbedCocycle fixed_point_perturbation(const CocycleFamily& fam, const SymbolProcess& proc, double R,
                                                 double epsilon, double tol, PerturbKind kind) {
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw DomainError("perturbation: epsilon must lie in (0,1)");
    const double r = family_contraction_r(fam, R);
    const double delta = kind == PerturbKind::collapse ? epsilon * (1.0 - r) / (3.0 * (1.0 + r))
                                                       : epsilon * (1.0 - r) / (6.0 * (1.0 + r));
    auto cache = std::make_shared<FixedPointCache>(fam, proc, R, tol);
    auto memo = std::make_shared<MapMemo>();
    auto flags = std::make_shared<std::map<std::int64_t, bool>>();
    auto flags_mu = std::make_shared<std::mutex>();
    PerturbedCocycle out;
    out.delta = delta;
    out.r = r;
    out.family.derived = [=](const SymbolProcess&, std::int64_t i) {
        return memo->get(i, [&] {
            const cplx x = cache->at(i).to_cplx();
            const cplx xs = cache->at(i + 1).to_cplx();
            const AnalyticMap t = map_at(cache->family(), cache->process(), i);
            const AnalyticMap tt = compose(mobius(-xs), compose(t, mobius(x)));
            const AnalyticMap p = divide_out_zero(tt);
            const cplx p0 = p.eval(0.0);
            bool change = kind == PerturbKind::collapse ? std::abs(p0) < delta : std::abs(p0) <= delta;
            {
                std::lock_guard<std::mutex> lk(*flags_mu);
                (*flags)[i] = change;
            }
            if (!change) return t;
            const AnalyticMap q = kind == PerturbKind::collapse ? compose(mobius(-p0), p)
                                                               : compose(mobius(cplx(2.0 * delta, 0.0)), p);
            const AnalyticMap st = multiply(identity_map(), q);
            return compose(mobius(xs), compose(st, mobius(-x)));
        });
    };
    out.family.fixed_point = [cache](const SymbolProcess&, std::int64_t i) { return cache->at(i); };
    out.modified = [fam_d = out.family.derived, proc, flags, flags_mu](std::int64_t i) {
        fam_d(proc, i);
        std::lock_guard<std::mutex> lk(*flags_mu);
        return (*flags)[i];
    };
    return out;
}

}  // namespace detail

// S'_w(x_w) = 0 wherever |T~'_w(0)| < delta, delta = eps (1-r)/(3(1+r)).
inline PerturbedCocycle collapse_perturbation(const CocycleFamily& fam, const SymbolProcess& proc, double R,
                                              double epsilon, double tol = 1e-13) {
    return detail::fixed_point_perturbation(fam, proc, R, epsilon, tol, detail::PerturbKind::collapse);
}

// |S'_w(x_w)| > ((1-r)/(1+r))^2 delta everywhere, delta = eps (1-r)/(6(1+r)).
inline PerturbedCocycle stabilize_perturbation(const CocycleFamily& fam, const SymbolProcess& proc, double R,
                                               double epsilon, double tol = 1e-13) {
    return detail::fixed_point_perturbation(fam, proc, R, epsilon, tol, detail::PerturbKind::stabilize);
}

// |delta| such that max_{|w|=1} |M_delta(w) - w| = eps.
inline double mobius_delta_for_sup(double eps) {
    auto sup = [](double d) {
        double m = 0.0;
        const AnalyticMap md = mobius(cplx(d, 0.0));
        for (int k = 0; k < 4096; ++k) {
            const cplx w = std::polar(1.0, kTwoPi * k / 4096);
            m = std::max(m, std::abs(md.eval(w) - w));
        }
        return m;
    };
    double lo = 0.0, hi = std::min(eps, 0.999);
    for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        (sup(mid) < eps ? lo : hi) = mid;
    }
    return lo;
}

// T^eps_w = M_delta o T_w with a fixed delta = |delta| e^{2 pi i phase}.
inline CocycleFamily static_mobius_perturbation(const CocycleFamily& fam, double eps, double phase = 0.0) {
    const cplx d = std::polar(mobius_delta_for_sup(eps), kTwoPi * phase);
    CocycleFamily out;
    for (const auto& t : fam.maps) out.maps.push_back(compose(mobius(d), t));
    return out;
}

// T^eps_{w,xi} = M_{delta_i} o T_w with delta_i drawn from an independent stream.
inline CocycleFamily quenched_mobius_perturbation(const CocycleFamily& fam, double R, double eps,
                                                  std::uint64_t xi_seed) {
    const double dmax = mobius_delta_for_sup(eps);
    const double r = family_contraction_r(fam, R);
    auto memo = std::make_shared<detail::MapMemo>();
    CocycleFamily out;
    out.r_bound = (r + dmax) / (1.0 + r * dmax);
    out.derived = [=](const SymbolProcess& proc, std::int64_t i) {
        return memo->get(i, [&] {
            const double rad = dmax * counter_uniform(xi_seed, i, 11);
            const double ang = kTwoPi * counter_uniform(xi_seed, i, 12);
            return compose(mobius(std::polar(rad, ang)), map_at(fam, proc, i));
        });
    };
    return out;
}

}  // namespace bcocycle
