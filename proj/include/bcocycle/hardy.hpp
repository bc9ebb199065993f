#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "blaschke.hpp"
#include "driving.hpp"
#include "errors.hpp"

namespace bcocycle {

using CoeffVector = Eigen::VectorXcd;
using CMatrix = Eigen::MatrixXcd;

// Basis e_k(z) = d_k z^k of H^2(A_R), k = -N..N, stored at index k + N.
struct HardyBasisSpec {
    double R = 0.5;
    int N = 40;
    int M = 0;  // quadrature points; 0 selects max(512, 16N)

    HardyBasisSpec() = default;
    HardyBasisSpec(double R_, int N_, int M_ = 0) : R(R_), N(N_), M(M_ > 0 ? M_ : std::max(512, 16 * N_)) {
        if (!(R > 0.0 && R < 1.0)) throw DomainError("HardyBasisSpec: R must lie in (0,1)");
        if (N < 1) throw DomainError("HardyBasisSpec: N must be >= 1");
        if (M < 8 * N) throw DomainError("HardyBasisSpec: quadrature needs M >= 8N");
    }

    int dim() const { return 2 * N + 1; }
    int idx(int k) const { return k + N; }
    bool in_window(int k) const { return k >= -N && k <= N; }
    double d(int k) const { return 1.0 / std::sqrt(std::pow(R, 2.0 * k) + std::pow(R, -2.0 * k)); }
};

struct TransferMatrix {
    CMatrix A;
    HardyBasisSpec spec;
    int quadrature_points = 0;
    std::string provenance;
};

namespace detail {

inline cplx unit_root_power(std::int64_t k, std::int64_t p, std::int64_t M) {
    std::int64_t e = (k * p) % M;
    if (e < 0) e += M;
    return std::polar(1.0, kTwoPi * double(e) / double(M));
}

inline cplx ipow(cplx z, int p) {
    cplx r{1.0, 0.0};
    for (; p > 0; p >>= 1, z *= z)
        if (p & 1) r *= z;
    return r;
}

// Raw (unnormalized) contour sum for output mode n, input mode m, M points.
inline cplx contour_entry(const std::vector<cplx>& vals, int n, int m, double R) {
    const std::int64_t M = std::int64_t(vals.size());
    const double scale = n >= 0 ? std::pow(1.0 / R, m + 1) : std::pow(R, m + 1);
    cplx s{0.0, 0.0};
    for (std::int64_t k = 0; k < M; ++k) {
        const cplx w = unit_root_power(k, m + 1, M);
        const cplx g = n >= 0 ? ipow(std::conj(vals[std::size_t(k)]), n + 1) : ipow(vals[std::size_t(k)], -(n + 1));
        s += g * w;
    }
    return s * scale / double(M);
}

inline std::vector<cplx> inner_circle_values(const AnalyticMap& t, double R, int M) {
    std::vector<cplx> v(std::size_t(M), cplx(0.0, 0.0));
    for (int k = 0; k < M; ++k) v[std::size_t(k)] = t.eval(R * unit_root_power(k, 1, M));
    return v;
}

inline CMatrix assemble_raw(const std::vector<cplx>& vals, const HardyBasisSpec& s) {
    const int N = s.N, M = int(vals.size()), D = s.dim();
    std::vector<cplx> roots(static_cast<std::size_t>(M));
    for (int e = 0; e < M; ++e) roots[std::size_t(e)] = unit_root_power(e, 1, M);
    const auto Dz = static_cast<std::size_t>(D);
    std::vector<double> dn(Dz), rout(Dz), rin(Dz);
    for (int m = -N; m <= N; ++m) {
        dn[std::size_t(s.idx(m))] = s.d(m);
        rout[std::size_t(s.idx(m))] = std::pow(1.0 / s.R, m + 1);
        rin[std::size_t(s.idx(m))] = std::pow(s.R, m + 1);
    }
    // Outer contour C_{1/R}: 1/T(w/R) = conj(T(R w)) on |w| = 1.
    CMatrix Gout(N + 1, M), Zout(M, D), Gin(N, M), Zin(M, D);
    for (int k = 0; k < M; ++k) {
        cplx p = std::conj(vals[std::size_t(k)]);
        cplx acc = p;
        for (int n = 0; n <= N; ++n) {
            Gout(n, k) = acc;
            acc *= p;
        }
        cplx q = vals[std::size_t(k)];
        cplx accq{1.0, 0.0};
        for (int j = 0; j < N; ++j) {  // output mode n = -(j+1), power |n|-1 = j
            Gin(j, k) = accq;
            accq *= q;
        }
        for (int m = -N; m <= N; ++m) {
            std::int64_t e = (std::int64_t(k) * (m + 1)) % M;
            if (e < 0) e += M;
            const cplx w = roots[std::size_t(e)];
            Zout(k, s.idx(m)) = w * rout[std::size_t(s.idx(m))];
            Zin(k, s.idx(m)) = w * rin[std::size_t(s.idx(m))];
        }
    }
    CMatrix Pout = Gout * Zout / double(M);
    CMatrix Pin = Gin * Zin / double(M);
    CMatrix A(D, D);
    for (int n = -N; n <= N; ++n)
        for (int m = -N; m <= N; ++m) {
            cplx raw = n >= 0 ? Pout(n, s.idx(m)) : Pin(-n - 1, s.idx(m));
            // g = 1 on row z^-1: the trapezoid sum of w^(m+1) is exactly delta_{m,-1} for |m+1| < M.
            if (n == -1) raw = m == -1 ? cplx(1.0, 0.0) : cplx(0.0, 0.0);
            A(s.idx(n), s.idx(m)) = raw * (dn[std::size_t(s.idx(m))] / dn[std::size_t(s.idx(n))]);
        }
    return A;
}

}  // namespace detail

// A_{n,m} = (d_m/d_n) (1/2 pi i) \oint z^m / T(z)^{n+1} dz on C_{1/R} (n >= 0) or C_R (n < 0).
inline TransferMatrix assemble_transfer(const AnalyticMap& t, const HardyBasisSpec& spec) {
    int M = spec.M;
    const int N = spec.N;
    const std::vector<std::pair<int, int>> probes = {{-1, -1}, {0, 0},          {N, N},      {-N, -N},
                                                     {N, -N},  {-N, N},         {N / 2, -N / 2}, {-2, 1}};
    while (true) {
        auto vals = detail::inner_circle_values(t, spec.R, M);
        double vmax = 0.0;
        for (const auto& v : vals) vmax = std::max(vmax, std::abs(v));
        if (!(vmax < spec.R)) throw AssemblyError("assemble_transfer: r_T(R) >= R, map does not contract D_R");
        CMatrix A = detail::assemble_raw(vals, spec);
        auto vals2 = detail::inner_circle_values(t, spec.R, 2 * M);
        double diff = 0.0;
        for (const auto& [n, m] : probes) {
            const cplx e2 = detail::contour_entry(vals2, n, m, spec.R) * (spec.d(m) / spec.d(n));
            diff = std::max(diff, std::abs(e2 - A(spec.idx(n), spec.idx(m))));
        }
        if (diff <= 1e-12) {
            TransferMatrix tm;
            tm.A = std::move(A);
            tm.spec = spec;
            tm.quadrature_points = M;
            tm.provenance = t.describe();
            return tm;
        }
        M *= 2;
        if (M > (1 << 20)) throw AccuracyError("assemble_transfer: quadrature did not stabilize by M = 2^20");
    }
}

inline void require_inside(cplx x, const HardyBasisSpec& s) {
    if (!(std::abs(x) < s.R)) throw DomainError("pole expansion needs |x| < R");
}

// 1/(z - x) = sum_{k>=0} x^k z^{-k-1}.
inline CoeffVector expand_simple_pole(cplx x, const HardyBasisSpec& s) {
    require_inside(x, s);
    CoeffVector v = CoeffVector::Zero(s.dim());
    cplx p{1.0, 0.0};
    for (int k = 0; k < s.N; ++k) {
        v(s.idx(-k - 1)) = p / s.d(-k - 1);
        p *= x;
    }
    return v;
}

// 1/(z - x)^{j+1} = sum_{k>=j} C(k,j) x^{k-j} z^{-k-1}.
inline CoeffVector expand_inner_pole(cplx x, int j, const HardyBasisSpec& s) {
    require_inside(x, s);
    if (j < 1 || j + 1 > s.N) throw DomainError("expand_inner_pole: need 1 <= j and j+1 <= N");
    CoeffVector v = CoeffVector::Zero(s.dim());
    double binom = 1.0;  // C(k, j) starting at k = j
    cplx p{1.0, 0.0};
    for (int k = j; k < s.N; ++k) {
        v(s.idx(-k - 1)) = binom * p / s.d(-k - 1);
        binom = binom * double(k + 1) / double(k + 1 - j);
        p *= x;
    }
    return v;
}

// z^{j-1}/(1 - conj(x) z)^{j+1} = sum_{k>=0} C(k+j, j) conj(x)^k z^{k+j-1}.
inline CoeffVector expand_outer_pole(cplx x, int j, const HardyBasisSpec& s) {
    require_inside(x, s);
    if (j < 1 || j > s.N) throw DomainError("expand_outer_pole: need 1 <= j <= N");
    CoeffVector v = CoeffVector::Zero(s.dim());
    double binom = 1.0;  // C(k+j, j) at k = 0
    cplx p{1.0, 0.0};
    const cplx xb = std::conj(x);
    for (int k = 0; k + j - 1 <= s.N; ++k) {
        v(s.idx(k + j - 1)) = binom * p / s.d(k + j - 1);
        binom = binom * double(k + j + 1) / double(k + 1);
        p *= xb;
    }
    return v;
}

// 1/(z - w) for |w| > 1/R: -sum_{k>=0} z^k / w^{k+1}.
inline CoeffVector expand_exterior_pole(cplx w, const HardyBasisSpec& s) {
    if (!(std::abs(w) > 1.0 / s.R)) throw DomainError("exterior pole expansion needs |w| > 1/R");
    CoeffVector v = CoeffVector::Zero(s.dim());
    const cplx iw = 1.0 / w;
    cplx p = iw;
    for (int k = 0; k <= s.N; ++k) {
        v(s.idx(k)) = -p / s.d(k);
        p *= iw;
    }
    return v;
}

// 1/(z - x) - 1/(z - 1/conj(x)); the second term vanishes at x = 0.
inline CoeffVector expand_w0(cplx x, const HardyBasisSpec& s) {
    CoeffVector v = expand_simple_pole(x, s);
    const cplx xb = std::conj(x);
    cplx p = xb;
    for (int k = 0; k <= s.N; ++k) {
        v(s.idx(k)) += p / s.d(k);
        p *= xb;
    }
    return v;
}

// Expansion of A * (1/(z-x)) predicted by the pole pushforward: 1/(z-T(x)) - 1/(z-T(inf)).
inline CoeffVector simple_pole_image(const AnalyticMap& t, cplx x, const HardyBasisSpec& s) {
    CoeffVector v = expand_simple_pole(t.eval(x), s);
    const ExtendedPoint inf = at_infinity(t);
    if (!inf.infinite) v -= expand_exterior_pole(inf.value, s);
    return v;
}

struct InversionResult {
    CoeffVector v;
    double dropped_norm = 0.0;  // norm of modes reflected outside [-N, N]
};

// a_k z^k -> conj(a_k) z^{-k-2}.
inline InversionResult apply_inversion(const CoeffVector& v, const HardyBasisSpec& s) {
    InversionResult r;
    r.v = CoeffVector::Zero(s.dim());
    double dropped = 0.0;
    for (int k = -s.N; k <= s.N; ++k) {
        const int t = -k - 2;
        const cplx c = v(s.idx(k));
        if (s.in_window(t))
            r.v(s.idx(t)) = std::conj(c) * (s.d(k) / s.d(t));
        else
            dropped += std::norm(c);
    }
    r.dropped_norm = std::sqrt(dropped);
    return r;
}

enum class NoiseKind { none, gaussian, uniform };

inline std::string to_string(NoiseKind k) {
    switch (k) {
        case NoiseKind::gaussian: return "gaussian";
        case NoiseKind::uniform: return "uniform";
        default: return "none";
    }
}

// sin(pi x) with exact zeros at the integers.
inline double sin_pi(double x) {
    double r = std::fmod(x, 2.0);
    if (r == std::floor(r)) return 0.0;
    return std::sin(std::numbers::pi * r);
}

struct NoiseOperator {
    NoiseKind kind = NoiseKind::none;
    double epsilon = 0.0;
    HardyBasisSpec spec;
    std::vector<double> mu;  // multiplier for monomial power k at index k + N (label n = k + 1)

    // Multiplier for the label n, i.e. the monomial z^{n-1}.
    static double multiplier(NoiseKind kind, double eps, int n) {
        switch (kind) {
            case NoiseKind::gaussian:
                return std::exp(-2.0 * std::numbers::pi * std::numbers::pi * double(n) * double(n) * eps * eps);
            case NoiseKind::uniform: {
                if (n == 0) return 1.0;
                const double a = 2.0 * double(n) * eps;
                return sin_pi(a) / (std::numbers::pi * a);
            }
            default: return 1.0;
        }
    }
};

inline NoiseOperator noise_diagonal(NoiseKind kind, double eps, const HardyBasisSpec& s) {
    if (kind != NoiseKind::none && !(eps > 0.0)) throw DomainError("noise_diagonal: epsilon must be > 0");
    NoiseOperator op;
    op.kind = kind;
    op.epsilon = eps;
    op.spec = s;
    op.mu.resize(std::size_t(s.dim()));
    for (int k = -s.N; k <= s.N; ++k) op.mu[std::size_t(s.idx(k))] = NoiseOperator::multiplier(kind, eps, k + 1);
    return op;
}

inline TransferMatrix compose_noise(const TransferMatrix& A, const NoiseOperator& noise) {
    TransferMatrix out = A;
    if (noise.kind == NoiseKind::none) return out;
    if (noise.spec.N != A.spec.N || noise.spec.R != A.spec.R) throw DomainError("compose_noise: basis mismatch");
    for (int k = -A.spec.N; k <= A.spec.N; ++k) out.A.row(A.spec.idx(k)) *= noise.mu[std::size_t(A.spec.idx(k))];
    out.provenance = to_string(noise.kind) + "(" + std::to_string(noise.epsilon) + ") . " + A.provenance;
    return out;
}

// Spectral norm of the difference, measured on the truncation.
inline double operator_distance(const CMatrix& A, const CMatrix& B) {
    if (A.rows() != B.rows() || A.cols() != B.cols()) throw DomainError("operator_distance: shape mismatch");
    Eigen::JacobiSVD<CMatrix> svd(A - B);
    return svd.singularValues().size() ? svd.singularValues()(0) : 0.0;
}

// Row k = -1 of an assembled matrix in unnormalized monomial terms, minus the indicator.
inline double mass_row_error(const TransferMatrix& t) {
    const auto& s = t.spec;
    double e = 0.0;
    for (int m = -s.N; m <= s.N; ++m) {
        const cplx raw = t.A(s.idx(-1), s.idx(m)) * (s.d(-1) / s.d(m));
        e = std::max(e, std::abs(raw - (m == -1 ? cplx(1.0, 0.0) : cplx(0.0, 0.0))));
    }
    return e;
}

inline void write_binary(const TransferMatrix& t, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    auto put = [&](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        if constexpr (std::endian::native == std::endian::little) {
            f.write(reinterpret_cast<const char*>(b), std::streamsize(n));
        } else {
            for (std::size_t i = n; i-- > 0;) f.put(char(b[i]));
        }
    };
    const std::int32_t N = t.spec.N;
    put(&N, 4);
    put(&t.spec.R, 8);
    for (int i = 0; i < t.A.rows(); ++i)
        for (int j = 0; j < t.A.cols(); ++j) {
            const double re = t.A(i, j).real(), im = t.A(i, j).imag();
            put(&re, 8);
            put(&im, 8);
        }
}

inline TransferMatrix read_binary(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    auto get = [&](void* p, std::size_t n) {
        auto* b = static_cast<unsigned char*>(p);
        f.read(reinterpret_cast<char*>(b), std::streamsize(n));
        if constexpr (std::endian::native != std::endian::little) std::reverse(b, b + n);
    };
    std::int32_t N = 0;
    double R = 0.0;
    get(&N, 4);
    get(&R, 8);
    TransferMatrix t;
    t.spec = HardyBasisSpec(R, N);
    t.A.resize(2 * N + 1, 2 * N + 1);
    for (int i = 0; i < t.A.rows(); ++i)
        for (int j = 0; j < t.A.cols(); ++j) {
            double re = 0.0, im = 0.0;
            get(&re, 8);
            get(&im, 8);
            t.A(i, j) = cplx(re, im);
        }
    if (!f) throw std::runtime_error("truncated matrix file " + path);
    return t;
}

inline void write_csv(const TransferMatrix& t, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    f << "out_mode,in_mode,re,im\r\n";
    char buf[128];
    for (int n = -t.spec.N; n <= t.spec.N; ++n)
        for (int m = -t.spec.N; m <= t.spec.N; ++m) {
            const cplx v = t.A(t.spec.idx(n), t.spec.idx(m));
            std::snprintf(buf, sizeof buf, "%d,%d,%.17g,%.17g\r\n", n, m, v.real(), v.imag());
            f << buf;
        }
}

// Matrices along an orbit: one per symbol for plain families, per position for derived ones.
class TransferCocycle {
public:
    TransferCocycle(CocycleFamily fam, SymbolProcess proc, HardyBasisSpec spec,
                    NoiseOperator noise = NoiseOperator{})
        : fam_(std::move(fam)), proc_(std::move(proc)), spec_(spec), noise_(std::move(noise)) {
        if (!fam_.is_derived()) {
            for (const auto& t : fam_.maps) per_symbol_.push_back(build(t));
        }
    }

    const CMatrix& at(std::int64_t i) {
        if (!fam_.is_derived()) return per_symbol_[std::size_t(proc_.symbol_at(i))].A;
        std::lock_guard<std::mutex> lk(mu_);
        auto it = per_position_.find(i);
        if (it == per_position_.end()) {
            if (per_position_.size() > 4096) per_position_.erase(per_position_.begin());
            it = per_position_.emplace(i, build(map_at(fam_, proc_, i))).first;
        }
        return it->second.A;
    }

    std::function<const CMatrix&(std::int64_t)> source() {
        return [this](std::int64_t i) -> const CMatrix& { return at(i); };
    }

    const std::vector<TransferMatrix>& symbol_matrices() const { return per_symbol_; }
    const HardyBasisSpec& spec() const { return spec_; }
    const SymbolProcess& process() const { return proc_; }

private:
    TransferMatrix build(const AnalyticMap& t) const {
        TransferMatrix m = assemble_transfer(t, spec_);
        if (noise_.kind != NoiseKind::none) m = compose_noise(m, noise_);
        return m;
    }

    CocycleFamily fam_;
    SymbolProcess proc_;
    HardyBasisSpec spec_;
    NoiseOperator noise_;
    std::vector<TransferMatrix> per_symbol_;
    std::mutex mu_;
    std::map<std::int64_t, TransferMatrix> per_position_;
};

}  // namespace bcocycle
