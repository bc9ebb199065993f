#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "cocycle.hpp"
#include "errors.hpp"
#include "hardy.hpp"

namespace bcocycle {

using MatrixSource = std::function<const CMatrix&(std::int64_t)>;

inline constexpr double kCollapseThreshold = 1e-300;

struct QRState {
    CMatrix frame;
    std::vector<double> accumulated_logs;
    std::int64_t steps = 0;
    std::vector<bool> collapsed;
};

struct LyapunovReport {
    std::vector<LogValue> exponents;     // sorted descending
    std::vector<double> stderr_;          // batch-means standard error per exponent
    std::vector<std::int64_t> collapsed_at;  // step of collapse, -1 if never
    std::int64_t n_steps = 0;
    std::int64_t burn_in = 0;
    int N = 0;
    std::uint64_t seed = 0;
    // (n, exponents sorted descending) at requested step counts
    std::vector<std::pair<std::int64_t, std::vector<LogValue>>> checkpoints;

    double error_bar(std::size_t j) const { return 2.0 * stderr_[j]; }
};

inline void to_json(nlohmann::json& j, const LyapunovReport& r) {
    j = {{"exponents", r.exponents}, {"stderr", r.stderr_}, {"collapsed_at", r.collapsed_at},
         {"n_steps", r.n_steps},     {"burn_in", r.burn_in}, {"N", r.N},
         {"seed", r.seed}};
}

struct QROptions {
    int reorth_every = 1;
    std::int64_t burn_in = 0;
    std::uint64_t frame_seed = 1;
    int segments = 20;
    std::vector<std::int64_t> checkpoints;
    std::optional<CMatrix> initial_frame;
    int N = 0;  // recorded in the report only
};

inline CMatrix orthonormal_columns(const CMatrix& Y) {
    Eigen::HouseholderQR<CMatrix> qr(Y);
    return qr.householderQ() * CMatrix::Identity(Y.rows(), Y.cols());
}

inline CMatrix random_frame(int dim, int k, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    auto u = [&] { return double(gen() >> 11) * 0x1.0p-53 * 2.0 - 1.0; };
    CMatrix Y(dim, k);
    for (int j = 0; j < k; ++j)
        for (int i = 0; i < dim; ++i) Y(i, j) = cplx(u(), u());
    return orthonormal_columns(Y);
}

namespace detail {

// QR of Y with deflation of columns whose |R_jj| falls below the collapse threshold.
// Returns log|R_jj| for surviving columns (in order) and the removed positions.
struct DeflatedQR {
    CMatrix Q;
    std::vector<double> logs;
    std::vector<int> removed;  // indices into the input columns
};

inline DeflatedQR deflated_qr(CMatrix Y) {
    DeflatedQR out;
    std::vector<int> alive(std::size_t(Y.cols()));
    std::iota(alive.begin(), alive.end(), 0);
    while (true) {
        if (Y.cols() == 0) {
            out.Q = CMatrix(Y.rows(), 0);
            return out;
        }
        Eigen::HouseholderQR<CMatrix> qr(Y);
        const CMatrix& R = qr.matrixQR();
        int bad = -1;
        for (int j = 0; j < Y.cols(); ++j)
            if (!(std::abs(R(j, j)) >= kCollapseThreshold)) {
                bad = j;
                break;
            }
        if (bad < 0) {
            out.Q = qr.householderQ() * CMatrix::Identity(Y.rows(), Y.cols());
            for (int j = 0; j < Y.cols(); ++j) out.logs.push_back(std::log(std::abs(R(j, j))));
            return out;
        }
        out.removed.push_back(alive[std::size_t(bad)]);
        alive.erase(alive.begin() + bad);
        CMatrix Z(Y.rows(), Y.cols() - 1);
        for (int j = 0, c = 0; j < Y.cols(); ++j)
            if (j != bad) Z.col(c++) = Y.col(j);
        Y = std::move(Z);
    }
}

inline std::vector<LogValue> sorted_rates(const std::vector<double>& sums, const std::vector<bool>& dead,
                                          double n, std::vector<std::size_t>* order = nullptr) {
    std::vector<std::size_t> idx(sums.size());
    std::iota(idx.begin(), idx.end(), 0);
    auto key = [&](std::size_t j) { return dead[j] ? -std::numeric_limits<double>::infinity() : sums[j] / n; };
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return key(a) > key(b); });
    std::vector<LogValue> out;
    for (auto j : idx) out.push_back(dead[j] ? LogValue::minus_infinity() : LogValue{sums[j] / n, false});
    if (order) *order = idx;
    return out;
}

}  // namespace detail

// Discrete QR method: push a k-frame through the matrices and accumulate log|R_jj|.
inline LyapunovReport qr_exponents(const MatrixSource& source, std::int64_t start, std::int64_t n_steps, int k,
                                   const QROptions& opt = {}) {
    if (n_steps < 1) throw DomainError("qr_exponents: n_steps must be >= 1");
    const CMatrix& A0 = source(start);
    const int D = int(A0.rows());
    if (k < 1 || k > D) throw DomainError("qr_exponents: k must lie in [1, 2N+1]");
    const int every = std::max(1, opt.reorth_every);

    CMatrix Q = opt.initial_frame ? orthonormal_columns(*opt.initial_frame) : random_frame(D, k, opt.frame_seed);
    std::vector<int> col_of(static_cast<std::size_t>(k));  // frame column -> exponent slot
    std::iota(col_of.begin(), col_of.end(), 0);
    std::vector<double> sums(std::size_t(k), 0.0);
    std::vector<bool> dead(std::size_t(k), false);
    std::vector<std::int64_t> dead_at(std::size_t(k), -1);

    const int S = std::max(1, std::min<int>(opt.segments, int(n_steps)));
    std::vector<std::vector<double>> seg(std::size_t(S), std::vector<double>(std::size_t(k), 0.0));
    std::vector<std::int64_t> seg_len(std::size_t(S), 0);
    std::vector<std::int64_t> cps = opt.checkpoints;
    std::sort(cps.begin(), cps.end());
    std::size_t cp = 0;

    LyapunovReport rep;
    std::int64_t i = start;
    std::int64_t pending = 0;
    const std::int64_t total = opt.burn_in + n_steps;
    for (std::int64_t step = 0; step < total; ++step, ++i) {
        if (Q.cols() == 0) break;
        Q = source(i) * Q;
        ++pending;
        if (pending < every && step + 1 != total && step + 1 != opt.burn_in) continue;
        pending = 0;
        detail::DeflatedQR d = detail::deflated_qr(Q);
        const bool measuring = step >= opt.burn_in;
        const std::int64_t mstep = step - opt.burn_in;
        std::sort(d.removed.begin(), d.removed.end(), std::greater<>());
        for (int rem : d.removed) {
            const int slot = col_of[std::size_t(rem)];
            dead[std::size_t(slot)] = true;
            dead_at[std::size_t(slot)] = step;
            col_of.erase(col_of.begin() + rem);
        }
        if (measuring) {
            const std::size_t s = std::size_t(std::min<std::int64_t>(S - 1, mstep * S / n_steps));
            for (std::size_t c = 0; c < d.logs.size(); ++c) {
                sums[std::size_t(col_of[c])] += d.logs[c];
                seg[s][std::size_t(col_of[c])] += d.logs[c];
            }
        }
        Q = d.Q;
        if (measuring) {
            const std::size_t s = std::size_t(std::min<std::int64_t>(S - 1, mstep * S / n_steps));
            seg_len[s] += 1;  // counts re-orthonormalization events; exact when every == 1
            while (cp < cps.size() && cps[cp] == mstep + 1)
                rep.checkpoints.emplace_back(cps[cp++], detail::sorted_rates(sums, dead, double(mstep + 1)));
        }
    }
    std::vector<std::size_t> order;
    rep.exponents = detail::sorted_rates(sums, dead, double(n_steps), &order);
    rep.n_steps = n_steps;
    rep.burn_in = opt.burn_in;
    rep.N = opt.N;
    rep.seed = opt.frame_seed;
    for (auto j : order) {
        rep.collapsed_at.push_back(dead_at[j]);
        if (dead[j]) {
            rep.stderr_.push_back(0.0);
            continue;
        }
        // Batch means over segments (per-step rates).
        std::vector<double> means;
        for (int s = 0; s < S; ++s)
            if (seg_len[std::size_t(s)] > 0) means.push_back(seg[std::size_t(s)][j] / double(seg_len[std::size_t(s)] * every));
        double m = std::accumulate(means.begin(), means.end(), 0.0) / double(std::max<std::size_t>(1, means.size()));
        double v = 0.0;
        for (double x : means) v += (x - m) * (x - m);
        const double ns = double(means.size());
        rep.stderr_.push_back(ns > 1 ? std::sqrt(v / (ns - 1.0) / ns) : 0.0);
    }
    return rep;
}

// Sum of the top-l exponents from the frame-volume growth.
inline LogValue exponent_sums_sv(const MatrixSource& source, std::int64_t start, std::int64_t n_steps, int l,
                                 const QROptions& opt = {}) {
    LyapunovReport r = qr_exponents(source, start, n_steps, l, opt);
    double s = 0.0;
    for (const auto& e : r.exponents) {
        if (e.neg_inf) return LogValue::minus_infinity();
        s += e.value;
    }
    return {s, false};
}

// (1/n) log of singular values of the explicit n-step product (scaled each step).
inline std::vector<double> product_log_singular_values(const MatrixSource& source, std::int64_t start,
                                                       std::int64_t n_steps) {
    const CMatrix& A0 = source(start);
    CMatrix P = CMatrix::Identity(A0.rows(), A0.cols());
    double log_scale = 0.0;
    for (std::int64_t j = 0; j < n_steps; ++j) {
        P = source(start + j) * P;
        const double nrm = P.norm();
        if (nrm > 0.0) {
            P /= nrm;
            log_scale += std::log(nrm);
        }
    }
    Eigen::JacobiSVD<CMatrix> svd(P);
    std::vector<double> out;
    for (int j = 0; j < svd.singularValues().size(); ++j)
        out.push_back((std::log(svd.singularValues()(j)) + log_scale) / double(n_steps));
    return out;
}

// Per-column log|R_jj|/n of the QR factorization of (product * Q0).
inline std::vector<double> product_frame_logs(const MatrixSource& source, std::int64_t start, std::int64_t n_steps,
                                              const CMatrix& Q0) {
    const CMatrix& A0 = source(start);
    CMatrix P = CMatrix::Identity(A0.rows(), A0.cols());
    double log_scale = 0.0;
    for (std::int64_t j = 0; j < n_steps; ++j) {
        P = source(start + j) * P;
        const double nrm = P.norm();
        P /= nrm;
        log_scale += std::log(nrm);
    }
    Eigen::HouseholderQR<CMatrix> qr(P * Q0);
    std::vector<double> out;
    for (int j = 0; j < Q0.cols(); ++j)
        out.push_back((std::log(std::abs(qr.matrixQR()(j, j))) + log_scale) / double(n_steps));
    return out;
}

struct SubspaceEstimate {
    CMatrix basis;
    std::int64_t position = 0;
    std::string label;
    int rank() const { return int(basis.cols()); }
};

inline SubspaceEstimate propagate_subspace(const MatrixSource& source, const SubspaceEstimate& V0,
                                           std::int64_t n_steps) {
    SubspaceEstimate v = V0;
    v.basis = orthonormal_columns(V0.basis);
    for (std::int64_t j = 0; j < n_steps; ++j) {
        detail::DeflatedQR d = detail::deflated_qr(source(v.position) * v.basis);
        v.basis = d.Q;
        v.position += 1;
        if (v.basis.cols() == 0) break;
    }
    v.label = V0.label + "+" + std::to_string(n_steps);
    return v;
}

// Span of inner poles (order <= N_poles), W0 and outer poles at x; dimension 2 N_poles + 1.
inline SubspaceEstimate analytic_fast_basis(cplx x, int N_poles, const HardyBasisSpec& s) {
    CMatrix B(s.dim(), 2 * N_poles + 1);
    int c = 0;
    for (int j = N_poles; j >= 1; --j) B.col(c++) = expand_inner_pole(x, j, s);
    B.col(c++) = expand_w0(x, s);
    for (int j = 1; j <= N_poles; ++j) B.col(c++) = expand_outer_pole(x, j, s);
    SubspaceEstimate e;
    e.basis = orthonormal_columns(B);
    e.label = "analytic(" + std::to_string(N_poles) + ")";
    return e;
}

// Principal angles, ascending; sine-based for small angles.
inline std::vector<double> principal_angles(const CMatrix& U0, const CMatrix& V0) {
    if (U0.rows() != V0.rows()) throw DomainError("principal_angles: ambient dimension mismatch");
    CMatrix U = orthonormal_columns(U0), V = orthonormal_columns(V0);
    if (V.cols() > U.cols()) std::swap(U, V);
    Eigen::JacobiSVD<CMatrix> cs(U.adjoint() * V);
    CMatrix P = V - U * (U.adjoint() * V);
    Eigen::JacobiSVD<CMatrix> sn(P);
    const int k = int(V.cols());
    std::vector<double> cosv, sinv;
    for (int j = 0; j < k; ++j) cosv.push_back(std::clamp(cs.singularValues()(j), 0.0, 1.0));
    for (int j = 0; j < k; ++j) sinv.push_back(std::clamp(sn.singularValues()(j), 0.0, 1.0));
    std::sort(cosv.begin(), cosv.end(), std::greater<>());
    std::sort(sinv.begin(), sinv.end());
    std::vector<double> out;
    for (int j = 0; j < k; ++j) {
        const double a = std::acos(cosv[std::size_t(j)]);
        out.push_back(a < std::numbers::pi / 4 ? std::asin(sinv[std::size_t(j)]) : a);
    }
    std::sort(out.begin(), out.end());
    return out;
}

// Norm of the projector onto span(E) along span(F), from solving [E F] c = v.
inline double projection_norm(const CMatrix& E, const CMatrix& F) {
    if (E.rows() != F.rows() || E.cols() + F.cols() != E.rows())
        throw DomainError("projection_norm: dim E + dim F must equal the ambient dimension");
    CMatrix M(E.rows(), E.rows());
    M << E, F;
    Eigen::JacobiSVD<CMatrix> svd(M);
    const auto& sv = svd.singularValues();
    const double cond = sv(sv.size() - 1) > 0.0 ? sv(0) / sv(sv.size() - 1) : std::numeric_limits<double>::infinity();
    if (cond > 1e12) throw TransversalityError("projection_norm: [E F] numerically singular");
    CMatrix Minv = M.fullPivLu().inverse();
    CMatrix P = E * Minv.topRows(E.cols());
    Eigen::JacobiSVD<CMatrix> ps(P);
    return ps.singularValues()(0);
}

// Top-k space of the adjoint product over [position, position + horizon), by backward QR.
inline CMatrix adjoint_fast_space(const MatrixSource& source, std::int64_t position, std::int64_t horizon, int k,
                                  std::uint64_t seed = 7) {
    const int D = int(source(position).rows());
    CMatrix Y = random_frame(D, k, seed);
    for (std::int64_t j = position + horizon - 1; j >= position; --j) Y = orthonormal_columns(source(j).adjoint() * Y);
    return Y;
}

struct DualProjection {
    double norm = 0.0;       // 1 / sigma_min
    double sigma_min = 0.0;  // smallest cosine between E and the annihilator space G
};

// ||Pi_{E||G^perp}|| = 1 / sigma_min(G^* E) for orthonormal E, G of equal dimension.
inline DualProjection projection_norm_dual(const CMatrix& E, const CMatrix& G) {
    if (E.cols() != G.cols()) throw DomainError("projection_norm_dual: dimension mismatch");
    Eigen::JacobiSVD<CMatrix> svd(orthonormal_columns(G).adjoint() * orthonormal_columns(E));
    DualProjection d;
    d.sigma_min = svd.singularValues()(svd.singularValues().size() - 1);
    d.norm = d.sigma_min > 0.0 ? 1.0 / d.sigma_min : std::numeric_limits<double>::infinity();
    return d;
}

// Monomial modes annihilated by A (columns of negligible norm).
inline std::vector<int> monomial_kernel(const CMatrix& A, double rel = 1e-13) {
    const double scale = A.cwiseAbs().maxCoeff();
    std::vector<int> k;
    for (int j = 0; j < A.cols(); ++j)
        if (A.col(j).norm() <= rel * scale) k.push_back(j);
    return k;
}

// Lower bound max_h ||h|| / dist(h, span{e_j : j in K}) for the projection onto a
// space containing the h's along a space containing the monomials K.
inline double kernel_projection_bound(const std::vector<CoeffVector>& hs, const std::vector<int>& K) {
    double best = 1.0;
    for (const auto& h : hs) {
        double total = 0.0, off = 0.0;
        std::vector<bool> in_k(std::size_t(h.size()), false);
        for (int j : K) in_k[std::size_t(j)] = true;
        for (int j = 0; j < h.size(); ++j) {
            const double a = std::norm(h(j));
            total += a;
            if (!in_k[std::size_t(j)]) off += a;
        }
        if (off == 0.0) return std::numeric_limits<double>::infinity();
        best = std::max(best, std::sqrt(total / off));
    }
    return best;
}

struct ProjectionSample {
    std::int64_t position = 0;
    int run_length = 0;
    double adjoint_norm = 0.0;  // 1 / sigma_min(G^* E), G from the backward adjoint QR
    double kernel_bound = 0.0;  // lower bound through ker A_position inside the slow space
    double value = 0.0;         // max of the two
};

// ||Pi_{E2 || F2}|| at position i, E2 = span{inner pole, W0, outer pole} at x_i.
inline ProjectionSample projection_norm_at(const MatrixSource& source, const HardyBasisSpec& spec, cplx x,
                                           std::int64_t i, std::int64_t horizon = 60, std::uint64_t seed = 7) {
    ProjectionSample ps;
    ps.position = i;
    const SubspaceEstimate E = analytic_fast_basis(x, 1, spec);
    const CMatrix G = adjoint_fast_space(source, i, horizon, 3, seed);
    ps.adjoint_norm = projection_norm_dual(E.basis, G).norm;
    const std::vector<int> K = monomial_kernel(source(i));
    ps.kernel_bound = K.empty() ? 1.0
                                : kernel_projection_bound({expand_inner_pole(x, 1, spec), expand_w0(x, spec),
                                                           expand_outer_pole(x, 1, spec)},
                                                          K);
    ps.value = std::max(ps.adjoint_norm, ps.kernel_bound);
    return ps;
}

}  // namespace bcocycle
