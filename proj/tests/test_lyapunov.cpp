#include <algorithm>
#include <cmath>
#include <random>

#include "catch_amalgamated.hpp"

#include "bcocycle/lyapunov.hpp"
#include "test_support.hpp"

using namespace bcocycle;
using Catch::Matchers::WithinAbs;

namespace {

MatrixSource constant_source(const CMatrix& A) {
    auto keep = std::make_shared<CMatrix>(A);
    return [keep](std::int64_t) -> const CMatrix& { return *keep; };
}

// log|eigenvalues| of A, descending.
std::vector<double> eigen_log_moduli(const CMatrix& A) {
    Eigen::ComplexEigenSolver<CMatrix> es(A, false);
    std::vector<double> out;
    for (int i = 0; i < es.eigenvalues().size(); ++i) out.push_back(std::log(std::abs(es.eigenvalues()(i))));
    std::sort(out.begin(), out.end(), std::greater<>());
    return out;
}

double restricted_norm(CMatrix P, const HardyBasisSpec& s) {
    P.row(s.idx(-1)).setZero();
    P.col(s.idx(-1)).setZero();
    return Eigen::JacobiSVD<CMatrix>(P).singularValues()(0);
}

}  // namespace

TEST_CASE("diagonal cocycle", "[lyapunov]") {
    CMatrix D = CMatrix::Zero(3, 3);
    D(0, 0) = 0.5;
    D(1, 1) = 2.0;
    D(2, 2) = 1.0;
    QROptions o;
    o.burn_in = 60;
    const LyapunovReport r = qr_exponents(constant_source(D), 0, 200, 3, o);
    REQUIRE(r.exponents.size() == 3);
    CHECK_THAT(r.exponents[0].value, WithinAbs(std::log(2.0), 1e-10));
    CHECK_THAT(r.exponents[1].value, WithinAbs(0.0, 1e-10));
    CHECK_THAT(r.exponents[2].value, WithinAbs(-std::log(2.0), 1e-10));
    for (double se : r.stderr_) CHECK(se < 1e-10);
    CHECK_THAT(exponent_sums_sv(constant_source(D), 0, 200, 2, o).value, WithinAbs(std::log(2.0), 1e-10));
    const auto sv = product_log_singular_values(constant_source(D), 0, 50);
    CHECK_THAT(sv[0], WithinAbs(std::log(2.0), 1e-12));
    CHECK_THAT(sv[2], WithinAbs(-std::log(2.0), 1e-12));
}

TEST_CASE("autonomous exponents match the dense eigensolver", "[lyapunov]") {
    const HardyBasisSpec s(0.5, 40);
    const TransferMatrix A = assemble_transfer(tsupport::B(0.5), s);
    const std::vector<double> eig = eigen_log_moduli(A.A);
    QROptions o;
    o.burn_in = 200;
    const LyapunovReport r = qr_exponents(constant_source(A.A), 0, 2000, 5, o);
    const std::vector<double> want{0.0, std::log(0.25), std::log(0.25), std::log(0.0625), std::log(0.0625)};
    for (std::size_t j = 0; j < 5; ++j) {
        CHECK_THAT(r.exponents[j].value, WithinAbs(eig[j], 1e-6));
        CHECK_THAT(r.exponents[j].value, WithinAbs(want[j], 1e-6));
    }
    // Exponents below the top come in equal pairs.
    CHECK_THAT(r.exponents[1].value - r.exponents[2].value, WithinAbs(0.0, 1e-6));
    CHECK_THAT(r.exponents[3].value - r.exponents[4].value, WithinAbs(0.0, 1e-6));
}

TEST_CASE("truncation stability", "[lyapunov]") {
    std::vector<std::vector<LogValue>> ex;
    for (int N : {30, 40}) {
        const HardyBasisSpec s(0.5, N);
        const TransferMatrix A = assemble_transfer(tsupport::B(0.5), s);
        QROptions o;
        o.burn_in = 200;
        ex.push_back(qr_exponents(constant_source(A.A), 0, 1000, 5, o).exponents);
    }
    for (std::size_t j = 0; j < 5; ++j) CHECK(std::abs(ex[0][j].value - ex[1][j].value) < 1e-6);
}

// Per-step QR of the frame in long double, an independent reference for qr_exponents.
static std::vector<double> long_double_rates(const MatrixSource& src, std::int64_t n, const CMatrix& Q0) {
    using LC = std::complex<long double>;
    using LM = Eigen::Matrix<LC, Eigen::Dynamic, Eigen::Dynamic>;
    const int k = int(Q0.cols());
    LM P = Q0.cast<LC>();
    std::vector<long double> logs(std::size_t(k), 0.0L);
    for (std::int64_t j = 0; j < n; ++j) {
        P = src(j).cast<LC>() * P;
        Eigen::HouseholderQR<LM> q(P);
        for (int c = 0; c < k; ++c) logs[std::size_t(c)] += std::log(std::abs(q.matrixQR()(c, c)));
        P = q.householderQ() * LM::Identity(P.rows(), k);
    }
    std::vector<double> out;
    for (auto l : logs) out.push_back(double(l / (long double)n));
    std::sort(out.begin(), out.end(), std::greater<>());
    return out;
}

TEST_CASE("QR exponents agree with independent references", "[lyapunov][property]") {
    const CocycleFamily fam = tsupport::switching();
    const SymbolProcess p(BernoulliLaw{{0.5, 0.5}}, 17);
    const HardyBasisSpec s(admissible_radius(fam.maps), 16);
    TransferCocycle tc(fam, p, s);
    const CMatrix Q0 = random_frame(s.dim(), 3, 5);
    for (std::int64_t n : {1, 3, 5, 12, 25}) {
        QROptions o;
        o.initial_frame = Q0;
        o.segments = 1;
        const LyapunovReport r = qr_exponents(tc.source(), 0, n, 3, o);
        const std::vector<double> ref = long_double_rates(tc.source(), n, Q0);
        for (std::size_t j = 0; j < 3; ++j) CHECK_THAT(r.exponents[j].value, WithinAbs(ref[j], 1e-8));
        // The explicit product keeps the lower columns only while their growth
        // stays within double precision of the top one.
        if (n <= 5) {
            std::vector<double> direct = product_frame_logs(tc.source(), 0, n, Q0);
            std::sort(direct.begin(), direct.end(), std::greater<>());
            for (std::size_t j = 0; j < 3; ++j) CHECK_THAT(r.exponents[j].value, WithinAbs(direct[j], 1e-8));
        }
    }
}

TEST_CASE("top exponent of a random cocycle is zero", "[lyapunov]") {
    const CocycleFamily fam = tsupport::appendix();
    const SymbolProcess p(BernoulliLaw{{0.5, 0.5}}, 2);
    const HardyBasisSpec s(admissible_radius(fam.maps), 30);
    TransferCocycle tc(fam, p, s);
    QROptions o;
    o.burn_in = 50;
    const LyapunovReport r = qr_exponents(tc.source(), 0, 2000, 3, o);
    CHECK(std::abs(r.exponents[0].value) < 1e-2);
    CHECK(std::abs(r.exponents[1].value - std::log(0.3)) < 0.1);
    CHECK(std::abs(r.exponents[1].value - r.exponents[2].value) < 0.05);
}

TEST_CASE("uniform noise collapses the cocycle", "[lyapunov]") {
    const HardyBasisSpec s(0.5, 40);
    const TransferMatrix L0 = assemble_transfer(tsupport::T0(), s);
    for (auto [eps, k] : std::vector<std::pair<double, int>>{{0.125, 3}, {0.1875, 4}}) {
        const TransferMatrix U = compose_noise(L0, noise_diagonal(NoiseKind::uniform, eps, s));
        CMatrix P = CMatrix::Identity(s.dim(), s.dim());
        for (int i = 0; i < k; ++i) P = U.A * P;
        CHECK(restricted_norm(P, s) < 1e-12);
        CHECK(restricted_norm(U.A, s) > 0.1);
        // Rounding re-seeds the annihilated directions each step, so the
        // truncated second exponent is very negative rather than exactly -inf.
        const LyapunovReport r = qr_exponents(constant_source(U.A), 0, 50, 2);
        CHECK_FALSE(r.exponents[0].neg_inf);
        CHECK(r.exponents[1].as_double() < -10.0);
    }
    // An exactly nilpotent cocycle deflates to the -inf sentinel.
    CMatrix S = CMatrix::Zero(4, 4);
    S(0, 0) = 1.0;
    S(2, 1) = 1.0;
    S(3, 2) = 1.0;
    QROptions o;
    o.burn_in = 5;
    const LyapunovReport z = qr_exponents(constant_source(S), 0, 20, 2, o);
    CHECK_THAT(z.exponents[0].value, WithinAbs(0.0, 1e-12));
    CHECK(z.exponents[1].neg_inf);
    CHECK(*std::max_element(z.collapsed_at.begin(), z.collapsed_at.end()) >= 0);
    nlohmann::json j = z;
    CHECK(j["exponents"][1] == "-inf");
}

TEST_CASE("propagated subspaces converge to the fast space", "[lyapunov]") {
    const HardyBasisSpec s(0.5, 40);
    const TransferMatrix A = assemble_transfer(tsupport::B(0.5), s);
    SubspaceEstimate V0;
    V0.basis = random_frame(s.dim(), 3, 9);
    V0.label = "random";
    const SubspaceEstimate V = propagate_subspace(constant_source(A.A), V0, 60);
    CHECK(V.position == 60);
    CHECK(V.rank() == 3);
    CHECK(V.label == "random+60");
    const SubspaceEstimate E = analytic_fast_basis(0.0, 1, s);
    CHECK(E.rank() == 3);
    for (double a : principal_angles(V.basis, E.basis)) CHECK(a < 1e-8);
    // The analytic space is invariant.
    for (double a : principal_angles(A.A * E.basis, E.basis)) CHECK(a < 1e-10);
}

TEST_CASE("analytic fast basis at a nonzero fixed point", "[lyapunov]") {
    const double R = admissible_radius(tsupport::switching().maps);
    const HardyBasisSpec s(R, 40);
    const TransferMatrix A = assemble_transfer(tsupport::T1(), s);
    for (int np : {1, 2}) {
        const SubspaceEstimate E = analytic_fast_basis(tsupport::a_fix, np, s);
        CHECK(E.rank() == 2 * np + 1);
        CHECK((E.basis.adjoint() * E.basis - CMatrix::Identity(E.rank(), E.rank())).norm() < 1e-12);
        for (double a : principal_angles(A.A * E.basis, E.basis)) CHECK(a < 1e-8);
    }
}

TEST_CASE("principal angles", "[lyapunov]") {
    for (double th : {1e-10, 1e-4, 0.3, 1.2, std::numbers::pi / 2}) {
        CMatrix U = CMatrix::Zero(3, 1), V = CMatrix::Zero(3, 1);
        U(0, 0) = 1.0;
        V(0, 0) = std::cos(th);
        V(1, 0) = std::sin(th);
        const auto a = principal_angles(U, V);
        REQUIRE(a.size() == 1);
        CHECK(std::abs(a[0] - th) < 1e-15 + 1e-12 * th);
    }
    const CMatrix I = CMatrix::Identity(4, 4);
    const auto z = principal_angles(I.leftCols(2), I.leftCols(3));
    CHECK(z.size() == 2);
    for (double a : z) CHECK(a < 1e-15);
    CHECK_THROWS_AS(principal_angles(I, CMatrix::Identity(3, 3)), DomainError);
}

TEST_CASE("oblique projection norms", "[lyapunov]") {
    CMatrix E(2, 1), F(2, 1);
    E << 1.0, 0.0;
    const double th = std::numbers::pi / 6;
    F << std::cos(th), std::sin(th);
    CHECK_THAT(projection_norm(E, F), WithinAbs(2.0, 1e-12));
    F << 0.0, 1.0;
    CHECK_THAT(projection_norm(E, F), WithinAbs(1.0, 1e-12));
    F << 1.0, 0.0;
    CHECK_THROWS_AS(projection_norm(E, F), TransversalityError);
    CHECK_THROWS_AS(projection_norm(E, CMatrix::Identity(2, 2)), DomainError);
    // Dual form: G spans the annihilator complement, here F^perp.
    CMatrix G(2, 1);
    G << -std::sin(th), std::cos(th);
    F << std::cos(th), std::sin(th);
    CHECK_THAT(projection_norm_dual(E, G).norm, WithinAbs(projection_norm(E, F), 1e-12));
    CHECK_THAT(projection_norm_dual(E, E).norm, WithinAbs(1.0, 1e-14));
}

TEST_CASE("kernel certificate", "[lyapunov]") {
    const HardyBasisSpec s(0.5, 10);
    const TransferMatrix A = assemble_transfer(tsupport::T0(), s);
    const std::vector<int> K = monomial_kernel(A.A);
    CHECK(K.size() == 11);
    for (int j : K) CHECK((j - s.N) % 2 == 0);
    CoeffVector h = CoeffVector::Zero(3);
    h(0) = 1.0;
    h(1) = 1.0;
    CHECK_THAT(kernel_projection_bound({h}, {0}), WithinAbs(std::sqrt(2.0), 1e-15));
    CHECK(kernel_projection_bound({h}, {}) == 1.0);
    CHECK(std::isinf(kernel_projection_bound({h}, {0, 1})));
}

TEST_CASE("random frames", "[lyapunov]") {
    const CMatrix a = random_frame(20, 4, 3), b = random_frame(20, 4, 3), c = random_frame(20, 4, 4);
    CHECK(a == b);
    CHECK((a - c).norm() > 0.1);
    CHECK((a.adjoint() * a - CMatrix::Identity(4, 4)).norm() < 1e-13);
}
