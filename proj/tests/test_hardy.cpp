#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "catch_amalgamated.hpp"

#include "bcocycle/hardy.hpp"
#include "test_support.hpp"

using namespace bcocycle;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

// sum_k v_k d_k z^k
cplx evaluate(const CoeffVector& v, const HardyBasisSpec& s, cplx z) {
    cplx acc{0.0, 0.0};
    for (int k = -s.N; k <= s.N; ++k) acc += v(s.idx(k)) * s.d(k) * std::pow(z, k);
    return acc;
}

double binom(int n, int k) {
    // Pascal triangle row by row.
    std::vector<double> row{1.0};
    for (int i = 1; i <= n; ++i) {
        std::vector<double> next(std::size_t(i + 1), 1.0);
        for (int j = 1; j < i; ++j) next[std::size_t(j)] = row[std::size_t(j - 1)] + row[std::size_t(j)];
        row = next;
    }
    return row[std::size_t(k)];
}

CoeffVector random_vector(std::mt19937_64& g, const HardyBasisSpec& s, int kmax) {
    std::normal_distribution<double> n(0.0, 1.0);
    CoeffVector v = CoeffVector::Zero(s.dim());
    for (int k = -kmax; k <= kmax; ++k) v(s.idx(k)) = cplx(n(g), n(g));
    return v;
}

}  // namespace

TEST_CASE("basis weights", "[hardy]") {
    const HardyBasisSpec s(0.5, 40);
    CHECK_THAT(s.d(1), WithinAbs(0.48507125007266595, 1e-16));
    CHECK_THAT(s.d(1) / s.d(0), WithinAbs(0.68599434057003535, 1e-15));
    CHECK_THAT(s.d(0), WithinAbs(std::sqrt(0.5), 1e-16));
    for (int k = 0; k <= 40; ++k) {
        CHECK(s.d(k) == s.d(-k));
        if (k > 0) CHECK(s.d(k) < s.d(k - 1));
    }
    CHECK(s.dim() == 81);
    CHECK(s.M == 640);
    CHECK_THROWS_AS(HardyBasisSpec(1.0, 4), DomainError);
    CHECK_THROWS_AS(HardyBasisSpec(0.5, 0), DomainError);
    CHECK_THROWS_AS(HardyBasisSpec(0.5, 10, 40), DomainError);
}

TEST_CASE("transfer matrix of z^2", "[hardy]") {
    const HardyBasisSpec s(0.5, 40);
    const TransferMatrix t = assemble_transfer(tsupport::T0(), s);
    // z^m -> z^{(m-1)/2} for odd m, 0 for even m.
    for (int m = -s.N; m <= s.N; ++m) {
        for (int n = -s.N; n <= s.N; ++n) {
            const bool hit = (m % 2 != 0) && (2 * n + 1 == m);
            const double want = hit ? s.d(m) / s.d(n) : 0.0;
            CHECK(std::abs(t.A(s.idx(n), s.idx(m)) - want) < 1e-12);
        }
        if (m % 2 == 0) CHECK(t.A.col(s.idx(m)).norm() < 1e-13);
    }
    CHECK_THAT(t.A(s.idx(0), s.idx(1)).real(), WithinAbs(0.6859943405700353, 1e-14));
    CHECK(t.quadrature_points >= s.M);
}

TEST_CASE("assembly requires r_T(R) < R", "[hardy]") {
    CHECK_THAT(mobius(0.9).eval(0.5).real(), WithinAbs(0.96551724137931034, 1e-15));
    CHECK_THROWS_AS(assemble_transfer(mobius(0.9), HardyBasisSpec(0.5, 10)), AssemblyError);
}

TEST_CASE("simple pole pushforward", "[hardy][property]") {
    std::mt19937_64 g(20);
    for (int trial = 0; trial < 20; ++trial) {
        const AnalyticMap t(tsupport::random_expanding(g));
        const double R = admissible_radius({t});
        const double r = r_at_radius(t, R);
        const HardyBasisSpec s(R, 40);
        const TransferMatrix A = assemble_transfer(t, s);
        const cplx x = tsupport::random_disc_point(g, 0.5 * r);
        const CoeffVector lhs = A.A * expand_simple_pole(x, s);
        const CoeffVector rhs = simple_pole_image(t, x, s);
        CHECK((lhs - rhs).norm() < 1e-9 * rhs.norm());
    }
}

TEST_CASE("pole expansions against binomial oracles", "[hardy]") {
    const HardyBasisSpec s(0.5, 40);
    const cplx x(0.12, -0.07);
    for (int j = 1; j <= 4; ++j) {
        const CoeffVector in = expand_inner_pole(x, j, s);
        const CoeffVector out = expand_outer_pole(x, j, s);
        for (int k = j; k < j + 6; ++k) {
            const cplx want = binom(k, j) * std::pow(x, k - j);
            CHECK(std::abs(in(s.idx(-k - 1)) * s.d(-k - 1) - want) < 1e-15);
            const cplx wo = binom(k, j) * std::pow(std::conj(x), k - j);
            CHECK(std::abs(out(s.idx(k - 1)) * s.d(k - 1) - wo) < 1e-15);
        }
        for (int k = -s.N; k <= s.N; ++k) {
            if (k >= -j) CHECK(in(s.idx(k)) == cplx(0.0, 0.0));
            if (k < j - 1) CHECK(out(s.idx(k)) == cplx(0.0, 0.0));
        }
    }
    // Pointwise on the unit circle.
    for (int q = 0; q < 8; ++q) {
        const cplx z = std::polar(1.0, 0.3 + 0.7 * q);
        CHECK(std::abs(evaluate(expand_simple_pole(x, s), s, z) - 1.0 / (z - x)) < 1e-13);
        CHECK(std::abs(evaluate(expand_inner_pole(x, 2, s), s, z) - 1.0 / std::pow(z - x, 3)) < 1e-13);
        CHECK(std::abs(evaluate(expand_outer_pole(x, 2, s), s, z) - z / std::pow(1.0 - std::conj(x) * z, 3)) <
              1e-13);
        const cplx w(3.0, 1.0);
        CHECK(std::abs(evaluate(expand_exterior_pole(w, s), s, z) - 1.0 / (z - w)) < 1e-13);
        CHECK(std::abs(evaluate(expand_w0(x, s), s, z) - (1.0 / (z - x) - 1.0 / (z - 1.0 / std::conj(x)))) < 1e-13);
    }
    CHECK_THROWS_AS(expand_simple_pole(0.6, s), DomainError);
    CHECK_THROWS_AS(expand_exterior_pole(1.5, s), DomainError);
    CHECK_THROWS_AS(expand_inner_pole(x, 0, s), DomainError);
}

TEST_CASE("pole order raising is differentiation in x", "[hardy]") {
    const HardyBasisSpec s(0.5, 40);
    const cplx x(0.1, 0.05);
    const double h = 1e-5;
    for (int j = 0; j < 3; ++j) {
        auto f = [&](cplx y) { return j == 0 ? expand_simple_pole(y, s) : expand_inner_pole(y, j, s); };
        const CoeffVector fd = (f(x + h) - f(x - h)) / (2.0 * h);
        const CoeffVector an = double(j + 1) * expand_inner_pole(x, j + 1, s);
        CHECK((fd - an).norm() < 1e-7 * an.norm());
    }
}

TEST_CASE("inversion", "[hardy]") {
    const HardyBasisSpec s(0.5, 30);
    std::mt19937_64 g(3);
    CoeffVector v = random_vector(g, s, 20);
    const InversionResult once = apply_inversion(v, s);
    CHECK(once.dropped_norm == 0.0);
    const InversionResult twice = apply_inversion(once.v, s);
    CHECK((twice.v - v).norm() < 1e-15 * v.norm() + 1e-15);
    CoeffVector top = CoeffVector::Zero(s.dim());
    top(s.idx(s.N)) = 2.0;
    CHECK_THAT(apply_inversion(top, s).dropped_norm, WithinAbs(2.0, 0.0));
    const cplx x(0.2, 0.1);
    for (int j = 1; j <= 3; ++j) {
        const CoeffVector a = apply_inversion(expand_inner_pole(x, j, s), s).v;
        const CoeffVector b = expand_outer_pole(x, j, s);
        for (int k = -s.N; k <= s.N - 2; ++k) CHECK(std::abs(a(s.idx(k)) - b(s.idx(k))) < 1e-12 * (1.0 + std::abs(b(s.idx(k)))));
    }
}

TEST_CASE("transfer operators commute with inversion", "[hardy][property]") {
    std::mt19937_64 g(9);
    const HardyBasisSpec s(0.5, 40);
    for (const AnalyticMap& t : {tsupport::T0(), tsupport::B(0.5), AnalyticMap(tsupport::random_expanding(g))}) {
        const HardyBasisSpec sp(admissible_radius({t}), 40);
        const TransferMatrix A = assemble_transfer(t, sp);
        const CoeffVector v = random_vector(g, sp, 8);
        const CoeffVector lhs = A.A * apply_inversion(v, sp).v;
        const CoeffVector rhs = apply_inversion(A.A * v, sp).v;
        double err = 0.0;
        for (int k = -sp.N / 2; k <= sp.N / 2; ++k) err = std::max(err, std::abs(lhs(sp.idx(k)) - rhs(sp.idx(k))));
        CHECK(err < 1e-10 * v.norm());
    }
}

TEST_CASE("noise multipliers", "[hardy]") {
    CHECK_THAT(NoiseOperator::multiplier(NoiseKind::gaussian, 0.1, 1), WithinAbs(0.82086871741553994, 1e-15));
    CHECK(NoiseOperator::multiplier(NoiseKind::gaussian, 0.1, 0) == 1.0);
    CHECK(NoiseOperator::multiplier(NoiseKind::uniform, 0.125, 0) == 1.0);
    CHECK_THAT(NoiseOperator::multiplier(NoiseKind::uniform, 0.125, 1), WithinAbs(0.90031631615710607, 1e-15));
    for (int n : {4, -4, 8, 12, -16}) CHECK(NoiseOperator::multiplier(NoiseKind::uniform, 0.125, n) == 0.0);
    for (int n : {8, 16, -8}) CHECK(NoiseOperator::multiplier(NoiseKind::uniform, 0.1875, n) == 0.0);
    CHECK(NoiseOperator::multiplier(NoiseKind::none, 0.3, 5) == 1.0);
    for (int n = -20; n <= 20; ++n) {
        CHECK(std::abs(NoiseOperator::multiplier(NoiseKind::uniform, 0.07, n)) <= 1.0);
        CHECK(NoiseOperator::multiplier(NoiseKind::gaussian, 0.07, n) ==
              NoiseOperator::multiplier(NoiseKind::gaussian, 0.07, -n));
    }
    const HardyBasisSpec s(0.5, 10);
    const NoiseOperator op = noise_diagonal(NoiseKind::uniform, 0.125, s);
    CHECK(op.mu[std::size_t(s.idx(-1))] == 1.0);
    CHECK(op.mu[std::size_t(s.idx(3))] == 0.0);
    CHECK_THROWS_AS(noise_diagonal(NoiseKind::gaussian, 0.0, s), DomainError);
}

TEST_CASE("compose_noise scales rows", "[hardy]") {
    const HardyBasisSpec s(0.5, 20);
    const TransferMatrix A = assemble_transfer(tsupport::B(0.5), s);
    const NoiseOperator op = noise_diagonal(NoiseKind::gaussian, 0.05, s);
    const TransferMatrix B = compose_noise(A, op);
    CMatrix D = CMatrix::Zero(s.dim(), s.dim());
    for (int i = 0; i < s.dim(); ++i) D(i, i) = op.mu[std::size_t(i)];
    CHECK((B.A - D * A.A).norm() < 1e-15 * A.A.norm());
    CHECK(compose_noise(A, NoiseOperator{}).A == A.A);
    CHECK_THROWS_AS(compose_noise(A, noise_diagonal(NoiseKind::gaussian, 0.05, HardyBasisSpec(0.5, 21))), DomainError);
}

TEST_CASE("operator distance", "[hardy][property]") {
    std::mt19937_64 g(4);
    const int n = 12;
    auto rnd = [&] {
        std::normal_distribution<double> d;
        CMatrix M(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) M(i, j) = cplx(d(g), d(g));
        return M;
    };
    for (int trial = 0; trial < 10; ++trial) {
        const CMatrix A = rnd(), B = rnd(), C = rnd();
        CHECK(operator_distance(A, A) == 0.0);
        CHECK_THAT(operator_distance(A, B), WithinRel(operator_distance(B, A), 1e-12));
        CHECK(operator_distance(A, C) <= operator_distance(A, B) + operator_distance(B, C) + 1e-12);
    }
    CMatrix D = CMatrix::Zero(2, 2);
    D(0, 0) = 2.0;
    D(1, 1) = 1.0;
    CHECK_THAT(operator_distance(D, CMatrix::Zero(2, 2)), WithinAbs(2.0, 1e-14));
    CHECK_THROWS_AS(operator_distance(D, CMatrix::Zero(3, 3)), DomainError);
}

TEST_CASE("operator distance is Lipschitz in the map", "[hardy]") {
    const HardyBasisSpec s(admissible_radius(tsupport::appendix().maps), 30);
    const AnalyticMap t = tsupport::B(0.5);
    const TransferMatrix A = assemble_transfer(t, s);
    std::vector<double> ratio;
    for (double d : {1e-3, 2e-3, 4e-3}) {
        const TransferMatrix Ad = assemble_transfer(compose(mobius(d), t), s);
        ratio.push_back(operator_distance(Ad.A, A.A) / d);
    }
    CHECK(ratio[0] > 0.0);
    CHECK(std::abs(ratio[1] / ratio[0] - 1.0) < 0.05);
    CHECK(std::abs(ratio[2] / ratio[0] - 1.0) < 0.05);
}

TEST_CASE("mass row", "[hardy]") {
    std::mt19937_64 g(11);
    std::vector<AnalyticMap> maps{tsupport::T0(), tsupport::T1(), tsupport::B(0.5), tsupport::B(0.6)};
    for (int i = 0; i < 6; ++i) maps.emplace_back(tsupport::random_expanding(g));
    for (const auto& t : maps) {
        const HardyBasisSpec s(admissible_radius({t}), 40);
        CHECK(mass_row_error(assemble_transfer(t, s)) < 1e-11);
    }
}

TEST_CASE("pole basis triangularity at a fixed point", "[hardy]") {
    const AnalyticMap t1 = tsupport::T1();
    const double R = admissible_radius(tsupport::switching().maps);
    const HardyBasisSpec s(R, 40);
    const TransferMatrix A = assemble_transfer(t1, s);
    const double a = tsupport::a_fix;
    const double lam = t1.deriv(a).real();
    CHECK_THAT(lam, WithinAbs(2.0 / 3.0, 1e-14));
    CMatrix P(s.dim(), 6);
    for (int j = 1; j <= 6; ++j) P.col(j - 1) = expand_inner_pole(a, j, s);
    const auto qr = P.colPivHouseholderQr();
    for (int j = 1; j <= 5; ++j) {
        const CoeffVector im = A.A * expand_inner_pole(a, j, s);
        const CoeffVector c = qr.solve(im);
        CHECK((P * c - im).norm() < 1e-9 * im.norm());
        CHECK(std::abs(c(j - 1) - std::pow(lam, j)) < 1e-8);
        // No component above the original order.
        for (int i = j; i < 6; ++i) CHECK(std::abs(c(i)) < 1e-8);
    }
}

TEST_CASE("matrix entries decay away from the diagonal band", "[hardy]") {
    const HardyBasisSpec s(admissible_radius(tsupport::appendix().maps), 40);
    const TransferMatrix A = assemble_transfer(tsupport::B(0.6), s);
    const double scale = A.A.cwiseAbs().maxCoeff();
    double edge = 0.0;
    for (int m = -s.N / 4; m <= s.N / 4; ++m) {
        edge = std::max(edge, std::abs(A.A(s.idx(s.N), s.idx(m))));
        edge = std::max(edge, std::abs(A.A(s.idx(-s.N), s.idx(m))));
    }
    CHECK(edge < 1e-6 * scale);
}

TEST_CASE("matrix files round trip", "[hardy]") {
    const HardyBasisSpec s(0.5, 6);
    const TransferMatrix A = assemble_transfer(tsupport::B(0.5), s);
    const auto dir = std::filesystem::temp_directory_path() / "bcocycle_hardy_io";
    std::filesystem::create_directories(dir);
    const std::string bin = (dir / "a.bin").string(), csv = (dir / "a.csv").string();
    write_binary(A, bin);
    const TransferMatrix B = read_binary(bin);
    CHECK(B.A == A.A);
    CHECK(B.spec.N == 6);
    CHECK(B.spec.R == 0.5);
    CHECK(std::filesystem::file_size(bin) == 12u + 16u * 13u * 13u);
    write_csv(A, csv);
    std::ifstream f(csv);
    std::string line;
    std::getline(f, line);
    CHECK(line == "out_mode,in_mode,re,im\r");
    int rows = 0;
    double maxerr = 0.0;
    while (std::getline(f, line)) {
        int n = 0, m = 0;
        double re = 0.0, im = 0.0;
        REQUIRE(std::sscanf(line.c_str(), "%d,%d,%lf,%lf", &n, &m, &re, &im) == 4);
        maxerr = std::max(maxerr, std::abs(cplx(re, im) - A.A(s.idx(n), s.idx(m))));
        ++rows;
    }
    CHECK(rows == 169);
    CHECK(maxerr == 0.0);
    std::filesystem::remove_all(dir);
}

TEST_CASE("transfer cocycle along an orbit", "[hardy]") {
    const CocycleFamily fam = tsupport::switching();
    const SymbolProcess p(BernoulliLaw{{0.5, 0.5}}, 3);
    const HardyBasisSpec s(admissible_radius(fam.maps), 12);
    TransferCocycle tc(fam, p, s);
    REQUIRE(tc.symbol_matrices().size() == 2);
    auto src = tc.source();
    for (std::int64_t i = 0; i < 20; ++i)
        CHECK(src(i) == tc.symbol_matrices()[std::size_t(p.symbol_at(i))].A);
    CHECK(&src(5) == &src(5));
}
