#pragma once

#include <cmath>
#include <complex>
#include <cstdint>

namespace bcocycle {

using cplx = std::complex<double>;

// Complex number m * 2^e with a 64-bit exponent. Fixed points of maps with a
// critical point at the origin shrink like a^(2^n) along 0-runs and leave the
// double range after a handful of steps; this keeps their logarithms exact.
struct ExtComplex {
    cplx m{0.0, 0.0};
    std::int64_t e = 0;

    ExtComplex() = default;
    ExtComplex(cplx z) { *this = normalized(z, 0); }

    static ExtComplex normalized(cplx z, std::int64_t e) {
        ExtComplex r;
        double a = std::max(std::abs(z.real()), std::abs(z.imag()));
        if (a == 0.0 || !std::isfinite(a)) {
            r.m = z;
            r.e = 0;
            return r;
        }
        int k = 0;
        std::frexp(a, &k);
        r.m = cplx(std::ldexp(z.real(), -k), std::ldexp(z.imag(), -k));
        r.e = e + k;
        return r;
    }

    bool is_zero() const { return m == cplx(0.0, 0.0); }

    // Underflows to 0 below the double range.
    cplx to_cplx() const {
        if (is_zero()) return m;
        if (e < -2200) return cplx(0.0, 0.0);
        if (e > 2200) return m * HUGE_VAL;
        return cplx(std::ldexp(m.real(), int(e)), std::ldexp(m.imag(), int(e)));
    }

    double log_abs() const {
        if (is_zero()) return -HUGE_VAL;
        return std::log(std::abs(m)) + double(e) * std::log(2.0);
    }

    double log10_abs() const { return log_abs() / std::log(10.0); }

    friend ExtComplex operator*(const ExtComplex& a, const ExtComplex& b) {
        return normalized(a.m * b.m, a.e + b.e);
    }

    ExtComplex pow(int q) const {
        ExtComplex r(cplx(1.0, 0.0));
        ExtComplex b = *this;
        unsigned u = unsigned(q);
        while (u) {
            if (u & 1u) r = r * b;
            b = b * b;
            u >>= 1;
        }
        return r;
    }
};

}  // namespace bcocycle
