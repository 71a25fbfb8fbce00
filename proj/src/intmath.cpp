#include "intvit/intmath.hpp"

#include <bit>
#include <cmath>
#include <stdexcept>

namespace intvit {

void validate(const IntMathConfig& cfg) {
    if (cfg.N < 8 || cfg.N > 20) throw std::invalid_argument("IntMathConfig: N must be in [8, 20]");
    if (cfg.M < 40 || cfg.M > 60) throw std::invalid_argument("IntMathConfig: M must be in [40, 60]");
    if (cfg.iters < 1) throw std::invalid_argument("IntMathConfig: iters must be >= 1");
}

int bit_length(std::uint64_t v) {
    return std::bit_width(v);
}

std::int64_t shift_exp_core(std::int64_t i, std::int64_t i0, int N) {
    if (i > 0) throw std::domain_error("shift_exp: input must be non-positive");
    if (i < -(std::int64_t{1} << 61)) throw std::invalid_argument("shift_exp: input too negative");
    if (i0 < 1) throw std::invalid_argument("shift_exp: I_0 must be >= 1");
    if (i0 > (std::int64_t{1} << 40)) throw std::invalid_argument("shift_exp: I_0 too large");

    // I * log2(e), log2(e) ~ 1.0111b = 1 + 1/2 - 1/16
    const std::int64_t ip = i + arith_rshift(i, 1) - arith_rshift(i, 4);

    // Split against -I_0 into exponent q >= 0 and remainder r in [0, I_0);
    // then 2^(-q) * (1 - r/(2 I_0)) linearly interpolates 2^t between grid
    // points, realized as I_b scaled by 2^(N - q).
    const std::int64_t q = floor_div(ip, -i0);
    const std::int64_t r = -(ip - q * (-i0));
    const std::int64_t ib = arith_rshift(-r, 1) + i0;
    if (q <= N) return ib << (N - q);
    const std::int64_t s = q - N;
    if (s >= 63) return 0;
    return arith_rshift(ib, static_cast<int>(s));
}

std::int64_t inv_scale_int(double s) {
    audit_real_arithmetic("inv_scale_int");
    if (!(s > 0.0) || !std::isfinite(s)) {
        throw std::invalid_argument("inv_scale_int: scale must be positive and finite");
    }
    return std::llround(1.0 / s);
}

ExpFixed shift_exp(std::int64_t i, double s, const IntMathConfig& cfg) {
    audit_real_arithmetic("shift_exp");
    validate(cfg);
    const std::int64_t i0 = inv_scale_int(s);
    if (i0 < 1) throw std::invalid_argument("shift_exp: round(1/S) must be >= 1");
    ExpFixed out;
    out.value = shift_exp_core(i, i0, cfg.N);
    out.scale = std::ldexp(s, -cfg.N);
    return out;
}

std::int64_t int_div_core(std::int64_t i1, std::int64_t i2, int k_out, int M) {
    if (i2 == 0) throw std::domain_error("int_div: divisor is zero");
    if (i2 < 0 || i2 >= (std::int64_t{1} << 31)) {
        throw std::invalid_argument("int_div: divisor out of range");
    }
    if (i1 < 0 || i1 > i2) throw std::invalid_argument("int_div: need 0 <= I1 <= I2");
    if (k_out < 2 || k_out > 16) throw std::invalid_argument("int_div: k_out must be in [2, 16]");
    if (i2 > (std::int64_t{1} << (M - 16))) {
        throw std::invalid_argument("int_div: divisor too large for M");
    }
    // recip <= 2^M and recip * i1 <= 2^M since i1 <= i2, so 64-bit is exact.
    const std::int64_t recip = (std::int64_t{1} << M) / i2;
    const std::int64_t shifted = arith_rshift(recip * i1, M - (k_out - 1));
    const std::int64_t hi = qmax(k_out);
    return shifted > hi ? hi : (shifted < 0 ? 0 : shifted);
}

DivFixed int_div(std::int64_t i1, std::int64_t i2, int k_out, const IntMathConfig& cfg) {
    audit_real_arithmetic("int_div");
    validate(cfg);
    DivFixed out;
    out.value = int_div_core(i1, i2, k_out, cfg.M);
    out.scale = std::ldexp(1.0, -(k_out - 1));
    return out;
}

std::int64_t int_isqrt(std::int64_t v, const IntMathConfig& cfg) {
    validate(cfg);
    if (v < 0) throw std::invalid_argument("int_isqrt: negative input");
    if (v >= (std::int64_t{1} << 62)) throw std::invalid_argument("int_isqrt: input too large");
    if (v == 0) return 0;
    std::int64_t x = std::int64_t{1} << (bit_length(static_cast<std::uint64_t>(v)) / 2);
    for (int i = 0; i < cfg.iters; ++i) {
        x = arith_rshift(x + v / x, 1); // x >= 1 throughout for v >= 1
    }
    return x;
}

} // namespace intvit
