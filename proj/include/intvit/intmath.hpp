#pragma once

#include <cstdint>

#include "intvit/common.hpp"

namespace intvit {

// Fixed-point knobs shared by the shift kernels.
//   N     output precision of shift_exp (result scale S / 2^N)
//   M     reciprocal precision of int_div
//   iters Newton iterations of int_isqrt
struct IntMathConfig {
    int N = 15;
    int M = 47;
    int iters = 10;
};

void validate(const IntMathConfig& cfg);

int bit_length(std::uint64_t v); // position of highest set bit; 0 for v = 0

// ---------------------------------------------------------------------------
// shift_exp: integer estimate of exp(S * I) for I <= 0.
//
// I_p approximates I * log2(e) as I + (I >> 1) - (I >> 4), then splits against
// -I_0 (I_0 = round(1/S)) into exponent q and remainder r, and linearly
// interpolates 2^t on [t] - 1 <= t <= [t] with I_b = ((-r) >> 1) + I_0.
// Result value is I_exp at scale S / 2^N.
// ---------------------------------------------------------------------------

struct ExpFixed {
    std::int64_t value = 0;
    double scale = 0.0;
};

// Pure integer core; i <= 0, i0 >= 1. Shifts past 62 underflow to 0.
std::int64_t shift_exp_core(std::int64_t i, std::int64_t i0, int N);

// round(1/s), ties away from zero. Real arithmetic (audited).
std::int64_t inv_scale_int(double s);

ExpFixed shift_exp(std::int64_t i, double s, const IntMathConfig& cfg);

// ---------------------------------------------------------------------------
// int_div: fixed-point i1 / i2 on [0, 1], k_out-bit result.
//
//   I_out = clamp((floor(2^M / I2) * I1) >> (M - (k_out - 1)), 0, 2^(k_out-1)-1)
//
// Preconditions: 0 <= i1, 1 <= i2 < 2^31, i2 <= 2^(M-16). Result scale is
// 1 / 2^(k_out - 1).
// ---------------------------------------------------------------------------

struct DivFixed {
    std::int64_t value = 0;
    double scale = 0.0;
};

std::int64_t int_div_core(std::int64_t i1, std::int64_t i2, int k_out, int M);
DivFixed int_div(std::int64_t i1, std::int64_t i2, int k_out, const IntMathConfig& cfg);

// ---------------------------------------------------------------------------
// int_isqrt: floor-ish integer square root by Newton's method, exactly
// cfg.iters iterations from I = 2^(bit_length(v)/2). Within 1 of
// floor(sqrt(v)) for v < 2^31 (verified exhaustively in tests). v = 0 -> 0.
// ---------------------------------------------------------------------------

std::int64_t int_isqrt(std::int64_t v, const IntMathConfig& cfg);

} // namespace intvit
