#pragma once

#include <cstdint>

#include "intvit/tensor.hpp"

namespace intvit {

// Symmetric uniform quantization parameters for a k-bit signed grid covering
// [-m, m]: S = 2m / (2^k - 1). An all-zero tensor calibrates to m = 1 so the
// scale is always positive.
struct QuantParams {
    double m = 1.0;
    int k = 8;
    double S = 0.0;
};

QuantParams quant_params_from_m(double m, int k);
QuantParams calibrate_minmax(const FpTensor& t, int k);

// I = round(clip(R, -m, m) / S), ties away from zero, clamped to
// [-(2^(k-1)-1), 2^(k-1)-1]. So +m itself lands on the clamp.
QTensor quantize(const FpTensor& t, const QuantParams& p);
std::int64_t quantize_value(double r, const QuantParams& p);

FpTensor dequantize(const QTensor& t);

// ---------------------------------------------------------------------------
// Dyadic rescaling. A positive real multiplier r is frozen at build time as
// b / 2^c with b = round(r * 2^c), so the runtime multiply is one integer
// product and one shift.
// ---------------------------------------------------------------------------

struct DyadicScale {
    std::uint32_t b = 0;
    std::int32_t c = 0;
};

// b = round(r * 2^c); throws std::range_error if b would exceed 32 bits.
DyadicScale to_dyadic(double r, int c);

// Same, but walks c down until b fits. Throws std::range_error only when even
// c = 0 overflows (r >= 2^32).
DyadicScale to_dyadic_auto(double r, int c = 30);

enum class RequantRounding {
    Nearest, // (b*I + 2^(c-1)) >> c: round to nearest, ties toward +inf
    Floor,   // (b*I) >> c: plain shift
};

// One multiplier application, no clamp. c = 0 applies b directly.
std::int64_t requant_scalar(std::int64_t v, const DyadicScale& d, RequantRounding r);

// Map a 32-bit accumulator tensor onto a k_out-bit grid: y = dyadic(v) then
// clamp symmetric. out_scale is carried as metadata only. Increments
// *saturations once per clamped element when the pointer is non-null.
QTensor requantize(const QTensor& acc, const DyadicScale& d, int k_out,
                   double out_scale, RequantRounding r,
                   std::int64_t* saturations = nullptr);

} // namespace intvit
