#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace intvit {

// Errors for the ITNS/manifest readers. FormatError means "this is not one of
// our files"; CorruptionError means "it claims to be, but the contents are
// inconsistent or truncated".
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct CorruptionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Integer helpers shared by the quantization and kernel code.
// ---------------------------------------------------------------------------

// Arithmetic right shift: floor division by 2^s, sign-propagating.
constexpr std::int64_t arith_rshift(std::int64_t x, int s) {
    return x >> s;
}

// floor(a / b), b > 0.
constexpr std::int64_t floor_div(std::int64_t a, std::int64_t b) {
    std::int64_t q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}

// round(num / den) with ties away from zero, den > 0. Exact in integers.
constexpr std::int64_t round_div_away(std::int64_t num, std::int64_t den) {
    std::int64_t mag = num >= 0 ? num : -num;
    std::int64_t r = (2 * mag + den) / (2 * den);
    return num >= 0 ? r : -r;
}

// Largest code of a symmetric k-bit signed range; -qmax is the smallest code
// the quantizer emits (-2^(k-1) is representable but never produced).
constexpr std::int64_t qmax(int bits) {
    return (std::int64_t{1} << (bits - 1)) - 1;
}

constexpr std::int64_t clamp_symmetric(std::int64_t v, int bits) {
    const std::int64_t hi = qmax(bits);
    if (v > hi) return hi;
    if (v < -hi) return -hi;
    return v;
}

// ---------------------------------------------------------------------------
// Integer-only execution audit.
//
// While a guard is active, every helper that performs arithmetic on real
// (floating-point) scale values calls audit_real_arithmetic() and throws.
// The quantized forward path runs entirely under a guard: scales were folded
// into dyadic multipliers and integer constants at build time, and the only
// doubles it touches are copied, never computed with.
// ---------------------------------------------------------------------------

bool integer_only_mode() noexcept;
void audit_real_arithmetic(const char* what);

class IntegerOnlyGuard {
public:
    IntegerOnlyGuard();
    ~IntegerOnlyGuard();
    IntegerOnlyGuard(const IntegerOnlyGuard&) = delete;
    IntegerOnlyGuard& operator=(const IntegerOnlyGuard&) = delete;
};

} // namespace intvit
