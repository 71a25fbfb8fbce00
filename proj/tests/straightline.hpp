#pragma once

// Scalar straight-line restatements of the shift kernels, written from the
// algorithm definitions using nothing but int64 arithmetic and explicit
// loops. They share no code with the library; the production kernels must
// agree with them bit for bit on every input. Arguments are assumed valid
// (the library versions own the precondition checks).

#include <algorithm>
#include <cstdint>
#include <limits>
#include <vector>

namespace straightline {

inline int bit_length(std::uint64_t v) {
    int n = 0;
    while (v != 0) {
        ++n;
        v >>= 1;
    }
    return n;
}

// ShiftExp: 2^(I_p / I_0) in N fractional bits, I <= 0, I_0 = round(1/S).
inline std::int64_t shift_exp(std::int64_t i, std::int64_t i0, int n) {
    // I_p = I + I>>1 - I>>4 multiplies by log2(e) ~ 1 + 1/2 - 1/16.
    const std::int64_t ip = i + (i >> 1) - (i >> 4);
    // Both operands are non-positive here, so truncating division already
    // floors the (non-negative) quotient.
    const std::int64_t q = ip / (-i0);
    const std::int64_t r = -(ip + q * i0);
    const std::int64_t ib = ((-r) >> 1) + i0;
    if (q <= n) return ib << (n - q);
    const std::int64_t s = q - n;
    if (s >= 63) return 0;
    return ib >> s;
}

// IntDiv: (I_1 / I_2) on a k_out-bit unsigned grid via a 2^M reciprocal.
inline std::int64_t int_div(std::int64_t i1, std::int64_t i2, int k_out, int m) {
    const std::int64_t recip = (std::int64_t{1} << m) / i2;
    const std::int64_t shifted = (recip * i1) >> (m - (k_out - 1));
    const std::int64_t hi = (std::int64_t{1} << (k_out - 1)) - 1;
    return shifted > hi ? hi : (shifted < 0 ? 0 : shifted);
}

// Shiftmax over one row: max-subtract, ShiftExp, IntDiv against the row sum,
// with the low-bit shed when the sum would break the IntDiv preconditions.
inline std::vector<std::int64_t> shiftmax_row(const std::vector<std::int64_t>& in,
                                              std::int64_t i0, int n, int m,
                                              int k_out) {
    const std::size_t d = in.size();
    std::int64_t mx = in[0];
    for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, in[j]);

    std::vector<std::int64_t> e(d);
    std::int64_t sum = 0;
    for (std::size_t j = 0; j < d; ++j) {
        e[j] = shift_exp(in[j] - mx, i0, n);
        sum += e[j];
    }

    const int lim = std::min(31, m - 16);
    const int t = std::max(0, bit_length(static_cast<std::uint64_t>(sum)) - lim);
    if (t > 0) {
        sum = 0;
        for (std::size_t j = 0; j < d; ++j) {
            e[j] >>= t;
            sum += e[j];
        }
    }

    std::vector<std::int64_t> out(d);
    for (std::size_t j = 0; j < d; ++j) out[j] = int_div(e[j], sum, k_out, m);
    return out;
}

// ShiftGELU over a flat tensor: I_sigma = sigmoid(1.702 S I) on a k_sigma
// grid via a ShiftExp ratio, output is the raw product I * I_sigma.
inline std::vector<std::int64_t> shift_gelu_all(const std::vector<std::int64_t>& in,
                                                std::int64_t i0, int n, int m,
                                                int k_sigma) {
    const std::size_t cnt = in.size();
    std::vector<std::int64_t> ip(cnt);
    std::int64_t max_ip = std::numeric_limits<std::int64_t>::min();
    for (std::size_t j = 0; j < cnt; ++j) {
        // 1.702 ~ 1 + 1/2 + 1/8 + 1/16.
        const std::int64_t v = in[j];
        ip[j] = v + (v >> 1) + (v >> 3) + (v >> 4);
        max_ip = std::max(max_ip, ip[j]);
    }

    const std::int64_t anchor = std::max<std::int64_t>(max_ip, 0);
    const std::int64_t den_extra = shift_exp(-anchor, i0, n);

    const std::uint64_t worst_den =
        2ull * static_cast<std::uint64_t>(shift_exp(0, i0, n));
    const int lim = std::min(31, m - 16);
    const int t = std::max(0, bit_length(worst_den) - lim);

    const std::int64_t hi = (std::int64_t{1} << (k_sigma - 1)) - 1;
    std::vector<std::int64_t> out(cnt);
    for (std::size_t j = 0; j < cnt; ++j) {
        const std::int64_t num = shift_exp(ip[j] - anchor, i0, n) >> t;
        const std::int64_t den = num + (den_extra >> t);
        std::int64_t idiv;
        if (den == 0) {
            idiv = ip[j] >= 0 ? hi : 0;
        } else {
            idiv = int_div(num, den, k_sigma, m);
        }
        out[j] = in[j] * idiv;
    }
    return out;
}

} // namespace straightline
