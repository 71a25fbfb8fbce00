#include "intvit/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace intvit {

namespace {

void require(bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(msg);
}

// Saturation counters may be bumped from row-parallel kernel execution.
void bump(std::int64_t& counter, std::int64_t n) {
    if (n != 0) {
        std::atomic_ref<std::int64_t>(counter).fetch_add(n, std::memory_order_relaxed);
    }
}

int declared_bits(int k_out) {
    return k_out <= 8 ? 8 : (k_out <= 16 ? 16 : 32);
}

struct RowShape {
    std::int64_t rows;
    std::int64_t d;
};

RowShape row_shape(const QTensor& t) {
    require(t.rank() >= 1, "kernel: rank must be >= 1");
    const std::int64_t d = t.dims.back();
    return {t.numel() / d, d};
}

} // namespace

// ---------------------------------------------------------------------------
// Matmul / dense.
// ---------------------------------------------------------------------------

QTensor transpose2d(const QTensor& t) {
    validate(t);
    require(t.rank() == 2, "transpose2d: rank must be 2");
    const std::int64_t r = t.dims[0], c = t.dims[1];
    QTensor out;
    out.dims = {c, r};
    out.scale = t.scale;
    out.bits = t.bits;
    out.data.resize(t.data.size());
    for (std::int64_t i = 0; i < r; ++i) {
        for (std::int64_t j = 0; j < c; ++j) {
            out.data[static_cast<std::size_t>(j * r + i)] =
                t.data[static_cast<std::size_t>(i * c + j)];
        }
    }
    return out;
}

QTensor int_matmul_acc(const QTensor& a, const QTensor& b, double acc_scale) {
    validate(a);
    validate(b);
    require(a.rank() == 2 && b.rank() == 2, "int_matmul: operands must be rank 2");
    require(a.dims[1] == b.dims[1], "int_matmul: inner dimensions disagree");
    require(a.dims[1] <= (std::int64_t{1} << 15), "int_matmul: accumulation length over 2^15");
    const std::int64_t m = a.dims[0], d = a.dims[1], n = b.dims[0];
    QTensor out;
    out.dims = {m, n};
    out.scale = acc_scale;
    out.bits = 32;
    out.data.resize(static_cast<std::size_t>(m * n));
    const std::int64_t hi = qmax(32);
    for (std::int64_t i = 0; i < m; ++i) {
        const std::int64_t* ra = a.data.data() + i * d;
        for (std::int64_t j = 0; j < n; ++j) {
            const std::int64_t* rb = b.data.data() + j * d;
            std::int64_t acc = 0;
            for (std::int64_t k = 0; k < d; ++k) acc += ra[k] * rb[k];
            if (acc < -hi - 1 || acc > hi) {
                throw std::range_error("int_matmul: accumulator overflows 32 bits");
            }
            out.data[static_cast<std::size_t>(i * n + j)] = acc;
        }
    }
    return out;
}

QTensor int_matmul(const QTensor& a, const QTensor& b, const DyadicScale& dn,
                   double out_scale, int k_out, RequantRounding rr,
                   std::int64_t* saturations) {
    const QTensor acc = int_matmul_acc(a, b, 1.0);
    return requantize(acc, dn, k_out, out_scale, rr, saturations);
}

QTensor int_matmul_auto(const QTensor& a, const QTensor& b, double out_scale,
                        int k_out, RequantRounding rr, int dyadic_c) {
    audit_real_arithmetic("int_matmul_auto");
    const DyadicScale dn = to_dyadic_auto(a.scale * b.scale / out_scale, dyadic_c);
    return int_matmul(a, b, dn, out_scale, k_out, rr, nullptr);
}

namespace {

QTensor dense_acc_impl(const QTensor& x, const DenseWeights& w, double acc_scale) {
    validate(x);
    validate(w.weight);
    require(x.rank() == 2 && w.weight.rank() == 2, "int_dense: operands must be rank 2");
    require(x.bits == 8, "int_dense: input must be 8-bit");
    require(x.dims[1] == w.weight.dims[1], "int_dense: feature dimensions disagree");
    require(x.dims[1] <= (std::int64_t{1} << 15), "int_dense: accumulation length over 2^15");
    const std::int64_t out_f = w.weight.dims[0];
    require(w.bias.empty() || static_cast<std::int64_t>(w.bias.size()) == out_f,
            "int_dense: bias length mismatch");
    const std::int64_t rows = x.dims[0], d = x.dims[1];
    QTensor out;
    out.dims = {rows, out_f};
    out.scale = acc_scale;
    out.bits = 32;
    out.data.resize(static_cast<std::size_t>(rows * out_f));
    const std::int64_t hi = qmax(32);
    for (std::int64_t i = 0; i < rows; ++i) {
        const std::int64_t* rx = x.data.data() + i * d;
        for (std::int64_t j = 0; j < out_f; ++j) {
            const std::int64_t* rw = w.weight.data.data() + j * d;
            std::int64_t acc = w.bias.empty() ? 0 : w.bias[static_cast<std::size_t>(j)];
            for (std::int64_t k = 0; k < d; ++k) acc += rx[k] * rw[k];
            if (acc < -hi - 1 || acc > hi) {
                throw std::range_error("int_dense: accumulator overflows 32 bits");
            }
            out.data[static_cast<std::size_t>(i * out_f + j)] = acc;
        }
    }
    return out;
}

} // namespace

QTensor int_dense(const QTensor& x, const DenseWeights& w, int k_out, RequantRounding rr) {
    const QTensor acc = dense_acc_impl(x, w, 1.0);
    std::int64_t sat = 0;
    QTensor out = requantize(acc, w.out_requant, k_out, w.out_scale, rr, &sat);
    bump(w.saturations, sat);
    return out;
}

QTensor int_dense_acc(const QTensor& x, const DenseWeights& w) {
    return dense_acc_impl(x, w, w.bias_scale);
}

// ---------------------------------------------------------------------------
// Shiftmax.
// ---------------------------------------------------------------------------

QTensor shiftmax_fixed(const QTensor& x, int k_out, const IntMathConfig& cfg,
                       std::int64_t i0, double out_scale) {
    validate(x);
    validate(cfg);
    require(x.bits == 8 || x.bits == 16, "shiftmax: input must be 8- or 16-bit");
    require(k_out >= 2 && k_out <= 16, "shiftmax: k_out must be in [2, 16]");
    require(i0 >= 1, "shiftmax: I_0 must be >= 1");
    const auto [rows, d] = row_shape(x);
    require(i0 <= (std::int64_t{1} << 62) / (d << cfg.N), "shiftmax: I_0 too large for row length");

    // The IntDiv divisor must stay under both 2^31 and 2^(M-16).
    const int lim_bits = std::min(31, cfg.M - 16);

    QTensor out;
    out.dims = x.dims;
    out.scale = out_scale;
    out.bits = declared_bits(k_out);
    out.data.resize(x.data.size());

    std::vector<std::int64_t> iexp(static_cast<std::size_t>(d));
    for (std::int64_t row = 0; row < rows; ++row) {
        const std::int64_t* in = x.data.data() + row * d;
        std::int64_t* o = out.data.data() + row * d;

        std::int64_t mx = in[0];
        for (std::int64_t j = 1; j < d; ++j) mx = std::max(mx, in[j]);

        std::int64_t sum = 0;
        for (std::int64_t j = 0; j < d; ++j) {
            iexp[static_cast<std::size_t>(j)] = shift_exp_core(in[j] - mx, i0, cfg.N);
            sum += iexp[static_cast<std::size_t>(j)];
        }

        // Shed low bits if the row sum would break the IntDiv precondition.
        // With the engine's floored softmax scale this never triggers; it
        // guards hand-built (S, d) combinations.
        const int t = std::max(0, bit_length(static_cast<std::uint64_t>(sum)) - lim_bits);
        if (t > 0) {
            sum = 0;
            for (std::int64_t j = 0; j < d; ++j) {
                iexp[static_cast<std::size_t>(j)] = arith_rshift(iexp[static_cast<std::size_t>(j)], t);
                sum += iexp[static_cast<std::size_t>(j)];
            }
        }

        for (std::int64_t j = 0; j < d; ++j) {
            o[j] = int_div_core(iexp[static_cast<std::size_t>(j)], sum, k_out, cfg.M);
        }
    }
    return out;
}

QTensor shiftmax(const QTensor& x, int k_out, const IntMathConfig& cfg) {
    audit_real_arithmetic("shiftmax");
    const std::int64_t i0 = inv_scale_int(x.scale);
    const double out_scale = std::ldexp(1.0, -(k_out - 1));
    return shiftmax_fixed(x, k_out, cfg, i0, out_scale);
}

// ---------------------------------------------------------------------------
// ShiftGELU.
// ---------------------------------------------------------------------------

QTensor shift_gelu_fixed(const QTensor& x, int k_sigma, const IntMathConfig& cfg,
                         std::int64_t i0, double out_scale) {
    validate(x);
    validate(cfg);
    require(x.bits == 8, "shift_gelu: input must be 8-bit");
    require(k_sigma >= 2 && k_sigma <= 16, "shift_gelu: k_sigma must be in [2, 16]");
    require(i0 >= 1, "shift_gelu: I_0 must be >= 1");

    const std::int64_t n = x.numel();
    const int lim_bits = std::min(31, cfg.M - 16);

    // 1.702 ~ 1.1011b = 1 + 1/2 + 1/8 + 1/16
    std::vector<std::int64_t> ip(static_cast<std::size_t>(n));
    std::int64_t max_ip = std::numeric_limits<std::int64_t>::min();
    for (std::int64_t j = 0; j < n; ++j) {
        const std::int64_t v = x.data[static_cast<std::size_t>(j)];
        ip[static_cast<std::size_t>(j)] =
            v + arith_rshift(v, 1) + arith_rshift(v, 3) + arith_rshift(v, 4);
        max_ip = std::max(max_ip, ip[static_cast<std::size_t>(j)]);
    }

    // Anchor at max(max_ip, 0) so both ShiftExp arguments stay non-positive
    // even for all-negative tensors; the sigmoid ratio is unchanged by the
    // common shift.
    const std::int64_t anchor = std::max<std::int64_t>(max_ip, 0);
    const std::int64_t den_extra = shift_exp_core(-anchor, i0, cfg.N);

    // Uniform guard shift against IntDiv divisor overflow (0 in normal use).
    const std::uint64_t worst_den =
        2ull * static_cast<std::uint64_t>(shift_exp_core(0, i0, cfg.N));
    const int t = std::max(0, bit_length(worst_den) - lim_bits);

    QTensor out;
    out.dims = x.dims;
    out.scale = out_scale;
    out.bits = (k_sigma <= 8) ? 16 : 32;
    out.data.resize(x.data.size());

    for (std::int64_t j = 0; j < n; ++j) {
        const std::int64_t num =
            arith_rshift(shift_exp_core(ip[static_cast<std::size_t>(j)] - anchor, i0, cfg.N), t);
        const std::int64_t den = num + arith_rshift(den_extra, t);
        std::int64_t idiv;
        if (den == 0) {
            // Both exponentials underflowed: |1.702 S x| is far outside the
            // interpolation range, so the sigmoid is saturated one way.
            idiv = ip[static_cast<std::size_t>(j)] >= 0 ? qmax(k_sigma) : 0;
        } else {
            idiv = int_div_core(num, den, k_sigma, cfg.M);
        }
        out.data[static_cast<std::size_t>(j)] = x.data[static_cast<std::size_t>(j)] * idiv;
    }
    return out;
}

QTensor shift_gelu(const QTensor& x, int k_sigma, const IntMathConfig& cfg) {
    audit_real_arithmetic("shift_gelu");
    const std::int64_t i0 = inv_scale_int(x.scale);
    const double out_scale = x.scale * std::ldexp(1.0, -(k_sigma - 1));
    return shift_gelu_fixed(x, k_sigma, cfg, i0, out_scale);
}

// ---------------------------------------------------------------------------
// I-LayerNorm.
// ---------------------------------------------------------------------------

QTensor i_layernorm(const QTensor& x, const LayerNormParams& p, int k_out,
                    const IntMathConfig& cfg, RequantRounding rr) {
    validate(x);
    validate(cfg);
    validate(p.gamma);
    require(x.bits == 8, "i_layernorm: input must be 8-bit");
    require(p.p >= 1 && p.p <= 24, "i_layernorm: p out of range");
    const auto [rows, d] = row_shape(x);
    require(d >= 2, "i_layernorm: row length must be >= 2");
    require(p.gamma.numel() == d, "i_layernorm: gamma length mismatch");
    require(static_cast<std::int64_t>(p.beta.size()) == d, "i_layernorm: beta length mismatch");

    QTensor acc;
    acc.dims = x.dims;
    acc.scale = 1.0; // placeholder; requantize carries the real output scale
    acc.bits = 32;
    acc.data.resize(x.data.size());

    std::vector<std::int64_t> centered(static_cast<std::size_t>(d));
    for (std::int64_t row = 0; row < rows; ++row) {
        const std::int64_t* in = x.data.data() + row * d;
        std::int64_t* o = acc.data.data() + row * d;

        std::int64_t sum = 0;
        for (std::int64_t j = 0; j < d; ++j) sum += in[j];
        const std::int64_t mu = round_div_away(sum, d);

        std::int64_t sq = 0;
        for (std::int64_t j = 0; j < d; ++j) {
            centered[static_cast<std::size_t>(j)] = in[j] - mu;
            sq += centered[static_cast<std::size_t>(j)] * centered[static_cast<std::size_t>(j)];
        }
        const std::int64_t var = floor_div(sq, d);
        std::int64_t std_i = int_isqrt(var, cfg);
        if (std_i < 1) std_i = 1;

        for (std::int64_t j = 0; j < d; ++j) {
            const std::int64_t norm =
                round_div_away(centered[static_cast<std::size_t>(j)] << p.p, std_i);
            o[j] = norm * p.gamma.data[static_cast<std::size_t>(j)] +
                   p.beta[static_cast<std::size_t>(j)];
        }
    }

    std::int64_t sat = 0;
    QTensor out = requantize(acc, p.out_requant, k_out, p.out_scale, rr, &sat);
    bump(p.saturations, sat);
    return out;
}

// ---------------------------------------------------------------------------
// Residual addition.
// ---------------------------------------------------------------------------

QTensor residual_add(const QTensor& a, const DyadicScale& da,
                     const QTensor& b, const DyadicScale& db,
                     double out_scale, int k_out, RequantRounding rr,
                     std::int64_t* saturations) {
    validate(a);
    validate(b);
    require(a.dims == b.dims, "residual_add: shape mismatch");
    require(k_out == 8 || k_out == 16 || k_out == 32, "residual_add: bad k_out");
    QTensor out;
    out.dims = a.dims;
    out.scale = out_scale;
    out.bits = k_out;
    out.data.resize(a.data.size());
    std::int64_t clamped = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const std::int64_t y =
            requant_scalar(a.data[i], da, rr) + requant_scalar(b.data[i], db, rr);
        const std::int64_t z = clamp_symmetric(y, k_out);
        if (z != y) ++clamped;
        out.data[i] = z;
    }
    if (saturations != nullptr) *saturations += clamped;
    return out;
}

QTensor residual_add_auto(const QTensor& a, const QTensor& b, double out_scale,
                          int k_out, RequantRounding rr, int dyadic_c) {
    audit_real_arithmetic("residual_add_auto");
    const DyadicScale da = to_dyadic_auto(a.scale / out_scale, dyadic_c);
    const DyadicScale db = to_dyadic_auto(b.scale / out_scale, dyadic_c);
    return residual_add(a, da, b, db, out_scale, k_out, rr, nullptr);
}

} // namespace intvit
