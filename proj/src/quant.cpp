#include "intvit/quant.hpp"

#include <cmath>
#include <stdexcept>

namespace intvit {

QuantParams quant_params_from_m(double m, int k) {
    audit_real_arithmetic("quant_params_from_m");
    if (k < 2 || k > 32) throw std::invalid_argument("QuantParams: k must be in [2, 32]");
    if (!(m >= 0.0) || !std::isfinite(m)) {
        throw std::invalid_argument("QuantParams: m must be finite and non-negative");
    }
    QuantParams p;
    p.m = (m == 0.0) ? 1.0 : m; // degenerate all-zero tensor rule
    p.k = k;
    p.S = 2.0 * p.m / static_cast<double>((std::uint64_t{1} << k) - 1);
    return p;
}

QuantParams calibrate_minmax(const FpTensor& t, int k) {
    validate(t);
    if (t.data.empty()) throw std::invalid_argument("calibrate_minmax: empty tensor");
    double m = 0.0;
    for (double v : t.data) m = std::max(m, std::fabs(v));
    return quant_params_from_m(m, k);
}

std::int64_t quantize_value(double r, const QuantParams& p) {
    audit_real_arithmetic("quantize_value");
    const double clipped = std::clamp(r, -p.m, p.m);
    // llround rounds halves away from zero, the global tie rule.
    return clamp_symmetric(std::llround(clipped / p.S), p.k);
}

QTensor quantize(const FpTensor& t, const QuantParams& p) {
    audit_real_arithmetic("quantize");
    validate(t);
    if (!(p.m > 0.0) || !(p.S > 0.0)) throw std::invalid_argument("quantize: invalid params");
    QTensor q;
    q.dims = t.dims;
    q.scale = p.S;
    q.bits = (p.k <= 8) ? 8 : (p.k <= 16 ? 16 : 32);
    q.data.resize(t.data.size());
    for (std::size_t i = 0; i < t.data.size(); ++i) q.data[i] = quantize_value(t.data[i], p);
    return q;
}

FpTensor dequantize(const QTensor& t) {
    audit_real_arithmetic("dequantize");
    validate(t);
    FpTensor out;
    out.dims = t.dims;
    out.data.resize(t.data.size());
    for (std::size_t i = 0; i < t.data.size(); ++i) {
        out.data[i] = t.scale * static_cast<double>(t.data[i]);
    }
    return out;
}

DyadicScale to_dyadic(double x, int c) {
    audit_real_arithmetic("to_dyadic");
    if (!(x > 0.0) || !std::isfinite(x)) {
        throw std::invalid_argument("to_dyadic: x must be positive and finite");
    }
    if (c < 0 || c > 62) throw std::invalid_argument("to_dyadic: c must be in [0, 62]");
    const long long b = std::llround(std::ldexp(x, c));
    if (b >= (1ll << 32)) {
        throw std::range_error("to_dyadic: b exceeds 32 bits, reduce c");
    }
    return DyadicScale{static_cast<std::uint32_t>(b), c};
}

DyadicScale to_dyadic_auto(double x, int c) {
    audit_real_arithmetic("to_dyadic_auto");
    if (c < 0 || c > 62) throw std::invalid_argument("to_dyadic_auto: c must be in [0, 62]");
    for (int cc = c; cc >= 0; --cc) {
        if (!(x > 0.0) || !std::isfinite(x)) break;
        if (std::llround(std::ldexp(x, cc)) < (1ll << 32)) return to_dyadic(x, cc);
    }
    throw std::range_error("to_dyadic_auto: multiplier does not fit 32 bits at any c");
}

std::int64_t requant_scalar(std::int64_t v, const DyadicScale& d, RequantRounding r) {
    const std::int64_t prod = static_cast<std::int64_t>(d.b) * v;
    if (d.c == 0) return prod;
    if (r == RequantRounding::Nearest) {
        return (prod + (std::int64_t{1} << (d.c - 1))) >> d.c;
    }
    return prod >> d.c;
}

QTensor requantize(const QTensor& acc, const DyadicScale& d, int k_out,
                   double out_scale, RequantRounding r, std::int64_t* saturations) {
    validate(acc);
    if (k_out != 8 && k_out != 16 && k_out != 32) {
        throw std::invalid_argument("requantize: k_out must be 8, 16 or 32");
    }
    if (d.c < 0 || d.c > 62) throw std::invalid_argument("requantize: bad dyadic shift");
    const std::int64_t hi32 = qmax(32);
    QTensor out;
    out.dims = acc.dims;
    out.scale = out_scale;
    out.bits = k_out;
    out.data.resize(acc.data.size());
    std::int64_t clamped = 0;
    for (std::size_t i = 0; i < acc.data.size(); ++i) {
        const std::int64_t v = acc.data[i];
        if (v < -hi32 - 1 || v > hi32) {
            throw std::invalid_argument("requantize: accumulator exceeds 32 bits");
        }
        const std::int64_t y = requant_scalar(v, d, r);
        const std::int64_t z = clamp_symmetric(y, k_out);
        if (z != y) ++clamped;
        out.data[i] = z;
    }
    if (saturations != nullptr) *saturations += clamped;
    return out;
}

} // namespace intvit
