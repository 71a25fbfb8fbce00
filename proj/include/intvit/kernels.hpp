#pragma once

#include <cstdint>
#include <vector>

#include "intvit/intmath.hpp"
#include "intvit/quant.hpp"
#include "intvit/tensor.hpp"

namespace intvit {

// Frozen dense layer: 8-bit weights, 32-bit bias at bias_scale = S_in * S_W,
// and a dyadic multiplier taking the accumulator to out_scale. The doubles
// are metadata recorded at build time; the forward path only copies them.
struct DenseWeights {
    QTensor weight;                  // (out_features, in_features)
    std::vector<std::int64_t> bias;  // length out_features, may be empty
    double in_scale = 0.0;
    double bias_scale = 0.0;
    double out_scale = 0.0;
    DyadicScale out_requant;
    mutable std::int64_t saturations = 0;
};

// Frozen I-LayerNorm affine stage. beta sits on the grid 2^-p * S_gamma so it
// adds directly onto the normalized-times-gamma product.
struct LayerNormParams {
    QTensor gamma;                   // (features), 8-bit
    std::vector<std::int64_t> beta;  // length features, 32-bit range
    int p = 15;
    double out_scale = 0.0;
    DyadicScale out_requant;
    mutable std::int64_t saturations = 0;
};

// ---------------------------------------------------------------------------
// Matmul and dense. B is given row-major as (n, d) and used transposed, so
// both operands stream along contiguous rows: out(i, j) = sum_k a(i,k)*b(j,k).
// Accumulation is exact in 64-bit and asserted to fit 32 bits (inner dim is
// capped at 2^15 so 8/16-bit operands cannot overflow it).
// ---------------------------------------------------------------------------

QTensor transpose2d(const QTensor& t);

// Raw accumulator at acc_scale (= S_A * S_B, passed in as metadata).
QTensor int_matmul_acc(const QTensor& a, const QTensor& b, double acc_scale);

// Fused accumulate + requantize with a prebuilt dyadic multiplier.
QTensor int_matmul(const QTensor& a, const QTensor& b, const DyadicScale& dn,
                   double out_scale, int k_out, RequantRounding rr,
                   std::int64_t* saturations = nullptr);

// Convenience wrapper that derives the dyadic from the operand scales.
QTensor int_matmul_auto(const QTensor& a, const QTensor& b, double out_scale,
                        int k_out, RequantRounding rr, int dyadic_c = 30);

// x (rows, in) against w.weight (out, in): accumulate, add bias, requantize
// through w.out_requant. int_dense_acc stops at the 32-bit accumulator
// (scale w.bias_scale, no clamp); the classifier head uses it for logits.
QTensor int_dense(const QTensor& x, const DenseWeights& w, int k_out,
                  RequantRounding rr);
QTensor int_dense_acc(const QTensor& x, const DenseWeights& w);

// ---------------------------------------------------------------------------
// Shift kernels. All operate along the last dimension.
// ---------------------------------------------------------------------------

// Integer softmax: subtract the row max, shift_exp each element, then
// int_div against the row sum. Output scale 1 / 2^(k_out - 1).
QTensor shiftmax(const QTensor& x, int k_out, const IntMathConfig& cfg);
QTensor shiftmax_fixed(const QTensor& x, int k_out, const IntMathConfig& cfg,
                       std::int64_t i0, double out_scale);

// Integer GELU: sigmoid(1.702 x) via shift_exp ratio, then the raw product
// I * I_sigma at scale S_in * S_sigma. 16-bit output for 8-bit inputs.
// k_sigma is the bit width of the sigmoid factor.
QTensor shift_gelu(const QTensor& x, int k_sigma, const IntMathConfig& cfg);
QTensor shift_gelu_fixed(const QTensor& x, int k_sigma, const IntMathConfig& cfg,
                         std::int64_t i0, double out_scale);

// Integer LayerNorm: integer mean and population variance, Newton isqrt,
// normalize to 2^p grid, affine, requantize to k_out bits.
QTensor i_layernorm(const QTensor& x, const LayerNormParams& p, int k_out,
                    const IntMathConfig& cfg, RequantRounding rr);

// y = clamp(dyadic_a(a) + dyadic_b(b)) on a k_out grid at out_scale.
QTensor residual_add(const QTensor& a, const DyadicScale& da,
                     const QTensor& b, const DyadicScale& db,
                     double out_scale, int k_out, RequantRounding rr,
                     std::int64_t* saturations = nullptr);

// Convenience wrapper deriving both dyadics from the operand scales.
QTensor residual_add_auto(const QTensor& a, const QTensor& b, double out_scale,
                          int k_out, RequantRounding rr, int dyadic_c = 30);

} // namespace intvit
