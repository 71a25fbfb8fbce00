#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "intvit/kernels.hpp"

namespace intvit {

// ---------------------------------------------------------------------------
// Model configuration and the floating-point model.
// ---------------------------------------------------------------------------

struct ModelConfig {
    std::int64_t image_size = 16;
    std::int64_t patch_size = 4;
    std::int64_t channels = 3;
    std::int64_t d_model = 64;
    std::int64_t heads = 4;
    std::int64_t mlp_ratio = 4;
    std::int64_t depth = 2;
    std::int64_t num_classes = 100;

    std::int64_t head_dim() const { return d_model / heads; }
    std::int64_t patches_per_side() const { return image_size / patch_size; }
    std::int64_t num_patches() const { return patches_per_side() * patches_per_side(); }
    std::int64_t num_tokens() const { return num_patches() + 1; }
    std::int64_t patch_dim() const { return channels * patch_size * patch_size; }
    std::int64_t mlp_hidden() const { return d_model * mlp_ratio; }
};

// Throws std::invalid_argument naming the offending field.
void validate(const ModelConfig& cfg);

struct FpDense {
    FpTensor w; // (out_features, in_features)
    FpTensor b; // (out_features)
};

struct FpBlock {
    FpTensor ln1_gamma, ln1_beta;
    FpDense q, k, v, o;
    FpTensor ln2_gamma, ln2_beta;
    FpDense fc1, fc2;
};

struct FpViTModel {
    ModelConfig config;
    FpDense patch;   // (d_model, channels*patch^2)
    FpTensor cls;    // (d_model)
    FpTensor pos;    // (tokens, d_model)
    std::vector<FpBlock> blocks;
    FpTensor final_gamma, final_beta;
    FpDense head;    // (classes, d_model)
};

// Deterministic Gaussian init (std 0.02), LayerNorm affines at identity.
FpViTModel gen_fp_model(const ModelConfig& cfg, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Quantization options and the integer model.
// ---------------------------------------------------------------------------

struct QuantizeOptions {
    IntMathConfig math;
    RequantRounding rounding = RequantRounding::Nearest;
    int dyadic_c = 30;
    int k_act = 8;       // activations and weights
    int k_softmax = 8;   // shiftmax output width
    int score_bits = 8;  // attention scores fed to shiftmax: 8 or 16
    int k_sigma = 8;     // sigmoid factor width in shift_gelu
    int ln_p = 15;
};

void validate(const QuantizeOptions& opt);

struct QBlock {
    LayerNormParams ln1, ln2;
    DenseWeights q, k, v, o, fc1, fc2;

    // attention: Q.K^T accumulator -> scores (1/sqrt(head_dim) folded in),
    // shiftmax with a frozen I_0, then probs.V -> context
    DyadicScale score_requant;
    double score_scale = 0.0;
    int score_bits = 8;
    std::int64_t softmax_i0 = 0;
    double prob_scale = 0.0;
    DyadicScale ctx_requant;
    double ctx_scale = 0.0;

    // gelu: raw 16-bit product at gelu_raw_scale, then requantized
    std::int64_t gelu_i0 = 0;
    double gelu_raw_scale = 0.0;
    DyadicScale gelu_requant;
    double gelu_out_scale = 0.0;

    // residual alignment
    DyadicScale res1_main, res1_skip;
    double res1_scale = 0.0;
    DyadicScale res2_main, res2_skip;
    double res2_scale = 0.0;

    double in_scale = 0.0;
    mutable std::int64_t score_saturations = 0;
    mutable std::int64_t ctx_saturations = 0;
    mutable std::int64_t gelu_saturations = 0;
    mutable std::int64_t res_saturations = 0;
};

struct QViTModel {
    ModelConfig config;
    QuantizeOptions options;
    double input_scale = 0.0;
    DenseWeights patch;      // requantizes straight to embed_scale
    QTensor cls_q, pos_q;    // held at embed_scale
    double embed_scale = 0.0;
    std::vector<QBlock> blocks;
    LayerNormParams final_ln;
    DenseWeights head;       // used through int_dense_acc; logits stay 32-bit
    double logits_scale = 0.0;
    mutable std::int64_t embed_saturations = 0;
};

// Max-abs activation statistics keyed by site name ("embed.out",
// "block0.ln1.out", ...). Produced by the calibration pass of the FP oracle.
using CalibStats = std::map<std::string, double>;

std::string block_site(std::int64_t block, const std::string& leaf);

// Freeze an FP model into integers. Throws std::invalid_argument naming any
// missing calibration site.
QViTModel build_qmodel(const FpViTModel& fp, const CalibStats& calib,
                       const QuantizeOptions& opt);

// Building blocks, shared with sweeps and tests.
DenseWeights build_dense_weights(const FpDense& d, double in_scale,
                                 double out_m, const QuantizeOptions& opt);
LayerNormParams build_layernorm_params(const FpTensor& gamma, const FpTensor& beta,
                                       double out_m, const QuantizeOptions& opt);

// Recompute every dyadic from its stored endpoint scales and verify (b, c)
// match, plus shape and bit-width checks. Throws std::logic_error.
void check_scale_graph(const QViTModel& m);

// ---------------------------------------------------------------------------
// Integer forward path. Runs under an IntegerOnlyGuard.
// ---------------------------------------------------------------------------

struct QTapeEntry {
    std::string site;
    QTensor value;
};
using QTape = std::vector<QTapeEntry>;

QTensor quantize_input(const QViTModel& m, const FpTensor& img);
QTensor patch_embed(const QViTModel& m, const QTensor& img);
QTensor msa_forward(const QViTModel& m, const QBlock& blk, const QTensor& x);
QTensor mlp_forward(const QViTModel& m, const QBlock& blk, const QTensor& x);
QTensor block_forward(const QViTModel& m, const QBlock& blk, const QTensor& x,
                      std::int64_t block_index, QTape* tape = nullptr);
QTensor model_forward(const QViTModel& m, const QTensor& img, QTape* tape = nullptr);

// Saturation counters, flattened per site for reporting.
std::vector<std::pair<std::string, std::int64_t>> collect_saturations(const QViTModel& m);
void reset_saturations(const QViTModel& m);

} // namespace intvit
