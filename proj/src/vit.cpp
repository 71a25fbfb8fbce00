#include "intvit/vit.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>

namespace intvit {

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

void bump(std::int64_t& counter, std::int64_t n) {
    if (n != 0) {
        std::atomic_ref<std::int64_t>(counter).fetch_add(n, std::memory_order_relaxed);
    }
}

} // namespace

void validate(const ModelConfig& cfg) {
    require(cfg.image_size > 0, "ModelConfig: image_size must be positive");
    require(cfg.patch_size > 0, "ModelConfig: patch_size must be positive");
    require(cfg.channels > 0, "ModelConfig: channels must be positive");
    require(cfg.d_model > 0, "ModelConfig: d_model must be positive");
    require(cfg.heads > 0, "ModelConfig: heads must be positive");
    require(cfg.mlp_ratio > 0, "ModelConfig: mlp_ratio must be positive");
    require(cfg.depth >= 0, "ModelConfig: depth must be non-negative");
    require(cfg.num_classes > 0, "ModelConfig: num_classes must be positive");
    require(cfg.image_size % cfg.patch_size == 0,
            "ModelConfig: image_size must be divisible by patch_size");
    require(cfg.d_model % cfg.heads == 0, "ModelConfig: d_model must be divisible by heads");
    require(cfg.d_model >= 2, "ModelConfig: d_model must be >= 2");
    require(cfg.patch_dim() <= (std::int64_t{1} << 15), "ModelConfig: patch dimension too large");
    require(cfg.num_tokens() <= (std::int64_t{1} << 15), "ModelConfig: too many tokens");
    require(cfg.mlp_hidden() <= (std::int64_t{1} << 15), "ModelConfig: mlp hidden too large");
}

void validate(const QuantizeOptions& opt) {
    validate(opt.math);
    require(opt.dyadic_c >= 0 && opt.dyadic_c <= 62, "QuantizeOptions: dyadic_c must be in [0, 62]");
    require(opt.k_act >= 2 && opt.k_act <= 8, "QuantizeOptions: k_act must be in [2, 8]");
    require(opt.k_softmax >= 2 && opt.k_softmax <= 16,
            "QuantizeOptions: k_softmax must be in [2, 16]");
    require(opt.score_bits == 8 || opt.score_bits == 16,
            "QuantizeOptions: score_bits must be 8 or 16");
    require(opt.k_sigma >= 2 && opt.k_sigma <= 16, "QuantizeOptions: k_sigma must be in [2, 16]");
    require(opt.ln_p >= 1 && opt.ln_p <= 24, "QuantizeOptions: ln_p must be in [1, 24]");
}

std::string block_site(std::int64_t block, const std::string& leaf) {
    return "block" + std::to_string(block) + "." + leaf;
}

// ---------------------------------------------------------------------------
// FP model generation.
// ---------------------------------------------------------------------------

namespace {

FpTensor ones(std::vector<std::int64_t> dims) {
    FpTensor t = make_fp_tensor(std::move(dims));
    std::fill(t.data.begin(), t.data.end(), 1.0);
    return t;
}

FpDense gen_dense(Rng& rng, std::int64_t out_f, std::int64_t in_f) {
    FpDense d;
    d.w = gen_gaussian(rng, {out_f, in_f}, 0.0, 0.02);
    d.b = gen_gaussian(rng, {out_f}, 0.0, 0.02);
    return d;
}

} // namespace

FpViTModel gen_fp_model(const ModelConfig& cfg, std::uint64_t seed) {
    validate(cfg);
    FpViTModel m;
    m.config = cfg;
    Rng rng{seed};
    m.patch = gen_dense(rng, cfg.d_model, cfg.patch_dim());
    m.cls = gen_gaussian(rng, {cfg.d_model}, 0.0, 0.02);
    m.pos = gen_gaussian(rng, {cfg.num_tokens(), cfg.d_model}, 0.0, 0.02);
    for (std::int64_t i = 0; i < cfg.depth; ++i) {
        FpBlock b;
        b.ln1_gamma = ones({cfg.d_model});
        b.ln1_beta = make_fp_tensor({cfg.d_model});
        b.q = gen_dense(rng, cfg.d_model, cfg.d_model);
        b.k = gen_dense(rng, cfg.d_model, cfg.d_model);
        b.v = gen_dense(rng, cfg.d_model, cfg.d_model);
        b.o = gen_dense(rng, cfg.d_model, cfg.d_model);
        b.ln2_gamma = ones({cfg.d_model});
        b.ln2_beta = make_fp_tensor({cfg.d_model});
        b.fc1 = gen_dense(rng, cfg.mlp_hidden(), cfg.d_model);
        b.fc2 = gen_dense(rng, cfg.d_model, cfg.mlp_hidden());
        m.blocks.push_back(std::move(b));
    }
    m.final_gamma = ones({cfg.d_model});
    m.final_beta = make_fp_tensor({cfg.d_model});
    m.head = gen_dense(rng, cfg.num_classes, cfg.d_model);
    return m;
}

// ---------------------------------------------------------------------------
// Quantized model construction.
// ---------------------------------------------------------------------------

namespace {

double need_site(const CalibStats& calib, const std::string& site) {
    const auto it = calib.find(site);
    if (it == calib.end()) {
        throw std::invalid_argument("missing calibration site: " + site);
    }
    return it->second;
}

double scale_for(double m, int k) { return quant_params_from_m(m, k).S; }

std::vector<std::int64_t> to_grid(const FpTensor& t, double grid_scale) {
    std::vector<std::int64_t> out(t.data.size());
    const std::int64_t hi = qmax(32);
    for (std::size_t i = 0; i < t.data.size(); ++i) {
        const std::int64_t v = std::llround(t.data[i] / grid_scale);
        out[i] = std::clamp(v, -hi, hi);
    }
    return out;
}

// Largest I_0 for which d terms of ShiftExp output can be summed below 2^31.
std::int64_t exp_i0_cap(std::int64_t terms, int N) {
    return (qmax(32)) / (terms << N);
}

// An exponential site's scale, floored so I_0 = round(1/S) respects cap.
double floor_exp_scale(double s, std::int64_t cap) {
    if (cap < 1) throw std::invalid_argument("exp scale cap underflow");
    if (std::llround(1.0 / s) > cap) return 1.0 / static_cast<double>(cap);
    return s;
}

std::int64_t exp_i0(double s, std::int64_t cap) {
    std::int64_t i0 = std::llround(1.0 / floor_exp_scale(s, cap));
    // Scales above 2/3 would round I_0 to zero; keep ShiftExp well defined.
    return std::max<std::int64_t>(i0, 1);
}

} // namespace

DenseWeights build_dense_weights(const FpDense& d, double in_scale, double out_m,
                                 const QuantizeOptions& opt) {
    audit_real_arithmetic("build_dense_weights");
    DenseWeights w;
    w.weight = quantize(d.w, calibrate_minmax(d.w, opt.k_act));
    w.in_scale = in_scale;
    w.bias_scale = in_scale * w.weight.scale;
    if (d.b.numel() > 0 && !d.b.data.empty()) w.bias = to_grid(d.b, w.bias_scale);
    w.out_scale = scale_for(out_m, opt.k_act);
    w.out_requant = to_dyadic_auto(w.bias_scale / w.out_scale, opt.dyadic_c);
    return w;
}

LayerNormParams build_layernorm_params(const FpTensor& gamma, const FpTensor& beta,
                                       double out_m, const QuantizeOptions& opt) {
    audit_real_arithmetic("build_layernorm_params");
    LayerNormParams p;
    p.gamma = quantize(gamma, calibrate_minmax(gamma, opt.k_act));
    p.p = opt.ln_p;
    const double beta_grid = std::ldexp(p.gamma.scale, -p.p);
    p.beta = to_grid(beta, beta_grid);
    p.out_scale = scale_for(out_m, opt.k_act);
    p.out_requant = to_dyadic_auto(beta_grid / p.out_scale, opt.dyadic_c);
    return p;
}

QViTModel build_qmodel(const FpViTModel& fp, const CalibStats& calib,
                       const QuantizeOptions& opt) {
    audit_real_arithmetic("build_qmodel");
    validate(fp.config);
    validate(opt);
    const ModelConfig& cfg = fp.config;
    QViTModel m;
    m.config = cfg;
    m.options = opt;

    m.input_scale = scale_for(need_site(calib, "input"), opt.k_act);

    const double embed_m = need_site(calib, "embed.out");
    m.embed_scale = scale_for(embed_m, opt.k_act);
    m.patch = build_dense_weights(fp.patch, m.input_scale, embed_m, opt);

    QuantParams embed_p;
    embed_p.m = embed_m == 0.0 ? 1.0 : embed_m;
    embed_p.k = opt.k_act;
    embed_p.S = m.embed_scale;
    m.cls_q = quantize(fp.cls, embed_p);
    m.pos_q = quantize(fp.pos, embed_p);

    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));
    double in_scale = m.embed_scale;

    for (std::size_t bi = 0; bi < fp.blocks.size(); ++bi) {
        const FpBlock& fb = fp.blocks[bi];
        const auto site = [&](const char* leaf) {
            return block_site(static_cast<std::int64_t>(bi), leaf);
        };
        QBlock b;
        b.in_scale = in_scale;

        b.ln1 = build_layernorm_params(fb.ln1_gamma, fb.ln1_beta,
                                       need_site(calib, site("ln1.out")), opt);
        b.q = build_dense_weights(fb.q, b.ln1.out_scale, need_site(calib, site("q.out")), opt);
        b.k = build_dense_weights(fb.k, b.ln1.out_scale, need_site(calib, site("k.out")), opt);
        b.v = build_dense_weights(fb.v, b.ln1.out_scale, need_site(calib, site("v.out")), opt);

        // Attention scores: 1/sqrt(head_dim) rides inside the dyadic, and the
        // score scale is floored so the Shiftmax row sum stays under 2^31.
        b.score_bits = opt.score_bits;
        const double score_m = need_site(calib, site("attn.scores"));
        const std::int64_t score_cap = exp_i0_cap(cfg.num_tokens(), opt.math.N);
        b.score_scale = floor_exp_scale(scale_for(score_m, opt.score_bits), score_cap);
        b.softmax_i0 = exp_i0(b.score_scale, score_cap);
        b.score_requant = to_dyadic_auto(
            b.q.out_scale * b.k.out_scale * inv_sqrt_dh / b.score_scale, opt.dyadic_c);
        b.prob_scale = std::ldexp(1.0, -(opt.k_softmax - 1));

        const double ctx_m = need_site(calib, site("attn.ctx"));
        b.ctx_scale = scale_for(ctx_m, opt.k_act);
        b.ctx_requant =
            to_dyadic_auto(b.prob_scale * b.v.out_scale / b.ctx_scale, opt.dyadic_c);

        b.o = build_dense_weights(fb.o, b.ctx_scale, need_site(calib, site("o.out")), opt);

        const double res1_m = need_site(calib, site("res1.out"));
        b.res1_scale = scale_for(res1_m, opt.k_act);
        b.res1_main = to_dyadic_auto(b.o.out_scale / b.res1_scale, opt.dyadic_c);
        b.res1_skip = to_dyadic_auto(in_scale / b.res1_scale, opt.dyadic_c);

        b.ln2 = build_layernorm_params(fb.ln2_gamma, fb.ln2_beta,
                                       need_site(calib, site("ln2.out")), opt);

        // The fc1 output feeds ShiftGELU, whose IntDiv denominator needs
        // I_0 * 2^(N+1) < 2^31; floor the scale the same way as the scores.
        const std::int64_t gelu_cap = exp_i0_cap(2, opt.math.N);
        const double mlp1_scale =
            floor_exp_scale(scale_for(need_site(calib, site("mlp1.out")), opt.k_act), gelu_cap);
        b.fc1 = build_dense_weights(fb.fc1, b.ln2.out_scale, 1.0, opt);
        b.fc1.out_scale = mlp1_scale;
        b.fc1.out_requant = to_dyadic_auto(b.fc1.bias_scale / mlp1_scale, opt.dyadic_c);

        b.gelu_i0 = exp_i0(mlp1_scale, gelu_cap);
        b.gelu_raw_scale = mlp1_scale * std::ldexp(1.0, -(opt.k_sigma - 1));
        const double gelu_m = need_site(calib, site("gelu.out"));
        b.gelu_out_scale = scale_for(gelu_m, opt.k_act);
        b.gelu_requant = to_dyadic_auto(b.gelu_raw_scale / b.gelu_out_scale, opt.dyadic_c);

        b.fc2 = build_dense_weights(fb.fc2, b.gelu_out_scale,
                                    need_site(calib, site("mlp2.out")), opt);

        const double res2_m = need_site(calib, site("res2.out"));
        b.res2_scale = scale_for(res2_m, opt.k_act);
        b.res2_main = to_dyadic_auto(b.fc2.out_scale / b.res2_scale, opt.dyadic_c);
        b.res2_skip = to_dyadic_auto(b.res1_scale / b.res2_scale, opt.dyadic_c);

        in_scale = b.res2_scale;
        m.blocks.push_back(std::move(b));
    }

    m.final_ln = build_layernorm_params(fp.final_gamma, fp.final_beta,
                                        need_site(calib, "final_ln.out"), opt);

    m.head.weight = quantize(fp.head.w, calibrate_minmax(fp.head.w, opt.k_act));
    m.head.in_scale = m.final_ln.out_scale;
    m.head.bias_scale = m.head.in_scale * m.head.weight.scale;
    m.head.bias = to_grid(fp.head.b, m.head.bias_scale);
    m.head.out_scale = m.head.bias_scale; // logits stay on the accumulator grid
    m.head.out_requant = DyadicScale{1, 0};
    m.logits_scale = m.head.bias_scale;

    check_scale_graph(m);
    return m;
}

// ---------------------------------------------------------------------------
// Scale-graph consistency.
// ---------------------------------------------------------------------------

namespace {

void check_dyadic(const DyadicScale& got, double ratio, int c, const std::string& what) {
    const DyadicScale want = to_dyadic_auto(ratio, c);
    if (got.b != want.b || got.c != want.c) {
        throw std::logic_error("scale graph mismatch at " + what);
    }
}

void check_that(bool ok, const std::string& what) {
    if (!ok) throw std::logic_error("scale graph mismatch at " + what);
}

void check_dense(const DenseWeights& w, double in_scale, int c, const std::string& what) {
    validate(w.weight);
    check_that(w.in_scale == in_scale, what + ".in_scale");
    check_that(w.bias_scale == in_scale * w.weight.scale, what + ".bias_scale");
    check_dyadic(w.out_requant, w.bias_scale / w.out_scale, c, what + ".out_requant");
}

} // namespace

void check_scale_graph(const QViTModel& m) {
    audit_real_arithmetic("check_scale_graph");
    validate(m.config);
    validate(m.options);
    const int c = m.options.dyadic_c;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(m.config.head_dim()));

    check_that(static_cast<std::int64_t>(m.blocks.size()) == m.config.depth, "depth");
    check_dense(m.patch, m.input_scale, c, "patch");
    check_that(m.patch.out_scale == m.embed_scale, "patch.out_scale");
    validate(m.cls_q);
    validate(m.pos_q);
    check_that(m.cls_q.scale == m.embed_scale, "cls.scale");
    check_that(m.pos_q.scale == m.embed_scale, "pos.scale");
    check_that(m.cls_q.numel() == m.config.d_model, "cls.shape");
    check_that(m.pos_q.dims ==
                   std::vector<std::int64_t>({m.config.num_tokens(), m.config.d_model}),
               "pos.shape");

    double in_scale = m.embed_scale;
    for (std::size_t bi = 0; bi < m.blocks.size(); ++bi) {
        const QBlock& b = m.blocks[bi];
        const std::string pre = "block" + std::to_string(bi) + ".";
        check_that(b.in_scale == in_scale, pre + "in_scale");

        validate(b.ln1.gamma);
        check_dyadic(b.ln1.out_requant, std::ldexp(b.ln1.gamma.scale, -b.ln1.p) / b.ln1.out_scale,
                     c, pre + "ln1.out_requant");
        check_dense(b.q, b.ln1.out_scale, c, pre + "q");
        check_dense(b.k, b.ln1.out_scale, c, pre + "k");
        check_dense(b.v, b.ln1.out_scale, c, pre + "v");

        check_that(b.score_bits == m.options.score_bits, pre + "score_bits");
        check_dyadic(b.score_requant,
                     b.q.out_scale * b.k.out_scale * inv_sqrt_dh / b.score_scale, c,
                     pre + "score_requant");
        const std::int64_t score_cap = exp_i0_cap(m.config.num_tokens(), m.options.math.N);
        check_that(b.softmax_i0 == exp_i0(b.score_scale, score_cap), pre + "softmax_i0");
        check_that(b.prob_scale == std::ldexp(1.0, -(m.options.k_softmax - 1)),
                   pre + "prob_scale");
        check_dyadic(b.ctx_requant, b.prob_scale * b.v.out_scale / b.ctx_scale, c,
                     pre + "ctx_requant");

        check_dense(b.o, b.ctx_scale, c, pre + "o");
        check_dyadic(b.res1_main, b.o.out_scale / b.res1_scale, c, pre + "res1_main");
        check_dyadic(b.res1_skip, b.in_scale / b.res1_scale, c, pre + "res1_skip");

        validate(b.ln2.gamma);
        check_dyadic(b.ln2.out_requant, std::ldexp(b.ln2.gamma.scale, -b.ln2.p) / b.ln2.out_scale,
                     c, pre + "ln2.out_requant");
        check_dense(b.fc1, b.ln2.out_scale, c, pre + "fc1");
        const std::int64_t gelu_cap = exp_i0_cap(2, m.options.math.N);
        check_that(b.gelu_i0 == exp_i0(b.fc1.out_scale, gelu_cap), pre + "gelu_i0");
        check_that(b.gelu_raw_scale ==
                       b.fc1.out_scale * std::ldexp(1.0, -(m.options.k_sigma - 1)),
                   pre + "gelu_raw_scale");
        check_dyadic(b.gelu_requant, b.gelu_raw_scale / b.gelu_out_scale, c,
                     pre + "gelu_requant");
        check_dense(b.fc2, b.gelu_out_scale, c, pre + "fc2");
        check_dyadic(b.res2_main, b.fc2.out_scale / b.res2_scale, c, pre + "res2_main");
        check_dyadic(b.res2_skip, b.res1_scale / b.res2_scale, c, pre + "res2_skip");

        in_scale = b.res2_scale;
    }

    validate(m.final_ln.gamma);
    check_dyadic(m.final_ln.out_requant,
                 std::ldexp(m.final_ln.gamma.scale, -m.final_ln.p) / m.final_ln.out_scale, c,
                 "final_ln.out_requant");
    validate(m.head.weight);
    check_that(m.head.in_scale == m.final_ln.out_scale, "head.in_scale");
    check_that(m.head.bias_scale == m.head.in_scale * m.head.weight.scale, "head.bias_scale");
    check_that(m.logits_scale == m.head.bias_scale, "logits_scale");
    check_that(m.head.out_requant.b == 1 && m.head.out_requant.c == 0, "head.out_requant");
    check_that(m.head.weight.dims ==
                   std::vector<std::int64_t>({m.config.num_classes, m.config.d_model}),
               "head.shape");
}

// ---------------------------------------------------------------------------
// Integer forward path.
// ---------------------------------------------------------------------------

QTensor quantize_input(const QViTModel& m, const FpTensor& img) {
    QuantParams p;
    p.k = m.options.k_act;
    p.S = m.input_scale;
    p.m = 0.5 * m.input_scale * static_cast<double>((std::uint64_t{1} << p.k) - 1);
    return quantize(img, p);
}

namespace {

void record(QTape* tape, const std::string& site, const QTensor& t) {
    if (tape != nullptr) tape->push_back({site, t});
}

QTensor slice_cols(const QTensor& x, std::int64_t col0, std::int64_t ncols) {
    QTensor out;
    out.dims = {x.dims[0], ncols};
    out.scale = x.scale;
    out.bits = x.bits;
    out.data.resize(static_cast<std::size_t>(x.dims[0] * ncols));
    for (std::int64_t i = 0; i < x.dims[0]; ++i) {
        for (std::int64_t j = 0; j < ncols; ++j) {
            out.data[static_cast<std::size_t>(i * ncols + j)] =
                x.data[static_cast<std::size_t>(i * x.dims[1] + col0 + j)];
        }
    }
    return out;
}

QTensor slice_plane(const QTensor& x, std::int64_t plane) {
    const std::int64_t r = x.dims[1], c = x.dims[2];
    QTensor out;
    out.dims = {r, c};
    out.scale = x.scale;
    out.bits = x.bits;
    const auto base = x.data.begin() + plane * r * c;
    out.data.assign(base, base + r * c);
    return out;
}

QTensor msa_impl(const QViTModel& m, const QBlock& blk, const QTensor& x,
                 std::int64_t bi, QTape* tape) {
    const ModelConfig& cfg = m.config;
    const std::int64_t T = cfg.num_tokens(), dh = cfg.head_dim(), H = cfg.heads;
    const RequantRounding rr = m.options.rounding;
    const auto site = [&](const char* leaf) { return block_site(bi, leaf); };

    const QTensor q = int_dense(x, blk.q, m.options.k_act, rr);
    const QTensor k = int_dense(x, blk.k, m.options.k_act, rr);
    const QTensor v = int_dense(x, blk.v, m.options.k_act, rr);
    record(tape, site("q.out"), q);
    record(tape, site("k.out"), k);
    record(tape, site("v.out"), v);

    // Q.K^T per head into one (heads, T, T) accumulator, requantized with the
    // shared per-block dyadic (1/sqrt(dh) folded in).
    QTensor score_acc;
    score_acc.dims = {H, T, T};
    score_acc.scale = 1.0;
    score_acc.bits = 32;
    score_acc.data.resize(static_cast<std::size_t>(H * T * T));
    for (std::int64_t hh = 0; hh < H; ++hh) {
        const QTensor qh = slice_cols(q, hh * dh, dh);
        const QTensor kh = slice_cols(k, hh * dh, dh);
        const QTensor acc = int_matmul_acc(qh, kh, 1.0);
        std::copy(acc.data.begin(), acc.data.end(), score_acc.data.begin() + hh * T * T);
    }
    std::int64_t sat = 0;
    const QTensor scores = requantize(score_acc, blk.score_requant, blk.score_bits,
                                      blk.score_scale, rr, &sat);
    bump(blk.score_saturations, sat);
    record(tape, site("attn.scores"), scores);

    const QTensor probs = shiftmax_fixed(scores, m.options.k_softmax, m.options.math,
                                         blk.softmax_i0, blk.prob_scale);
    record(tape, site("attn.probs"), probs);

    QTensor ctx_acc;
    ctx_acc.dims = {T, cfg.d_model};
    ctx_acc.scale = 1.0;
    ctx_acc.bits = 32;
    ctx_acc.data.resize(static_cast<std::size_t>(T * cfg.d_model));
    for (std::int64_t hh = 0; hh < H; ++hh) {
        const QTensor ph = slice_plane(probs, hh);
        const QTensor vh_t = transpose2d(slice_cols(v, hh * dh, dh));
        const QTensor acc = int_matmul_acc(ph, vh_t, 1.0); // (T, dh)
        for (std::int64_t i = 0; i < T; ++i) {
            for (std::int64_t e = 0; e < dh; ++e) {
                ctx_acc.data[static_cast<std::size_t>(i * cfg.d_model + hh * dh + e)] =
                    acc.data[static_cast<std::size_t>(i * dh + e)];
            }
        }
    }
    sat = 0;
    const QTensor ctx =
        requantize(ctx_acc, blk.ctx_requant, m.options.k_act, blk.ctx_scale, rr, &sat);
    bump(blk.ctx_saturations, sat);
    record(tape, site("attn.ctx"), ctx);

    const QTensor o = int_dense(ctx, blk.o, m.options.k_act, rr);
    record(tape, site("o.out"), o);
    return o;
}

QTensor mlp_impl(const QViTModel& m, const QBlock& blk, const QTensor& x,
                 std::int64_t bi, QTape* tape) {
    const RequantRounding rr = m.options.rounding;
    const auto site = [&](const char* leaf) { return block_site(bi, leaf); };

    const QTensor m1 = int_dense(x, blk.fc1, m.options.k_act, rr);
    record(tape, site("mlp1.out"), m1);

    const QTensor raw = shift_gelu_fixed(m1, m.options.k_sigma, m.options.math,
                                         blk.gelu_i0, blk.gelu_raw_scale);
    std::int64_t sat = 0;
    const QTensor g =
        requantize(raw, blk.gelu_requant, m.options.k_act, blk.gelu_out_scale, rr, &sat);
    bump(blk.gelu_saturations, sat);
    record(tape, site("gelu.out"), g);

    const QTensor m2 = int_dense(g, blk.fc2, m.options.k_act, rr);
    record(tape, site("mlp2.out"), m2);
    return m2;
}

} // namespace

QTensor msa_forward(const QViTModel& m, const QBlock& blk, const QTensor& x) {
    IntegerOnlyGuard guard;
    return msa_impl(m, blk, x, 0, nullptr);
}

QTensor mlp_forward(const QViTModel& m, const QBlock& blk, const QTensor& x) {
    IntegerOnlyGuard guard;
    return mlp_impl(m, blk, x, 0, nullptr);
}

QTensor patch_embed(const QViTModel& m, const QTensor& img) {
    IntegerOnlyGuard guard;
    const ModelConfig& cfg = m.config;
    validate(img);
    require(img.dims == std::vector<std::int64_t>(
                            {cfg.channels, cfg.image_size, cfg.image_size}),
            "patch_embed: image shape mismatch");
    require(img.scale == m.input_scale, "patch_embed: input scale mismatch");
    require(img.bits == 8, "patch_embed: input must be 8-bit");

    // im2col with the same layout as the FP oracle.
    const std::int64_t p = cfg.patch_size, side = cfg.patches_per_side();
    QTensor cols;
    cols.dims = {cfg.num_patches(), cfg.patch_dim()};
    cols.scale = img.scale;
    cols.bits = img.bits;
    cols.data.resize(static_cast<std::size_t>(cfg.num_patches() * cfg.patch_dim()));
    std::int64_t row = 0;
    for (std::int64_t py = 0; py < side; ++py) {
        for (std::int64_t px = 0; px < side; ++px, ++row) {
            std::int64_t col = 0;
            for (std::int64_t c = 0; c < cfg.channels; ++c) {
                for (std::int64_t dy = 0; dy < p; ++dy) {
                    for (std::int64_t dx = 0; dx < p; ++dx, ++col) {
                        const std::int64_t src =
                            (c * cfg.image_size + py * p + dy) * cfg.image_size + px * p + dx;
                        cols.data[static_cast<std::size_t>(row * cfg.patch_dim() + col)] =
                            img.data[static_cast<std::size_t>(src)];
                    }
                }
            }
        }
    }

    const QTensor patches = int_dense(cols, m.patch, m.options.k_act, m.options.rounding);

    QTensor tokens;
    tokens.dims = {cfg.num_tokens(), cfg.d_model};
    tokens.scale = m.embed_scale;
    tokens.bits = patches.bits;
    tokens.data.resize(static_cast<std::size_t>(cfg.num_tokens() * cfg.d_model));
    std::copy(m.cls_q.data.begin(), m.cls_q.data.end(), tokens.data.begin());
    std::copy(patches.data.begin(), patches.data.end(), tokens.data.begin() + cfg.d_model);

    // Positional add: both operands already sit on the embed scale, so the
    // residual alignment dyadics are exact identities.
    std::int64_t sat = 0;
    QTensor out = residual_add(tokens, DyadicScale{1, 0}, m.pos_q, DyadicScale{1, 0},
                               m.embed_scale, m.options.k_act <= 8 ? 8 : 16,
                               m.options.rounding, &sat);
    bump(m.embed_saturations, sat);
    return out;
}

QTensor block_forward(const QViTModel& m, const QBlock& blk, const QTensor& x,
                      std::int64_t block_index, QTape* tape) {
    IntegerOnlyGuard guard;
    const RequantRounding rr = m.options.rounding;
    const auto site = [&](const char* leaf) { return block_site(block_index, leaf); };

    const QTensor h = i_layernorm(x, blk.ln1, m.options.k_act, m.options.math, rr);
    record(tape, site("ln1.out"), h);
    const QTensor o = msa_impl(m, blk, h, block_index, tape);

    std::int64_t sat = 0;
    const QTensor x1 = residual_add(o, blk.res1_main, x, blk.res1_skip, blk.res1_scale,
                                    8, rr, &sat);
    bump(blk.res_saturations, sat);
    record(tape, site("res1.out"), x1);

    const QTensor h2 = i_layernorm(x1, blk.ln2, m.options.k_act, m.options.math, rr);
    record(tape, site("ln2.out"), h2);
    const QTensor m2 = mlp_impl(m, blk, h2, block_index, tape);

    sat = 0;
    QTensor x2 = residual_add(m2, blk.res2_main, x1, blk.res2_skip, blk.res2_scale,
                              8, rr, &sat);
    bump(blk.res_saturations, sat);
    record(tape, site("res2.out"), x2);
    return x2;
}

QTensor model_forward(const QViTModel& m, const QTensor& img, QTape* tape) {
    IntegerOnlyGuard guard;
    QTensor x = patch_embed(m, img);
    record(tape, "embed.out", x);
    for (std::size_t bi = 0; bi < m.blocks.size(); ++bi) {
        x = block_forward(m, m.blocks[bi], x, static_cast<std::int64_t>(bi), tape);
    }
    const QTensor f = i_layernorm(x, m.final_ln, m.options.k_act, m.options.math,
                                  m.options.rounding);
    record(tape, "final_ln.out", f);

    QTensor cls_row;
    cls_row.dims = {1, m.config.d_model};
    cls_row.scale = f.scale;
    cls_row.bits = f.bits;
    cls_row.data.assign(f.data.begin(), f.data.begin() + m.config.d_model);

    const QTensor logits2d = int_dense_acc(cls_row, m.head);
    QTensor logits;
    logits.dims = {m.config.num_classes};
    logits.scale = m.logits_scale;
    logits.bits = 32;
    logits.data = logits2d.data;
    record(tape, "logits", logits);
    return logits;
}

std::vector<std::pair<std::string, std::int64_t>> collect_saturations(const QViTModel& m) {
    std::vector<std::pair<std::string, std::int64_t>> out;
    out.emplace_back("patch", m.patch.saturations);
    out.emplace_back("embed.pos_add", m.embed_saturations);
    for (std::size_t bi = 0; bi < m.blocks.size(); ++bi) {
        const QBlock& b = m.blocks[bi];
        const std::string pre = "block" + std::to_string(bi) + ".";
        out.emplace_back(pre + "ln1", b.ln1.saturations);
        out.emplace_back(pre + "q", b.q.saturations);
        out.emplace_back(pre + "k", b.k.saturations);
        out.emplace_back(pre + "v", b.v.saturations);
        out.emplace_back(pre + "attn.scores", b.score_saturations);
        out.emplace_back(pre + "attn.ctx", b.ctx_saturations);
        out.emplace_back(pre + "o", b.o.saturations);
        out.emplace_back(pre + "ln2", b.ln2.saturations);
        out.emplace_back(pre + "fc1", b.fc1.saturations);
        out.emplace_back(pre + "gelu", b.gelu_saturations);
        out.emplace_back(pre + "fc2", b.fc2.saturations);
        out.emplace_back(pre + "res", b.res_saturations);
    }
    out.emplace_back("final_ln", m.final_ln.saturations);
    return out;
}

void reset_saturations(const QViTModel& m) {
    m.patch.saturations = 0;
    m.embed_saturations = 0;
    for (const QBlock& b : m.blocks) {
        b.ln1.saturations = 0;
        b.q.saturations = 0;
        b.k.saturations = 0;
        b.v.saturations = 0;
        b.score_saturations = 0;
        b.ctx_saturations = 0;
        b.o.saturations = 0;
        b.ln2.saturations = 0;
        b.fc1.saturations = 0;
        b.gelu_saturations = 0;
        b.fc2.saturations = 0;
        b.res_saturations = 0;
    }
    m.final_ln.saturations = 0;
}

} // namespace intvit
