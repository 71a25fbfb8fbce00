#include "intvit/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>

#include "intvit/quant.hpp"

namespace intvit {

namespace {

struct RowShape {
    std::int64_t rows;
    std::int64_t d;
};

RowShape row_shape(const FpTensor& t) {
    if (t.rank() < 1) throw std::invalid_argument("oracle: rank must be >= 1");
    const std::int64_t d = t.dims.back();
    return {t.numel() / d, d};
}

} // namespace

FpTensor fp_softmax(const FpTensor& x) {
    validate(x);
    const auto [rows, d] = row_shape(x);
    FpTensor out;
    out.dims = x.dims;
    out.data.resize(x.data.size());
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* in = x.data.data() + r * d;
        double* o = out.data.data() + r * d;
        double mx = in[0];
        for (std::int64_t j = 1; j < d; ++j) mx = std::max(mx, in[j]);
        double sum = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
            o[j] = std::exp(in[j] - mx);
            sum += o[j];
        }
        for (std::int64_t j = 0; j < d; ++j) o[j] /= sum;
    }
    return out;
}

FpTensor fp_gelu_erf(const FpTensor& x) {
    validate(x);
    FpTensor out;
    out.dims = x.dims;
    out.data.resize(x.data.size());
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const double v = x.data[i];
        out.data[i] = 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2_v<double>));
    }
    return out;
}

FpTensor fp_gelu_sigmoid(const FpTensor& x) {
    validate(x);
    FpTensor out;
    out.dims = x.dims;
    out.data.resize(x.data.size());
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const double v = x.data[i];
        out.data[i] = v / (1.0 + std::exp(-1.702 * v));
    }
    return out;
}

FpTensor fp_layernorm(const FpTensor& x, const FpTensor& gamma, const FpTensor& beta) {
    validate(x);
    validate(gamma);
    validate(beta);
    const auto [rows, d] = row_shape(x);
    if (gamma.numel() != d || beta.numel() != d) {
        throw std::invalid_argument("fp_layernorm: affine length mismatch");
    }
    FpTensor out;
    out.dims = x.dims;
    out.data.resize(x.data.size());
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* in = x.data.data() + r * d;
        double* o = out.data.data() + r * d;
        double mean = 0.0;
        for (std::int64_t j = 0; j < d; ++j) mean += in[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::int64_t j = 0; j < d; ++j) var += (in[j] - mean) * (in[j] - mean);
        var /= static_cast<double>(d); // population variance
        const double denom = std::sqrt(var);
        for (std::int64_t j = 0; j < d; ++j) {
            const double n = (var == 0.0) ? 0.0 : (in[j] - mean) / denom;
            o[j] = n * gamma.data[static_cast<std::size_t>(j)] +
                   beta.data[static_cast<std::size_t>(j)];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// FP forward pass.
// ---------------------------------------------------------------------------

namespace {

void record(FpTape* tape, const std::string& site, const FpTensor& t) {
    if (tape != nullptr) tape->push_back({site, t});
}

// x (rows, in) * w (out, in)^T + b
FpTensor fp_dense(const FpTensor& x, const FpDense& d) {
    const std::int64_t rows = x.dims[0], in_f = x.dims[1], out_f = d.w.dims[0];
    if (d.w.dims[1] != in_f) throw std::invalid_argument("fp_dense: shape mismatch");
    FpTensor out = make_fp_tensor({rows, out_f});
    for (std::int64_t i = 0; i < rows; ++i) {
        for (std::int64_t j = 0; j < out_f; ++j) {
            double acc = d.b.data.empty() ? 0.0 : d.b.data[static_cast<std::size_t>(j)];
            const double* rx = x.data.data() + i * in_f;
            const double* rw = d.w.data.data() + j * in_f;
            for (std::int64_t k = 0; k < in_f; ++k) acc += rx[k] * rw[k];
            out.data[static_cast<std::size_t>(i * out_f + j)] = acc;
        }
    }
    return out;
}

} // namespace

// Patch extraction shared between the FP and integer paths: patches scan
// row-major over the patch grid; inside a patch the layout is channel, then
// pixel row, then pixel column.
FpTensor im2col_fp(const FpTensor& img, const ModelConfig& cfg) {
    if (img.dims != std::vector<std::int64_t>{cfg.channels, cfg.image_size, cfg.image_size}) {
        throw std::invalid_argument("im2col: image shape mismatch");
    }
    const std::int64_t p = cfg.patch_size, side = cfg.patches_per_side();
    FpTensor out = make_fp_tensor({cfg.num_patches(), cfg.patch_dim()});
    std::int64_t row = 0;
    for (std::int64_t py = 0; py < side; ++py) {
        for (std::int64_t px = 0; px < side; ++px, ++row) {
            std::int64_t col = 0;
            for (std::int64_t c = 0; c < cfg.channels; ++c) {
                for (std::int64_t dy = 0; dy < p; ++dy) {
                    for (std::int64_t dx = 0; dx < p; ++dx, ++col) {
                        const std::int64_t src =
                            (c * cfg.image_size + py * p + dy) * cfg.image_size + px * p + dx;
                        out.data[static_cast<std::size_t>(row * cfg.patch_dim() + col)] =
                            img.data[static_cast<std::size_t>(src)];
                    }
                }
            }
        }
    }
    return out;
}

FpTensor fp_forward(const FpViTModel& m, const FpTensor& img, FpTape* tape, GeluForm gelu) {
    validate(img);
    const ModelConfig& cfg = m.config;
    const std::int64_t T = cfg.num_tokens(), D = cfg.d_model;
    const std::int64_t H = cfg.heads, dh = cfg.head_dim();

    record(tape, "input", img);

    // Patch embedding, class token, positional embedding.
    const FpTensor cols = im2col_fp(img, cfg);
    const FpTensor patches = fp_dense(cols, m.patch);
    FpTensor x = make_fp_tensor({T, D});
    for (std::int64_t j = 0; j < D; ++j) x.data[static_cast<std::size_t>(j)] = m.cls.data[static_cast<std::size_t>(j)];
    std::copy(patches.data.begin(), patches.data.end(), x.data.begin() + D);
    for (std::int64_t i = 0; i < T * D; ++i) {
        x.data[static_cast<std::size_t>(i)] += m.pos.data[static_cast<std::size_t>(i)];
    }
    record(tape, "embed.out", x);

    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    for (std::size_t bi = 0; bi < m.blocks.size(); ++bi) {
        const FpBlock& blk = m.blocks[bi];
        const auto site = [&](const char* leaf) {
            return block_site(static_cast<std::int64_t>(bi), leaf);
        };

        // Attention.
        const FpTensor h = fp_layernorm(x, blk.ln1_gamma, blk.ln1_beta);
        record(tape, site("ln1.out"), h);
        const FpTensor q = fp_dense(h, blk.q);
        const FpTensor k = fp_dense(h, blk.k);
        const FpTensor v = fp_dense(h, blk.v);
        record(tape, site("q.out"), q);
        record(tape, site("k.out"), k);
        record(tape, site("v.out"), v);

        FpTensor scores = make_fp_tensor({H, T, T});
        for (std::int64_t hh = 0; hh < H; ++hh) {
            for (std::int64_t i = 0; i < T; ++i) {
                for (std::int64_t j = 0; j < T; ++j) {
                    double acc = 0.0;
                    for (std::int64_t e = 0; e < dh; ++e) {
                        acc += q.data[static_cast<std::size_t>(i * D + hh * dh + e)] *
                               k.data[static_cast<std::size_t>(j * D + hh * dh + e)];
                    }
                    scores.data[static_cast<std::size_t>((hh * T + i) * T + j)] =
                        acc * inv_sqrt_dh;
                }
            }
        }
        record(tape, site("attn.scores"), scores);
        const FpTensor probs = fp_softmax(scores);
        record(tape, site("attn.probs"), probs);

        FpTensor ctx = make_fp_tensor({T, D});
        for (std::int64_t hh = 0; hh < H; ++hh) {
            for (std::int64_t i = 0; i < T; ++i) {
                for (std::int64_t e = 0; e < dh; ++e) {
                    double acc = 0.0;
                    for (std::int64_t j = 0; j < T; ++j) {
                        acc += probs.data[static_cast<std::size_t>((hh * T + i) * T + j)] *
                               v.data[static_cast<std::size_t>(j * D + hh * dh + e)];
                    }
                    ctx.data[static_cast<std::size_t>(i * D + hh * dh + e)] = acc;
                }
            }
        }
        record(tape, site("attn.ctx"), ctx);

        const FpTensor o = fp_dense(ctx, blk.o);
        record(tape, site("o.out"), o);
        for (std::int64_t i = 0; i < T * D; ++i) {
            x.data[static_cast<std::size_t>(i)] += o.data[static_cast<std::size_t>(i)];
        }
        record(tape, site("res1.out"), x);

        // MLP.
        const FpTensor h2 = fp_layernorm(x, blk.ln2_gamma, blk.ln2_beta);
        record(tape, site("ln2.out"), h2);
        const FpTensor m1 = fp_dense(h2, blk.fc1);
        record(tape, site("mlp1.out"), m1);
        const FpTensor g = (gelu == GeluForm::Erf) ? fp_gelu_erf(m1) : fp_gelu_sigmoid(m1);
        record(tape, site("gelu.out"), g);
        const FpTensor m2 = fp_dense(g, blk.fc2);
        record(tape, site("mlp2.out"), m2);
        for (std::int64_t i = 0; i < T * D; ++i) {
            x.data[static_cast<std::size_t>(i)] += m2.data[static_cast<std::size_t>(i)];
        }
        record(tape, site("res2.out"), x);
    }

    const FpTensor f = fp_layernorm(x, m.final_gamma, m.final_beta);
    record(tape, "final_ln.out", f);

    FpTensor cls_row = make_fp_tensor({1, D});
    std::copy(f.data.begin(), f.data.begin() + D, cls_row.data.begin());
    const FpTensor logits2d = fp_dense(cls_row, m.head);
    FpTensor logits;
    logits.dims = {cfg.num_classes};
    logits.data = logits2d.data;
    record(tape, "logits", logits);
    return logits;
}

void fold_max_abs(const FpTape& tape, CalibStats& stats) {
    for (const auto& e : tape) {
        double m = 0.0;
        for (double v : e.value.data) m = std::max(m, std::fabs(v));
        auto it = stats.find(e.site);
        if (it == stats.end()) {
            stats[e.site] = m;
        } else {
            it->second = std::max(it->second, m);
        }
    }
}

// ---------------------------------------------------------------------------
// Metrics.
// ---------------------------------------------------------------------------

namespace {

CompareStats compare_impl(const FpTensor& test, const FpTensor& ref) {
    if (test.dims != ref.dims) throw std::invalid_argument("compare: shape mismatch");
    CompareStats s;
    double dot = 0.0, na = 0.0, nb = 0.0, abs_sum = 0.0;
    for (std::size_t i = 0; i < test.data.size(); ++i) {
        const double a = test.data[i], b = ref.data[i];
        const double e = std::fabs(a - b);
        s.max_abs_err = std::max(s.max_abs_err, e);
        abs_sum += e;
        dot += a * b;
        na += a * a;
        nb += b * b;
    }
    s.mean_abs_err = abs_sum / static_cast<double>(test.data.size());
    if (na == 0.0 && nb == 0.0) {
        s.cosine = 1.0;
    } else if (na == 0.0 || nb == 0.0) {
        s.cosine = 0.0;
    } else {
        s.cosine = dot / (std::sqrt(na) * std::sqrt(nb));
    }

    const std::int64_t d = test.dims.back();
    const std::int64_t rows = test.numel() / d;
    std::int64_t agree = 0;
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* ta = test.data.data() + r * d;
        const double* tb = ref.data.data() + r * d;
        const std::int64_t ia = std::max_element(ta, ta + d) - ta;
        const std::int64_t ib = std::max_element(tb, tb + d) - tb;
        if (ia == ib) ++agree;
    }
    s.argmax_agreement = static_cast<double>(agree) / static_cast<double>(rows);
    return s;
}

} // namespace

CompareStats compare(const QTensor& int_out, const FpTensor& fp_out) {
    return compare_impl(dequantize(int_out), fp_out);
}

CompareStats compare_fp(const FpTensor& test, const FpTensor& ref) {
    return compare_impl(test, ref);
}

void SiteStats::fold(const FpTensor& test, const FpTensor& ref) {
    const CompareStats s = compare_fp(test, ref);
    max_abs_err = std::max(max_abs_err, s.max_abs_err);
    abs_err_sum += s.mean_abs_err * static_cast<double>(test.numel());
    cosine_sum += s.cosine;
    cosine_min = std::min(cosine_min, s.cosine);
    ++folds;
    const std::int64_t r = test.numel() / test.dims.back();
    rows += r;
    rows_agreeing += static_cast<std::int64_t>(std::llround(s.argmax_agreement * static_cast<double>(r)));
    count += test.numel();
}

double SiteStats::mean_abs_err() const {
    return count == 0 ? 0.0 : abs_err_sum / static_cast<double>(count);
}

double SiteStats::mean_cosine() const {
    return folds == 0 ? 1.0 : cosine_sum / static_cast<double>(folds);
}

double SiteStats::agreement() const {
    return rows == 0 ? 1.0 : static_cast<double>(rows_agreeing) / static_cast<double>(rows);
}

// ---------------------------------------------------------------------------
// ErrorReport.
// ---------------------------------------------------------------------------

ojson ErrorReport::to_json() const {
    ojson j;
    j["kind"] = kind;
    j["seed"] = seed;
    j["config"] = config;
    j["tolerances"] = tolerances;
    j["pass"] = pass;
    ojson arr = ojson::array();
    for (const SiteStats& s : sites) {
        ojson e;
        e["site"] = s.site;
        e["max_abs_err"] = s.max_abs_err;
        e["mean_abs_err"] = s.mean_abs_err();
        e["cosine"] = s.mean_cosine();
        e["cosine_min"] = s.cosine_min;
        e["argmax_agreement"] = s.agreement();
        // raw accumulators, kept so deserialization round-trips bit-exactly
        e["abs_err_sum"] = s.abs_err_sum;
        e["cosine_sum"] = s.cosine_sum;
        e["folds"] = s.folds;
        e["rows_agreeing"] = s.rows_agreeing;
        e["rows"] = s.rows;
        e["count"] = s.count;
        e["saturations"] = s.saturations;
        arr.push_back(std::move(e));
    }
    j["sites"] = std::move(arr);
    return j;
}

ErrorReport ErrorReport::from_json(const ojson& j) {
    ErrorReport r;
    r.kind = j.at("kind").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.config = j.at("config");
    r.tolerances = j.at("tolerances").get<std::map<std::string, double>>();
    r.pass = j.at("pass").get<bool>();
    for (const auto& e : j.at("sites")) {
        SiteStats s;
        s.site = e.at("site").get<std::string>();
        s.max_abs_err = e.at("max_abs_err").get<double>();
        s.cosine_min = e.at("cosine_min").get<double>();
        s.abs_err_sum = e.at("abs_err_sum").get<double>();
        s.cosine_sum = e.at("cosine_sum").get<double>();
        s.folds = e.at("folds").get<std::int64_t>();
        s.rows_agreeing = e.at("rows_agreeing").get<std::int64_t>();
        s.rows = e.at("rows").get<std::int64_t>();
        s.count = e.at("count").get<std::int64_t>();
        s.saturations = e.at("saturations").get<std::int64_t>();
        r.sites.push_back(std::move(s));
    }
    return r;
}

std::string ErrorReport::to_table() const {
    std::string out;
    char line[256];
    std::snprintf(line, sizeof line, "%-32s %12s %12s %9s %9s %6s\n",
                  "site", "max_abs_err", "mean_abs_err", "cosine", "agree", "sat");
    out += line;
    for (const SiteStats& s : sites) {
        std::snprintf(line, sizeof line, "%-32s %12.6f %12.6f %9.5f %9.5f %6lld\n",
                      s.site.c_str(), s.max_abs_err, s.mean_abs_err(), s.mean_cosine(),
                      s.agreement(), static_cast<long long>(s.saturations));
        out += line;
    }
    out += pass ? "overall: PASS\n" : "overall: FAIL\n";
    return out;
}

} // namespace intvit
