// intvit: integer-only vision transformer inference at desk scale.
//
// Subcommands: gen-model, calibrate, quantize, infer, infer-fp, compare,
// kernel-test. Exit codes: 0 success or pass, 1 pinned tolerance failure,
// 2 usage or environment error. Every command takes --seed and produces
// byte-identical outputs for identical invocations.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "intvit/model_io.hpp"
#include "intvit/oracle.hpp"
#include "intvit/tensor_io.hpp"

using namespace intvit;

namespace {

constexpr std::uint64_t kStride = 0x9E3779B97F4A7C15ULL;

// Per-index streams so input i is the same tensor no matter the batch size.
FpTensor random_image(const ModelConfig& cfg, std::uint64_t seed, std::int64_t index) {
    Rng rng{seed + kStride * (static_cast<std::uint64_t>(index) + 1)};
    FpTensor img = make_fp_tensor({cfg.channels, cfg.image_size, cfg.image_size});
    for (auto& v : img.data) v = 2.0 * rng_unit(rng) - 1.0;
    return img;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_text_file(const std::string& path, const std::string& s) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
    if (!out.good()) throw std::runtime_error("write failed: " + path);
}

// --config FILE holds {"flag-name": value} defaults for the subcommand.
// The tokens are spliced in right after the subcommand name, so explicit
// flags given on the command line win (every scalar option takes the last
// occurrence).
std::vector<std::string> expand_config(std::vector<std::string> args) {
    std::string path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            path = args[i + 1];
            args.erase(args.begin() + static_cast<std::ptrdiff_t>(i),
                       args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
            break;
        }
        if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
            args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
            break;
        }
    }
    if (path.empty()) return args;
    if (args.empty() || args[0].rfind("-", 0) == 0) {
        throw std::runtime_error("--config requires a subcommand");
    }
    ojson j;
    try {
        j = ojson::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("config: invalid JSON: " + std::string(e.what()));
    }
    if (!j.is_object()) throw std::runtime_error("config: expected a JSON object");
    std::vector<std::string> tokens;
    for (const auto& [key, value] : j.items()) {
        const std::string flag = "--" + key;
        if (value.is_boolean()) {
            if (value.get<bool>()) tokens.push_back(flag);
        } else if (value.is_array()) {
            for (const auto& el : value) {
                tokens.push_back(flag);
                tokens.push_back(el.is_string() ? el.get<std::string>() : el.dump());
            }
        } else {
            tokens.push_back(flag);
            tokens.push_back(value.is_string() ? value.get<std::string>() : value.dump());
        }
    }
    args.insert(args.begin() + 1, tokens.begin(), tokens.end());
    return args;
}

RequantRounding parse_rounding(const std::string& s) {
    if (s == "nearest") return RequantRounding::Nearest;
    if (s == "floor") return RequantRounding::Floor;
    throw std::invalid_argument("unknown rounding mode: " + s + " (nearest|floor)");
}

ojson options_to_json(const QuantizeOptions& o) {
    ojson j;
    j["N"] = o.math.N;
    j["M"] = o.math.M;
    j["iters"] = o.math.iters;
    j["rounding"] = o.rounding == RequantRounding::Nearest ? "nearest" : "floor";
    j["dyadic_c"] = o.dyadic_c;
    j["k_act"] = o.k_act;
    j["k_softmax"] = o.k_softmax;
    j["score_bits"] = o.score_bits;
    j["k_sigma"] = o.k_sigma;
    j["ln_p"] = o.ln_p;
    return j;
}

ojson config_to_json(const ModelConfig& c) {
    ojson j;
    j["image_size"] = c.image_size;
    j["patch_size"] = c.patch_size;
    j["channels"] = c.channels;
    j["d_model"] = c.d_model;
    j["heads"] = c.heads;
    j["mlp_ratio"] = c.mlp_ratio;
    j["depth"] = c.depth;
    j["num_classes"] = c.num_classes;
    return j;
}

// ---------------------------------------------------------------------------
// Flag bundles shared by several commands.
// ---------------------------------------------------------------------------

void scalar(CLI::Option* opt) { opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast); }

struct ModelFlags {
    ModelConfig cfg;
    void attach(CLI::App* cmd) {
        scalar(cmd->add_option("--image-size", cfg.image_size, "input image side"));
        scalar(cmd->add_option("--patch-size", cfg.patch_size, "patch side"));
        scalar(cmd->add_option("--channels", cfg.channels, "input channels"));
        scalar(cmd->add_option("--d-model", cfg.d_model, "embedding width"));
        scalar(cmd->add_option("--heads", cfg.heads, "attention heads"));
        scalar(cmd->add_option("--mlp-ratio", cfg.mlp_ratio, "mlp hidden multiple"));
        scalar(cmd->add_option("--depth", cfg.depth, "encoder blocks"));
        scalar(cmd->add_option("--classes", cfg.num_classes, "classifier outputs"));
    }
};

struct QuantFlags {
    QuantizeOptions opt;
    std::string rounding = "nearest";
    void attach(CLI::App* cmd) {
        scalar(cmd->add_option("--exp-n", opt.math.N, "shift_exp output precision N"));
        scalar(cmd->add_option("--div-m", opt.math.M, "int_div reciprocal precision M"));
        scalar(cmd->add_option("--isqrt-iters", opt.math.iters, "isqrt Newton iterations"));
        scalar(cmd->add_option("--requant-rounding", rounding, "requantize rounding (nearest|floor)"));
        scalar(cmd->add_option("--dyadic-c", opt.dyadic_c, "dyadic shift budget c"));
        scalar(cmd->add_option("--k-softmax", opt.k_softmax, "shiftmax output bits"));
        scalar(cmd->add_option("--score-bits", opt.score_bits, "attention score bits (8|16)"));
        scalar(cmd->add_option("--k-sigma", opt.k_sigma, "shift_gelu sigmoid bits"));
        scalar(cmd->add_option("--ln-p", opt.ln_p, "layernorm fraction bits p"));
    }
    QuantizeOptions resolve() const {
        QuantizeOptions o = opt;
        o.rounding = parse_rounding(rounding);
        return o;
    }
};

// ---------------------------------------------------------------------------
// Command implementations. Each returns the process exit code.
// ---------------------------------------------------------------------------

int cmd_gen_model(const std::string& out, const ModelConfig& cfg, std::uint64_t seed) {
    const FpViTModel m = gen_fp_model(cfg, seed);
    save_fp_model(out, m);
    std::printf("wrote fp model to %s (depth %lld, d_model %lld, heads %lld, %lld classes)\n",
                out.c_str(), static_cast<long long>(cfg.depth),
                static_cast<long long>(cfg.d_model), static_cast<long long>(cfg.heads),
                static_cast<long long>(cfg.num_classes));
    return 0;
}

int cmd_calibrate(const std::string& model_dir, const std::string& out,
                  std::int64_t inputs, std::uint64_t seed) {
    if (inputs < 1) throw std::invalid_argument("--inputs must be >= 1");
    const FpViTModel m = load_fp_model(model_dir);
    CalibStats stats;
    for (std::int64_t i = 0; i < inputs; ++i) {
        FpTape tape;
        fp_forward(m, random_image(m.config, seed, i), &tape);
        fold_max_abs(tape, stats);
    }
    save_calibration(out, stats, seed, inputs);
    std::printf("wrote calibration of %lld sites over %lld inputs to %s\n",
                static_cast<long long>(stats.size()), static_cast<long long>(inputs),
                out.c_str());
    return 0;
}

int cmd_quantize(const std::string& model_dir, const std::string& calib_path,
                 const std::string& out, const QuantizeOptions& opt) {
    const FpViTModel fp = load_fp_model(model_dir);
    const CalibStats calib = load_calibration(calib_path);
    const QViTModel q = build_qmodel(fp, calib, opt);
    save_qmodel(out, q);

    std::printf("wrote quantized model to %s\n", out.c_str());
    std::printf("%-24s %s\n", "site", "scale");
    const auto row = [](const std::string& name, double scale) {
        std::printf("%-24s %.10g\n", name.c_str(), scale);
    };
    row("input", q.input_scale);
    row("embed", q.embed_scale);
    for (std::size_t i = 0; i < q.blocks.size(); ++i) {
        const QBlock& b = q.blocks[i];
        const std::string pre = "block" + std::to_string(i) + ".";
        row(pre + "ln1", b.ln1.out_scale);
        row(pre + "q", b.q.out_scale);
        row(pre + "k", b.k.out_scale);
        row(pre + "v", b.v.out_scale);
        row(pre + "attn.scores", b.score_scale);
        row(pre + "attn.probs", b.prob_scale);
        row(pre + "attn.ctx", b.ctx_scale);
        row(pre + "o", b.o.out_scale);
        row(pre + "res1", b.res1_scale);
        row(pre + "ln2", b.ln2.out_scale);
        row(pre + "mlp1", b.fc1.out_scale);
        row(pre + "gelu", b.gelu_out_scale);
        row(pre + "mlp2", b.fc2.out_scale);
        row(pre + "res2", b.res2_scale);
    }
    row("final_ln", q.final_ln.out_scale);
    row("logits", q.logits_scale);
    return 0;
}

std::vector<FpTensor> gather_inputs(const ModelConfig& cfg, const std::string& input_path,
                                    std::int64_t inputs, std::uint64_t seed) {
    std::vector<FpTensor> images;
    if (!input_path.empty()) {
        images.push_back(read_fp_tensor(input_path));
    } else {
        if (inputs < 1) throw std::invalid_argument("--inputs must be >= 1");
        for (std::int64_t i = 0; i < inputs; ++i) {
            images.push_back(random_image(cfg, seed, i));
        }
    }
    return images;
}

int cmd_infer(const std::string& model_dir, const std::string& input_path,
              std::int64_t inputs, std::uint64_t seed, const std::string& out) {
    const QViTModel m = load_qmodel(model_dir);
    const std::vector<FpTensor> images = gather_inputs(m.config, input_path, inputs, seed);

    ojson results = ojson::array();
    for (std::size_t i = 0; i < images.size(); ++i) {
        const QTensor logits = model_forward(m, quantize_input(m, images[i]));
        const auto arg = std::max_element(logits.data.begin(), logits.data.end()) -
                         logits.data.begin();
        std::printf("input %zu: argmax %lld\n", i, static_cast<long long>(arg));
        ojson r;
        r["index"] = i;
        r["argmax"] = arg;
        r["logits_scale"] = logits.scale;
        r["logits"] = logits.data;
        results.push_back(std::move(r));
    }
    if (!out.empty()) {
        ojson j;
        j["format"] = "inference";
        j["version"] = 1;
        ojson cfg;
        cfg["command"] = "infer";
        cfg["model"] = model_dir;
        cfg["input"] = input_path;
        cfg["inputs"] = static_cast<std::int64_t>(images.size());
        cfg["seed"] = seed;
        cfg["model_config"] = config_to_json(m.config);
        cfg["options"] = options_to_json(m.options);
        j["config"] = std::move(cfg);
        j["results"] = std::move(results);
        write_text_file(out, j.dump(2) + "\n");
    }
    return 0;
}

int cmd_infer_fp(const std::string& model_dir, const std::string& input_path,
                 std::int64_t inputs, std::uint64_t seed, const std::string& gelu,
                 const std::string& out) {
    GeluForm form;
    if (gelu == "erf") {
        form = GeluForm::Erf;
    } else if (gelu == "sigmoid") {
        form = GeluForm::Sigmoid;
    } else {
        throw std::invalid_argument("unknown gelu form: " + gelu + " (erf|sigmoid)");
    }
    const FpViTModel m = load_fp_model(model_dir);
    const std::vector<FpTensor> images = gather_inputs(m.config, input_path, inputs, seed);

    ojson results = ojson::array();
    for (std::size_t i = 0; i < images.size(); ++i) {
        const FpTensor logits = fp_forward(m, images[i], nullptr, form);
        const auto arg = std::max_element(logits.data.begin(), logits.data.end()) -
                         logits.data.begin();
        std::printf("input %zu: argmax %lld\n", i, static_cast<long long>(arg));
        ojson r;
        r["index"] = i;
        r["argmax"] = arg;
        r["logits"] = logits.data;
        results.push_back(std::move(r));
    }
    if (!out.empty()) {
        ojson j;
        j["format"] = "inference-fp";
        j["version"] = 1;
        ojson cfg;
        cfg["command"] = "infer-fp";
        cfg["model"] = model_dir;
        cfg["input"] = input_path;
        cfg["inputs"] = static_cast<std::int64_t>(images.size());
        cfg["seed"] = seed;
        cfg["gelu"] = gelu;
        cfg["model_config"] = config_to_json(m.config);
        j["config"] = std::move(cfg);
        j["results"] = std::move(results);
        write_text_file(out, j.dump(2) + "\n");
    }
    return 0;
}

bool same_config(const ModelConfig& a, const ModelConfig& b) {
    return a.image_size == b.image_size && a.patch_size == b.patch_size &&
           a.channels == b.channels && a.d_model == b.d_model && a.heads == b.heads &&
           a.mlp_ratio == b.mlp_ratio && a.depth == b.depth &&
           a.num_classes == b.num_classes;
}

int cmd_compare(const std::string& fp_dir, const std::string& q_dir, std::int64_t inputs,
                std::uint64_t seed, const std::string& out) {
    if (inputs < 1) throw std::invalid_argument("--inputs must be >= 1");
    const FpViTModel fp = load_fp_model(fp_dir);
    const QViTModel q = load_qmodel(q_dir);
    if (!same_config(fp.config, q.config)) {
        throw std::invalid_argument("fp and quantized model configs differ");
    }
    reset_saturations(q);

    ErrorReport rep;
    rep.kind = "model-compare";
    rep.seed = seed;
    rep.tolerances["logits.cosine"] = tol::e2e_cosine;
    rep.tolerances["logits.argmax"] = tol::e2e_argmax;

    std::vector<std::size_t> order; // site index by first-seen q tape order
    std::map<std::string, std::size_t> index;
    for (std::int64_t i = 0; i < inputs; ++i) {
        const FpTensor img = random_image(fp.config, seed, i);
        FpTape ftape;
        fp_forward(fp, img, &ftape);
        QTape qtape;
        model_forward(q, quantize_input(q, img), &qtape);

        std::map<std::string, const FpTensor*> fmap;
        for (const FpTapeEntry& e : ftape) fmap[e.site] = &e.value;
        for (const QTapeEntry& e : qtape) {
            const auto fit = fmap.find(e.site);
            if (fit == fmap.end()) continue;
            auto [it, fresh] = index.try_emplace(e.site, rep.sites.size());
            if (fresh) {
                rep.sites.push_back(SiteStats{});
                rep.sites.back().site = e.site;
            }
            rep.sites[it->second].fold(dequantize(e.value), *fit->second);
        }
    }

    ojson sat;
    for (const auto& [name, count] : collect_saturations(q)) sat[name] = count;
    ojson cfg;
    cfg["command"] = "compare";
    cfg["fp_model"] = fp_dir;
    cfg["q_model"] = q_dir;
    cfg["inputs"] = inputs;
    cfg["seed"] = seed;
    cfg["model_config"] = config_to_json(fp.config);
    cfg["options"] = options_to_json(q.options);
    cfg["saturations"] = std::move(sat);
    rep.config = std::move(cfg);

    rep.pass = false;
    for (const SiteStats& s : rep.sites) {
        if (s.site == "logits") {
            rep.pass = s.mean_cosine() >= tol::e2e_cosine && s.agreement() >= tol::e2e_argmax;
        }
    }
    std::fputs(rep.to_table().c_str(), stdout);
    if (!out.empty()) write_text_file(out, rep.to_json().dump(2) + "\n");
    return rep.pass ? 0 : 1;
}

int cmd_kernel_test(const std::string& kernel, const SweepSpec& spec, std::uint64_t seed,
                    const std::string& out) {
    const ErrorReport rep = kernel_sweep(kernel, spec, seed);
    std::fputs(rep.to_table().c_str(), stdout);
    if (!out.empty()) write_text_file(out, rep.to_json().dump(2) + "\n");
    return rep.pass ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"integer-only vision transformer inference engine"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "print help for every subcommand");

    std::uint64_t seed = 42;
    std::string out, model_dir, calib_path, input_path, fp_dir, q_dir, gelu = "erf";
    std::int64_t inputs = -1;
    ModelFlags model_flags;
    QuantFlags quant_flags;
    SweepSpec sweep;
    std::string kernel;

    CLI::App* gen = app.add_subcommand("gen-model", "generate a deterministic fp model");
    scalar(gen->add_option("--out", out, "model directory")->required());
    scalar(gen->add_option("--seed", seed, "rng seed"));
    model_flags.attach(gen);

    CLI::App* cal = app.add_subcommand("calibrate", "min-max activation statistics");
    scalar(cal->add_option("--model", model_dir, "fp model directory")->required());
    scalar(cal->add_option("--out", out, "calibration json path")->required());
    scalar(cal->add_option("--inputs", inputs, "number of calibration images"));
    scalar(cal->add_option("--seed", seed, "rng seed"));

    CLI::App* qnt = app.add_subcommand("quantize", "freeze an fp model to integers");
    scalar(qnt->add_option("--model", model_dir, "fp model directory")->required());
    scalar(qnt->add_option("--calibration", calib_path, "calibration json path")->required());
    scalar(qnt->add_option("--out", out, "quantized model directory")->required());
    quant_flags.attach(qnt);

    CLI::App* inf = app.add_subcommand("infer", "integer-only inference");
    scalar(inf->add_option("--model", model_dir, "quantized model directory")->required());
    scalar(inf->add_option("--input", input_path, "ITNS fp image tensor"));
    scalar(inf->add_option("--inputs", inputs, "generate this many random inputs"));
    scalar(inf->add_option("--seed", seed, "rng seed"));
    scalar(inf->add_option("--out", out, "logits json path"));

    CLI::App* inff = app.add_subcommand("infer-fp", "floating-point oracle inference");
    scalar(inff->add_option("--model", model_dir, "fp model directory")->required());
    scalar(inff->add_option("--input", input_path, "ITNS fp image tensor"));
    scalar(inff->add_option("--inputs", inputs, "generate this many random inputs"));
    scalar(inff->add_option("--seed", seed, "rng seed"));
    scalar(inff->add_option("--gelu", gelu, "gelu form (erf|sigmoid)"));
    scalar(inff->add_option("--out", out, "logits json path"));

    CLI::App* cmp = app.add_subcommand("compare", "integer vs fp error report");
    scalar(cmp->add_option("--fp-model", fp_dir, "fp model directory")->required());
    scalar(cmp->add_option("--q-model", q_dir, "quantized model directory")->required());
    scalar(cmp->add_option("--inputs", inputs, "number of random inputs"));
    scalar(cmp->add_option("--seed", seed, "rng seed"));
    scalar(cmp->add_option("--out", out, "report json path"));

    CLI::App* kt = app.add_subcommand("kernel-test", "kernel sweep vs oracle");
    kt->add_option("kernel", kernel, "shiftmax|shiftgelu|layernorm|isqrt|intdiv|requant")
        ->required();
    scalar(kt->add_option("--trials", sweep.trials, "trials per lane"));
    scalar(kt->add_option("--d", sweep.d, "row width"));
    kt->add_option("--scale", sweep.scales, "input scale (repeatable)");
    scalar(kt->add_option("--k-out", sweep.k_out, "output bits"));
    scalar(kt->add_option("--exp-n", sweep.math.N, "shift_exp output precision N"));
    scalar(kt->add_option("--div-m", sweep.math.M, "int_div reciprocal precision M"));
    scalar(kt->add_option("--isqrt-iters", sweep.math.iters, "isqrt Newton iterations"));
    scalar(kt->add_option("--seed", seed, "rng seed"));
    scalar(kt->add_option("--out", out, "report json path"));

    try {
        std::vector<std::string> args(argv + 1, argv + argc);
        args = expand_config(std::move(args));
        std::reverse(args.begin(), args.end());
        app.parse(std::move(args));

        if (*gen) return cmd_gen_model(out, model_flags.cfg, seed);
        if (*cal) return cmd_calibrate(model_dir, out, inputs < 0 ? 64 : inputs, seed);
        if (*qnt) return cmd_quantize(model_dir, calib_path, out, quant_flags.resolve());
        if (*inf) return cmd_infer(model_dir, input_path, inputs < 0 ? 1 : inputs, seed, out);
        if (*inff) {
            return cmd_infer_fp(model_dir, input_path, inputs < 0 ? 1 : inputs, seed, gelu, out);
        }
        if (*cmp) return cmd_compare(fp_dir, q_dir, inputs < 0 ? 1000 : inputs, seed, out);
        if (*kt) return cmd_kernel_test(kernel, sweep, seed, out);
        return 2;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
