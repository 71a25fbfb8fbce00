#include "intvit/model_io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "intvit/tensor_io.hpp"

namespace intvit {

namespace fs = std::filesystem;

namespace {

std::string hex16(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (!in.good() && !in.eof()) throw std::runtime_error("read failed: " + path.string());
    return s;
}

void write_text(const fs::path& path, const std::string& s) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
    if (!out.good()) throw std::runtime_error("write failed: " + path.string());
}

// Content-addressed blob store under <dir>/blobs. Re-writing an existing
// hash verifies the stored bytes, so a collision cannot pass silently.
class BlobStore {
public:
    explicit BlobStore(const fs::path& dir) : dir_(dir / "blobs") {
        fs::create_directories(dir_);
    }

    template <typename T>
    std::string put(const T& tensor) {
        const std::vector<std::uint8_t> bytes = encode_tensor(tensor);
        const std::string name = hex16(fnv1a64(bytes.data(), bytes.size())) + ".itns";
        const fs::path path = dir_ / name;
        if (fs::exists(path)) {
            const std::string prev = read_text(path);
            if (prev.size() != bytes.size() ||
                !std::equal(bytes.begin(), bytes.end(),
                            reinterpret_cast<const std::uint8_t*>(prev.data()))) {
                throw std::runtime_error("blob hash collision at " + path.string());
            }
        } else {
            write_text(path, std::string(bytes.begin(), bytes.end()));
        }
        return name;
    }

private:
    fs::path dir_;
};

FpTensor blob_fp(const fs::path& dir, const std::string& name) {
    return read_fp_tensor((dir / "blobs" / name).string());
}

QTensor blob_q(const fs::path& dir, const std::string& name) {
    return read_q_tensor((dir / "blobs" / name).string());
}

ojson parse_manifest(const fs::path& dir, const char* format) {
    ojson j;
    try {
        j = ojson::parse(read_text(dir / "manifest.json"));
    } catch (const nlohmann::json::exception& e) {
        throw CorruptionError("manifest: invalid JSON: " + std::string(e.what()));
    }
    if (!j.is_object() || !j.contains("format") || !j["format"].is_string()) {
        throw FormatError("manifest: missing format field");
    }
    if (j["format"] != format) {
        throw FormatError("manifest: expected format " + std::string(format) + ", found " +
                          j["format"].get<std::string>());
    }
    if (!j.contains("version") || j["version"] != 1) {
        throw FormatError("manifest: unsupported version");
    }
    return j;
}

ojson config_json(const ModelConfig& c) {
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

ModelConfig config_from_json(const ojson& j) {
    ModelConfig c;
    c.image_size = j.at("image_size").get<std::int64_t>();
    c.patch_size = j.at("patch_size").get<std::int64_t>();
    c.channels = j.at("channels").get<std::int64_t>();
    c.d_model = j.at("d_model").get<std::int64_t>();
    c.heads = j.at("heads").get<std::int64_t>();
    c.mlp_ratio = j.at("mlp_ratio").get<std::int64_t>();
    c.depth = j.at("depth").get<std::int64_t>();
    c.num_classes = j.at("num_classes").get<std::int64_t>();
    return c;
}

ojson options_json(const QuantizeOptions& o) {
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

QuantizeOptions options_from_json(const ojson& j) {
    QuantizeOptions o;
    o.math.N = j.at("N").get<int>();
    o.math.M = j.at("M").get<int>();
    o.math.iters = j.at("iters").get<int>();
    const std::string r = j.at("rounding").get<std::string>();
    if (r == "nearest") {
        o.rounding = RequantRounding::Nearest;
    } else if (r == "floor") {
        o.rounding = RequantRounding::Floor;
    } else {
        throw CorruptionError("manifest: unknown rounding mode: " + r);
    }
    o.dyadic_c = j.at("dyadic_c").get<int>();
    o.k_act = j.at("k_act").get<int>();
    o.k_softmax = j.at("k_softmax").get<int>();
    o.score_bits = j.at("score_bits").get<int>();
    o.k_sigma = j.at("k_sigma").get<int>();
    o.ln_p = j.at("ln_p").get<int>();
    return o;
}

ojson dyadic_json(const DyadicScale& d) { return ojson{{"b", d.b}, {"c", d.c}}; }

DyadicScale dyadic_from_json(const ojson& j) {
    DyadicScale d;
    d.b = j.at("b").get<std::uint32_t>();
    d.c = j.at("c").get<std::int32_t>();
    return d;
}

QTensor bias_tensor(const std::vector<std::int64_t>& bias, double scale) {
    QTensor t;
    t.dims = {static_cast<std::int64_t>(bias.size())};
    t.data = bias;
    t.scale = scale;
    t.bits = 32;
    return t;
}

ojson dense_json(BlobStore& store, const DenseWeights& w) {
    ojson j;
    j["weight"] = store.put(w.weight);
    j["bias"] = w.bias.empty() ? ojson(nullptr)
                               : ojson(store.put(bias_tensor(w.bias, w.bias_scale)));
    j["in_scale"] = w.in_scale;
    j["bias_scale"] = w.bias_scale;
    j["out_scale"] = w.out_scale;
    j["out_requant"] = dyadic_json(w.out_requant);
    return j;
}

DenseWeights dense_from_json(const fs::path& dir, const ojson& j, const std::string& what) {
    DenseWeights w;
    w.weight = blob_q(dir, j.at("weight").get<std::string>());
    w.in_scale = j.at("in_scale").get<double>();
    w.bias_scale = j.at("bias_scale").get<double>();
    w.out_scale = j.at("out_scale").get<double>();
    w.out_requant = dyadic_from_json(j.at("out_requant"));
    if (!j.at("bias").is_null()) {
        const QTensor b = blob_q(dir, j.at("bias").get<std::string>());
        if (b.rank() != 1 || b.dims[0] != w.weight.dims.at(0)) {
            throw CorruptionError("model: bad bias shape for " + what);
        }
        if (b.scale != w.bias_scale) {
            throw CorruptionError("model: bias scale mismatch for " + what);
        }
        w.bias = b.data;
    }
    return w;
}

ojson layernorm_json(BlobStore& store, const LayerNormParams& p) {
    ojson j;
    j["gamma"] = store.put(p.gamma);
    j["beta"] = store.put(bias_tensor(p.beta, std::ldexp(p.gamma.scale, -p.p)));
    j["p"] = p.p;
    j["out_scale"] = p.out_scale;
    j["out_requant"] = dyadic_json(p.out_requant);
    return j;
}

LayerNormParams layernorm_from_json(const fs::path& dir, const ojson& j,
                                    const std::string& what) {
    LayerNormParams p;
    p.gamma = blob_q(dir, j.at("gamma").get<std::string>());
    p.p = j.at("p").get<int>();
    p.out_scale = j.at("out_scale").get<double>();
    p.out_requant = dyadic_from_json(j.at("out_requant"));
    const QTensor b = blob_q(dir, j.at("beta").get<std::string>());
    if (b.dims != p.gamma.dims) {
        throw CorruptionError("model: beta shape mismatch for " + what);
    }
    if (b.scale != std::ldexp(p.gamma.scale, -p.p)) {
        throw CorruptionError("model: beta scale mismatch for " + what);
    }
    p.beta = b.data;
    return p;
}

void expect_dims(const FpTensor& t, const std::vector<std::int64_t>& dims,
                 const std::string& what) {
    if (t.dims != dims) throw CorruptionError("model: bad shape for " + what);
}

} // namespace

// ---------------------------------------------------------------------------
// FP model.
// ---------------------------------------------------------------------------

void save_fp_model(const std::string& dir, const FpViTModel& m) {
    validate(m.config);
    fs::create_directories(dir);
    BlobStore store(dir);
    ojson j;
    j["format"] = "fpvit-manifest";
    j["version"] = 1;
    j["config"] = config_json(m.config);
    ojson t;
    t["patch.w"] = store.put(m.patch.w);
    t["patch.b"] = store.put(m.patch.b);
    t["cls"] = store.put(m.cls);
    t["pos"] = store.put(m.pos);
    for (std::size_t i = 0; i < m.blocks.size(); ++i) {
        const FpBlock& b = m.blocks[i];
        const std::string pre = "block" + std::to_string(i) + ".";
        t[pre + "ln1_gamma"] = store.put(b.ln1_gamma);
        t[pre + "ln1_beta"] = store.put(b.ln1_beta);
        t[pre + "q.w"] = store.put(b.q.w);
        t[pre + "q.b"] = store.put(b.q.b);
        t[pre + "k.w"] = store.put(b.k.w);
        t[pre + "k.b"] = store.put(b.k.b);
        t[pre + "v.w"] = store.put(b.v.w);
        t[pre + "v.b"] = store.put(b.v.b);
        t[pre + "o.w"] = store.put(b.o.w);
        t[pre + "o.b"] = store.put(b.o.b);
        t[pre + "ln2_gamma"] = store.put(b.ln2_gamma);
        t[pre + "ln2_beta"] = store.put(b.ln2_beta);
        t[pre + "fc1.w"] = store.put(b.fc1.w);
        t[pre + "fc1.b"] = store.put(b.fc1.b);
        t[pre + "fc2.w"] = store.put(b.fc2.w);
        t[pre + "fc2.b"] = store.put(b.fc2.b);
    }
    t["final_gamma"] = store.put(m.final_gamma);
    t["final_beta"] = store.put(m.final_beta);
    t["head.w"] = store.put(m.head.w);
    t["head.b"] = store.put(m.head.b);
    j["tensors"] = std::move(t);
    write_text(fs::path(dir) / "manifest.json", j.dump(2) + "\n");
}

FpViTModel load_fp_model(const std::string& dir) {
    const fs::path root(dir);
    const ojson j = parse_manifest(root, "fpvit-manifest");
    FpViTModel m;
    try {
        m.config = config_from_json(j.at("config"));
        validate(m.config);
        const ModelConfig& cfg = m.config;
        const ojson& t = j.at("tensors");
        const auto fp = [&](const std::string& key) {
            return blob_fp(root, t.at(key).get<std::string>());
        };
        m.patch.w = fp("patch.w");
        m.patch.b = fp("patch.b");
        m.cls = fp("cls");
        m.pos = fp("pos");
        expect_dims(m.patch.w, {cfg.d_model, cfg.patch_dim()}, "patch.w");
        expect_dims(m.patch.b, {cfg.d_model}, "patch.b");
        expect_dims(m.cls, {cfg.d_model}, "cls");
        expect_dims(m.pos, {cfg.num_tokens(), cfg.d_model}, "pos");
        const auto load_dense = [&](const std::string& key, std::int64_t out_f,
                                    std::int64_t in_f) {
            FpDense d;
            d.w = fp(key + ".w");
            d.b = fp(key + ".b");
            expect_dims(d.w, {out_f, in_f}, key + ".w");
            expect_dims(d.b, {out_f}, key + ".b");
            return d;
        };
        for (std::int64_t i = 0; i < cfg.depth; ++i) {
            const std::string pre = "block" + std::to_string(i) + ".";
            FpBlock b;
            b.ln1_gamma = fp(pre + "ln1_gamma");
            b.ln1_beta = fp(pre + "ln1_beta");
            b.q = load_dense(pre + "q", cfg.d_model, cfg.d_model);
            b.k = load_dense(pre + "k", cfg.d_model, cfg.d_model);
            b.v = load_dense(pre + "v", cfg.d_model, cfg.d_model);
            b.o = load_dense(pre + "o", cfg.d_model, cfg.d_model);
            b.ln2_gamma = fp(pre + "ln2_gamma");
            b.ln2_beta = fp(pre + "ln2_beta");
            b.fc1 = load_dense(pre + "fc1", cfg.mlp_hidden(), cfg.d_model);
            b.fc2 = load_dense(pre + "fc2", cfg.d_model, cfg.mlp_hidden());
            expect_dims(b.ln1_gamma, {cfg.d_model}, pre + "ln1_gamma");
            expect_dims(b.ln1_beta, {cfg.d_model}, pre + "ln1_beta");
            expect_dims(b.ln2_gamma, {cfg.d_model}, pre + "ln2_gamma");
            expect_dims(b.ln2_beta, {cfg.d_model}, pre + "ln2_beta");
            m.blocks.push_back(std::move(b));
        }
        m.final_gamma = fp("final_gamma");
        m.final_beta = fp("final_beta");
        expect_dims(m.final_gamma, {cfg.d_model}, "final_gamma");
        expect_dims(m.final_beta, {cfg.d_model}, "final_beta");
        m.head = load_dense("head", cfg.num_classes, cfg.d_model);
    } catch (const nlohmann::json::exception& e) {
        throw CorruptionError("manifest: " + std::string(e.what()));
    }
    return m;
}

// ---------------------------------------------------------------------------
// Quantized model.
// ---------------------------------------------------------------------------

void save_qmodel(const std::string& dir, const QViTModel& m) {
    check_scale_graph(m);
    fs::create_directories(dir);
    BlobStore store(dir);
    ojson j;
    j["format"] = "qvit-manifest";
    j["version"] = 1;
    j["config"] = config_json(m.config);
    j["options"] = options_json(m.options);
    j["input_scale"] = m.input_scale;
    j["embed_scale"] = m.embed_scale;
    j["logits_scale"] = m.logits_scale;
    j["patch"] = dense_json(store, m.patch);
    j["cls"] = store.put(m.cls_q);
    j["pos"] = store.put(m.pos_q);
    ojson blocks = ojson::array();
    for (const QBlock& b : m.blocks) {
        ojson bj;
        bj["ln1"] = layernorm_json(store, b.ln1);
        bj["q"] = dense_json(store, b.q);
        bj["k"] = dense_json(store, b.k);
        bj["v"] = dense_json(store, b.v);
        bj["score_requant"] = dyadic_json(b.score_requant);
        bj["score_scale"] = b.score_scale;
        bj["score_bits"] = b.score_bits;
        bj["softmax_i0"] = b.softmax_i0;
        bj["prob_scale"] = b.prob_scale;
        bj["ctx_requant"] = dyadic_json(b.ctx_requant);
        bj["ctx_scale"] = b.ctx_scale;
        bj["o"] = dense_json(store, b.o);
        bj["res1_main"] = dyadic_json(b.res1_main);
        bj["res1_skip"] = dyadic_json(b.res1_skip);
        bj["res1_scale"] = b.res1_scale;
        bj["ln2"] = layernorm_json(store, b.ln2);
        bj["fc1"] = dense_json(store, b.fc1);
        bj["gelu_i0"] = b.gelu_i0;
        bj["gelu_raw_scale"] = b.gelu_raw_scale;
        bj["gelu_requant"] = dyadic_json(b.gelu_requant);
        bj["gelu_out_scale"] = b.gelu_out_scale;
        bj["fc2"] = dense_json(store, b.fc2);
        bj["res2_main"] = dyadic_json(b.res2_main);
        bj["res2_skip"] = dyadic_json(b.res2_skip);
        bj["res2_scale"] = b.res2_scale;
        bj["in_scale"] = b.in_scale;
        blocks.push_back(std::move(bj));
    }
    j["blocks"] = std::move(blocks);
    j["final_ln"] = layernorm_json(store, m.final_ln);
    j["head"] = dense_json(store, m.head);
    write_text(fs::path(dir) / "manifest.json", j.dump(2) + "\n");
}

QViTModel load_qmodel(const std::string& dir) {
    const fs::path root(dir);
    const ojson j = parse_manifest(root, "qvit-manifest");
    QViTModel m;
    try {
        m.config = config_from_json(j.at("config"));
        m.options = options_from_json(j.at("options"));
        m.input_scale = j.at("input_scale").get<double>();
        m.embed_scale = j.at("embed_scale").get<double>();
        m.logits_scale = j.at("logits_scale").get<double>();
        m.patch = dense_from_json(root, j.at("patch"), "patch");
        m.cls_q = blob_q(root, j.at("cls").get<std::string>());
        m.pos_q = blob_q(root, j.at("pos").get<std::string>());
        for (const ojson& bj : j.at("blocks")) {
            QBlock b;
            const std::string pre = "block" + std::to_string(m.blocks.size()) + ".";
            b.ln1 = layernorm_from_json(root, bj.at("ln1"), pre + "ln1");
            b.q = dense_from_json(root, bj.at("q"), pre + "q");
            b.k = dense_from_json(root, bj.at("k"), pre + "k");
            b.v = dense_from_json(root, bj.at("v"), pre + "v");
            b.score_requant = dyadic_from_json(bj.at("score_requant"));
            b.score_scale = bj.at("score_scale").get<double>();
            b.score_bits = bj.at("score_bits").get<int>();
            b.softmax_i0 = bj.at("softmax_i0").get<std::int64_t>();
            b.prob_scale = bj.at("prob_scale").get<double>();
            b.ctx_requant = dyadic_from_json(bj.at("ctx_requant"));
            b.ctx_scale = bj.at("ctx_scale").get<double>();
            b.o = dense_from_json(root, bj.at("o"), pre + "o");
            b.res1_main = dyadic_from_json(bj.at("res1_main"));
            b.res1_skip = dyadic_from_json(bj.at("res1_skip"));
            b.res1_scale = bj.at("res1_scale").get<double>();
            b.ln2 = layernorm_from_json(root, bj.at("ln2"), pre + "ln2");
            b.fc1 = dense_from_json(root, bj.at("fc1"), pre + "fc1");
            b.gelu_i0 = bj.at("gelu_i0").get<std::int64_t>();
            b.gelu_raw_scale = bj.at("gelu_raw_scale").get<double>();
            b.gelu_requant = dyadic_from_json(bj.at("gelu_requant"));
            b.gelu_out_scale = bj.at("gelu_out_scale").get<double>();
            b.fc2 = dense_from_json(root, bj.at("fc2"), pre + "fc2");
            b.res2_main = dyadic_from_json(bj.at("res2_main"));
            b.res2_skip = dyadic_from_json(bj.at("res2_skip"));
            b.res2_scale = bj.at("res2_scale").get<double>();
            b.in_scale = bj.at("in_scale").get<double>();
            m.blocks.push_back(std::move(b));
        }
        m.final_ln = layernorm_from_json(root, j.at("final_ln"), "final_ln");
        m.head = dense_from_json(root, j.at("head"), "head");
    } catch (const nlohmann::json::exception& e) {
        throw CorruptionError("manifest: " + std::string(e.what()));
    }
    check_scale_graph(m);
    return m;
}

// ---------------------------------------------------------------------------
// Calibration statistics.
// ---------------------------------------------------------------------------

void save_calibration(const std::string& path, const CalibStats& stats,
                      std::uint64_t seed, std::int64_t inputs) {
    ojson j;
    j["format"] = "calibration";
    j["version"] = 1;
    j["seed"] = seed;
    j["inputs"] = inputs;
    ojson s;
    for (const auto& [site, value] : stats) s[site] = value;
    j["stats"] = std::move(s);
    write_text(path, j.dump(2) + "\n");
}

CalibStats load_calibration(const std::string& path) {
    ojson j;
    try {
        j = ojson::parse(read_text(path));
    } catch (const nlohmann::json::exception& e) {
        throw CorruptionError("calibration: invalid JSON: " + std::string(e.what()));
    }
    if (!j.is_object() || !j.contains("format") || j["format"] != "calibration") {
        throw FormatError("calibration: missing or wrong format field");
    }
    CalibStats stats;
    try {
        for (const auto& [site, value] : j.at("stats").items()) {
            stats[site] = value.get<double>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw CorruptionError("calibration: " + std::string(e.what()));
    }
    return stats;
}

} // namespace intvit
