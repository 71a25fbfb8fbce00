#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "intvit/model_io.hpp"
#include "intvit/oracle.hpp"
#include "intvit/vit.hpp"

using namespace intvit;

namespace {

// Matches the CLI input generator: one splitmix64 stream per image index,
// uniform values in [-1, 1).
constexpr std::uint64_t kStride = 0x9E3779B97F4A7C15ULL;

FpTensor random_image(const ModelConfig& cfg, std::uint64_t seed, std::uint64_t index) {
    Rng rng{seed + kStride * (index + 1)};
    FpTensor img = make_fp_tensor({cfg.channels, cfg.image_size, cfg.image_size});
    for (auto& v : img.data) v = 2.0 * rng_unit(rng) - 1.0;
    return img;
}

CalibStats calibrate(const FpViTModel& m, std::uint64_t seed, std::int64_t inputs) {
    CalibStats stats;
    for (std::int64_t i = 0; i < inputs; ++i) {
        FpTape tape;
        fp_forward(m, random_image(m.config, seed, static_cast<std::uint64_t>(i)), &tape);
        fold_max_abs(tape, stats);
    }
    return stats;
}

ModelConfig small_config() {
    ModelConfig cfg;
    cfg.image_size = 8;
    cfg.patch_size = 4;
    cfg.channels = 2;
    cfg.d_model = 32;
    cfg.heads = 4;
    cfg.mlp_ratio = 2;
    cfg.depth = 1;
    cfg.num_classes = 7;
    return cfg;
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

std::filesystem::path temp_dir(const char* tag) {
    auto p = std::filesystem::temp_directory_path() / (std::string("intvit-vit-") + tag);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

} // namespace

TEST_CASE("vit: model config validation") {
    CHECK_NOTHROW(validate(ModelConfig{}));

    ModelConfig cfg = small_config();
    cfg.d_model = 30;  // not divisible by heads
    CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
    cfg = small_config();
    cfg.image_size = 10;  // not divisible by patch_size
    CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
    cfg = small_config();
    cfg.depth = -1;
    CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
    cfg = small_config();
    cfg.num_classes = 0;
    CHECK_THROWS_AS(validate(cfg), std::invalid_argument);

    CHECK(small_config().num_tokens() == 5);
    CHECK(small_config().patch_dim() == 32);
    CHECK(small_config().head_dim() == 8);
}

TEST_CASE("vit: quantize options validation") {
    CHECK_NOTHROW(validate(QuantizeOptions{}));
    QuantizeOptions opt;
    opt.dyadic_c = 63;
    CHECK_THROWS_AS(validate(opt), std::invalid_argument);
    opt = QuantizeOptions{};
    opt.k_act = 1;
    CHECK_THROWS_AS(validate(opt), std::invalid_argument);
    opt = QuantizeOptions{};
    opt.score_bits = 12;
    CHECK_THROWS_AS(validate(opt), std::invalid_argument);
    opt = QuantizeOptions{};
    opt.k_sigma = 17;
    CHECK_THROWS_AS(validate(opt), std::invalid_argument);
    opt = QuantizeOptions{};
    opt.ln_p = 25;
    CHECK_THROWS_AS(validate(opt), std::invalid_argument);
}

TEST_CASE("vit: gen_fp_model is deterministic with identity layernorms") {
    const ModelConfig cfg = small_config();
    const FpViTModel a = gen_fp_model(cfg, 5);
    const FpViTModel b = gen_fp_model(cfg, 5);
    const FpViTModel c = gen_fp_model(cfg, 6);

    CHECK(a.patch.w.data == b.patch.w.data);
    CHECK(a.head.b.data == b.head.b.data);
    CHECK(a.blocks[0].fc1.w.data == b.blocks[0].fc1.w.data);
    CHECK(a.patch.w.data != c.patch.w.data);

    CHECK(a.patch.w.dims == std::vector<std::int64_t>({32, 32}));
    CHECK(a.cls.dims == std::vector<std::int64_t>({32}));
    CHECK(a.pos.dims == std::vector<std::int64_t>({5, 32}));
    CHECK(a.blocks.size() == 1);
    CHECK(a.blocks[0].fc1.w.dims == std::vector<std::int64_t>({64, 32}));
    CHECK(a.blocks[0].fc2.w.dims == std::vector<std::int64_t>({32, 64}));
    CHECK(a.head.w.dims == std::vector<std::int64_t>({7, 32}));

    for (double v : a.blocks[0].ln1_gamma.data) CHECK(v == 1.0);
    for (double v : a.blocks[0].ln1_beta.data) CHECK(v == 0.0);
    for (double v : a.final_gamma.data) CHECK(v == 1.0);
    for (double v : a.final_beta.data) CHECK(v == 0.0);

    // Weights land in a plausible N(0, 0.02) envelope.
    double mx = 0.0;
    for (double v : a.patch.w.data) mx = std::max(mx, std::fabs(v));
    CHECK(mx < 0.2);
    CHECK(mx > 0.0);
}

TEST_CASE("vit: build_qmodel wires a coherent scale graph") {
    const ModelConfig cfg = small_config();
    const FpViTModel fp = gen_fp_model(cfg, 7);
    const CalibStats stats = calibrate(fp, 100, 6);
    QuantizeOptions opt;

    const QViTModel q = build_qmodel(fp, stats, opt);
    CHECK_NOTHROW(check_scale_graph(q));
    CHECK(q.input_scale > 0.0);
    CHECK(q.embed_scale > 0.0);
    CHECK(q.logits_scale > 0.0);
    CHECK(q.blocks.size() == 1);
    CHECK(q.cls_q.scale == q.embed_scale);
    CHECK(q.pos_q.scale == q.embed_scale);
    CHECK(q.patch.weight.bits == 8);
    CHECK(q.head.out_scale == q.head.bias_scale);

    // The softmax output scale is the fixed probability grid.
    CHECK(q.blocks[0].prob_scale == std::ldexp(1.0, -(opt.k_softmax - 1)));
    CHECK(q.blocks[0].softmax_i0 >= 1);
}

TEST_CASE("vit: build_qmodel names any missing calibration site") {
    const ModelConfig cfg = small_config();
    const FpViTModel fp = gen_fp_model(cfg, 7);
    CalibStats stats = calibrate(fp, 100, 6);
    stats.erase("block0.ln1.out");
    QuantizeOptions opt;
    try {
        build_qmodel(fp, stats, opt);
        FAIL("expected a missing-site error");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("block0.ln1.out") != std::string::npos);
    }
}

TEST_CASE("vit: check_scale_graph catches tampering") {
    const ModelConfig cfg = small_config();
    const FpViTModel fp = gen_fp_model(cfg, 7);
    const CalibStats stats = calibrate(fp, 100, 6);
    QuantizeOptions opt;

    QViTModel q = build_qmodel(fp, stats, opt);
    q.blocks[0].q.out_requant.b += 1;
    CHECK_THROWS_AS(check_scale_graph(q), std::logic_error);

    QViTModel q2 = build_qmodel(fp, stats, opt);
    q2.embed_scale *= 2.0;
    CHECK_THROWS_AS(check_scale_graph(q2), std::logic_error);

    QViTModel q3 = build_qmodel(fp, stats, opt);
    q3.blocks[0].softmax_i0 += 1;
    CHECK_THROWS_AS(check_scale_graph(q3), std::logic_error);
}

TEST_CASE("vit: quantize_input clips to the calibrated range") {
    const ModelConfig cfg = small_config();
    const FpViTModel fp = gen_fp_model(cfg, 7);
    const CalibStats stats = calibrate(fp, 100, 6);
    const QViTModel q = build_qmodel(fp, stats, QuantizeOptions{});

    FpTensor img = make_fp_tensor({cfg.channels, cfg.image_size, cfg.image_size});
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        img.data[i] = (i % 2 == 0) ? 100.0 : -100.0;  // far past the input range
    }
    const QTensor qi = quantize_input(q, img);
    CHECK(qi.scale == q.input_scale);
    CHECK(qi.bits == 8);
    for (std::int64_t v : qi.data) CHECK(std::llabs(v) == 127);
}

TEST_CASE("vit: the integer forward runs under the audit guard") {
    const ModelConfig cfg = small_config();
    const FpViTModel fp = gen_fp_model(cfg, 7);
    const CalibStats stats = calibrate(fp, 100, 6);
    const QViTModel q = build_qmodel(fp, stats, QuantizeOptions{});

    const FpTensor img = random_image(cfg, 100, 0);
    const QTensor qi = quantize_input(q, img);

    // model_forward installs its own guard; wrapping another one around it
    // must not change anything, and any real arithmetic inside would throw.
    IntegerOnlyGuard guard;
    QTensor logits;
    CHECK_NOTHROW(logits = model_forward(q, qi));
    CHECK(logits.dims == std::vector<std::int64_t>({cfg.num_classes}));
    CHECK(logits.bits == 32);
    CHECK(logits.scale == q.logits_scale);
}

TEST_CASE("vit: tape sites appear in topology order") {
    const ModelConfig cfg = small_config();
    const FpViTModel fp = gen_fp_model(cfg, 7);
    const CalibStats stats = calibrate(fp, 100, 6);
    const QViTModel q = build_qmodel(fp, stats, QuantizeOptions{});

    QTape tape;
    model_forward(q, quantize_input(q, random_image(cfg, 100, 1)), &tape);
    const std::vector<std::string> want = {
        "embed.out",          "block0.ln1.out",  "block0.q.out",
        "block0.k.out",       "block0.v.out",    "block0.attn.scores",
        "block0.attn.probs",  "block0.attn.ctx", "block0.o.out",
        "block0.res1.out",    "block0.ln2.out",  "block0.mlp1.out",
        "block0.gelu.out",    "block0.mlp2.out", "block0.res2.out",
        "final_ln.out",       "logits"};
    REQUIRE(tape.size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(tape[i].site == want[i]);

    // The FP tape mirrors it, with the raw input in front.
    FpTape ft;
    fp_forward(fp, random_image(cfg, 100, 1), &ft);
    REQUIRE(ft.size() == want.size() + 1);
    CHECK(ft[0].site == "input");
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(ft[i + 1].site == want[i]);
}

TEST_CASE("vit: integer logits track the fp oracle") {
    const ModelConfig cfg = small_config();
    const FpViTModel fp = gen_fp_model(cfg, 7);
    const CalibStats stats = calibrate(fp, 100, 6);
    const QViTModel q = build_qmodel(fp, stats, QuantizeOptions{});

    for (std::uint64_t i = 0; i < 3; ++i) {
        const FpTensor img = random_image(cfg, 555, i);
        const FpTensor fl = fp_forward(fp, img);
        const QTensor il = model_forward(q, quantize_input(q, img));
        const CompareStats s = compare(il, fl);
        CAPTURE(i);
        CHECK(s.cosine > 0.9);
    }
}

TEST_CASE("vit: floor rounding is a supported configuration") {
    const ModelConfig cfg = small_config();
    const FpViTModel fp = gen_fp_model(cfg, 7);
    const CalibStats stats = calibrate(fp, 100, 6);
    QuantizeOptions opt;
    opt.rounding = RequantRounding::Floor;
    const QViTModel q = build_qmodel(fp, stats, opt);
    CHECK_NOTHROW(check_scale_graph(q));
    const FpTensor img = random_image(cfg, 31, 0);
    const QTensor il = model_forward(q, quantize_input(q, img));
    const CompareStats s = compare(il, fp_forward(fp, img));
    CHECK(s.cosine > 0.9);
}

TEST_CASE("vit: depth zero still classifies") {
    ModelConfig cfg = small_config();
    cfg.depth = 0;
    const FpViTModel fp = gen_fp_model(cfg, 7);
    const CalibStats stats = calibrate(fp, 100, 4);
    const QViTModel q = build_qmodel(fp, stats, QuantizeOptions{});
    const QTensor logits =
        model_forward(q, quantize_input(q, random_image(cfg, 2, 0)));
    CHECK(logits.dims == std::vector<std::int64_t>({cfg.num_classes}));
}

TEST_CASE("vit: saturation counters collect and reset") {
    const ModelConfig cfg = small_config();
    const FpViTModel fp = gen_fp_model(cfg, 7);
    const CalibStats stats = calibrate(fp, 100, 6);
    const QViTModel q = build_qmodel(fp, stats, QuantizeOptions{});

    model_forward(q, quantize_input(q, random_image(cfg, 100, 2)));
    const auto sats = collect_saturations(q);
    CHECK(sats.size() == 15);  // patch, pos add, 12 block sites, final ln
    CHECK(sats[0].first == "patch");
    CHECK(sats[1].first == "embed.pos_add");
    CHECK(sats[2].first == "block0.ln1");
    CHECK(sats.back().first == "final_ln");
    for (const auto& [name, n] : sats) CHECK(n >= 0);

    reset_saturations(q);
    for (const auto& [name, n] : collect_saturations(q)) {
        CAPTURE(name);
        CHECK(n == 0);
    }
}

TEST_CASE("vit: patch_embed validates its input") {
    const ModelConfig cfg = small_config();
    const FpViTModel fp = gen_fp_model(cfg, 7);
    const CalibStats stats = calibrate(fp, 100, 6);
    const QViTModel q = build_qmodel(fp, stats, QuantizeOptions{});

    QTensor wrong = make_q_tensor({1, 8, 8}, q.input_scale, 8);
    CHECK_THROWS_AS(patch_embed(q, wrong), std::invalid_argument);
    QTensor bad_scale = make_q_tensor({2, 8, 8}, q.input_scale * 2.0, 8);
    CHECK_THROWS_AS(patch_embed(q, bad_scale), std::invalid_argument);
}

TEST_CASE("vit: fp model round-trips byte-identically") {
    const ModelConfig cfg = small_config();
    const FpViTModel m = gen_fp_model(cfg, 42);
    const auto dir = temp_dir("fp");

    save_fp_model(dir.string(), m);
    const std::string manifest1 = read_file(dir / "manifest.json");
    const FpViTModel back = load_fp_model(dir.string());

    CHECK(back.patch.w.data == m.patch.w.data);
    CHECK(back.cls.data == m.cls.data);
    CHECK(back.pos.data == m.pos.data);
    CHECK(back.blocks[0].q.w.data == m.blocks[0].q.w.data);
    CHECK(back.blocks[0].fc2.b.data == m.blocks[0].fc2.b.data);
    CHECK(back.final_gamma.data == m.final_gamma.data);
    CHECK(back.head.w.data == m.head.w.data);

    // Saving the loaded model reproduces the manifest byte for byte.
    const auto dir2 = temp_dir("fp2");
    save_fp_model(dir2.string(), back);
    CHECK(read_file(dir2 / "manifest.json") == manifest1);

    std::filesystem::remove_all(dir);
    std::filesystem::remove_all(dir2);
}

TEST_CASE("vit: quantized model round-trips and replays identically") {
    const ModelConfig cfg = small_config();
    const FpViTModel fp = gen_fp_model(cfg, 42);
    const CalibStats stats = calibrate(fp, 100, 8);
    const QViTModel q = build_qmodel(fp, stats, QuantizeOptions{});

    const auto dir = temp_dir("q");
    save_qmodel(dir.string(), q);
    const std::string manifest1 = read_file(dir / "manifest.json");
    const QViTModel back = load_qmodel(dir.string());
    CHECK_NOTHROW(check_scale_graph(back));

    const FpTensor img = random_image(cfg, 9, 0);
    const QTensor a = model_forward(q, quantize_input(q, img));
    const QTensor b = model_forward(back, quantize_input(back, img));
    CHECK(a.data == b.data);
    CHECK(a.scale == b.scale);

    const auto dir2 = temp_dir("q2");
    save_qmodel(dir2.string(), back);
    CHECK(read_file(dir2 / "manifest.json") == manifest1);

    std::filesystem::remove_all(dir);
    std::filesystem::remove_all(dir2);
}

TEST_CASE("vit: model loaders reject the wrong directory kind") {
    const ModelConfig cfg = small_config();
    const FpViTModel fp = gen_fp_model(cfg, 42);
    const auto dir = temp_dir("wrongkind");
    save_fp_model(dir.string(), fp);

    CHECK_THROWS_AS(load_qmodel(dir.string()), FormatError);
    CHECK_THROWS_AS(load_fp_model("/nonexistent/intvit-model"), std::runtime_error);

    // Corrupt the manifest and the loader flags it.
    {
        std::ofstream f(dir / "manifest.json", std::ios::binary);
        f << "{ not json";
    }
    CHECK_THROWS_AS(load_fp_model(dir.string()), CorruptionError);

    std::filesystem::remove_all(dir);
}

TEST_CASE("vit: calibration files round-trip") {
    CalibStats stats;
    stats["input"] = 1.0;
    stats["embed.out"] = 0.125;
    stats["block0.ln1.out"] = 2.75;

    const auto dir = temp_dir("calib");
    const auto path = (dir / "calib.json").string();
    save_calibration(path, stats, 77, 16);
    const CalibStats back = load_calibration(path);
    CHECK(back == stats);

    {
        std::ofstream f(path, std::ios::binary);
        f << "{\"format\": \"other\"}";
    }
    CHECK_THROWS_AS(load_calibration(path), FormatError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("vit: block_site naming") {
    CHECK(block_site(0, "ln1.out") == "block0.ln1.out");
    CHECK(block_site(11, "gelu.out") == "block11.gelu.out");
}
