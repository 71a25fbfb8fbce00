// Python bindings. The module mirrors the C++ surface closely: tensors cross
// the boundary as plain dims/data lists, operations keep their C++ names, and
// scale metadata stays explicit instead of hiding behind wrapper objects.
// Reports serialize through their canonical JSON so Python sees exactly what
// the CLI writes.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "intvit/model_io.hpp"
#include "intvit/oracle.hpp"
#include "intvit/tensor_io.hpp"

namespace py = pybind11;
using namespace intvit;

namespace {

// The RAII guard as a context manager; the audit state is thread-local, so
// entering from Python affects only the calling thread.
struct PyIntegerOnlyGuard {
    std::optional<IntegerOnlyGuard> active;
};

std::string dims_str(const std::vector<std::int64_t>& dims) {
    std::string s = "[";
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i > 0) s += ", ";
        s += std::to_string(dims[i]);
    }
    return s + "]";
}

using TapeList = std::vector<std::pair<std::string, FpTensor>>;
using QTapeList = std::vector<std::pair<std::string, QTensor>>;

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Integer-only vision transformer inference kernels with a "
              "floating-point oracle and error-analysis harness.";

    py::register_exception<FormatError>(m, "FormatError", PyExc_RuntimeError);
    py::register_exception<CorruptionError>(m, "CorruptionError", PyExc_RuntimeError);

    // -----------------------------------------------------------------------
    // Tensors and RNG.
    // -----------------------------------------------------------------------

    py::class_<FpTensor>(m, "FpTensor")
        .def(py::init<>())
        .def(py::init([](std::vector<std::int64_t> dims, std::vector<double> data) {
                 FpTensor t;
                 t.dims = std::move(dims);
                 t.data = std::move(data);
                 validate(t);
                 return t;
             }),
             py::arg("dims"), py::arg("data"))
        .def_readwrite("dims", &FpTensor::dims)
        .def_readwrite("data", &FpTensor::data)
        .def("numel", &FpTensor::numel)
        .def("validate", [](const FpTensor& t) { validate(t); })
        .def("__repr__", [](const FpTensor& t) {
            return "FpTensor(dims=" + dims_str(t.dims) + ")";
        });

    py::class_<QTensor>(m, "QTensor")
        .def(py::init<>())
        .def(py::init([](std::vector<std::int64_t> dims,
                         std::vector<std::int64_t> data, double scale, int bits) {
                 QTensor t;
                 t.dims = std::move(dims);
                 t.data = std::move(data);
                 t.scale = scale;
                 t.bits = bits;
                 validate(t);
                 return t;
             }),
             py::arg("dims"), py::arg("data"), py::arg("scale"), py::arg("bits"))
        .def_readwrite("dims", &QTensor::dims)
        .def_readwrite("data", &QTensor::data)
        .def_readwrite("scale", &QTensor::scale)
        .def_readwrite("bits", &QTensor::bits)
        .def("numel", &QTensor::numel)
        .def("validate", [](const QTensor& t) { validate(t); })
        .def("__repr__", [](const QTensor& t) {
            return "QTensor(dims=" + dims_str(t.dims) +
                   ", scale=" + std::to_string(t.scale) +
                   ", bits=" + std::to_string(t.bits) + ")";
        });

    m.def("make_fp_tensor", &make_fp_tensor, py::arg("dims"));
    m.def("make_q_tensor", &make_q_tensor, py::arg("dims"), py::arg("scale"),
          py::arg("bits"));

    py::class_<Rng>(m, "Rng")
        .def(py::init([](std::uint64_t seed) { return Rng{seed}; }), py::arg("seed"))
        .def_readwrite("state", &Rng::state);
    m.def("rng_next", &rng_next, py::arg("rng"));
    m.def("rng_unit", &rng_unit, py::arg("rng"));
    m.def("rng_below", &rng_below, py::arg("rng"), py::arg("bound"));
    m.def("gen_gaussian", &gen_gaussian, py::arg("rng"), py::arg("dims"),
          py::arg("mean"), py::arg("stddev"));

    // -----------------------------------------------------------------------
    // Quantization and dyadic rescaling.
    // -----------------------------------------------------------------------

    py::class_<QuantParams>(m, "QuantParams")
        .def(py::init<>())
        .def_readwrite("m", &QuantParams::m)
        .def_readwrite("k", &QuantParams::k)
        .def_readwrite("S", &QuantParams::S)
        .def("__repr__", [](const QuantParams& p) {
            return "QuantParams(m=" + std::to_string(p.m) +
                   ", k=" + std::to_string(p.k) + ", S=" + std::to_string(p.S) + ")";
        });

    m.def("quant_params_from_m", &quant_params_from_m, py::arg("m"), py::arg("k"));
    m.def("calibrate_minmax", &calibrate_minmax, py::arg("tensor"), py::arg("k"));
    m.def("quantize", &quantize, py::arg("tensor"), py::arg("params"));
    m.def("quantize_value", &quantize_value, py::arg("r"), py::arg("params"));
    m.def("dequantize", &dequantize, py::arg("tensor"));

    py::class_<DyadicScale>(m, "DyadicScale")
        .def(py::init<>())
        .def(py::init([](std::uint32_t b, std::int32_t c) {
                 return DyadicScale{b, c};
             }),
             py::arg("b"), py::arg("c"))
        .def_readwrite("b", &DyadicScale::b)
        .def_readwrite("c", &DyadicScale::c)
        .def("__repr__", [](const DyadicScale& d) {
            return "DyadicScale(b=" + std::to_string(d.b) +
                   ", c=" + std::to_string(d.c) + ")";
        });

    py::enum_<RequantRounding>(m, "RequantRounding")
        .value("Nearest", RequantRounding::Nearest)
        .value("Floor", RequantRounding::Floor);

    m.def("to_dyadic", &to_dyadic, py::arg("r"), py::arg("c"));
    m.def("to_dyadic_auto", &to_dyadic_auto, py::arg("r"), py::arg("c") = 30);
    m.def("requant_scalar", &requant_scalar, py::arg("v"), py::arg("dyadic"),
          py::arg("rounding"));
    m.def(
        "requantize",
        [](const QTensor& acc, const DyadicScale& d, int k_out, double out_scale,
           RequantRounding r) {
            std::int64_t saturations = 0;
            QTensor out = requantize(acc, d, k_out, out_scale, r, &saturations);
            return py::make_tuple(std::move(out), saturations);
        },
        py::arg("acc"), py::arg("dyadic"), py::arg("k_out"), py::arg("out_scale"),
        py::arg("rounding"),
        "Returns (tensor, saturation_count).");

    // -----------------------------------------------------------------------
    // Shift-based scalar math.
    // -----------------------------------------------------------------------

    py::class_<IntMathConfig>(m, "IntMathConfig")
        .def(py::init<>())
        .def_readwrite("N", &IntMathConfig::N)
        .def_readwrite("M", &IntMathConfig::M)
        .def_readwrite("iters", &IntMathConfig::iters)
        .def("validate", [](const IntMathConfig& c) { validate(c); });

    py::class_<ExpFixed>(m, "ExpFixed")
        .def_readonly("value", &ExpFixed::value)
        .def_readonly("scale", &ExpFixed::scale);
    py::class_<DivFixed>(m, "DivFixed")
        .def_readonly("value", &DivFixed::value)
        .def_readonly("scale", &DivFixed::scale);

    m.def("bit_length",
          [](std::uint64_t v) { return bit_length(v); }, py::arg("v"));
    m.def("inv_scale_int", &inv_scale_int, py::arg("s"));
    m.def("shift_exp_core", &shift_exp_core, py::arg("i"), py::arg("i0"),
          py::arg("N"));
    m.def("shift_exp", &shift_exp, py::arg("i"), py::arg("s"), py::arg("config"));
    m.def("int_div_core", &int_div_core, py::arg("i1"), py::arg("i2"),
          py::arg("k_out"), py::arg("M"));
    m.def("int_div", &int_div, py::arg("i1"), py::arg("i2"), py::arg("k_out"),
          py::arg("config"));
    m.def("int_isqrt", &int_isqrt, py::arg("v"), py::arg("config"));

    // -----------------------------------------------------------------------
    // Kernels.
    // -----------------------------------------------------------------------

    py::class_<DenseWeights>(m, "DenseWeights")
        .def(py::init<>())
        .def_readwrite("weight", &DenseWeights::weight)
        .def_readwrite("bias", &DenseWeights::bias)
        .def_readwrite("in_scale", &DenseWeights::in_scale)
        .def_readwrite("bias_scale", &DenseWeights::bias_scale)
        .def_readwrite("out_scale", &DenseWeights::out_scale)
        .def_readwrite("out_requant", &DenseWeights::out_requant)
        .def_readonly("saturations", &DenseWeights::saturations);

    py::class_<LayerNormParams>(m, "LayerNormParams")
        .def(py::init<>())
        .def_readwrite("gamma", &LayerNormParams::gamma)
        .def_readwrite("beta", &LayerNormParams::beta)
        .def_readwrite("p", &LayerNormParams::p)
        .def_readwrite("out_scale", &LayerNormParams::out_scale)
        .def_readwrite("out_requant", &LayerNormParams::out_requant)
        .def_readonly("saturations", &LayerNormParams::saturations);

    m.def("transpose2d", &transpose2d, py::arg("tensor"));
    m.def("int_matmul_acc", &int_matmul_acc, py::arg("a"), py::arg("b"),
          py::arg("acc_scale"));
    m.def("int_matmul_auto", &int_matmul_auto, py::arg("a"), py::arg("b"),
          py::arg("out_scale"), py::arg("k_out"), py::arg("rounding"),
          py::arg("dyadic_c") = 30);
    m.def("int_dense", &int_dense, py::arg("x"), py::arg("weights"),
          py::arg("k_out"), py::arg("rounding"));
    m.def("int_dense_acc", &int_dense_acc, py::arg("x"), py::arg("weights"));
    m.def("shiftmax", &shiftmax, py::arg("x"), py::arg("k_out"), py::arg("config"));
    m.def("shift_gelu", &shift_gelu, py::arg("x"), py::arg("k_sigma"),
          py::arg("config"));
    m.def("i_layernorm", &i_layernorm, py::arg("x"), py::arg("params"),
          py::arg("k_out"), py::arg("config"), py::arg("rounding"));
    m.def("residual_add_auto", &residual_add_auto, py::arg("a"), py::arg("b"),
          py::arg("out_scale"), py::arg("k_out"), py::arg("rounding"),
          py::arg("dyadic_c") = 30);

    // -----------------------------------------------------------------------
    // Integer-only audit.
    // -----------------------------------------------------------------------

    py::class_<PyIntegerOnlyGuard>(m, "IntegerOnlyGuard")
        .def(py::init<>())
        .def(
            "__enter__",
            [](PyIntegerOnlyGuard& g) -> PyIntegerOnlyGuard& {
                g.active.emplace();
                return g;
            },
            py::return_value_policy::reference_internal)
        .def("__exit__", [](PyIntegerOnlyGuard& g, const py::object&,
                            const py::object&, const py::object&) {
            g.active.reset();
            return false;
        });
    m.def("integer_only_mode", &integer_only_mode);

    // -----------------------------------------------------------------------
    // Model configuration, generation, quantization and the forward paths.
    // -----------------------------------------------------------------------

    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_readwrite("image_size", &ModelConfig::image_size)
        .def_readwrite("patch_size", &ModelConfig::patch_size)
        .def_readwrite("channels", &ModelConfig::channels)
        .def_readwrite("d_model", &ModelConfig::d_model)
        .def_readwrite("heads", &ModelConfig::heads)
        .def_readwrite("mlp_ratio", &ModelConfig::mlp_ratio)
        .def_readwrite("depth", &ModelConfig::depth)
        .def_readwrite("num_classes", &ModelConfig::num_classes)
        .def("head_dim", &ModelConfig::head_dim)
        .def("num_patches", &ModelConfig::num_patches)
        .def("num_tokens", &ModelConfig::num_tokens)
        .def("patch_dim", &ModelConfig::patch_dim)
        .def("mlp_hidden", &ModelConfig::mlp_hidden)
        .def("validate", [](const ModelConfig& c) { validate(c); });

    py::class_<QuantizeOptions>(m, "QuantizeOptions")
        .def(py::init<>())
        .def_readwrite("math", &QuantizeOptions::math)
        .def_readwrite("rounding", &QuantizeOptions::rounding)
        .def_readwrite("dyadic_c", &QuantizeOptions::dyadic_c)
        .def_readwrite("k_act", &QuantizeOptions::k_act)
        .def_readwrite("k_softmax", &QuantizeOptions::k_softmax)
        .def_readwrite("score_bits", &QuantizeOptions::score_bits)
        .def_readwrite("k_sigma", &QuantizeOptions::k_sigma)
        .def_readwrite("ln_p", &QuantizeOptions::ln_p)
        .def("validate", [](const QuantizeOptions& o) { validate(o); });

    py::class_<FpViTModel>(m, "FpViTModel")
        .def_readonly("config", &FpViTModel::config);

    py::class_<QViTModel>(m, "QViTModel")
        .def_readonly("config", &QViTModel::config)
        .def_readonly("options", &QViTModel::options)
        .def_readonly("input_scale", &QViTModel::input_scale)
        .def_readonly("embed_scale", &QViTModel::embed_scale)
        .def_readonly("logits_scale", &QViTModel::logits_scale);

    py::enum_<GeluForm>(m, "GeluForm")
        .value("Erf", GeluForm::Erf)
        .value("Sigmoid", GeluForm::Sigmoid);

    m.def("gen_fp_model", &gen_fp_model, py::arg("config"), py::arg("seed"));
    m.def(
        "fp_forward",
        [](const FpViTModel& model, const FpTensor& img, GeluForm gelu) {
            return fp_forward(model, img, nullptr, gelu);
        },
        py::arg("model"), py::arg("image"), py::arg("gelu") = GeluForm::Erf);
    m.def(
        "fp_forward_tape",
        [](const FpViTModel& model, const FpTensor& img, GeluForm gelu) {
            FpTape tape;
            FpTensor logits = fp_forward(model, img, &tape, gelu);
            TapeList sites;
            sites.reserve(tape.size());
            for (auto& e : tape) sites.emplace_back(e.site, std::move(e.value));
            return py::make_tuple(std::move(logits), std::move(sites));
        },
        py::arg("model"), py::arg("image"), py::arg("gelu") = GeluForm::Erf,
        "Returns (logits, [(site, tensor), ...]).");
    m.def(
        "calibrate_model",
        [](const FpViTModel& model, const std::vector<FpTensor>& images) {
            CalibStats stats;
            for (const FpTensor& img : images) {
                FpTape tape;
                fp_forward(model, img, &tape);
                fold_max_abs(tape, stats);
            }
            return stats;
        },
        py::arg("model"), py::arg("images"),
        "Per-site max-abs statistics over a batch of images.");
    m.def("build_qmodel", &build_qmodel, py::arg("model"), py::arg("calibration"),
          py::arg("options"));
    m.def("build_dense_weights", &build_dense_weights, py::arg("dense"),
          py::arg("in_scale"), py::arg("out_m"), py::arg("options"));
    m.def("check_scale_graph", &check_scale_graph, py::arg("model"));
    m.def("quantize_input", &quantize_input, py::arg("model"), py::arg("image"));
    m.def(
        "model_forward",
        [](const QViTModel& model, const QTensor& img) {
            return model_forward(model, img);
        },
        py::arg("model"), py::arg("image"));
    m.def(
        "model_forward_tape",
        [](const QViTModel& model, const QTensor& img) {
            QTape tape;
            QTensor logits = model_forward(model, img, &tape);
            QTapeList sites;
            sites.reserve(tape.size());
            for (auto& e : tape) sites.emplace_back(e.site, std::move(e.value));
            return py::make_tuple(std::move(logits), std::move(sites));
        },
        py::arg("model"), py::arg("image"),
        "Returns (logits, [(site, tensor), ...]).");
    m.def("collect_saturations", &collect_saturations, py::arg("model"));
    m.def("reset_saturations", &reset_saturations, py::arg("model"));
    m.def("block_site", &block_site, py::arg("block"), py::arg("leaf"));

    // -----------------------------------------------------------------------
    // Oracle references, metrics and sweeps.
    // -----------------------------------------------------------------------

    m.def("fp_softmax", &fp_softmax, py::arg("x"));
    m.def("fp_gelu_erf", &fp_gelu_erf, py::arg("x"));
    m.def("fp_gelu_sigmoid", &fp_gelu_sigmoid, py::arg("x"));
    m.def("fp_layernorm", &fp_layernorm, py::arg("x"), py::arg("gamma"),
          py::arg("beta"));
    m.def("im2col_fp", &im2col_fp, py::arg("image"), py::arg("config"));

    py::class_<CompareStats>(m, "CompareStats")
        .def_readonly("max_abs_err", &CompareStats::max_abs_err)
        .def_readonly("mean_abs_err", &CompareStats::mean_abs_err)
        .def_readonly("cosine", &CompareStats::cosine)
        .def_readonly("argmax_agreement", &CompareStats::argmax_agreement)
        .def("__repr__", [](const CompareStats& s) {
            return "CompareStats(max_abs_err=" + std::to_string(s.max_abs_err) +
                   ", cosine=" + std::to_string(s.cosine) + ")";
        });

    m.def("compare", &compare, py::arg("int_out"), py::arg("fp_out"));
    m.def("compare_fp", &compare_fp, py::arg("test"), py::arg("ref"));

    py::class_<SiteStats>(m, "SiteStats")
        .def_readonly("site", &SiteStats::site)
        .def_readonly("max_abs_err", &SiteStats::max_abs_err)
        .def_readonly("rows", &SiteStats::rows)
        .def_readonly("count", &SiteStats::count)
        .def_readonly("saturations", &SiteStats::saturations)
        .def("mean_abs_err", &SiteStats::mean_abs_err)
        .def("mean_cosine", &SiteStats::mean_cosine)
        .def("agreement", &SiteStats::agreement);

    py::class_<ErrorReport>(m, "ErrorReport")
        .def_readonly("kind", &ErrorReport::kind)
        .def_readonly("seed", &ErrorReport::seed)
        .def_readonly("tolerances", &ErrorReport::tolerances)
        .def_readonly("sites", &ErrorReport::sites)
        .def_readonly("pass_", &ErrorReport::pass)
        .def("to_table", &ErrorReport::to_table)
        .def("to_json_str",
             [](const ErrorReport& r) { return r.to_json().dump(2); })
        .def("config_json", [](const ErrorReport& r) { return r.config.dump(); });

    py::class_<SweepSpec>(m, "SweepSpec")
        .def(py::init<>())
        .def_readwrite("trials", &SweepSpec::trials)
        .def_readwrite("d", &SweepSpec::d)
        .def_readwrite("scales", &SweepSpec::scales)
        .def_readwrite("math", &SweepSpec::math)
        .def_readwrite("k_out", &SweepSpec::k_out);

    m.def("kernel_sweep", &kernel_sweep, py::arg("kernel"), py::arg("spec"),
          py::arg("seed"));

    // -----------------------------------------------------------------------
    // File IO.
    // -----------------------------------------------------------------------

    m.def("write_fp_tensor",
          py::overload_cast<const std::string&, const FpTensor&>(&write_tensor),
          py::arg("path"), py::arg("tensor"));
    m.def("write_q_tensor",
          py::overload_cast<const std::string&, const QTensor&>(&write_tensor),
          py::arg("path"), py::arg("tensor"));
    m.def("read_fp_tensor", &read_fp_tensor, py::arg("path"));
    m.def("read_q_tensor", &read_q_tensor, py::arg("path"));
    m.def("save_fp_model", &save_fp_model, py::arg("dir"), py::arg("model"));
    m.def("load_fp_model", &load_fp_model, py::arg("dir"));
    m.def("save_qmodel", &save_qmodel, py::arg("dir"), py::arg("model"));
    m.def("load_qmodel", &load_qmodel, py::arg("dir"));
    m.def("save_calibration", &save_calibration, py::arg("path"), py::arg("stats"),
          py::arg("seed"), py::arg("inputs"));
    m.def("load_calibration", &load_calibration, py::arg("path"));
}
