"""Integer-only vision transformer inference with a floating-point oracle.

Everything lives in the compiled extension; this package re-exports the
public names. Tensors cross the boundary as plain dims/data lists and every
quantized tensor carries its scale as explicit metadata.
"""

from intvit._core import (
    CompareStats,
    CorruptionError,
    DenseWeights,
    DivFixed,
    DyadicScale,
    ErrorReport,
    ExpFixed,
    FormatError,
    FpTensor,
    FpViTModel,
    GeluForm,
    IntMathConfig,
    IntegerOnlyGuard,
    LayerNormParams,
    ModelConfig,
    QTensor,
    QuantParams,
    QuantizeOptions,
    QViTModel,
    RequantRounding,
    Rng,
    SiteStats,
    SweepSpec,
    bit_length,
    block_site,
    build_dense_weights,
    build_qmodel,
    calibrate_minmax,
    calibrate_model,
    check_scale_graph,
    collect_saturations,
    compare,
    compare_fp,
    dequantize,
    fp_forward,
    fp_forward_tape,
    fp_gelu_erf,
    fp_gelu_sigmoid,
    fp_layernorm,
    fp_softmax,
    gen_fp_model,
    gen_gaussian,
    i_layernorm,
    im2col_fp,
    int_dense,
    int_dense_acc,
    int_div,
    int_div_core,
    int_isqrt,
    int_matmul_acc,
    int_matmul_auto,
    integer_only_mode,
    inv_scale_int,
    kernel_sweep,
    load_calibration,
    load_fp_model,
    load_qmodel,
    make_fp_tensor,
    make_q_tensor,
    model_forward,
    model_forward_tape,
    quant_params_from_m,
    quantize,
    quantize_input,
    quantize_value,
    read_fp_tensor,
    read_q_tensor,
    requant_scalar,
    requantize,
    reset_saturations,
    residual_add_auto,
    rng_below,
    rng_next,
    rng_unit,
    save_calibration,
    save_fp_model,
    save_qmodel,
    shift_exp,
    shift_exp_core,
    shift_gelu,
    shiftmax,
    to_dyadic,
    to_dyadic_auto,
    transpose2d,
    write_fp_tensor,
    write_q_tensor,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
