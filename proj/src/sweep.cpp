#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "intvit/oracle.hpp"

namespace intvit {

namespace {

// Golden-ratio stride keeps every (lane, trial) pair on a distinct splitmix
// stream, so trials are order independent.
Rng sub_rng(std::uint64_t seed, std::uint64_t lane, std::uint64_t trial) {
    return Rng{seed + 0x9E3779B97F4A7C15ULL * (lane * 0x100000001ULL + trial + 1)};
}

std::string scale_label(const char* kernel, double s) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s@%g", kernel, s);
    return buf;
}

SiteStats& site(ErrorReport& r, const std::string& name) {
    for (SiteStats& s : r.sites) {
        if (s.site == name) return s;
    }
    r.sites.push_back(SiteStats{});
    r.sites.back().site = name;
    return r.sites.back();
}

// Tolerance keys: a site's own name bounds max_abs_err, "<site>.mean" bounds
// mean_abs_err. Sites without an entry are informational.
void apply_tolerances(ErrorReport& r) {
    r.pass = true;
    for (const SiteStats& s : r.sites) {
        auto it = r.tolerances.find(s.site);
        if (it != r.tolerances.end() && !(s.max_abs_err <= it->second)) r.pass = false;
        it = r.tolerances.find(s.site + ".mean");
        if (it != r.tolerances.end() && !(s.mean_abs_err() <= it->second)) r.pass = false;
    }
}

// Scalar error streams folded in chunks so SiteStats sees real tensors.
class ErrBatch {
public:
    explicit ErrBatch(SiteStats& s) : stats_(s) {}
    ~ErrBatch() { flush(); }
    void push(double e) {
        buf_.push_back(e);
        if (buf_.size() >= 65536) flush();
    }
    void flush() {
        if (buf_.empty()) return;
        FpTensor t = make_fp_tensor({static_cast<std::int64_t>(buf_.size())});
        t.data = buf_;
        const FpTensor zero = make_fp_tensor(t.dims);
        stats_.fold(t, zero);
        buf_.clear();
    }

private:
    SiteStats& stats_;
    std::vector<double> buf_;
};

ojson spec_config(const char* kernel, const SweepSpec& spec) {
    ojson j;
    j["kernel"] = kernel;
    j["trials"] = spec.trials;
    j["d"] = spec.d;
    j["scales"] = spec.scales;
    j["math"] = {{"N", spec.math.N}, {"M", spec.math.M}, {"iters", spec.math.iters}};
    j["k_out"] = spec.k_out;
    return j;
}

std::vector<std::int64_t> random_codes(Rng& rng, std::int64_t n) {
    std::vector<std::int64_t> c(static_cast<std::size_t>(n));
    for (auto& v : c) v = static_cast<std::int64_t>(rng_below(rng, 255)) - 127;
    return c;
}

QTensor codes_tensor(std::vector<std::int64_t> codes, double scale, int bits) {
    QTensor t;
    t.dims = {static_cast<std::int64_t>(codes.size())};
    t.data = std::move(codes);
    t.scale = scale;
    t.bits = bits;
    return t;
}

// ---------------------------------------------------------------------------
// shiftmax: fidelity vs fp_softmax per scale, plus the exact invariants
// (row-sum bound, order preservation, shift invariance) on every row.
// ---------------------------------------------------------------------------

struct ShiftmaxInvariants {
    ErrBatch sum_bound;
    ErrBatch order;
    ErrBatch shift_inv;
};

void shiftmax_row(const std::vector<std::int64_t>& codes, double s, int k_out,
                  const IntMathConfig& math, Rng& rng, SiteStats& cmp,
                  ShiftmaxInvariants& inv) {
    const std::int64_t d = static_cast<std::int64_t>(codes.size());
    const QTensor x = codes_tensor(codes, s, 8);
    const QTensor y = shiftmax(x, k_out, math);
    cmp.fold(dequantize(y), fp_softmax(dequantize(x)));

    // Row sum in output LSBs: 2^(k-1) - (d + 2) <= sum <= 2^(k-1).
    const std::int64_t hi = std::int64_t{1} << (k_out - 1);
    const std::int64_t qsum = std::accumulate(y.data.begin(), y.data.end(), std::int64_t{0});
    inv.sum_bound.push(static_cast<double>(
        std::max<std::int64_t>({0, qsum - hi, (hi - (d + 2)) - qsum})));

    // Order: along inputs sorted ascending, outputs must be nondecreasing and
    // equal inputs must map to equal outputs.
    std::vector<std::int64_t> idx(static_cast<std::size_t>(d));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::int64_t a, std::int64_t b) { return codes[a] < codes[b]; });
    std::int64_t worst = 0;
    for (std::int64_t i = 1; i < d; ++i) {
        const std::int64_t a = idx[static_cast<std::size_t>(i - 1)];
        const std::int64_t b = idx[static_cast<std::size_t>(i)];
        const std::int64_t ya = y.data[static_cast<std::size_t>(a)];
        const std::int64_t yb = y.data[static_cast<std::size_t>(b)];
        if (codes[static_cast<std::size_t>(a)] == codes[static_cast<std::size_t>(b)]) {
            worst = std::max(worst, std::abs(ya - yb));
        } else if (ya > yb) {
            worst = std::max(worst, ya - yb);
        }
    }
    inv.order.push(static_cast<double>(worst));

    // Shift invariance: adding a constant that keeps codes in range must not
    // change a single output code.
    const auto [lo_it, hi_it] = std::minmax_element(codes.begin(), codes.end());
    const std::int64_t lo_s = -127 - *lo_it, hi_s = 127 - *hi_it;
    const std::int64_t off = lo_s + static_cast<std::int64_t>(
                                        rng_below(rng, static_cast<std::uint64_t>(hi_s - lo_s + 1)));
    std::vector<std::int64_t> shifted = codes;
    for (auto& v : shifted) v += off;
    const QTensor y2 = shiftmax(codes_tensor(std::move(shifted), s, 8), k_out, math);
    std::int64_t diff = 0;
    for (std::size_t i = 0; i < y.data.size(); ++i) {
        diff = std::max(diff, std::abs(y.data[i] - y2.data[i]));
    }
    inv.shift_inv.push(static_cast<double>(diff));
}

std::vector<std::vector<std::int64_t>> near_tie_rows(std::int64_t d) {
    std::vector<std::vector<std::int64_t>> rows;
    const auto filled = [d](std::int64_t v) {
        return std::vector<std::int64_t>(static_cast<std::size_t>(d), v);
    };
    rows.push_back(filled(0));
    rows.push_back(filled(127));
    rows.push_back(filled(-127));
    auto spike = filled(-127);
    spike[0] = 127;
    spike[1] = 126; // runner-up one code below the max
    rows.push_back(spike);
    auto twin = filled(-127);
    twin[0] = twin[1] = 127; // tied maxima
    rows.push_back(twin);
    auto halves = filled(-1);
    for (std::int64_t i = 0; i < d / 2; ++i) halves[static_cast<std::size_t>(i)] = 0;
    rows.push_back(halves);
    auto ramp = filled(0);
    for (std::int64_t i = 0; i < d; ++i) ramp[static_cast<std::size_t>(i)] = (i % 255) - 127;
    rows.push_back(ramp);
    auto flicker = filled(126);
    for (std::int64_t i = 0; i < d; i += 2) flicker[static_cast<std::size_t>(i)] = 127;
    rows.push_back(flicker);
    return rows;
}

void sweep_shiftmax(ErrorReport& rep, const SweepSpec& spec, std::uint64_t seed) {
    // Register every site up front: site() references must stay stable.
    for (double s : spec.scales) site(rep, scale_label("shiftmax", s));
    site(rep, "shiftmax.sum_bound");
    site(rep, "shiftmax.order");
    site(rep, "shiftmax.shift_inv");
    ShiftmaxInvariants inv{ErrBatch(site(rep, "shiftmax.sum_bound")),
                           ErrBatch(site(rep, "shiftmax.order")),
                           ErrBatch(site(rep, "shiftmax.shift_inv"))};
    rep.tolerances["shiftmax.sum_bound"] = 0.0;
    rep.tolerances["shiftmax.order"] = 0.0;
    rep.tolerances["shiftmax.shift_inv"] = 0.0;

    for (std::size_t si = 0; si < spec.scales.size(); ++si) {
        const double s = spec.scales[si];
        const std::string name = scale_label("shiftmax", s);
        SiteStats& cmp = site(rep, name);
        rep.tolerances[name] = tol::shiftmax_max_abs;
        rep.tolerances[name + ".mean"] = tol::shiftmax_mean_abs;

        for (std::int64_t t = 0; t < spec.trials; ++t) {
            Rng rng = sub_rng(seed, si, static_cast<std::uint64_t>(t));
            shiftmax_row(random_codes(rng, spec.d), s, spec.k_out, spec.math, rng, cmp, inv);
        }
        if (spec.trials > 0) {
            std::uint64_t t = static_cast<std::uint64_t>(spec.trials);
            for (const auto& row : near_tie_rows(spec.d)) {
                Rng rng = sub_rng(seed, si, t++);
                shiftmax_row(row, s, spec.k_out, spec.math, rng, cmp, inv);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// shiftgelu: exhaustive 8-bit grid per scale against x * sigmoid(1.702 x).
// The sigmoid-vs-erf modeling gap is reported as its own site and never
// counted toward pass.
// ---------------------------------------------------------------------------

void sweep_shiftgelu(ErrorReport& rep, const SweepSpec& spec) {
    if (spec.trials <= 0) return;
    for (double s : spec.scales) {
        std::vector<std::int64_t> codes(256);
        std::iota(codes.begin(), codes.end(), -128);
        const QTensor x = codes_tensor(std::move(codes), s, 8);
        const FpTensor xf = dequantize(x);

        const std::string name = scale_label("shiftgelu", s);
        rep.tolerances[name] = tol::shiftgelu_max_abs;
        const QTensor raw = shift_gelu(x, spec.k_out, spec.math);
        site(rep, name).fold(dequantize(raw), fp_gelu_sigmoid(xf));

        site(rep, scale_label("shiftgelu.erfgap", s)).fold(fp_gelu_sigmoid(xf), fp_gelu_erf(xf));
    }
}

// ---------------------------------------------------------------------------
// layernorm: random rows, exact identity affine (gamma codes 127 at scale
// 1/127, beta zero). Normalization is scale free, so codes act as values.
// ---------------------------------------------------------------------------

void sweep_layernorm(ErrorReport& rep, const SweepSpec& spec, std::uint64_t seed) {
    QuantizeOptions opt;
    opt.math = spec.math;
    FpTensor gamma = make_fp_tensor({spec.d});
    std::fill(gamma.data.begin(), gamma.data.end(), 1.0);
    const FpTensor beta = make_fp_tensor({spec.d});
    const LayerNormParams params = build_layernorm_params(gamma, beta, 4.0, opt);

    site(rep, "layernorm");
    site(rep, "layernorm.std_rel");
    SiteStats& cmp = site(rep, "layernorm");
    rep.tolerances["layernorm"] = tol::layernorm_max_abs;
    ErrBatch std_rel(site(rep, "layernorm.std_rel"));
    rep.tolerances["layernorm.std_rel"] = tol::layernorm_std_rel;

    for (std::int64_t t = 0; t < spec.trials; ++t) {
        Rng rng = sub_rng(seed, 0, static_cast<std::uint64_t>(t));
        const QTensor x = codes_tensor(random_codes(rng, spec.d), 1.0, 8);
        const QTensor y = i_layernorm(x, params, spec.k_out, spec.math,
                                      RequantRounding::Nearest);
        const FpTensor xf = dequantize(x);
        cmp.fold(dequantize(y), fp_layernorm(xf, gamma, beta));

        // Integer std (the kernel's mean, variance and isqrt sequence) vs the
        // real population std, skipping near-constant rows.
        std::int64_t sum = 0;
        for (std::int64_t v : x.data) sum += v;
        const std::int64_t mean = round_div_away(sum, spec.d);
        std::int64_t ss = 0;
        for (std::int64_t v : x.data) ss += (v - mean) * (v - mean);
        const std::int64_t istd =
            std::max<std::int64_t>(1, int_isqrt(floor_div(ss, spec.d), spec.math));
        double fmean = 0.0;
        for (double v : xf.data) fmean += v;
        fmean /= static_cast<double>(spec.d);
        double fvar = 0.0;
        for (double v : xf.data) fvar += (v - fmean) * (v - fmean);
        const double fstd = std::sqrt(fvar / static_cast<double>(spec.d));
        if (fstd >= 1.0) {
            std_rel.push(std::abs(static_cast<double>(istd) - fstd) / fstd);
        }
    }
}

// ---------------------------------------------------------------------------
// isqrt: exhaustive [0, 2^20], then random values below 2^31, against the
// exact floor square root.
// ---------------------------------------------------------------------------

std::int64_t floor_sqrt(std::int64_t v) {
    std::int64_t r = std::llround(std::sqrt(static_cast<double>(v)));
    while (r > 0 && r * r > v) --r;
    while ((r + 1) * (r + 1) <= v) ++r;
    return r;
}

void sweep_isqrt(ErrorReport& rep, const SweepSpec& spec, std::uint64_t seed) {
    if (spec.trials <= 0) return;
    ErrBatch err(site(rep, "isqrt"));
    rep.tolerances["isqrt"] = 1.0;
    for (std::int64_t v = 0; v <= (std::int64_t{1} << 20); ++v) {
        err.push(static_cast<double>(std::abs(int_isqrt(v, spec.math) - floor_sqrt(v))));
    }
    Rng rng = sub_rng(seed, 1, 0);
    for (std::int64_t t = 0; t < spec.trials; ++t) {
        const std::int64_t v = static_cast<std::int64_t>(rng_below(rng, std::uint64_t{1} << 31));
        err.push(static_cast<double>(std::abs(int_isqrt(v, spec.math) - floor_sqrt(v))));
    }
}

// ---------------------------------------------------------------------------
// intdiv: random pairs with log-uniform denominators; bit-exact against a
// 128-bit oracle, plus the ratio error bound in output LSBs.
// ---------------------------------------------------------------------------

void sweep_intdiv(ErrorReport& rep, const SweepSpec& spec, std::uint64_t seed) {
    site(rep, "intdiv.exact");
    site(rep, "intdiv.ratio");
    ErrBatch exact(site(rep, "intdiv.exact"));
    ErrBatch ratio(site(rep, "intdiv.ratio"));
    rep.tolerances["intdiv.exact"] = 0.0;
    rep.tolerances["intdiv.ratio"] = 1.0;
    const int k = spec.k_out, M = spec.math.M;

    for (std::int64_t t = 0; t < spec.trials; ++t) {
        Rng rng = sub_rng(seed, 0, static_cast<std::uint64_t>(t));
        const int nb = 1 + static_cast<int>(rng_below(rng, 31));
        std::int64_t i2 = std::int64_t{1} << (nb - 1);
        i2 += static_cast<std::int64_t>(rng_below(rng, static_cast<std::uint64_t>(i2)));
        const std::int64_t i1 =
            static_cast<std::int64_t>(rng_below(rng, static_cast<std::uint64_t>(i2) + 1));

        const std::int64_t mine = int_div_core(i1, i2, k, M);
        const __int128 recip = (static_cast<__int128>(1) << M) / i2;
        __int128 want = (recip * i1) >> (M - (k - 1));
        const std::int64_t lim = qmax(k);
        if (want > lim) want = lim;
        if (want < 0) want = 0;
        exact.push(static_cast<double>(mine - static_cast<std::int64_t>(want)));

        const double lsb = std::ldexp(1.0, k - 1); // codes per unit ratio
        const double err_lsb =
            std::abs(static_cast<double>(mine) -
                     (static_cast<double>(i1) / static_cast<double>(i2)) * lsb);
        const double bound_lsb =
            1.0 + static_cast<double>(i2) * std::ldexp(1.0, -(M - k + 1));
        ratio.push(err_lsb / bound_lsb);
    }
}

// ---------------------------------------------------------------------------
// requant: random 32-bit accumulators against the exact dyadic product
// b * acc / 2^c, in output LSBs. Inputs are ranged so the 32-bit clamp never
// engages and the rounding error alone is visible.
// ---------------------------------------------------------------------------

void sweep_requant(ErrorReport& rep, const SweepSpec& spec, std::uint64_t seed) {
    ErrBatch err(site(rep, "requant"));
    rep.tolerances["requant"] = tol::requant_lsb;

    for (std::int64_t t = 0; t < spec.trials; ++t) {
        Rng rng = sub_rng(seed, 0, static_cast<std::uint64_t>(t));
        const std::int64_t acc =
            static_cast<std::int64_t>(rng_below(rng, (std::uint64_t{1} << 31) + 1)) -
            (std::int64_t{1} << 30);
        const double r = std::ldexp(0.5 + rng_unit(rng),
                                    -static_cast<int>(rng_below(rng, 17)));
        const DyadicScale d = to_dyadic_auto(r, 30);

        QTensor a;
        a.dims = {1};
        a.data = {acc};
        a.scale = 1.0;
        a.bits = 32;
        const QTensor y = requantize(a, d, 32, 1.0, RequantRounding::Nearest);

        const __int128 exact_num = static_cast<__int128>(d.b) * acc;
        const __int128 got_num = static_cast<__int128>(y.data[0]) << d.c;
        __int128 delta = got_num - exact_num;
        if (delta < 0) delta = -delta;
        err.push(static_cast<double>(static_cast<std::uint64_t>(delta)) /
                 std::ldexp(1.0, d.c));
    }
}

} // namespace

ErrorReport kernel_sweep(const std::string& kernel, const SweepSpec& spec,
                         std::uint64_t seed) {
    validate(spec.math);
    if (spec.d < 2) throw std::invalid_argument("kernel_sweep: d must be >= 2");
    if (spec.k_out < 2 || spec.k_out > 32) {
        throw std::invalid_argument("kernel_sweep: k_out must be in [2, 32]");
    }
    ErrorReport rep;
    rep.kind = "kernel-sweep";
    rep.seed = seed;
    rep.config = spec_config(kernel.c_str(), spec);

    if (kernel == "shiftmax") {
        sweep_shiftmax(rep, spec, seed);
    } else if (kernel == "shiftgelu") {
        sweep_shiftgelu(rep, spec);
    } else if (kernel == "layernorm") {
        sweep_layernorm(rep, spec, seed);
    } else if (kernel == "isqrt") {
        sweep_isqrt(rep, spec, seed);
    } else if (kernel == "intdiv") {
        sweep_intdiv(rep, spec, seed);
    } else if (kernel == "requant") {
        sweep_requant(rep, spec, seed);
    } else {
        throw std::invalid_argument("kernel_sweep: unknown kernel: " + kernel);
    }
    apply_tolerances(rep);
    return rep;
}

} // namespace intvit
