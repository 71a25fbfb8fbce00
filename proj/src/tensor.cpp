#include "intvit/tensor.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace intvit {

// ---------------------------------------------------------------------------
// Integer-only audit state.
// ---------------------------------------------------------------------------

namespace {
thread_local int g_guard_depth = 0;
}

bool integer_only_mode() noexcept { return g_guard_depth > 0; }

void audit_real_arithmetic(const char* what) {
    if (g_guard_depth > 0) {
        throw std::logic_error(std::string("real arithmetic under integer-only guard: ") + what);
    }
}

IntegerOnlyGuard::IntegerOnlyGuard() { ++g_guard_depth; }
IntegerOnlyGuard::~IntegerOnlyGuard() { --g_guard_depth; }

// ---------------------------------------------------------------------------
// Tensors.
// ---------------------------------------------------------------------------

namespace {

std::int64_t product(const std::vector<std::int64_t>& dims) {
    std::int64_t n = 1;
    for (std::int64_t d : dims) n *= d;
    return n;
}

void check_dims(const std::vector<std::int64_t>& dims) {
    std::int64_t n = 1;
    for (std::int64_t d : dims) {
        if (d <= 0) throw std::invalid_argument("tensor dims must be positive");
        if (d > (std::int64_t{1} << 32)) throw std::invalid_argument("tensor dim too large");
        n *= d;
        if (n > (std::int64_t{1} << 40)) throw std::invalid_argument("tensor too large");
    }
}

} // namespace

std::int64_t FpTensor::numel() const { return product(dims); }
std::int64_t QTensor::numel() const { return product(dims); }

FpTensor make_fp_tensor(std::vector<std::int64_t> dims) {
    check_dims(dims);
    FpTensor t;
    t.data.assign(static_cast<std::size_t>(product(dims)), 0.0);
    t.dims = std::move(dims);
    return t;
}

QTensor make_q_tensor(std::vector<std::int64_t> dims, double scale, int bits) {
    check_dims(dims);
    QTensor t;
    t.data.assign(static_cast<std::size_t>(product(dims)), 0);
    t.dims = std::move(dims);
    t.scale = scale;
    t.bits = bits;
    validate(t);
    return t;
}

void validate(const FpTensor& t) {
    check_dims(t.dims);
    if (static_cast<std::int64_t>(t.data.size()) != t.numel()) {
        throw std::invalid_argument("FpTensor dims/data length mismatch");
    }
    for (double v : t.data) {
        if (!std::isfinite(v)) throw std::invalid_argument("FpTensor holds non-finite value");
    }
}

void validate(const QTensor& t) {
    check_dims(t.dims);
    if (static_cast<std::int64_t>(t.data.size()) != t.numel()) {
        throw std::invalid_argument("QTensor dims/data length mismatch");
    }
    if (t.bits != 8 && t.bits != 16 && t.bits != 32) {
        throw std::invalid_argument("QTensor bits must be 8, 16 or 32");
    }
    if (!(t.scale > 0.0) || !std::isfinite(t.scale)) {
        throw std::invalid_argument("QTensor scale must be positive and finite");
    }
    if (!fits_bits(t)) {
        throw std::invalid_argument("QTensor element outside declared bit range");
    }
}

bool fits_bits(const QTensor& t) {
    const std::int64_t hi = qmax(t.bits);
    const std::int64_t lo = -hi - 1; // the full two's complement floor
    for (std::int64_t v : t.data) {
        if (v < lo || v > hi) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// splitmix64 and Gaussian sampling.
// ---------------------------------------------------------------------------

std::uint64_t rng_next(Rng& rng) {
    rng.state += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = rng.state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

double rng_unit(Rng& rng) {
    return static_cast<double>(rng_next(rng) >> 11) * 0x1.0p-53;
}

std::uint64_t rng_below(Rng& rng, std::uint64_t bound) {
    if (bound == 0) throw std::invalid_argument("rng_below: bound must be positive");
    return rng_next(rng) % bound;
}

FpTensor gen_gaussian(Rng& rng, const std::vector<std::int64_t>& dims,
                      double mean, double stddev) {
    if (!(stddev >= 0.0) || !std::isfinite(stddev) || !std::isfinite(mean)) {
        throw std::invalid_argument("gen_gaussian: mean/std must be finite, std >= 0");
    }
    FpTensor t = make_fp_tensor(dims);
    const std::int64_t n = t.numel();
    for (std::int64_t i = 0; i < n; i += 2) {
        double u1 = rng_unit(rng);
        // u1 = 0 would send log through -inf; redraw (keeps determinism,
        // probability 2^-53 per sample).
        while (u1 == 0.0) u1 = rng_unit(rng);
        const double u2 = rng_unit(rng);
        const double rad = std::sqrt(-2.0 * std::log(u1));
        const double ang = 2.0 * std::numbers::pi_v<double> * u2;
        t.data[static_cast<std::size_t>(i)] = mean + stddev * (rad * std::cos(ang));
        if (i + 1 < n) {
            t.data[static_cast<std::size_t>(i + 1)] = mean + stddev * (rad * std::sin(ang));
        }
    }
    return t;
}

} // namespace intvit
