#pragma once

#include <cstdint>
#include <vector>

#include "intvit/common.hpp"

namespace intvit {

// Dense row-major tensor of doubles. dims are the extents, outermost first.
struct FpTensor {
    std::vector<std::int64_t> dims;
    std::vector<double> data;

    std::int64_t numel() const;
    std::int64_t rank() const { return static_cast<std::int64_t>(dims.size()); }
};

// Dense row-major integer tensor with a per-tensor scale. Elements are stored
// as int64_t but carry a declared logical width of 8, 16 or 32 bits; the real
// value of element i is scale * data[i].
struct QTensor {
    std::vector<std::int64_t> dims;
    std::vector<std::int64_t> data;
    double scale = 1.0;
    int bits = 8;

    std::int64_t numel() const;
    std::int64_t rank() const { return static_cast<std::int64_t>(dims.size()); }
};

FpTensor make_fp_tensor(std::vector<std::int64_t> dims);
QTensor make_q_tensor(std::vector<std::int64_t> dims, double scale, int bits);

// Throw std::invalid_argument on non-positive dims, dims/data length mismatch,
// a bad bit width, or an element outside the declared two's complement range.
void validate(const FpTensor& t);
void validate(const QTensor& t);

// True iff every element is inside [-2^(bits-1), 2^(bits-1) - 1].
bool fits_bits(const QTensor& t);

// ---------------------------------------------------------------------------
// Deterministic RNG (splitmix64) and Gaussian sampling.
// ---------------------------------------------------------------------------

struct Rng {
    std::uint64_t state = 0;
};

std::uint64_t rng_next(Rng& rng);

// Uniform double in [0, 1), 53 significant bits.
double rng_unit(Rng& rng);

// Uniform integer in [0, bound). bound > 0. Modulo reduction; the bias is
// irrelevant for test-input generation and determinism is what matters.
std::uint64_t rng_below(Rng& rng, std::uint64_t bound);

// Box-Muller. Consumes uniforms in pairs; the trailing odd sample discards
// its sine half. All outputs are finite.
FpTensor gen_gaussian(Rng& rng, const std::vector<std::int64_t>& dims,
                      double mean, double stddev);

} // namespace intvit
