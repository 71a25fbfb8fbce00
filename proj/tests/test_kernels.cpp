#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "intvit/kernels.hpp"
#include "straightline.hpp"

using namespace intvit;

namespace {

QTensor codes(std::vector<std::int64_t> dims, std::vector<std::int64_t> vals,
              double scale = 1.0, int bits = 8) {
    QTensor t;
    t.dims = std::move(dims);
    t.data = std::move(vals);
    t.scale = scale;
    t.bits = bits;
    validate(t);
    return t;
}

} // namespace

TEST_CASE("kernels: transpose2d") {
    const QTensor t = codes({2, 3}, {1, 2, 3, 4, 5, 6});
    const QTensor u = transpose2d(t);
    CHECK(u.dims == std::vector<std::int64_t>({3, 2}));
    CHECK(u.data == std::vector<std::int64_t>({1, 4, 2, 5, 3, 6}));
    CHECK(u.scale == t.scale);
    CHECK(u.bits == t.bits);
    CHECK_THROWS_AS(transpose2d(codes({4}, {1, 2, 3, 4})), std::invalid_argument);
}

TEST_CASE("kernels: int_matmul_acc computes a(i,:) . b(j,:) exactly") {
    const QTensor a = codes({2, 3}, {1, 2, 3, -1, 0, 2});
    const QTensor b = codes({2, 3}, {4, 5, 6, 1, 1, 1});
    const QTensor acc = int_matmul_acc(a, b, 0.25);
    CHECK(acc.dims == std::vector<std::int64_t>({2, 2}));
    CHECK(acc.bits == 32);
    CHECK(acc.scale == 0.25);
    CHECK(acc.data == std::vector<std::int64_t>({32, 6, 8, 1}));

    CHECK_THROWS_AS(int_matmul_acc(a, codes({2, 2}, {1, 2, 3, 4}), 1.0),
                    std::invalid_argument);

    // Two 2^30-ish products overflow the 32-bit accumulator check.
    const QTensor big = codes({1, 2}, {1 << 16, 1 << 16}, 1.0, 32);
    CHECK_THROWS_AS(int_matmul_acc(big, big, 1.0), std::range_error);
}

TEST_CASE("kernels: int_matmul requantizes and the auto variant audits") {
    const QTensor a = codes({1, 2}, {10, 20}, 0.5);
    const QTensor b = codes({1, 2}, {3, 4}, 0.25);
    const QTensor y = int_matmul(a, b, DyadicScale{1u, 1}, 1.0, 8,
                                 RequantRounding::Nearest, nullptr);
    CHECK(y.data == std::vector<std::int64_t>({55}));  // (110 + 1) >> 1

    const QTensor z = int_matmul_auto(a, b, 0.125, 8, RequantRounding::Nearest);
    CHECK(z.scale == 0.125);
    CHECK(z.data[0] == 110);  // 110 * (0.5*0.25/0.125) = 110

    IntegerOnlyGuard guard;
    CHECK_THROWS_AS(int_matmul_auto(a, b, 0.125, 8, RequantRounding::Nearest),
                    std::logic_error);
    CHECK_NOTHROW(int_matmul(a, b, DyadicScale{1u, 1}, 1.0, 8,
                             RequantRounding::Nearest, nullptr));
}

TEST_CASE("kernels: int_dense applies bias then the frozen dyadic") {
    DenseWeights w;
    w.weight = codes({2, 3}, {1, 2, 3, -1, 0, 2});
    w.bias = {10, -5};
    w.in_scale = 1.0;
    w.bias_scale = 0.125;
    w.out_scale = 0.25;
    w.out_requant = DyadicScale{1u, 1};

    const QTensor x = codes({1, 3}, {4, 5, 6});
    const QTensor y = int_dense(x, w, 8, RequantRounding::Nearest);
    CHECK(y.dims == std::vector<std::int64_t>({1, 2}));
    CHECK(y.scale == 0.25);
    CHECK(y.data == std::vector<std::int64_t>({21, 2}));  // (42+1)>>1, (3+1)>>1
    CHECK(w.saturations == 0);

    const QTensor acc = int_dense_acc(x, w);
    CHECK(acc.bits == 32);
    CHECK(acc.scale == 0.125);
    CHECK(acc.data == std::vector<std::int64_t>({42, 3}));

    // An oversized multiplier clamps every output and counts it.
    w.out_requant = DyadicScale{1000000u, 0};
    int_dense(x, w, 8, RequantRounding::Nearest);
    CHECK(w.saturations == 2);

    CHECK_THROWS_AS(int_dense(codes({1, 3}, {4, 5, 6}, 1.0, 16), w, 8,
                              RequantRounding::Nearest),
                    std::invalid_argument);
    w.bias = {1};
    CHECK_THROWS_AS(int_dense(x, w, 8, RequantRounding::Nearest),
                    std::invalid_argument);
}

TEST_CASE("kernels: shiftmax frozen traces") {
    // S = 1/16, k_out = 8: softmax(0, -1) lands on [93, 34] at scale 1/128.
    IntMathConfig cfg;
    const QTensor x = codes({2}, {0, -16}, 0.0625);
    const QTensor y = shiftmax(x, 8, cfg);
    CHECK(y.data == std::vector<std::int64_t>({93, 34}));
    CHECK(y.scale == 0.0078125);
    CHECK(y.bits == 8);

    // Equal inputs split the grid evenly.
    const QTensor e = codes({4}, {7, 7, 7, 7}, 0.0625);
    CHECK(shiftmax(e, 8, cfg).data == std::vector<std::int64_t>({32, 32, 32, 32}));

    // Rows are independent: stacking the two cases changes nothing.
    const QTensor two = codes({2, 2}, {0, -16, 5, 5}, 0.0625);
    const QTensor ty = shiftmax(two, 8, cfg);
    CHECK(ty.data == std::vector<std::int64_t>({93, 34, 64, 64}));
}

TEST_CASE("kernels: shiftmax validates and audits") {
    IntMathConfig cfg;
    const QTensor x = codes({2}, {0, -16}, 0.0625);
    CHECK_THROWS_AS(shiftmax(codes({2}, {0, -1}, 1.0, 32), 8, cfg),
                    std::invalid_argument);
    CHECK_THROWS_AS(shiftmax(x, 1, cfg), std::invalid_argument);
    CHECK_THROWS_AS(shiftmax(x, 17, cfg), std::invalid_argument);
    CHECK_THROWS_AS(shiftmax_fixed(x, 8, cfg, 0, 1.0), std::invalid_argument);
    // I_0 so large the row sum could not satisfy the IntDiv preconditions.
    CHECK_THROWS_AS(
        shiftmax_fixed(codes({197}, std::vector<std::int64_t>(197, 0), 1.0), 8,
                       cfg, std::int64_t{1} << 40, 1.0),
        std::invalid_argument);

    IntegerOnlyGuard guard;
    CHECK_THROWS_AS(shiftmax(x, 8, cfg), std::logic_error);
    CHECK_NOTHROW(shiftmax_fixed(x, 8, cfg, 16, 0.0078125));
}

TEST_CASE("kernels: shiftmax matches the straight-line transcription") {
    IntMathConfig cfg;
    Rng rng{404};
    std::int64_t mismatches = 0;
    for (const std::int64_t i0 : {3, 8, 16, 128, 1000, 65536}) {
        for (const std::int64_t d : {2, 5, 197}) {
            for (int rep = 0; rep < 40; ++rep) {
                const std::int64_t lim = i0 > 255 ? 32767 : 127;
                std::vector<std::int64_t> row(static_cast<std::size_t>(d));
                for (auto& v : row) {
                    v = static_cast<std::int64_t>(rng_below(
                            rng, static_cast<std::uint64_t>(2 * lim + 1))) - lim;
                }
                QTensor x;
                x.dims = {d};
                x.data = row;
                x.scale = 1.0;
                x.bits = lim > 127 ? 16 : 8;
                const QTensor got = shiftmax_fixed(x, 8, cfg, i0, 1.0);
                const auto want = straightline::shiftmax_row(row, i0, cfg.N, cfg.M, 8);
                for (std::int64_t j = 0; j < d; ++j) {
                    if (got.data[static_cast<std::size_t>(j)] !=
                        want[static_cast<std::size_t>(j)]) {
                        ++mismatches;
                    }
                }
            }
        }
    }
    CHECK(mismatches == 0);
}

TEST_CASE("kernels: shift_gelu frozen trace") {
    // S = 1/16, k_sigma = 8, input 16 (x = 1): sigma factor 107, raw product
    // 1712 on the grid S / 2^7 = 1/2048.
    IntMathConfig cfg;
    const QTensor x = codes({1}, {16}, 0.0625);
    const QTensor y = shift_gelu(x, 8, cfg);
    CHECK(y.data == std::vector<std::int64_t>({1712}));
    CHECK(y.scale == doctest::Approx(1.0 / 2048.0).epsilon(1e-15));
    CHECK(y.bits == 16);
    CHECK(1712.0 * (0.0625 / 128.0) == doctest::Approx(0.8359375));

    // Zero maps to zero; a negative input keeps its sign.
    const QTensor z = codes({2}, {0, -16}, 0.0625);
    const QTensor zy = shift_gelu(z, 8, cfg);
    CHECK(zy.data[0] == 0);
    CHECK(zy.data[1] < 0);

    // Wider sigmoid factors move the output to 32 bits.
    CHECK(shift_gelu(x, 12, cfg).bits == 32);

    CHECK_THROWS_AS(shift_gelu(codes({1}, {16}, 1.0, 16), 8, cfg),
                    std::invalid_argument);
    CHECK_THROWS_AS(shift_gelu(x, 1, cfg), std::invalid_argument);
    IntegerOnlyGuard guard;
    CHECK_THROWS_AS(shift_gelu(x, 8, cfg), std::logic_error);
    CHECK_NOTHROW(shift_gelu_fixed(x, 8, cfg, 16, 1.0));
}

TEST_CASE("kernels: shift_gelu matches the straight-line transcription") {
    IntMathConfig cfg;
    std::int64_t mismatches = 0;
    for (const std::int64_t i0 : {8, 16, 64, 1000}) {
        std::vector<std::int64_t> grid(255);
        for (int v = -127; v <= 127; ++v) grid[static_cast<std::size_t>(v + 127)] = v;
        QTensor x;
        x.dims = {static_cast<std::int64_t>(grid.size())};
        x.data = grid;
        x.scale = 1.0;
        x.bits = 8;
        for (const int k_sigma : {4, 8, 16}) {
            const QTensor got = shift_gelu_fixed(x, k_sigma, cfg, i0, 1.0);
            const auto want =
                straightline::shift_gelu_all(grid, i0, cfg.N, cfg.M, k_sigma);
            for (std::size_t j = 0; j < grid.size(); ++j) {
                if (got.data[j] != want[j]) ++mismatches;
            }
        }
    }
    CHECK(mismatches == 0);
}

TEST_CASE("kernels: i_layernorm normalizes onto the 2^p grid") {
    IntMathConfig cfg;
    LayerNormParams p;
    p.gamma = codes({2}, {1, 1});
    p.beta = {0, 0};
    p.p = 2;
    p.out_scale = 1.0;
    p.out_requant = DyadicScale{1u, 0};

    // mean 2, centered [-1, 1], var 1, std 1: norm = centered << 2.
    const QTensor x = codes({1, 2}, {1, 3});
    const QTensor y = i_layernorm(x, p, 32, cfg, RequantRounding::Nearest);
    CHECK(y.bits == 32);
    CHECK(y.data == std::vector<std::int64_t>({-4, 4}));

    // Variance floors to zero here and the divisor clamps to one.
    const QTensor u = codes({1, 2}, {0, 1});
    CHECK(i_layernorm(u, p, 32, cfg, RequantRounding::Nearest).data ==
          std::vector<std::int64_t>({-4, 0}));

    // A constant row is all beta.
    const QTensor c = codes({1, 2}, {5, 5});
    CHECK(i_layernorm(c, p, 32, cfg, RequantRounding::Nearest).data ==
          std::vector<std::int64_t>({0, 0}));
}

TEST_CASE("kernels: i_layernorm validation and saturation counting") {
    IntMathConfig cfg;
    LayerNormParams p;
    p.gamma = codes({2}, {127, 127});
    p.beta = {0, 0};
    p.p = 15;
    p.out_scale = 1.0;
    p.out_requant = DyadicScale{1u, 0};

    // norm * 127 at p = 15 is far beyond the 8-bit grid: every element clamps.
    const QTensor x = codes({1, 2}, {1, 3});
    i_layernorm(x, p, 8, cfg, RequantRounding::Nearest);
    CHECK(p.saturations == 2);

    CHECK_THROWS_AS(i_layernorm(codes({1}, {3}), p, 8, cfg, RequantRounding::Nearest),
                    std::invalid_argument);
    CHECK_THROWS_AS(i_layernorm(codes({1, 3}, {1, 2, 3}), p, 8, cfg,
                                RequantRounding::Nearest),
                    std::invalid_argument);
    CHECK_THROWS_AS(i_layernorm(codes({1, 2}, {1, 2}, 1.0, 16), p, 8, cfg,
                                RequantRounding::Nearest),
                    std::invalid_argument);
    p.p = 0;
    CHECK_THROWS_AS(i_layernorm(x, p, 8, cfg, RequantRounding::Nearest),
                    std::invalid_argument);
    p.p = 15;

    // Integer-only on the hot path.
    IntegerOnlyGuard guard;
    CHECK_NOTHROW(i_layernorm(x, p, 8, cfg, RequantRounding::Nearest));
}

TEST_CASE("kernels: residual_add aligns both sides and clamps") {
    const QTensor a = codes({3}, {100, -100, 60});
    const QTensor b = codes({3}, {50, -50, 80});
    std::int64_t sat = 0;
    const QTensor y = residual_add(a, DyadicScale{1u, 0}, b, DyadicScale{1u, 0},
                                   1.0, 8, RequantRounding::Nearest, &sat);
    CHECK(y.data == std::vector<std::int64_t>({127, -127, 127}));
    CHECK(sat == 3);

    // Halving dyadics keep everything on grid.
    const QTensor h = residual_add(a, DyadicScale{1u, 1}, b, DyadicScale{1u, 1},
                                   1.0, 8, RequantRounding::Nearest, nullptr);
    CHECK(h.data == std::vector<std::int64_t>({75, -75, 70}));

    CHECK_THROWS_AS(residual_add(a, DyadicScale{1u, 0}, codes({2}, {1, 2}),
                                 DyadicScale{1u, 0}, 1.0, 8,
                                 RequantRounding::Nearest, nullptr),
                    std::invalid_argument);
    CHECK_THROWS_AS(residual_add(a, DyadicScale{1u, 0}, b, DyadicScale{1u, 0},
                                 1.0, 12, RequantRounding::Nearest, nullptr),
                    std::invalid_argument);

    IntegerOnlyGuard guard;
    CHECK_THROWS_AS(residual_add_auto(a, b, 1.0, 8, RequantRounding::Nearest),
                    std::logic_error);
    CHECK_NOTHROW(residual_add(a, DyadicScale{1u, 1}, b, DyadicScale{1u, 1}, 1.0,
                               8, RequantRounding::Nearest, nullptr));
}

TEST_CASE("kernels: residual_add_auto derives the dyadics from scales") {
    const QTensor a = codes({2}, {10, -10}, 0.5);
    const QTensor b = codes({2}, {20, 20}, 0.25);
    const QTensor y = residual_add_auto(a, b, 0.25, 8, RequantRounding::Nearest);
    // a rescales by 2, b by 1: [40, 0].
    CHECK(y.scale == 0.25);
    CHECK(y.data == std::vector<std::int64_t>({40, 0}));
}
