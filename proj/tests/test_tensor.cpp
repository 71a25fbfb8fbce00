#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <vector>

#include "intvit/tensor.hpp"
#include "intvit/tensor_io.hpp"

using namespace intvit;

namespace {

std::filesystem::path temp_dir(const char* tag) {
    auto p = std::filesystem::temp_directory_path() / (std::string("intvit-test-") + tag);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f),
                                     std::istreambuf_iterator<char>());
}

void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& b) {
    std::ofstream f(p, std::ios::binary);
    f.write(reinterpret_cast<const char*>(b.data()),
            static_cast<std::streamsize>(b.size()));
}

} // namespace

TEST_CASE("rng: splitmix64 matches the reference sequence") {
    // First sixteen outputs for three seeds, frozen from an independent
    // implementation of the splitmix64 reference.
    const std::uint64_t seed0[16] = {
        0xE220A8397B1DCDAFull, 0x6E789E6AA1B965F4ull, 0x06C45D188009454Full,
        0xF88BB8A8724C81ECull, 0x1B39896A51A8749Bull, 0x53CB9F0C747EA2EAull,
        0x2C829ABE1F4532E1ull, 0xC584133AC916AB3Cull, 0x3EE5789041C98AC3ull,
        0xF3B8488C368CB0A6ull, 0x657EECDD3CB13D09ull, 0xC2D326E0055BDEF6ull,
        0x8621A03FE0BBDB7Bull, 0x8E1F7555983AA92Full, 0xB54E0F1600CC4D19ull,
        0x84BB3F97971D80ABull};
    const std::uint64_t seed1[16] = {
        0x910A2DEC89025CC1ull, 0xBEEB8DA1658EEC67ull, 0xF893A2EEFB32555Eull,
        0x71C18690EE42C90Bull, 0x71BB54D8D101B5B9ull, 0xC34D0BFF90150280ull,
        0xE099EC6CD7363CA5ull, 0x85E7BB0F12278575ull, 0x491718DE357E3DA8ull,
        0xCB435C8E74616796ull, 0x6775DC7701564F61ull, 0x9AFCD44D14CF8BFEull,
        0x7476CF8A4BAA5DC0ull, 0x87B341D690D7A28Aull, 0x6F9B6DAE6F4C57A8ull,
        0x2AC2CE17A5794A3Bull};
    const std::uint64_t seed42[16] = {
        0xBDD732262FEB6E95ull, 0x28EFE333B266F103ull, 0x47526757130F9F52ull,
        0x581CE1FF0E4AE394ull, 0x09BC585A244823F2ull, 0xDE4431FA3C80DB06ull,
        0x37E9671C45376D5Dull, 0xCCF635EE9E9E2FA4ull, 0x5705B8770B3D7DD5ull,
        0x9E54D738297F77AEull, 0x3474724A775B19BFull, 0x7E348A0E451650BEull,
        0x836DED897F3E46E6ull, 0x851F977347ED6DB7ull, 0xAA47E31C02E78EDCull,
        0x341452C54D7C33F2ull};

    Rng r0{0}, r1{1}, r42{42};
    for (int i = 0; i < 16; ++i) {
        CAPTURE(i);
        CHECK(rng_next(r0) == seed0[i]);
        CHECK(rng_next(r1) == seed1[i]);
        CHECK(rng_next(r42) == seed42[i]);
    }
}

TEST_CASE("rng: rng_unit lands in [0, 1) and is deterministic") {
    Rng a{7}, b{7};
    for (int i = 0; i < 1000; ++i) {
        const double u = rng_unit(a);
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        CHECK(u == rng_unit(b));
    }
}

TEST_CASE("rng: rng_below stays under the bound and rejects zero") {
    Rng r{123};
    for (int i = 0; i < 1000; ++i) {
        CHECK(rng_below(r, 17) < 17);
    }
    CHECK(rng_below(r, 1) == 0);
    CHECK_THROWS_AS(rng_below(r, 0), std::invalid_argument);
}

TEST_CASE("rng: gen_gaussian is deterministic with sane moments") {
    Rng a{99}, b{99};
    const FpTensor x = gen_gaussian(a, {256, 256}, 0.0, 1.0);
    const FpTensor y = gen_gaussian(b, {256, 256}, 0.0, 1.0);
    CHECK(x.data == y.data);
    CHECK(x.numel() == 65536);

    double sum = 0.0, sq = 0.0;
    for (double v : x.data) {
        CHECK(std::isfinite(v));
        sum += v;
        sq += v * v;
    }
    const double mean = sum / 65536.0;
    const double var = sq / 65536.0 - mean * mean;
    CHECK(std::fabs(mean) < 0.02);
    CHECK(std::sqrt(var) == doctest::Approx(1.0).epsilon(0.02));

    // Mean and stddev transform affinely.
    Rng c{99};
    const FpTensor z = gen_gaussian(c, {256, 256}, 3.0, 0.5);
    for (std::size_t i = 0; i < z.data.size(); ++i) {
        CHECK(z.data[i] == doctest::Approx(3.0 + 0.5 * x.data[i]).epsilon(1e-12));
    }
}

TEST_CASE("rng: gen_gaussian odd length consumes a full Box-Muller pair") {
    Rng a{5}, b{5};
    const FpTensor odd = gen_gaussian(a, {3}, 0.0, 1.0);
    const FpTensor even = gen_gaussian(b, {4}, 0.0, 1.0);
    for (int i = 0; i < 3; ++i) CHECK(odd.data[static_cast<std::size_t>(i)] ==
                                      even.data[static_cast<std::size_t>(i)]);
    CHECK_THROWS_AS(gen_gaussian(a, {2}, 0.0, -1.0), std::invalid_argument);
}

TEST_CASE("tensor: constructors zero-fill and validate dims") {
    const FpTensor f = make_fp_tensor({2, 3});
    CHECK(f.numel() == 6);
    CHECK(f.rank() == 2);
    for (double v : f.data) CHECK(v == 0.0);

    const QTensor q = make_q_tensor({4}, 0.5, 8);
    CHECK(q.numel() == 4);
    CHECK(q.scale == 0.5);
    CHECK(q.bits == 8);
    for (std::int64_t v : q.data) CHECK(v == 0);

    CHECK_THROWS_AS(make_fp_tensor({0}), std::invalid_argument);
    CHECK_THROWS_AS(make_fp_tensor({2, -1}), std::invalid_argument);
    CHECK_THROWS_AS(make_q_tensor({2}, 0.0, 8), std::invalid_argument);
    CHECK_THROWS_AS(make_q_tensor({2}, 1.0, 9), std::invalid_argument);
}

TEST_CASE("tensor: validate flags mismatches and range violations") {
    FpTensor f = make_fp_tensor({2, 2});
    f.data.pop_back();
    CHECK_THROWS_AS(validate(f), std::invalid_argument);
    f.data.push_back(std::numeric_limits<double>::infinity());
    CHECK_THROWS_AS(validate(f), std::invalid_argument);

    QTensor q = make_q_tensor({3}, 1.0, 8);
    q.data = {127, -128, 0};
    CHECK(fits_bits(q));
    CHECK_NOTHROW(validate(q));
    q.data[0] = 128;
    CHECK_FALSE(fits_bits(q));
    CHECK_THROWS_AS(validate(q), std::invalid_argument);
    q.data = {0, -129, 0};
    CHECK_FALSE(fits_bits(q));

    QTensor w = make_q_tensor({2}, 1.0, 16);
    w.data = {32767, -32768};
    CHECK(fits_bits(w));
    w.data[0] = 32768;
    CHECK_FALSE(fits_bits(w));
}

TEST_CASE("tensor: integer-only guard trips real-arithmetic helpers") {
    CHECK_FALSE(integer_only_mode());
    CHECK_NOTHROW(audit_real_arithmetic("test"));
    {
        IntegerOnlyGuard g;
        CHECK(integer_only_mode());
        CHECK_THROWS_AS(audit_real_arithmetic("test"), std::logic_error);
        {
            IntegerOnlyGuard inner;
            CHECK(integer_only_mode());
        }
        // Still guarded after the inner scope unwinds.
        CHECK(integer_only_mode());
    }
    CHECK_FALSE(integer_only_mode());
}

TEST_CASE("tensor_io: ITNS round-trips both tensor kinds") {
    FpTensor f = make_fp_tensor({2, 3});
    for (std::size_t i = 0; i < f.data.size(); ++i) {
        f.data[i] = 0.1 * static_cast<double>(i) - 0.25;
    }
    const auto fb = encode_tensor(f);
    const auto fd = decode_tensor(fb.data(), fb.size());
    REQUIRE(std::holds_alternative<FpTensor>(fd));
    const FpTensor& f2 = std::get<FpTensor>(fd);
    CHECK(f2.dims == f.dims);
    CHECK(f2.data == f.data);

    QTensor q = make_q_tensor({5}, 0.0078125, 16);
    q.data = {-300, 0, 7, 32767, -32768};
    const auto qb = encode_tensor(q);
    const auto qd = decode_tensor(qb.data(), qb.size());
    REQUIRE(std::holds_alternative<QTensor>(qd));
    const QTensor& q2 = std::get<QTensor>(qd);
    CHECK(q2.dims == q.dims);
    CHECK(q2.data == q.data);
    CHECK(q2.scale == q.scale);
    CHECK(q2.bits == q.bits);
}

TEST_CASE("tensor_io: file round-trip and typed readers") {
    const auto dir = temp_dir("itns");
    FpTensor f = make_fp_tensor({4});
    f.data = {1.0, -2.0, 0.5, 0.0};
    const auto fpath = (dir / "f.itns").string();
    write_tensor(fpath, f);
    CHECK(read_fp_tensor(fpath).data == f.data);
    CHECK_THROWS_AS(read_q_tensor(fpath), FormatError);

    QTensor q = make_q_tensor({2, 2}, 0.25, 8);
    q.data = {1, -2, 3, -4};
    const auto qpath = (dir / "q.itns").string();
    write_tensor(qpath, q);
    CHECK(read_q_tensor(qpath).data == q.data);
    CHECK_THROWS_AS(read_fp_tensor(qpath), FormatError);

    CHECK_THROWS_AS(read_tensor((dir / "missing.itns").string()), std::runtime_error);
    std::filesystem::remove_all(dir);
}

TEST_CASE("tensor_io: corrupt containers are rejected") {
    QTensor q = make_q_tensor({3}, 1.0, 8);
    q.data = {1, 2, 3};
    auto bytes = encode_tensor(q);

    // Wrong magic: not one of our files.
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(decode_tensor(bad_magic.data(), bad_magic.size()), FormatError);

    // Truncated payload: claims to be ITNS but is cut short.
    auto truncated = bytes;
    truncated.resize(truncated.size() - 5);
    CHECK_THROWS_AS(decode_tensor(truncated.data(), truncated.size()), CorruptionError);

    // Too short to even hold the header.
    CHECK_THROWS_AS(decode_tensor(bytes.data(), 3), FormatError);

    const auto dir = temp_dir("itns-corrupt");
    const auto path = (dir / "t.itns").string();
    write_bytes(path, truncated);
    CHECK_THROWS_AS(read_tensor(path), CorruptionError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("tensor_io: encoding is deterministic and fnv1a64 is stable") {
    QTensor q = make_q_tensor({2}, 0.5, 8);
    q.data = {-7, 42};
    CHECK(encode_tensor(q) == encode_tensor(q));

    // FNV-1a 64 reference values: the offset basis for empty input, and the
    // published digest of "a".
    CHECK(fnv1a64(nullptr, 0) == 0xCBF29CE484222325ull);
    const std::uint8_t a = 'a';
    CHECK(fnv1a64(&a, 1) == 0xAF63DC4C8601EC8Cull);
}

TEST_CASE("tensor_io: reading back a written file equals in-memory encoding") {
    const auto dir = temp_dir("itns-bytes");
    FpTensor f = make_fp_tensor({3});
    f.data = {0.125, -0.5, 2.0};
    const auto path = dir / "f.itns";
    write_tensor(path.string(), f);
    CHECK(read_bytes(path) == encode_tensor(f));
    std::filesystem::remove_all(dir);
}
