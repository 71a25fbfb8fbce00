#include "intvit/tensor_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace intvit {

namespace {

constexpr std::uint16_t kVersion = 1;
constexpr std::uint8_t kDtypeFp64 = 0;
constexpr std::uint8_t kDtypeInt = 1;

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
    put_u64(out, std::bit_cast<std::uint64_t>(v));
}

// Little-endian cursor with bounds checking; running past the end means the
// file was truncated.
struct Reader {
    const std::uint8_t* p;
    std::size_t len;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > len) throw CorruptionError("ITNS: truncated file");
    }
    std::uint8_t u8() {
        need(1);
        return p[pos++];
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = static_cast<std::uint16_t>(p[pos] | (p[pos + 1] << 8));
        pos += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
};

void encode_header(std::vector<std::uint8_t>& out, std::uint8_t dtype, std::uint8_t bits,
                   const std::vector<std::int64_t>& dims) {
    out.push_back('I');
    out.push_back('T');
    out.push_back('N');
    out.push_back('S');
    put_u16(out, kVersion);
    out.push_back(dtype);
    out.push_back(bits);
    if (dims.size() > 255) throw std::invalid_argument("ITNS: rank exceeds 255");
    out.push_back(static_cast<std::uint8_t>(dims.size()));
    for (std::int64_t d : dims) {
        if (d <= 0 || d > 0xFFFFFFFFll) throw std::invalid_argument("ITNS: dim out of range");
        put_u32(out, static_cast<std::uint32_t>(d));
    }
}

} // namespace

std::vector<std::uint8_t> encode_tensor(const FpTensor& t) {
    validate(t);
    std::vector<std::uint8_t> out;
    out.reserve(16 + 4 * t.dims.size() + 8 * t.data.size());
    encode_header(out, kDtypeFp64, 64, t.dims);
    for (double v : t.data) put_f64(out, v);
    return out;
}

std::vector<std::uint8_t> encode_tensor(const QTensor& t) {
    validate(t);
    std::vector<std::uint8_t> out;
    out.reserve(24 + 4 * t.dims.size() + 8 * t.data.size());
    encode_header(out, kDtypeInt, static_cast<std::uint8_t>(t.bits), t.dims);
    put_f64(out, t.scale);
    for (std::int64_t v : t.data) put_u64(out, static_cast<std::uint64_t>(v));
    return out;
}

AnyTensor decode_tensor(const std::uint8_t* bytes, std::size_t len) {
    Reader r{bytes, len};
    if (len < 4 || bytes[0] != 'I' || bytes[1] != 'T' || bytes[2] != 'N' || bytes[3] != 'S') {
        throw FormatError("ITNS: bad magic");
    }
    r.pos = 4;
    const std::uint16_t version = r.u16();
    if (version != kVersion) throw FormatError("ITNS: unsupported version");
    const std::uint8_t dtype = r.u8();
    const std::uint8_t bits = r.u8();
    const std::uint8_t rank = r.u8();
    if (dtype == kDtypeFp64) {
        if (bits != 64) throw FormatError("ITNS: fp64 tensor must declare 64 bits");
    } else if (dtype == kDtypeInt) {
        if (bits != 8 && bits != 16 && bits != 32) throw FormatError("ITNS: bad bit width");
    } else {
        throw FormatError("ITNS: unknown dtype");
    }

    std::vector<std::int64_t> dims(rank);
    std::int64_t numel = 1;
    for (int i = 0; i < rank; ++i) {
        dims[static_cast<std::size_t>(i)] = static_cast<std::int64_t>(r.u32());
        if (dims[static_cast<std::size_t>(i)] == 0) throw CorruptionError("ITNS: zero extent");
        numel *= dims[static_cast<std::size_t>(i)];
        if (numel > (std::int64_t{1} << 40)) throw CorruptionError("ITNS: tensor too large");
    }

    if (dtype == kDtypeInt) {
        QTensor t;
        t.dims = std::move(dims);
        t.bits = bits;
        t.scale = r.f64();
        if (!(t.scale > 0.0) || !std::isfinite(t.scale)) {
            throw CorruptionError("ITNS: bad scale");
        }
        if (r.len - r.pos != static_cast<std::size_t>(numel) * 8) {
            throw CorruptionError("ITNS: payload length mismatch");
        }
        t.data.resize(static_cast<std::size_t>(numel));
        for (auto& v : t.data) v = static_cast<std::int64_t>(r.u64());
        if (!fits_bits(t)) throw CorruptionError("ITNS: element outside declared bit range");
        return t;
    }
    FpTensor t;
    t.dims = std::move(dims);
    if (r.len - r.pos != static_cast<std::size_t>(numel) * 8) {
        throw CorruptionError("ITNS: payload length mismatch");
    }
    t.data.resize(static_cast<std::size_t>(numel));
    for (auto& v : t.data) {
        v = r.f64();
        if (!std::isfinite(v)) throw CorruptionError("ITNS: non-finite value");
    }
    return t;
}

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for reading: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (in.bad()) throw std::runtime_error("read failed: " + path);
    return bytes;
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + path);
}

} // namespace

void write_tensor(const std::string& path, const FpTensor& t) {
    write_file(path, encode_tensor(t));
}

void write_tensor(const std::string& path, const QTensor& t) {
    write_file(path, encode_tensor(t));
}

AnyTensor read_tensor(const std::string& path) {
    const auto bytes = read_file(path);
    return decode_tensor(bytes.data(), bytes.size());
}

FpTensor read_fp_tensor(const std::string& path) {
    AnyTensor t = read_tensor(path);
    if (!std::holds_alternative<FpTensor>(t)) {
        throw FormatError("expected fp64 tensor in " + path);
    }
    return std::get<FpTensor>(std::move(t));
}

QTensor read_q_tensor(const std::string& path) {
    AnyTensor t = read_tensor(path);
    if (!std::holds_alternative<QTensor>(t)) {
        throw FormatError("expected integer tensor in " + path);
    }
    return std::get<QTensor>(std::move(t));
}

std::uint64_t fnv1a64(const std::uint8_t* bytes, std::size_t len) {
    std::uint64_t h = 14695981039346656037ULL;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= bytes[i];
        h *= 1099511628211ULL;
    }
    return h;
}

} // namespace intvit
