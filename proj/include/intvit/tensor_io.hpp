#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "intvit/tensor.hpp"

namespace intvit {

// ITNS container: a little-endian dump of one tensor.
//
//   magic "ITNS" | version u16 = 1 | dtype u8 | bits u8 | rank u8
//   | dims u32 each | scale f64 (dtype 1 only) | payload
//
// dtype 0 is float64 (bits = 64, payload doubles); dtype 1 is integer with
// scale (payload int64). Layout is fixed little-endian regardless of host.

using AnyTensor = std::variant<FpTensor, QTensor>;

std::vector<std::uint8_t> encode_tensor(const FpTensor& t);
std::vector<std::uint8_t> encode_tensor(const QTensor& t);
AnyTensor decode_tensor(const std::uint8_t* bytes, std::size_t len);

void write_tensor(const std::string& path, const FpTensor& t);
void write_tensor(const std::string& path, const QTensor& t);
AnyTensor read_tensor(const std::string& path);

// Convenience readers that throw FormatError if the file holds the other kind.
FpTensor read_fp_tensor(const std::string& path);
QTensor read_q_tensor(const std::string& path);

// FNV-1a 64 over a byte buffer; used to name content-addressed model blobs.
std::uint64_t fnv1a64(const std::uint8_t* bytes, std::size_t len);

} // namespace intvit
