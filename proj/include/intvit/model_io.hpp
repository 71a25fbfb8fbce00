#pragma once

#include <string>

#include "intvit/oracle.hpp"
#include "intvit/vit.hpp"

namespace intvit {

// Model directory layout:
//
//   <dir>/manifest.json     config, scales, dyadics, tensor table
//   <dir>/blobs/<hash>.itns one ITNS blob per distinct tensor, named by the
//                           FNV-1a 64 hash of its encoded bytes
//
// Manifests are ordered JSON with a fixed field order, so identical models
// serialize byte-identically. Writing a blob whose hash file already exists
// verifies the bytes match and fails loudly on a hash collision.

void save_fp_model(const std::string& dir, const FpViTModel& m);
FpViTModel load_fp_model(const std::string& dir);

void save_qmodel(const std::string& dir, const QViTModel& m);
QViTModel load_qmodel(const std::string& dir);

// Calibration statistics file (plain JSON).
void save_calibration(const std::string& path, const CalibStats& stats,
                      std::uint64_t seed, std::int64_t inputs);
CalibStats load_calibration(const std::string& path);

} // namespace intvit
