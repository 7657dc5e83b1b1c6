#pragma once

// Binary formats.
//
// EVPT tensor: "EVPT" magic, version 0x01, dtype byte (0 = f32, 1 = f64),
// rank byte, rank × u32 dims, row-major payload. All integers and scalars are
// little-endian.
//
// EVPC checkpoint: "EVPC" magic, version byte, u32 record count, then records
// of (u16 name length, UTF-8 name, EVPT blob). Record order is preserved.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "evp/tensor.hpp"

namespace evp {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

void write_checkpoint(std::ostream& out, const NamedTensors& records);
NamedTensors read_checkpoint(std::istream& in);
void save_checkpoint(const std::filesystem::path& path, const NamedTensors& records);
NamedTensors load_checkpoint(const std::filesystem::path& path);

/// FNV-1a over the tensor's EVPT encoding (shape, dtype and payload bytes).
std::uint64_t checksum(const Tensor& t);
/// Order-sensitive FNV-1a over names and EVPT encodings of every record.
std::uint64_t checksum(const NamedTensors& records);
std::string hex64(std::uint64_t value);

/// Whole-file helpers used for reports and manifests.
std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace evp
