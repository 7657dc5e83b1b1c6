#include "evp/io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "evp/rng.hpp"

namespace evp {
namespace {

constexpr char kTensorMagic[4] = {'E', 'V', 'P', 'T'};
constexpr char kCheckpointMagic[4] = {'E', 'V', 'P', 'C'};
constexpr std::uint8_t kVersion = 0x01;

static_assert(std::endian::native == std::endian::little, "EVPT I/O assumes a little-endian host");

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in, const char* what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw FormatError(std::string("truncated ") + what);
  return v;
}

void expect_magic(std::istream& in, const char (&magic)[4], const char* what) {
  char buf[4];
  if (!in.read(buf, 4) || std::memcmp(buf, magic, 4) != 0) {
    throw FormatError(std::string("bad magic for ") + what);
  }
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return in;
}

std::string encode(const Tensor& t) {
  std::ostringstream s(std::ios::binary);
  write_tensor(s, t);
  return std::move(s).str();
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
  if (t.rank() > 255) throw FormatError("rank too large for EVPT");
  out.write(kTensorMagic, 4);
  put<std::uint8_t>(out, kVersion);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(t.dtype()));
  put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
  for (std::size_t d : t.shape()) {
    if (d > UINT32_MAX) throw FormatError("dimension too large for EVPT");
    put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  }
  dispatch(t.dtype(), [&]<class T>() {
    auto v = t.values<T>();
    out.write(reinterpret_cast<const char*>(v.data()), std::streamsize(v.size_bytes()));
  });
}

Tensor read_tensor(std::istream& in) {
  expect_magic(in, kTensorMagic, "EVPT tensor");
  const auto version = get<std::uint8_t>(in, "EVPT header");
  if (version != kVersion) throw FormatError("unsupported EVPT version " + std::to_string(version));
  const auto dtype_byte = get<std::uint8_t>(in, "EVPT header");
  if (dtype_byte > 1) throw FormatError("unknown EVPT dtype " + std::to_string(dtype_byte));
  const auto rank = get<std::uint8_t>(in, "EVPT header");
  Shape shape(rank);
  for (auto& d : shape) d = get<std::uint32_t>(in, "EVPT dims");
  Tensor t = Tensor::zeros(shape, static_cast<DType>(dtype_byte));
  dispatch(t.dtype(), [&]<class T>() {
    auto v = t.mutable_values<T>();
    if (!in.read(reinterpret_cast<char*>(v.data()), std::streamsize(v.size_bytes()))) {
      throw FormatError("truncated EVPT payload");
    }
  });
  return t;
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  auto out = open_out(path);
  write_tensor(out, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_tensor(in);
}

void write_checkpoint(std::ostream& out, const NamedTensors& records) {
  out.write(kCheckpointMagic, 4);
  put<std::uint8_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(records.size()));
  for (const auto& [name, t] : records) {
    if (name.size() > UINT16_MAX) throw FormatError("record name too long: " + name.substr(0, 64));
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), std::streamsize(name.size()));
    write_tensor(out, t);
  }
}

NamedTensors read_checkpoint(std::istream& in) {
  expect_magic(in, kCheckpointMagic, "EVPC checkpoint");
  const auto version = get<std::uint8_t>(in, "EVPC header");
  if (version != kVersion) throw FormatError("unsupported EVPC version " + std::to_string(version));
  const auto count = get<std::uint32_t>(in, "EVPC header");
  NamedTensors records;
  records.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get<std::uint16_t>(in, "EVPC record");
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw FormatError("truncated EVPC record name");
    records.emplace_back(std::move(name), read_tensor(in));
  }
  return records;
}

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& records) {
  auto out = open_out(path);
  write_checkpoint(out, records);
}

NamedTensors load_checkpoint(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_checkpoint(in);
}

std::uint64_t checksum(const Tensor& t) {
  const std::string bytes = encode(t);
  return fnv1a(bytes);
}

std::uint64_t checksum(const NamedTensors& records) {
  std::uint64_t h = fnv1a(std::string_view{});
  for (const auto& [name, t] : records) {
    h = fnv1a(name, h);
    h = fnv1a(encode(t), h);
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::string read_text(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::ostringstream s;
  s << in.rdbuf();
  return std::move(s).str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
}

}  // namespace evp
