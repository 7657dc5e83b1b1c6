#include "evp/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <stdexcept>

#include "evp/io.hpp"

namespace evp {

using nlohmann::json;

std::vector<Sample> Dataset::split(const std::string& name) const {
  std::vector<Sample> out;
  for (const auto& s : samples)
    if (s.split == name) out.push_back(s);
  return out;
}

void validate_sample(const Sample& s) {
  if (s.image.rank() != 3 || s.image.dim(0) != 3) {
    throw DimensionError("sample " + s.id + ": image must be [3, H, W], got " + to_string(s.image.shape()));
  }
  if (s.mask.rank() != 2 || s.mask.dim(0) != s.image.dim(1) || s.mask.dim(1) != s.image.dim(2)) {
    throw DimensionError("sample " + s.id + ": mask " + to_string(s.mask.shape()) + " does not match image");
  }
  for (double v : s.image.to_doubles())
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("sample " + s.id + ": image value outside [0, 1]");
  for (double v : s.mask.to_doubles())
    if (v != 0.0 && v != 1.0) throw std::invalid_argument("sample " + s.id + ": mask is not binary");
}

std::filesystem::path write_dataset(const std::filesystem::path& dir, const Dataset& dataset) {
  json samples = json::array();
  std::size_t size = 0;
  for (const auto& s : dataset.samples) {
    const std::string image = "images/" + s.id + ".evpt", mask = "masks/" + s.id + ".evpt";
    save_tensor(dir / image, s.image);
    save_tensor(dir / mask, s.mask);
    samples.push_back({{"id", s.id}, {"image", image}, {"mask", mask}, {"split", s.split}});
    size = s.image.dim(1);
  }
  const json manifest = {{"task", dataset.task}, {"seed", dataset.seed}, {"size", size}, {"samples", samples}};
  const auto path = dir / "manifest.json";
  write_text(path, manifest.dump(2) + "\n");
  return path;
}

Dataset load_dataset(const std::filesystem::path& manifest) {
  const json j = json::parse(read_text(manifest));
  const auto base = manifest.parent_path();
  Dataset d;
  d.task = j.value("task", std::string("external"));
  d.seed = j.value("seed", std::uint64_t{0});
  for (const auto& r : j.at("samples")) {
    Sample s;
    s.id = r.at("id").get<std::string>();
    s.split = r.at("split").get<std::string>();
    s.image = load_tensor(base / r.at("image").get<std::string>()).to(DType::f32);
    s.mask = load_tensor(base / r.at("mask").get<std::string>()).to(DType::f32);
    validate_sample(s);
    d.samples.push_back(std::move(s));
  }
  return d;
}

namespace {

std::string next_token(std::istream& in) {
  std::string tok;
  while (in >> tok) {
    if (tok[0] != '#') return tok;
    std::string rest;
    std::getline(in, rest);
  }
  throw FormatError("truncated PNM header");
}

}  // namespace

Tensor read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  const std::string magic = next_token(in);
  std::size_t channels;
  if (magic == "P6") channels = 3;
  else if (magic == "P5") channels = 1;
  else throw FormatError(path.string() + ": only binary PPM (P6) and PGM (P5) are supported");
  const std::size_t w = std::stoul(next_token(in)), h = std::stoul(next_token(in));
  const std::size_t maxval = std::stoul(next_token(in));
  if (w == 0 || h == 0 || maxval == 0 || maxval > 65535) throw FormatError(path.string() + ": bad PNM header");
  in.get();  // single whitespace before the raster
  const std::size_t bytes = maxval > 255 ? 2 : 1;
  std::vector<unsigned char> raster(w * h * channels * bytes);
  if (!in.read(reinterpret_cast<char*>(raster.data()), std::streamsize(raster.size()))) {
    throw FormatError(path.string() + ": truncated raster");
  }
  std::vector<double> v(channels * h * w);
  for (std::size_t p = 0; p < h * w; ++p)
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t k = (p * channels + c) * bytes;
      const double raw = bytes == 2 ? double(raster[k] << 8 | raster[k + 1]) : double(raster[k]);
      v[c * h * w + p] = raw / double(maxval);
    }
  return Tensor::from_values({channels, h, w}, v);
}

void write_pgm(const std::filesystem::path& path, const Tensor& map) {
  const std::size_t h = map.dim(map.rank() - 2), w = map.dim(map.rank() - 1);
  if (map.numel() != h * w) throw DimensionError("write_pgm: expected a single-channel map");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << w << " " << h << "\n255\n";
  for (double v : map.to_doubles()) out.put(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
}

}  // namespace evp
