#include "hsocc/tensor.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>

#include "hsocc/errors.hpp"
#include "hsocc/kitti_io.hpp"
#include "hsocc/random.hpp"

namespace hsocc::nn {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "x" : "") + std::to_string(shape[i]);
  return s + "]";
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(shape_product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_product(shape_))
    throw ShapeError("tensor data size " + std::to_string(data_.size()) + " does not match shape " + shape_string(shape_));
}

std::span<double> Tensor::row(std::size_t i) {
  const std::size_t stride = shape_.empty() ? 1 : data_.size() / shape_[0];
  return {data_.data() + i * stride, stride};
}

std::span<const double> Tensor::row(std::size_t i) const {
  const std::size_t stride = shape_.empty() ? 1 : data_.size() / shape_[0];
  return {data_.data() + i * stride, stride};
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
  if (shape_product(shape) != data_.size())
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor transpose2d(const Tensor& t) {
  if (t.rank() != 2) throw ShapeError("transpose2d needs a rank-2 tensor");
  Tensor out({t.dim(1), t.dim(0)});
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j) out.at(j, i) = t.at(i, j);
  return out;
}

Tensor channels_last(const Tensor& cxyz) {
  if (cxyz.rank() != 4) throw ShapeError("channels_last needs [C][X][Y][Z]");
  const std::size_t c = cxyz.dim(0);
  const std::size_t n = cxyz.size() / c;
  Tensor out({n, c});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < n; ++i) out[i * c + ch] = cxyz[ch * n + i];
  return out;
}

Tensor channels_first(const Tensor& rows, const std::array<int, 3>& dims) {
  if (rows.rank() != 2) throw ShapeError("channels_first needs [N][C]");
  const std::size_t n = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  if (rows.dim(0) != n) throw ShapeError("channels_first: row count does not match dims");
  const std::size_t c = rows.dim(1);
  Tensor out({c, static_cast<std::size_t>(dims[0]), static_cast<std::size_t>(dims[1]), static_cast<std::size_t>(dims[2])});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) out[ch * n + i] = rows[i * c + ch];
  return out;
}

Tensor& ParamStore::add(const std::string& name, std::vector<std::size_t> shape, Init init, std::size_t fan_in) {
  if (params_.count(name) != 0) throw ValidationError("parameter '" + name + "' already exists");
  Tensor t(std::move(shape), 0.0);
  switch (init) {
    case Init::zeros:
      break;
    case Init::ones:
      for (double& v : t.data()) v = 1.0;
      break;
    case Init::uniform_fan_in: {
      if (fan_in == 0) throw ValidationError("uniform_fan_in init needs fan_in > 0");
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      const CounterRng rng(seed_, fnv1a64(name));
      for (std::size_t k = 0; k < t.size(); ++k) {
        const double u = static_cast<double>(rng.at(k) >> 11) * 0x1.0p-53;
        t[k] = -bound + 2.0 * bound * u;
      }
      break;
    }
  }
  return params_.emplace(name, std::move(t)).first->second;
}

Tensor& ParamStore::get(const std::string& name) {
  const auto it = params_.find(name);
  if (it == params_.end()) throw ValidationError("unknown parameter '" + name + "'");
  return it->second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  const auto it = params_.find(name);
  if (it == params_.end()) throw ValidationError("unknown parameter '" + name + "'");
  return it->second;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  for (const auto& [name, t] : params_) out.push_back(name);
  return out;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.size();
  return n;
}

namespace {

void put_f64(std::vector<std::uint8_t>& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
}

double get_f64(const std::uint8_t* p) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[b]) << (8 * b);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace

std::vector<std::uint8_t> ParamStore::blob() const {
  std::vector<std::uint8_t> out;
  out.reserve(parameter_count() * 8);
  for (const auto& [name, t] : params_)
    for (double v : t.data()) put_f64(out, v);
  return out;
}

std::string ParamStore::manifest() const {
  nlohmann::json j;
  j["seed"] = seed_;
  j["init"] = "uniform_fan_in/splitmix64-counter";
  j["params"] = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : params_) {
    j["params"].push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.size();
  }
  return j.dump(2);
}

ParamStore ParamStore::from_blob(std::span<const std::uint8_t> blob, const std::string& manifest) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(manifest);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("parameter manifest: ") + e.what());
  }
  ParamStore store(j.at("seed").get<std::uint64_t>());
  for (const auto& entry : j.at("params")) {
    const auto name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    const auto offset = entry.at("offset").get<std::size_t>();
    const std::size_t n = shape_product(shape);
    if ((offset + n) * 8 > blob.size()) throw FormatError("parameter blob too short for '" + name + "'");
    std::vector<double> data(n);
    for (std::size_t k = 0; k < n; ++k) data[k] = get_f64(blob.data() + (offset + k) * 8);
    store.params_.emplace(name, Tensor(shape, std::move(data)));
  }
  return store;
}

void ParamStore::save(const std::filesystem::path& blob_path, const std::filesystem::path& manifest_path) const {
  write_file(blob_path, blob());
  const std::string m = manifest();
  write_file(manifest_path, std::span(reinterpret_cast<const std::uint8_t*>(m.data()), m.size()));
}

ParamStore ParamStore::load(const std::filesystem::path& blob_path, const std::filesystem::path& manifest_path) {
  return from_blob(read_file(blob_path), read_text_file(manifest_path));
}

std::vector<std::uint8_t> tensor_blob(const Tensor& t) {
  std::vector<std::uint8_t> out;
  const auto rank = static_cast<std::uint32_t>(t.rank());
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(rank >> (8 * b)));
  for (auto d : t.shape())
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(static_cast<std::uint64_t>(d) >> (8 * b)));
  for (double v : t.data()) put_f64(out, v);
  return out;
}

Tensor tensor_from_blob(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw FormatError("tensor blob too short");
  std::uint32_t rank = 0;
  for (int b = 0; b < 4; ++b) rank |= static_cast<std::uint32_t>(bytes[b]) << (8 * b);
  if (bytes.size() < 4 + 8 * static_cast<std::size_t>(rank)) throw FormatError("tensor blob too short");
  std::vector<std::size_t> shape(rank);
  for (std::uint32_t a = 0; a < rank; ++a) {
    std::uint64_t d = 0;
    for (int b = 0; b < 8; ++b) d |= static_cast<std::uint64_t>(bytes[4 + 8 * a + b]) << (8 * b);
    shape[a] = static_cast<std::size_t>(d);
  }
  const std::size_t header = 4 + 8 * static_cast<std::size_t>(rank);
  const std::size_t n = shape_product(shape);
  if (bytes.size() != header + 8 * n) throw FormatError("tensor blob length does not match its shape");
  std::vector<double> data(n);
  for (std::size_t k = 0; k < n; ++k) data[k] = get_f64(bytes.data() + header + 8 * k);
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace hsocc::nn
