#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace hsocc::nn {

/// Dense row-major array of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  /// Contiguous slice along the first axis.
  std::span<double> row(std::size_t i);
  std::span<const double> row(std::size_t i) const;

  Tensor reshaped(std::vector<std::size_t> shape) const;
  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::size_t shape_product(const std::vector<std::size_t>& shape);
std::string shape_string(const std::vector<std::size_t>& shape);

Tensor transpose2d(const Tensor& t);

/// [C][X][Y][Z] -> [X*Y*Z][C]
Tensor channels_last(const Tensor& cxyz);
/// [N][C] -> [C][d0][d1][d2] with N = d0*d1*d2
Tensor channels_first(const Tensor& rows, const std::array<int, 3>& dims);

enum class Init { zeros, ones, uniform_fan_in };

/// Named parameters with reproducible initialization: element k of parameter
/// `name` under uniform_fan_in is drawn from CounterRng(seed, fnv1a(name))
/// at counter k, so values do not depend on creation order.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}

  Tensor& add(const std::string& name, std::vector<std::size_t> shape, Init init, std::size_t fan_in = 0);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  std::vector<std::string> names() const;
  std::uint64_t seed() const { return seed_; }
  std::size_t parameter_count() const;

  /// Flat little-endian float64 blob, parameters in name order.
  std::vector<std::uint8_t> blob() const;
  /// {"seed", "init", "params": [{"name", "shape", "offset"}]}; offsets in elements.
  std::string manifest() const;
  static ParamStore from_blob(std::span<const std::uint8_t> blob, const std::string& manifest);

  void save(const std::filesystem::path& blob_path, const std::filesystem::path& manifest_path) const;
  static ParamStore load(const std::filesystem::path& blob_path, const std::filesystem::path& manifest_path);

  friend bool operator==(const ParamStore&, const ParamStore&) = default;

 private:
  std::uint64_t seed_;
  std::map<std::string, Tensor> params_;
};

/// Binary dump of one tensor: u32 rank, rank x u64 dims, then LE float64 data.
std::vector<std::uint8_t> tensor_blob(const Tensor& t);
Tensor tensor_from_blob(std::span<const std::uint8_t> bytes);

}  // namespace hsocc::nn
