#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "json.hpp"
#include "rccm/tensor.hpp"

namespace rccm {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Self-describing container: a JSON header (free-form `meta` plus an array
// directory) followed by raw little-endian float64 payloads. Round-trips are
// bit-exact. Writes go through a temp file + rename.
class ArrayStore {
 public:
  static constexpr uint32_t kFormatVersion = 1;

  nlohmann::json meta;

  void put(const std::string& name, const Tensor& t) { arrays_[name] = t; }
  bool contains(const std::string& name) const { return arrays_.count(name) > 0; }
  const Tensor& get(const std::string& name) const;
  const std::map<std::string, Tensor>& arrays() const { return arrays_; }

  void save(const std::filesystem::path& path) const;
  static ArrayStore load(const std::filesystem::path& path);

 private:
  std::map<std::string, Tensor> arrays_;  // ordered: deterministic layout
};

}  // namespace rccm
