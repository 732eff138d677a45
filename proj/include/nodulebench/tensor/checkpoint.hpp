#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nodulebench/tensor/nn.hpp"

namespace nb {

inline constexpr int kCheckpointVersion = 1;

/// Parameter snapshot plus the model configuration and free-form metadata.
///
/// File layout: one line of JSON
///   {"format":"nodulebench-checkpoint","version":1,"config":{...},"meta":{...},
///    "params":[{"name":..,"offset":..,"shape":[..]}, ...]}
/// terminated by '\n', followed by the raw little-endian float64 values of
/// every parameter in index order. Offsets count bytes from the first byte
/// after the newline.
struct Checkpoint {
  nlohmann::json config;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::string> names;
  std::vector<Shape> shapes;
  std::vector<std::vector<double>> values;

  static Checkpoint capture(const ParameterSet& params, nlohmann::json config, nlohmann::json meta = nlohmann::json::object());

  /// Copies stored values into matching parameters; names and shapes must agree exactly.
  void restore_into(ParameterSet& params) const;

  std::string serialize() const;
  static Checkpoint deserialize(const std::string& bytes);

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

}  // namespace nb
