#include "nodulebench/tensor/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace nb {

namespace {

constexpr const char* kFormat = "nodulebench-checkpoint";

void append_le(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double read_le(const char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

Checkpoint Checkpoint::capture(const ParameterSet& params, nlohmann::json config, nlohmann::json meta) {
  Checkpoint c;
  c.config = std::move(config);
  c.meta = std::move(meta);
  for (const auto& [name, t] : params.items()) {
    c.names.push_back(name);
    c.shapes.push_back(t.shape());
    c.values.emplace_back(t.values().begin(), t.values().end());
  }
  return c;
}

void Checkpoint::restore_into(ParameterSet& params) const {
  if (params.size() != names.size()) {
    throw std::invalid_argument("checkpoint holds " + std::to_string(names.size()) + " parameters, model has " +
                                std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < names.size(); ++i) {
    Tensor t = params.get(names[i]);
    if (t.shape() != shapes[i]) {
      throw std::invalid_argument("checkpoint shape mismatch for " + names[i] + ": " + shape_str(shapes[i]) +
                                  " vs " + shape_str(t.shape()));
    }
    auto dst = t.mutable_values();
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

std::string Checkpoint::serialize() const {
  nlohmann::json header;
  header["format"] = kFormat;
  header["version"] = kCheckpointVersion;
  header["config"] = config;
  header["meta"] = meta;
  auto index = nlohmann::json::array();
  std::size_t offset = 0;
  for (std::size_t i = 0; i < names.size(); ++i) {
    index.push_back({{"name", names[i]}, {"offset", offset}, {"shape", shapes[i]}});
    offset += values[i].size() * sizeof(double);
  }
  header["params"] = std::move(index);
  std::string out = header.dump();
  out.push_back('\n');
  out.reserve(out.size() + offset);
  for (const auto& v : values) {
    for (double x : v) append_le(out, x);
  }
  return out;
}

Checkpoint Checkpoint::deserialize(const std::string& bytes) {
  const auto newline = bytes.find('\n');
  if (newline == std::string::npos) throw std::runtime_error("checkpoint: missing header line");
  const auto header = nlohmann::json::parse(bytes.substr(0, newline));
  if (header.value("format", "") != kFormat) throw std::runtime_error("checkpoint: unknown format");
  if (header.value("version", 0) != kCheckpointVersion) throw std::runtime_error("checkpoint: unsupported version");
  Checkpoint c;
  c.config = header.at("config");
  c.meta = header.value("meta", nlohmann::json::object());
  const std::size_t data_start = newline + 1;
  for (const auto& entry : header.at("params")) {
    c.names.push_back(entry.at("name").get<std::string>());
    Shape shape = entry.at("shape").get<Shape>();
    const auto offset = entry.at("offset").get<std::size_t>();
    const std::size_t n = numel_of(shape);
    if (data_start + offset + n * sizeof(double) > bytes.size()) {
      throw std::runtime_error("checkpoint: truncated data for " + c.names.back());
    }
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = read_le(bytes.data() + data_start + offset + i * sizeof(double));
    c.shapes.push_back(std::move(shape));
    c.values.push_back(std::move(values));
  }
  return c;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  const auto bytes = serialize();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

}  // namespace nb
