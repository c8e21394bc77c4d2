// Checkpoint container: one JSON document holding named row-major arrays
// plus a few named scalars.
//
//   {"format": "mhch-checkpoint-v1",
//    "arrays":  [{"name": "embedding", "shape": [120, 32], "values": [...]}, ...],
//    "scalars": {"zeta": 1.0, ...}}
//
// Doubles are printed in shortest round-trip form, so save/load is lossless.
#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "cost.hpp"
#include "encoder.hpp"
#include "labels.hpp"

namespace mhch {

inline constexpr const char* kCheckpointFormat = "mhch-checkpoint-v1";

namespace detail {

inline nlohmann::json array_entry(std::string_view name, const Matrix& m) {
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) values.push_back(m(r, c));
  return {{"name", name}, {"shape", {m.rows(), m.cols()}}, {"values", std::move(values)}};
}

inline Matrix array_from_entry(const nlohmann::json& e) {
  const auto shape = e.at("shape").get<std::vector<Eigen::Index>>();
  const auto values = e.at("values").get<std::vector<double>>();
  if (shape.size() != 2 || shape[0] < 0 || shape[1] < 0 ||
      static_cast<std::size_t>(shape[0] * shape[1]) != values.size())
    throw ValidationError("checkpoint array \"" + e.at("name").get<std::string>() +
                          "\" has inconsistent shape");
  Matrix m(shape[0], shape[1]);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = values[k++];
  return m;
}

inline const nlohmann::json& find_array(const nlohmann::json& doc, std::string_view name) {
  for (const auto& e : doc.at("arrays"))
    if (e.at("name").get<std::string>() == name) return e;
  throw ValidationError("checkpoint has no array \"" + std::string(name) + "\"");
}

inline void write_json_file(const nlohmann::json& doc, const std::filesystem::path& path) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + tmp.string());
    out << doc.dump() << '\n';
  }
  std::filesystem::rename(tmp, path);
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

inline void check_format(const nlohmann::json& doc) {
  if (!doc.is_object() || doc.value("format", "") != kCheckpointFormat)
    throw ValidationError("not an mhch checkpoint");
}

}  // namespace detail

inline nlohmann::json checkpoint_json(const ModelParameters& p) {
  nlohmann::json arrays = nlohmann::json::array();
  p.for_each([&](std::string_view name, const Matrix& m) { arrays.push_back(detail::array_entry(name, m)); });
  return {{"format", kCheckpointFormat}, {"arrays", std::move(arrays)}, {"scalars", nlohmann::json::object()}};
}

inline ModelParameters params_from_checkpoint(const nlohmann::json& doc) {
  detail::check_format(doc);
  ModelParameters p;
  p.for_each([&](std::string_view name, Matrix& m) { m = detail::array_from_entry(detail::find_array(doc, name)); });
  const Dims d = p.dims();
  const ModelParameters shape = ModelParameters::zeros(d);
  shape.for_each([&](std::string_view name, const Matrix& ref) {
    const Matrix& got = p.at(name);
    if (got.rows() != ref.rows() || got.cols() != ref.cols())
      throw ValidationError("checkpoint array \"" + std::string(name) + "\" has the wrong shape");
  });
  return p;
}

inline nlohmann::json checkpoint_json(const CostSimulator& sim) {
  Matrix w = sim.scale_weights.transpose();
  return {{"format", kCheckpointFormat},
          {"arrays", nlohmann::json::array({detail::array_entry("scale_weights", w)})},
          {"scalars", {{"scale_bias", sim.scale_bias}, {"zeta", sim.zeta}, {"frozen", sim.frozen ? 1.0 : 0.0}}}};
}

inline CostSimulator simulator_from_checkpoint(const nlohmann::json& doc) {
  detail::check_format(doc);
  CostSimulator sim;
  const Matrix w = detail::array_from_entry(detail::find_array(doc, "scale_weights"));
  if (w.rows() != 1) throw ValidationError("scale_weights must be a single row");
  sim.scale_weights = w.row(0).transpose();
  const auto& s = doc.at("scalars");
  sim.scale_bias = s.at("scale_bias").get<double>();
  sim.zeta = s.at("zeta").get<double>();
  sim.frozen = s.at("frozen").get<double>() != 0.0;
  return sim;
}

inline void save_checkpoint(const ModelParameters& p, const std::filesystem::path& path) {
  detail::write_json_file(checkpoint_json(p), path);
}
inline void save_checkpoint(const CostSimulator& sim, const std::filesystem::path& path) {
  detail::write_json_file(checkpoint_json(sim), path);
}
inline ModelParameters load_params(const std::filesystem::path& path) {
  return params_from_checkpoint(detail::read_json_file(path));
}
inline CostSimulator load_simulator(const std::filesystem::path& path) {
  return simulator_from_checkpoint(detail::read_json_file(path));
}

}  // namespace mhch
