#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <string>

#include "rbs/nn.hpp"

namespace rbs::test {

// Flat view over a net's parameters, weights before biases per layer.
inline double& param(DenseNet& net, std::size_t flat) {
  for (std::size_t i = 0; i < net.num_layers(); ++i) {
    auto& l = net.layer(i);
    const auto nw = static_cast<std::size_t>(l.weight.size());
    if (flat < nw) return l.weight.data()[flat];
    flat -= nw;
    const auto nb = static_cast<std::size_t>(l.bias.size());
    if (flat < nb) return l.bias.data()[flat];
    flat -= nb;
  }
  throw std::out_of_range("parameter index");
}

inline double tape_entry(const GradientTape& tape, std::size_t flat) {
  for (std::size_t i = 0; i < tape.weight.size(); ++i) {
    const auto nw = static_cast<std::size_t>(tape.weight[i].size());
    if (flat < nw) return tape.weight[i].data()[flat];
    flat -= nw;
    const auto nb = static_cast<std::size_t>(tape.bias[i].size());
    if (flat < nb) return tape.bias[i].data()[flat];
    flat -= nb;
  }
  throw std::out_of_range("tape index");
}

inline double rel_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / scale;
}

// Scratch directory under the build tree, emptied on creation.
inline std::string scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::path(RBS_BINARY_DIR) / "test_scratch" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

inline std::string source_path(const std::string& rel) {
  return (std::filesystem::path(RBS_SOURCE_DIR) / rel).string();
}

}  // namespace rbs::test
