#pragma once

// Dense feed-forward networks with reverse-mode gradients and Adam.
//
// All arithmetic is in double precision. Batched routines take one sample per
// column so a whole trajectory (or a whole replay batch) is a single GEMM.

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "rbs/rng.hpp"

namespace rbs {

// Stand-in for log(0) on masked-out actions. Finite so that it never turns
// arithmetic on masked entries into NaN.
inline constexpr double kNegInf = -1e30;

enum class Activation : std::uint8_t { Identity = 0, Relu = 1 };

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
  Activation activation = Activation::Identity;

  int in_dim() const { return static_cast<int>(weight.cols()); }
  int out_dim() const { return static_cast<int>(weight.rows()); }
};

class DenseNet {
 public:
  DenseNet() = default;
  explicit DenseNet(std::vector<DenseLayer> layers);

  // Hidden layers use the rectifier, the output layer is linear. Weights are
  // uniform in +-sqrt(1/fan_in), biases zero.
  static DenseNet mlp(int input_dim, std::span<const int> hidden, int output_dim, Rng& rng);
  static DenseNet zeros(int input_dim, std::span<const int> hidden, int output_dim);

  int input_dim() const;
  int output_dim() const;
  std::size_t num_layers() const { return layers_.size(); }
  std::size_t num_parameters() const;

  const DenseLayer& layer(std::size_t i) const { return layers_[i]; }
  DenseLayer& layer(std::size_t i) { return layers_[i]; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  bool all_finite() const;

  friend bool operator==(const DenseNet& a, const DenseNet& b);

 private:
  void check_chain() const;
  std::vector<DenseLayer> layers_;
};

// Per-parameter gradient accumulator, shaped like a DenseNet.
class GradientTape {
 public:
  GradientTape() = default;
  explicit GradientTape(const DenseNet& net);

  void zero();
  bool congruent(const DenseNet& net) const;
  bool all_finite() const;
  GradientTape& operator+=(const GradientTape& other);
  GradientTape& operator*=(double scale);

  std::vector<Eigen::MatrixXd> weight;
  std::vector<Eigen::VectorXd> bias;
};

// Activations kept from a batched forward pass for the backward sweep.
struct ForwardCache {
  std::vector<Eigen::MatrixXd> activations;  // activations[0] is the input
};

Eigen::VectorXd forward(const DenseNet& net, const Eigen::VectorXd& input);
Eigen::MatrixXd forward_batch(const DenseNet& net, const Eigen::MatrixXd& inputs,
                              ForwardCache* cache = nullptr);

// Returns d(cotangent . output)/d(theta).
GradientTape backward(const DenseNet& net, const Eigen::VectorXd& input,
                      const Eigen::VectorXd& output_cotangent);
// Accumulates into `tape`; `cotangent` has one column per cached sample.
void backward_batch(const DenseNet& net, const ForwardCache& cache,
                    const Eigen::MatrixXd& cotangent, GradientTape& tape);

// Log-softmax restricted to `mask`; masked entries are reported as kNegInf.
std::vector<double> masked_log_softmax(std::span<const double> logits,
                                       const std::vector<bool>& mask);

struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t t = 0;
  std::vector<Eigen::MatrixXd> m_weight, v_weight;
  std::vector<Eigen::VectorXd> m_bias, v_bias;

  static AdamState for_net(const DenseNet& net, double learning_rate);
};

// Bias-corrected Adam update. Throws NonFiniteError (and leaves net/state
// untouched) if the tape holds a non-finite entry.
void adam_step(DenseNet& net, const GradientTape& tape, AdamState& state);

// Checkpoint layout (all integers little-endian, doubles IEEE-754 binary64):
//   magic "RBSNET01" | u32 layer_count | per layer: u32 out, u32 in,
//   u8 activation, out*in weights row-major, out biases.
void write_net(std::ostream& out, const DenseNet& net);
DenseNet read_net(std::istream& in);
void save_net(const std::string& path, const DenseNet& net);
DenseNet load_net(const std::string& path);

}  // namespace rbs
