#include "rbs/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

#include "rbs/errors.hpp"

namespace rbs {
namespace {

constexpr char kNetMagic[8] = {'R', 'B', 'S', 'N', 'E', 'T', '0', '1'};

void apply_activation(Activation act, Eigen::MatrixXd& z) {
  if (act == Activation::Relu) z = z.cwiseMax(0.0);
}

template <typename T>
void put(std::ostream& out, T value) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw FormatError("truncated network checkpoint");
  return value;
}

}  // namespace

DenseNet::DenseNet(std::vector<DenseLayer> layers) : layers_(std::move(layers)) { check_chain(); }

void DenseNet::check_chain() const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.bias.size() != l.weight.rows()) throw ShapeError("bias length differs from layer output");
    if (i > 0 && layers_[i - 1].out_dim() != l.in_dim())
      throw ShapeError("layer " + std::to_string(i) + " input does not chain");
  }
}

DenseNet DenseNet::mlp(int input_dim, std::span<const int> hidden, int output_dim, Rng& rng) {
  std::vector<DenseLayer> layers;
  int fan_in = input_dim;
  auto make = [&](int out, Activation act) {
    DenseLayer l;
    l.weight.resize(out, fan_in);
    const double bound = std::sqrt(1.0 / fan_in);
    // Row-major fill so the draw order is independent of Eigen storage.
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < fan_in; ++c) l.weight(r, c) = (2.0 * uniform01(rng) - 1.0) * bound;
    l.bias = Eigen::VectorXd::Zero(out);
    l.activation = act;
    layers.push_back(std::move(l));
    fan_in = out;
  };
  for (int h : hidden) make(h, Activation::Relu);
  make(output_dim, Activation::Identity);
  return DenseNet(std::move(layers));
}

DenseNet DenseNet::zeros(int input_dim, std::span<const int> hidden, int output_dim) {
  std::vector<DenseLayer> layers;
  int fan_in = input_dim;
  for (std::size_t i = 0; i <= hidden.size(); ++i) {
    const bool last = i == hidden.size();
    const int out = last ? output_dim : hidden[i];
    layers.push_back({Eigen::MatrixXd::Zero(out, fan_in), Eigen::VectorXd::Zero(out),
                      last ? Activation::Identity : Activation::Relu});
    fan_in = out;
  }
  return DenseNet(std::move(layers));
}

int DenseNet::input_dim() const { return layers_.empty() ? 0 : layers_.front().in_dim(); }
int DenseNet::output_dim() const { return layers_.empty() ? 0 : layers_.back().out_dim(); }

std::size_t DenseNet::num_parameters() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

bool DenseNet::all_finite() const {
  return std::all_of(layers_.begin(), layers_.end(), [](const DenseLayer& l) {
    return l.weight.allFinite() && l.bias.allFinite();
  });
}

bool operator==(const DenseNet& a, const DenseNet& b) {
  if (a.layers_.size() != b.layers_.size()) return false;
  for (std::size_t i = 0; i < a.layers_.size(); ++i) {
    const auto& x = a.layers_[i];
    const auto& y = b.layers_[i];
    if (x.activation != y.activation || x.weight.rows() != y.weight.rows() ||
        x.weight.cols() != y.weight.cols())
      return false;
    if (std::memcmp(x.weight.data(), y.weight.data(), sizeof(double) * x.weight.size()) != 0)
      return false;
    if (std::memcmp(x.bias.data(), y.bias.data(), sizeof(double) * x.bias.size()) != 0)
      return false;
  }
  return true;
}

GradientTape::GradientTape(const DenseNet& net) {
  for (const auto& l : net.layers()) {
    weight.push_back(Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()));
    bias.push_back(Eigen::VectorXd::Zero(l.bias.size()));
  }
}

void GradientTape::zero() {
  for (auto& w : weight) w.setZero();
  for (auto& b : bias) b.setZero();
}

bool GradientTape::congruent(const DenseNet& net) const {
  if (weight.size() != net.num_layers() || bias.size() != net.num_layers()) return false;
  for (std::size_t i = 0; i < weight.size(); ++i) {
    const auto& l = net.layer(i);
    if (weight[i].rows() != l.weight.rows() || weight[i].cols() != l.weight.cols() ||
        bias[i].size() != l.bias.size())
      return false;
  }
  return true;
}

bool GradientTape::all_finite() const {
  for (std::size_t i = 0; i < weight.size(); ++i)
    if (!weight[i].allFinite() || !bias[i].allFinite()) return false;
  return true;
}

GradientTape& GradientTape::operator+=(const GradientTape& other) {
  if (other.weight.size() != weight.size()) throw ShapeError("tape layer count mismatch");
  for (std::size_t i = 0; i < weight.size(); ++i) {
    if (weight[i].rows() != other.weight[i].rows() || weight[i].cols() != other.weight[i].cols())
      throw ShapeError("tape shape mismatch");
    weight[i] += other.weight[i];
    bias[i] += other.bias[i];
  }
  return *this;
}

GradientTape& GradientTape::operator*=(double scale) {
  for (auto& w : weight) w *= scale;
  for (auto& b : bias) b *= scale;
  return *this;
}

Eigen::VectorXd forward(const DenseNet& net, const Eigen::VectorXd& input) {
  Eigen::MatrixXd in = input;
  return forward_batch(net, in).col(0);
}

Eigen::MatrixXd forward_batch(const DenseNet& net, const Eigen::MatrixXd& inputs,
                              ForwardCache* cache) {
  if (inputs.rows() != net.input_dim())
    throw ShapeError("input has " + std::to_string(inputs.rows()) + " rows, net expects " +
                     std::to_string(net.input_dim()));
  if (cache) {
    cache->activations.clear();
    cache->activations.reserve(net.num_layers() + 1);
    cache->activations.push_back(inputs);
  }
  Eigen::MatrixXd a = inputs;
  for (const auto& l : net.layers()) {
    Eigen::MatrixXd z = l.weight * a;
    z.colwise() += l.bias;
    apply_activation(l.activation, z);
    a = std::move(z);
    if (cache) cache->activations.push_back(a);
  }
  return a;
}

GradientTape backward(const DenseNet& net, const Eigen::VectorXd& input,
                      const Eigen::VectorXd& output_cotangent) {
  if (output_cotangent.size() != net.output_dim()) throw ShapeError("cotangent length mismatch");
  ForwardCache cache;
  forward_batch(net, Eigen::MatrixXd(input), &cache);
  GradientTape tape(net);
  backward_batch(net, cache, Eigen::MatrixXd(output_cotangent), tape);
  return tape;
}

void backward_batch(const DenseNet& net, const ForwardCache& cache,
                    const Eigen::MatrixXd& cotangent, GradientTape& tape) {
  const std::size_t n_layers = net.num_layers();
  if (cache.activations.size() != n_layers + 1) throw ShapeError("forward cache does not match net");
  if (cotangent.rows() != net.output_dim() || cotangent.cols() != cache.activations.back().cols())
    throw ShapeError("cotangent shape mismatch");
  if (!tape.congruent(net)) throw ShapeError("tape not congruent with net");

  Eigen::MatrixXd delta = cotangent;
  for (std::size_t k = n_layers; k-- > 0;) {
    const auto& l = net.layer(k);
    if (l.activation == Activation::Relu) {
      // Activation output is zero exactly where the pre-activation was <= 0.
      delta = delta.cwiseProduct((cache.activations[k + 1].array() > 0.0).cast<double>().matrix());
    }
    const Eigen::MatrixXd& in = cache.activations[k];
    tape.weight[k].noalias() += delta * in.transpose();
    tape.bias[k] += delta.rowwise().sum();
    if (k > 0) delta = l.weight.transpose() * delta;
  }
}

std::vector<double> masked_log_softmax(std::span<const double> logits,
                                       const std::vector<bool>& mask) {
  if (logits.size() != mask.size()) throw ShapeError("logits and mask lengths differ");
  double max_logit = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!mask[i]) continue;
    if (std::isnan(logits[i]) || logits[i] == std::numeric_limits<double>::infinity())
      throw NonFiniteError("non-finite logit at index " + std::to_string(i));
    max_logit = std::max(max_logit, logits[i]);
  }
  if (max_logit == -std::numeric_limits<double>::infinity())
    throw InvalidMaskError("mask has no valid entry");
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (mask[i]) sum += std::exp(logits[i] - max_logit);
  const double log_z = max_logit + std::log(sum);
  std::vector<double> out(logits.size(), kNegInf);
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (mask[i]) out[i] = logits[i] - log_z;
  return out;
}

AdamState AdamState::for_net(const DenseNet& net, double learning_rate) {
  AdamState s;
  s.learning_rate = learning_rate;
  for (const auto& l : net.layers()) {
    s.m_weight.push_back(Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()));
    s.v_weight.push_back(Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()));
    s.m_bias.push_back(Eigen::VectorXd::Zero(l.bias.size()));
    s.v_bias.push_back(Eigen::VectorXd::Zero(l.bias.size()));
  }
  return s;
}

void adam_step(DenseNet& net, const GradientTape& tape, AdamState& state) {
  if (!tape.congruent(net) || state.m_weight.size() != net.num_layers())
    throw ShapeError("optimizer state not congruent with net");
  if (!tape.all_finite()) throw NonFiniteError("non-finite gradient; step refused");

  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  const double b1 = state.beta1, b2 = state.beta2, lr = state.learning_rate, eps = state.epsilon;

  auto update = [&](auto& param, const auto& grad, auto& m, auto& v) {
    m = b1 * m + (1.0 - b1) * grad;
    v = b2 * v + (1.0 - b2) * grad.cwiseProduct(grad);
    param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  };
  for (std::size_t k = 0; k < net.num_layers(); ++k) {
    auto& l = net.layer(k);
    update(l.weight, tape.weight[k], state.m_weight[k], state.v_weight[k]);
    update(l.bias, tape.bias[k], state.m_bias[k], state.v_bias[k]);
  }
}

void write_net(std::ostream& out, const DenseNet& net) {
  out.write(kNetMagic, sizeof(kNetMagic));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(net.num_layers()));
  for (const auto& l : net.layers()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(l.out_dim()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(l.in_dim()));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(l.activation));
    for (int r = 0; r < l.out_dim(); ++r)
      for (int c = 0; c < l.in_dim(); ++c) put<double>(out, l.weight(r, c));
    for (int r = 0; r < l.out_dim(); ++r) put<double>(out, l.bias(r));
  }
}

DenseNet read_net(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kNetMagic, sizeof(magic)) != 0)
    throw FormatError("not a network checkpoint (bad magic)");
  const auto count = get<std::uint32_t>(in);
  std::vector<DenseLayer> layers;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto out_dim = get<std::uint32_t>(in);
    const auto in_dim = get<std::uint32_t>(in);
    const auto act = get<std::uint8_t>(in);
    if (act > 1) throw FormatError("unknown activation tag");
    DenseLayer l;
    l.activation = static_cast<Activation>(act);
    l.weight.resize(out_dim, in_dim);
    l.bias.resize(out_dim);
    for (std::uint32_t r = 0; r < out_dim; ++r)
      for (std::uint32_t c = 0; c < in_dim; ++c) l.weight(r, c) = get<double>(in);
    for (std::uint32_t r = 0; r < out_dim; ++r) l.bias(r) = get<double>(in);
    layers.push_back(std::move(l));
  }
  return DenseNet(std::move(layers));
}

void save_net(const std::string& path, const DenseNet& net) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  write_net(out, net);
}

DenseNet load_net(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path);
  return read_net(in);
}

}  // namespace rbs
