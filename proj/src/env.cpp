#include "rbs/env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "rbs/env_kinds.hpp"
#include "rbs/errors.hpp"

namespace rbs {

std::string to_string(EnvKind kind) {
  switch (kind) {
    case EnvKind::Grid: return "grid";
    case EnvKind::Set: return "set";
    case EnvKind::Bits: return "bits";
    case EnvKind::TfBind: return "tfbind";
    case EnvKind::Amp: return "amp";
    case EnvKind::Sequence: return "sequence";
  }
  return "?";
}

EnvKind env_kind_from_string(const std::string& name) {
  for (EnvKind k : {EnvKind::Grid, EnvKind::Set, EnvKind::Bits, EnvKind::TfBind, EnvKind::Amp,
                    EnvKind::Sequence})
    if (to_string(k) == name) return k;
  throw InvalidSpecError("unknown environment kind '" + name + "'");
}

std::size_t EnvStateHash::operator()(const EnvState& s) const noexcept {
  std::uint64_t h = s.done ? 0x51ED27ULL : 0x2F1A3ULL;
  for (auto v : s.data) h = splitmix64(h ^ static_cast<std::uint16_t>(v));
  return static_cast<std::size_t>(h);
}

EnvSpec EnvSpec::grid(int side) {
  EnvSpec s;
  s.kind = EnvKind::Grid;
  s.side = side;
  return s;
}

EnvSpec EnvSpec::set(int universe, int target_size) {
  EnvSpec s;
  s.kind = EnvKind::Set;
  s.universe = universe;
  s.target_size = target_size;
  return s;
}

EnvSpec EnvSpec::bits(int word_bits, int total_bits) {
  EnvSpec s;
  s.kind = EnvKind::Bits;
  s.word_bits = word_bits;
  s.total_bits = total_bits;
  return s;
}

EnvSpec EnvSpec::tfbind() {
  EnvSpec s;
  s.kind = EnvKind::TfBind;
  s.vocab = 4;
  s.length = 8;
  return s;
}

EnvSpec EnvSpec::amp() {
  EnvSpec s;
  s.kind = EnvKind::Amp;
  s.vocab = 20;
  s.length = 50;
  return s;
}

EnvSpec EnvSpec::sequence(int vocab, int length) {
  EnvSpec s;
  s.kind = EnvKind::Sequence;
  s.vocab = vocab;
  s.length = length;
  return s;
}

int EnvSpec::sequence_vocab() const {
  return kind == EnvKind::Bits ? (1 << word_bits) : vocab;
}

int EnvSpec::sequence_length() const {
  return kind == EnvKind::Bits ? total_bits / word_bits : length;
}

void EnvSpec::validate() const {
  if (!(tolerance >= 0.0)) throw InvalidSpecError("tolerance must be >= 0");
  switch (kind) {
    case EnvKind::Grid:
      if (side < 2) throw InvalidSpecError("grid side must be >= 2");
      for (const auto& c : obstacles) {
        if (c.x < 0 || c.y < 0 || c.x >= side || c.y >= side)
          throw InvalidSpecError("obstacle outside the grid");
        if (c.x == 0 && c.y == 0) throw InvalidSpecError("obstacle on the initial state");
      }
      break;
    case EnvKind::Set:
      if (universe < 1 || universe > 4096) throw InvalidSpecError("universe size out of range");
      if (target_size < 1 || target_size > universe)
        throw InvalidSpecError("target size must satisfy 1 <= |S| <= |U|");
      break;
    case EnvKind::Bits:
      if (word_bits < 1 || word_bits > 12) throw InvalidSpecError("word bits out of range");
      if (total_bits < word_bits || total_bits % word_bits != 0)
        throw InvalidSpecError("word bits must divide total bits");
      break;
    case EnvKind::TfBind:
    case EnvKind::Amp:
    case EnvKind::Sequence:
      if (vocab < 1 || vocab > 4096) throw InvalidSpecError("vocabulary size out of range");
      if (length < 1) throw InvalidSpecError("sequence length must be >= 1");
      break;
  }
  if (kind != EnvKind::Grid && !obstacles.empty())
    throw InvalidSpecError("obstacles only apply to grid environments");
}

std::string EnvSpec::canonical_shape() const {
  std::ostringstream os;
  os << to_string(kind);
  switch (kind) {
    case EnvKind::Grid: {
      os << " side=" << side << " obstacles=";
      auto sorted = obstacles;
      std::sort(sorted.begin(), sorted.end());
      for (const auto& c : sorted) os << c.x << ',' << c.y << ';';
      break;
    }
    case EnvKind::Set: os << " universe=" << universe << " target=" << target_size; break;
    default:
      os << " vocab=" << sequence_vocab() << " length=" << sequence_length();
      break;
  }
  return os.str();
}

std::uint64_t EnvSpec::shape_hash() const { return splitmix64(fnv1a(canonical_shape())); }

Environment::Environment(EnvSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

std::optional<int> Environment::forward_action_between(const EnvState& parent,
                                                       const EnvState& child) const {
  const Mask mask = forward_mask(parent);
  for (int a = 0; a < static_cast<int>(mask.size()); ++a)
    if (mask[a] && apply_forward(parent, a) == child) return a;
  return std::nullopt;
}

std::optional<int> Environment::backward_action_between(const EnvState& child,
                                                        const EnvState& parent) const {
  if (is_initial(child)) return std::nullopt;
  const Mask mask = backward_mask(child);
  for (int b = 0; b < static_cast<int>(mask.size()); ++b)
    if (mask[b] && apply_backward(child, b) == parent) return b;
  return std::nullopt;
}

int Environment::reward(const EnvState& x, const Goal& y) const {
  if (!is_terminal(x)) throw NonTerminalError("reward requested for a non-terminal state");
  const double distance = (x.data == y.data) ? 0.0 : 1.0;
  return distance <= spec_.tolerance ? 1 : 0;
}

void Environment::encode(const EnvState& s, const Goal& goal, std::span<double> out) const {
  const auto n = static_cast<std::size_t>(block_size());
  if (out.size() != 2 * n) throw ShapeError("encoding buffer has wrong length");
  std::fill(out.begin(), out.end(), 0.0);
  encode_block(s.data, false, out.subspan(0, n));
  encode_block(goal.data, true, out.subspan(n, n));
}

std::vector<double> Environment::encode(const EnvState& s, const Goal& goal) const {
  std::vector<double> out(static_cast<std::size_t>(encoding_size()));
  encode(s, goal, out);
  return out;
}

bool Environment::is_masked(const Goal& goal) const {
  return std::find(spec_.masked_goals.begin(), spec_.masked_goals.end(), goal) !=
         spec_.masked_goals.end();
}

Goal Environment::sample_goal(Rng& rng) const {
  // Rejection against the (small) masked list keeps the draw uniform over the rest.
  for (int attempt = 0; attempt < 1000000; ++attempt) {
    Goal g = draw_goal(rng);
    if (!is_masked(g)) return g;
  }
  throw InvalidSpecError("every goal is masked");
}

std::string Environment::describe(const EnvState& s) const {
  std::string out = "[";
  for (std::size_t i = 0; i < s.data.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(s.data[i]);
  }
  out += s.done ? "]*" : "]";
  return out;
}

std::shared_ptr<const Environment> make_environment(const EnvSpec& spec) {
  switch (spec.kind) {
    case EnvKind::Grid: return std::make_shared<GridWorld>(spec);
    case EnvKind::Set: return std::make_shared<SetGeneration>(spec);
    default: return std::make_shared<SequenceEnv>(spec);
  }
}

GridMap parse_grid_map(const std::string& text) {
  GridMap map;
  std::istringstream in(text);
  std::string line;
  std::vector<std::string> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    rows.push_back(line);
  }
  if (rows.empty()) throw FormatError("empty map");
  map.side = static_cast<int>(rows.size());
  for (int y = 0; y < map.side; ++y) {
    const auto& row = rows[y];
    if (static_cast<int>(row.size()) != map.side)
      throw FormatError("map row " + std::to_string(y + 1) + " has width " +
                        std::to_string(row.size()) + ", expected " + std::to_string(map.side));
    for (int x = 0; x < map.side; ++x) {
      switch (row[x]) {
        case '.': break;
        case '#': map.obstacles.push_back({x, y}); break;
        case 'G': map.goals.push_back({x, y}); break;
        default:
          throw FormatError("map row " + std::to_string(y + 1) + ": unexpected character '" +
                            std::string(1, row[x]) + "'");
      }
    }
  }
  return map;
}

GridMap load_grid_map(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read map " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_grid_map(ss.str());
}

std::string format_grid_map(const GridMap& map) {
  std::vector<std::string> rows(map.side, std::string(map.side, '.'));
  for (const auto& c : map.obstacles) rows[c.y][c.x] = '#';
  for (const auto& c : map.goals) rows[c.y][c.x] = 'G';
  std::string out;
  for (const auto& r : rows) out += r + "\n";
  return out;
}

}  // namespace rbs
