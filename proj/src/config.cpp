#include "rbs/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "rbs/errors.hpp"

namespace rbs {

std::string to_string(RunMode mode) {
  switch (mode) {
    case RunMode::Rbs: return "rbs";
    case RunMode::Her: return "her";
    case RunMode::Plain: return "plain";
    case RunMode::DqnHer: return "dqn_her";
  }
  return "?";
}

RunMode run_mode_from_string(const std::string& name) {
  if (name == "rbs") return RunMode::Rbs;
  if (name == "her") return RunMode::Her;
  if (name == "plain") return RunMode::Plain;
  if (name == "dqn_her") return RunMode::DqnHer;
  throw InvalidSpecError("unknown mode '" + name + "' (rbs, her, plain, dqn_her)");
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

long to_long(const std::string& v) {
  long out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw InvalidSpecError("expected an integer, got '" + v + "'");
  return out;
}

int to_int(const std::string& v) {
  const long x = to_long(v);
  if (x < INT32_MIN || x > INT32_MAX) throw InvalidSpecError("integer out of range: " + v);
  return static_cast<int>(x);
}

double to_double(const std::string& v) {
  if (v.empty()) throw InvalidSpecError("expected a number");
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (end != v.c_str() + v.size()) throw InvalidSpecError("expected a number, got '" + v + "'");
  return x;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw InvalidSpecError("expected true or false, got '" + v + "'");
}

std::string fmt_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

std::vector<int> int_list(const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) throw InvalidSpecError("empty list entry");
    out.push_back(to_int(item));
  }
  return out;
}

std::vector<std::vector<int>> group_list(const std::string& v) {
  std::vector<std::vector<int>> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ';')) {
    item = trim(item);
    if (item.empty()) throw InvalidSpecError("empty list item");
    out.push_back(int_list(item));
  }
  return out;
}

std::string fmt_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::string fmt_groups(const std::vector<std::vector<int>>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "; " : "") + fmt_ints(v[i]);
  return out;
}

struct Field {
  const char* section;
  const char* key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define LONG_FIELD(sec, key, expr) \
  Field{sec, key, [](RunConfig& c, const std::string& v) { expr = to_long(v); }, \
        [](const RunConfig& c) { return std::to_string(expr); }}
#define INT_FIELD(sec, key, expr) \
  Field{sec, key, [](RunConfig& c, const std::string& v) { expr = to_int(v); }, \
        [](const RunConfig& c) { return std::to_string(expr); }}
#define DOUBLE_FIELD(sec, key, expr) \
  Field{sec, key, [](RunConfig& c, const std::string& v) { expr = to_double(v); }, \
        [](const RunConfig& c) { return fmt_double(expr); }}
#define STRING_FIELD(sec, key, expr) \
  Field{sec, key, [](RunConfig& c, const std::string& v) { expr = v; }, \
        [](const RunConfig& c) { return expr; }}
#define BOOL_FIELD(sec, key, expr) \
  Field{sec, key, [](RunConfig& c, const std::string& v) { expr = to_bool(v); }, \
        [](const RunConfig& c) { return std::string(expr ? "true" : "false"); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      STRING_FIELD("run", "name", c.name),
      STRING_FIELD("run", "out_dir", c.out_dir),
      Field{"run", "mode", [](RunConfig& c, const std::string& v) { c.mode = run_mode_from_string(v); },
            [](const RunConfig& c) { return to_string(c.mode); }},
      Field{"run", "seed",
            [](RunConfig& c, const std::string& v) {
              std::uint64_t s = 0;
              const auto* end = v.data() + v.size();
              auto [p, ec] = std::from_chars(v.data(), end, s);
              if (ec != std::errc() || p != end) throw InvalidSpecError("seed must be an unsigned integer");
              c.train.seed = s;
            },
            [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      LONG_FIELD("run", "checkpoint_every", c.checkpoint_every),
      INT_FIELD("run", "dump_trajectories", c.dump_trajectories),

      Field{"env", "kind", [](RunConfig& c, const std::string& v) { c.train.env.kind = env_kind_from_string(v); },
            [](const RunConfig& c) { return to_string(c.train.env.kind); }},
      INT_FIELD("env", "side", c.train.env.side),
      INT_FIELD("env", "universe", c.train.env.universe),
      INT_FIELD("env", "target_size", c.train.env.target_size),
      INT_FIELD("env", "word_bits", c.train.env.word_bits),
      INT_FIELD("env", "total_bits", c.train.env.total_bits),
      INT_FIELD("env", "vocab", c.train.env.vocab),
      INT_FIELD("env", "length", c.train.env.length),
      DOUBLE_FIELD("env", "tolerance", c.train.env.tolerance),
      Field{"env", "enumeration_cap",
            [](RunConfig& c, const std::string& v) {
              const long x = to_long(v);
              if (x < 1) throw InvalidSpecError("enumeration_cap must be >= 1");
              c.train.env.enumeration_cap = static_cast<std::size_t>(x);
            },
            [](const RunConfig& c) { return std::to_string(c.train.env.enumeration_cap); }},
      STRING_FIELD("env", "map", c.map_path),
      Field{"env", "obstacles",
            [](RunConfig& c, const std::string& v) {
              c.train.env.obstacles.clear();
              for (const auto& g : group_list(v)) {
                if (g.size() != 2) throw InvalidSpecError("obstacles are x,y pairs");
                c.train.env.obstacles.push_back({g[0], g[1]});
              }
            },
            [](const RunConfig& c) {
              std::vector<std::vector<int>> g;
              for (const auto& o : c.train.env.obstacles) g.push_back({o.x, o.y});
              return fmt_groups(g);
            }},
      Field{"env", "masked_goals", [](RunConfig& c, const std::string& v) { c.masked_goals = group_list(v); },
            [](const RunConfig& c) { return fmt_groups(c.masked_goals); }},
      INT_FIELD("env", "masked_random", c.masked_random),

      Field{"objective", "kind",
            [](RunConfig& c, const std::string& v) { c.train.objective.kind = objective_kind_from_string(v); },
            [](const RunConfig& c) { return to_string(c.train.objective.kind); }},
      DOUBLE_FIELD("objective", "intensification", c.train.objective.intensification),
      DOUBLE_FIELD("objective", "reward_floor", c.train.objective.reward_floor),
      DOUBLE_FIELD("objective", "subtb_lambda", c.train.objective.subtb_lambda),
      DOUBLE_FIELD("objective", "gamma0", c.train.objective.gamma0),

      LONG_FIELD("train", "steps", c.train.steps),
      INT_FIELD("train", "rollouts", c.train.rollouts),
      INT_FIELD("train", "batch_size", c.train.batch_size),
      DOUBLE_FIELD("train", "learning_rate", c.train.learning_rate),
      DOUBLE_FIELD("train", "adam_beta1", c.train.adam_beta1),
      DOUBLE_FIELD("train", "adam_beta2", c.train.adam_beta2),
      DOUBLE_FIELD("train", "adam_epsilon", c.train.adam_epsilon),
      Field{"train", "hidden", [](RunConfig& c, const std::string& v) { c.train.hidden = int_list(v); },
            [](const RunConfig& c) { return fmt_ints(c.train.hidden); }},
      Field{"train", "buffer_capacity",
            [](RunConfig& c, const std::string& v) {
              const long x = to_long(v);
              if (x < 1) throw InvalidSpecError("buffer_capacity must be >= 1");
              c.train.buffer_capacity = static_cast<std::size_t>(x);
            },
            [](const RunConfig& c) { return std::to_string(c.train.buffer_capacity); }},
      DOUBLE_FIELD("train", "p_max", c.train.p_max),

      LONG_FIELD("eval", "every", c.train.eval_every),
      INT_FIELD("eval", "goals", c.train.eval_goals),
      INT_FIELD("eval", "trials", c.train.eval_trials),
      STRING_FIELD("eval", "test_map", c.test_map_path),
      BOOL_FIELD("eval", "masked", c.eval_masked),

      INT_FIELD("hier", "k", c.hier_k),

      DOUBLE_FIELD("dqn", "discount", c.dqn.discount),
      DOUBLE_FIELD("dqn", "epsilon_start", c.dqn.epsilon_start),
      DOUBLE_FIELD("dqn", "epsilon_end", c.dqn.epsilon_end),
      DOUBLE_FIELD("dqn", "anneal_fraction", c.dqn.anneal_fraction),
      LONG_FIELD("dqn", "target_sync", c.dqn.target_sync),
      BOOL_FIELD("dqn", "relabel", c.dqn.relabel),
  };
  return table;
}

#undef LONG_FIELD
#undef INT_FIELD
#undef DOUBLE_FIELD
#undef STRING_FIELD
#undef BOOL_FIELD

const char* const kSections[] = {"run", "env", "objective", "train", "eval", "hier", "dqn"};

// Final cross-field checks, reported against line 0 (the whole file).
void check(const RunConfig& c) {
  c.train.validate();
  c.dqn.validate();
  if (c.hier_k < 1) throw InvalidSpecError("hier.k must be >= 1");
  if (c.masked_random < 0) throw InvalidSpecError("masked_random must be >= 0");
  if (c.checkpoint_every < 0) throw InvalidSpecError("checkpoint_every must be >= 0");
  if (c.dump_trajectories < 0) throw InvalidSpecError("dump_trajectories must be >= 0");
  if (c.name.empty() || c.name.find('/') != std::string::npos)
    throw InvalidSpecError("run name must be non-empty and contain no '/'");
}

std::string resolve_path(const std::string& base, const std::string& p) {
  if (p.empty() || base.empty() || std::filesystem::path(p).is_absolute()) return p;
  return (std::filesystem::path(base) / p).string();
}

}  // namespace

RunConfig parse_run_config(const std::string& text, const std::string& base_dir) {
  RunConfig c;
  c.base_dir = base_dir;
  std::istringstream in(text);
  std::string raw, section;
  std::set<std::string> seen;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    std::string s = trim(raw);
    if (s.empty() || s[0] == '#' || s[0] == ';') continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw ConfigError(line, "unterminated section header");
      section = trim(s.substr(1, s.size() - 2));
      bool ok = false;
      for (const char* k : kSections) ok = ok || section == k;
      if (!ok) throw ConfigError(line, "unknown section [" + section + "]");
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError(line, "expected key = value");
    if (section.empty()) throw ConfigError(line, "key outside of a section");
    const std::string key = trim(s.substr(0, eq));
    const std::string value = trim(s.substr(eq + 1));
    const Field* f = nullptr;
    for (const auto& cand : fields())
      if (section == cand.section && key == cand.key) f = &cand;
    if (!f) throw ConfigError(line, "unknown key '" + key + "' in [" + section + "]");
    if (!seen.insert(section + "." + key).second)
      throw ConfigError(line, "duplicate key '" + key + "' in [" + section + "]");
    try {
      f->set(c, value);
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError(line, section + "." + key + ": " + e.what());
    }
  }
  c.train.objective.total_steps = c.train.steps;
  if (!seen.count("objective.intensification"))
    c.train.objective.intensification = default_intensification(c.train.env);
  try {
    check(c);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(0, e.what());
  }
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(0, "cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), std::filesystem::path(path).parent_path().string());
}

std::string format_run_config(const RunConfig& c) {
  std::string out;
  for (const char* sec : kSections) {
    out += std::string("[") + sec + "]\n";
    for (const auto& f : fields())
      if (std::string(f.section) == sec) out += std::string(f.key) + " = " + f.get(c) + "\n";
    out += "\n";
  }
  return out;
}

RunConfig resolve_run_config(const RunConfig& config) {
  RunConfig r = config;
  if (!r.map_path.empty()) {
    const GridMap map = load_grid_map(resolve_path(r.base_dir, r.map_path));
    if (r.train.env.kind != EnvKind::Grid) throw ConfigError(0, "map files apply to grid environments only");
    if (map.side != r.train.env.side)
      throw ConfigError(0, "map side " + std::to_string(map.side) + " differs from env.side");
    for (const auto& o : map.obstacles)
      if (std::find(r.train.env.obstacles.begin(), r.train.env.obstacles.end(), o) == r.train.env.obstacles.end())
        r.train.env.obstacles.push_back(o);
    r.map_path.clear();
  }
  if (!r.test_map_path.empty()) r.test_map_path = std::filesystem::absolute(resolve_path(r.base_dir, r.test_map_path)).string();
  auto env = make_environment(r.train.env);
  std::set<Goal> masked;
  for (const auto& v : r.masked_goals) {
    const Goal g = env->goal_from_values(v);
    if (!env->is_valid_goal(g)) throw ConfigError(0, "masked goal " + fmt_ints(v) + " is not a valid goal");
    masked.insert(g);
  }
  if (r.masked_random > 0) {
    Rng rng = make_rng(r.train.seed, "mask");
    auto pool = draw_distinct_goals(*env, r.masked_random + static_cast<int>(masked.size()), rng);
    int added = 0;
    for (const auto& g : pool) {
      if (added == r.masked_random) break;
      if (masked.insert(g).second) {
        r.masked_goals.push_back(env->goal_values(g));
        ++added;
      }
    }
    if (added < r.masked_random) throw ConfigError(0, "not enough goals to mask");
    r.masked_random = 0;
  }
  r.train.env.masked_goals.clear();
  for (const auto& v : r.masked_goals) r.train.env.masked_goals.push_back(env->goal_from_values(v));
  r.train.objective.total_steps = r.train.steps;
  r.train.env.validate();
  return r;
}

EnvSpec test_env_spec(const RunConfig& resolved) {
  EnvSpec s = resolved.train.env;
  if (resolved.test_map_path.empty()) return s;
  const GridMap map = load_grid_map(resolve_path(resolved.base_dir, resolved.test_map_path));
  if (s.kind != EnvKind::Grid || map.side != s.side)
    throw ConfigError(0, "test map does not match the training grid");
  for (const auto& o : map.obstacles)
    if (std::find(s.obstacles.begin(), s.obstacles.end(), o) == s.obstacles.end()) s.obstacles.push_back(o);
  s.validate();
  return s;
}

}  // namespace rbs
