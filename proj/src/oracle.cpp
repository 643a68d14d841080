#include "rbs/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>

#include "rbs/errors.hpp"
#include "rbs/nn.hpp"

namespace rbs {

namespace {

double log_add(double a, double b) {
  if (a < b) std::swap(a, b);
  if (b <= kNegInf) return a;
  return a + std::log1p(std::exp(b - a));
}

std::vector<double> column(const Eigen::MatrixXd& h, Eigen::Index col, int row, int count) {
  std::vector<double> out(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out[static_cast<std::size_t>(i)] = h(row + i, col);
  return out;
}

}  // namespace

int EnumeratedDAG::index_of(const EnvState& s) const {
  const auto it = index.find(s);
  return it == index.end() ? -1 : it->second;
}

EnumeratedDAG enumerate_dag(const Environment& env) {
  const std::size_t cap = env.spec().enumeration_cap;
  EnumeratedDAG dag;
  const EnvState s0 = env.initial_state();
  dag.states.push_back(s0);
  dag.children.emplace_back();
  dag.index.emplace(s0, 0);
  std::deque<int> queue{0};
  while (!queue.empty()) {
    const int u = queue.front();
    queue.pop_front();
    if (env.is_terminal(dag.states[u])) continue;
    const Mask m = env.forward_mask(dag.states[u]);
    for (std::size_t a = 0; a < m.size(); ++a) {
      if (!m[a]) continue;
      EnvState c = env.apply_forward(dag.states[u], static_cast<int>(a));
      auto [it, fresh] = dag.index.emplace(c, static_cast<int>(dag.states.size()));
      if (fresh) {
        if (dag.states.size() >= cap)
          throw EnumerationCapError("more than " + std::to_string(cap) + " states");
        dag.states.push_back(std::move(c));
        dag.children.emplace_back();
        queue.push_back(it->second);
      }
      dag.children[u].push_back({static_cast<int>(a), it->second});
    }
  }
  const std::size_t n = dag.states.size();
  dag.parents.assign(n, {});
  for (std::size_t u = 0; u < n; ++u)
    for (const auto& e : dag.children[u]) dag.parents[e.child].push_back(static_cast<int>(u));
  // Kahn's algorithm, ties by index for a stable order.
  std::vector<int> indeg(n, 0);
  for (std::size_t u = 0; u < n; ++u) indeg[u] = static_cast<int>(dag.parents[u].size());
  std::deque<int> ready;
  for (std::size_t u = 0; u < n; ++u)
    if (indeg[u] == 0) ready.push_back(static_cast<int>(u));
  while (!ready.empty()) {
    const int u = ready.front();
    ready.pop_front();
    dag.topological.push_back(u);
    for (const auto& e : dag.children[u])
      if (--indeg[e.child] == 0) ready.push_back(e.child);
  }
  if (dag.topological.size() != n) throw InvalidSpecError("environment graph has a cycle");
  for (std::size_t u = 0; u < n; ++u)
    if (env.is_terminal(dag.states[u])) dag.terminals.push_back(static_cast<int>(u));
  return dag;
}

std::uint64_t count_trajectories(const EnumeratedDAG& dag, const Environment& env, const EnvState& x) {
  const int target = dag.index_of(x);
  if (target < 0 || !env.is_terminal(x)) throw NonTerminalError("not a terminal of the DAG");
  std::vector<std::uint64_t> ways(dag.states.size(), 0);
  ways[0] = 1;
  for (int u : dag.topological) {
    if (ways[u] == 0) continue;
    for (const auto& e : dag.children[u]) {
      if (ways[e.child] > UINT64_MAX - ways[u]) throw EnumerationCapError("trajectory count overflow");
      ways[e.child] += ways[u];
    }
  }
  return ways[target];
}

std::vector<double> exact_terminal_distribution(const FlowModel& model, const Environment& env,
                                                const EnumeratedDAG& dag, const Goal& goal) {
  const HeadLayout lay = model.layout();
  if (lay.num_forward != env.num_forward_actions() || lay.num_backward != env.num_backward_actions())
    throw ShapeError("model heads do not match the environment");
  const std::size_t n = dag.states.size();
  std::vector<double> logmass(n, kNegInf);
  logmass[0] = 0.0;
  constexpr std::size_t kChunk = 4096;
  std::vector<EnvState> chunk;
  std::vector<int> ids;
  auto flush = [&]() {
    if (ids.empty()) return;
    const Goal g[1] = {goal};
    const Eigen::MatrixXd h = model.heads(env, chunk, g);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const int u = ids[k];
      const auto logp = masked_log_softmax(column(h, static_cast<Eigen::Index>(k), lay.forward_row(), lay.num_forward),
                                           env.forward_mask(dag.states[u]));
      for (const auto& e : dag.children[u])
        logmass[e.child] = log_add(logmass[e.child], logmass[u] + logp[e.action]);
    }
    chunk.clear();
    ids.clear();
  };
  // Mass must be final before a state pushes it on, so process in layers by
  // topological depth.
  std::vector<int> depth(n, 0);
  for (int u : dag.topological)
    for (const auto& e : dag.children[u]) depth[e.child] = std::max(depth[e.child], depth[u] + 1);
  std::vector<int> order = dag.topological;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return depth[a] < depth[b]; });
  int current = 0;
  for (int u : order) {
    if (depth[u] != current) {
      flush();
      current = depth[u];
    }
    if (env.is_terminal(dag.states[u])) continue;
    chunk.push_back(dag.states[u]);
    ids.push_back(u);
    if (ids.size() >= kChunk) flush();
  }
  flush();
  std::vector<double> out;
  out.reserve(dag.terminals.size());
  for (int t : dag.terminals) out.push_back(logmass[t] <= kNegInf ? 0.0 : std::exp(logmass[t]));
  return out;
}

double total_variation(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ShapeError("distribution sizes differ");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

Eigen::MatrixXd TabularFlowModel::heads(const Environment&, std::span<const EnvState> states,
                                        std::span<const Goal> goals) const {
  for (const auto& g : goals)
    if (g != goal_) throw ShapeError("tabular model was solved for a different goal");
  Eigen::MatrixXd out(layout_.rows(), static_cast<Eigen::Index>(states.size()));
  for (std::size_t i = 0; i < states.size(); ++i) {
    const auto it = table_.find(states[i]);
    if (it == table_.end()) throw ShapeError("state missing from the flow table");
    out.col(static_cast<Eigen::Index>(i)) = it->second;
  }
  return out;
}

void TabularFlowModel::set(const EnvState& s, Eigen::VectorXd head) {
  if (head.size() != layout_.rows()) throw ShapeError("head size mismatch");
  table_[s] = std::move(head);
}

TabularFlowModel solve_exact_flows(const Environment& env, const EnumeratedDAG& dag,
                                   const Goal& goal, const ObjectiveConfig& config) {
  const HeadLayout lay = HeadLayout::of(env);
  const std::size_t n = dag.states.size();
  std::vector<double> logf(n, kNegInf);
  std::vector<double> log_pb(n, 0.0);  // log of uniform P_B out of each state
  for (std::size_t u = 1; u < n; ++u) {
    const Mask m = env.backward_mask(dag.states[u]);
    const auto k = std::count(m.begin(), m.end(), true);
    log_pb[u] = -std::log(static_cast<double>(k));
  }
  for (auto it = dag.topological.rbegin(); it != dag.topological.rend(); ++it) {
    const int u = *it;
    if (env.is_terminal(dag.states[u])) {
      logf[u] = terminal_log_target(env.reward(dag.states[u], goal), config);
      continue;
    }
    double acc = kNegInf;
    for (const auto& e : dag.children[u]) acc = log_add(acc, logf[e.child] + log_pb[e.child]);
    logf[u] = acc;
  }
  TabularFlowModel model(lay, goal);
  for (std::size_t u = 0; u < n; ++u) {
    Eigen::VectorXd h = Eigen::VectorXd::Constant(lay.rows(), kNegInf);
    h(lay.log_flow_row()) = logf[u];
    for (const auto& e : dag.children[u])
      h(lay.forward_row() + e.action) = logf[e.child] + log_pb[e.child] - logf[u];
    if (u != 0) {
      const Mask m = env.backward_mask(dag.states[u]);
      for (int a = 0; a < lay.num_backward; ++a)
        if (m[static_cast<std::size_t>(a)]) h(lay.backward_row() + a) = 0.0;
    }
    if (env.is_terminal(dag.states[u]))
      for (int a = 0; a < lay.num_forward; ++a) h(lay.forward_row() + a) = 0.0;
    model.set(dag.states[u], std::move(h));
  }
  return model;
}

}  // namespace rbs

namespace rbs {

std::uint64_t count_trajectories_dfs(const Environment& env, const EnvState& x, std::uint64_t cap) {
  if (!env.is_terminal(x)) throw NonTerminalError("not a terminal state");
  std::uint64_t found = 0;
  std::uint64_t visited = 0;
  const int goal_potential = env.potential(x);
  std::function<void(const EnvState&)> walk = [&](const EnvState& s) {
    if (++visited > cap) throw EnumerationCapError("depth-first count exceeded its cap");
    if (s == x) {
      ++found;
      return;
    }
    if (env.is_terminal(s) || env.potential(s) >= goal_potential) return;
    const Mask m = env.forward_mask(s);
    for (std::size_t a = 0; a < m.size(); ++a)
      if (m[a]) walk(env.apply_forward(s, static_cast<int>(a)));
  };
  walk(env.initial_state());
  return found;
}

std::vector<std::string> check_parent_child_duality(const Environment& env, const EnumeratedDAG& dag,
                                                    std::size_t max_messages) {
  std::vector<std::string> bad;
  auto report = [&](const std::string& m) {
    if (bad.size() < max_messages) bad.push_back(m);
  };
  for (std::size_t u = 0; u < dag.states.size(); ++u) {
    for (const auto& e : dag.children[u]) {
      const EnvState& c = dag.states[e.child];
      const Mask bm = env.backward_mask(c);
      int undo = 0;
      for (std::size_t b = 0; b < bm.size(); ++b)
        if (bm[b] && env.apply_backward(c, static_cast<int>(b)) == dag.states[u]) ++undo;
      if (undo != 1)
        report("edge " + env.describe(dag.states[u]) + " -> " + env.describe(c) + " undone by " +
               std::to_string(undo) + " backward actions");
    }
    if (u == 0) continue;
    const EnvState& c = dag.states[u];
    const Mask bm = env.backward_mask(c);
    std::size_t valid = 0;
    for (std::size_t b = 0; b < bm.size(); ++b) {
      if (!bm[b]) continue;
      ++valid;
      const EnvState p = env.apply_backward(c, static_cast<int>(b));
      const int pi = dag.index_of(p);
      bool edge = false;
      if (pi >= 0)
        for (const auto& e : dag.children[pi]) edge = edge || e.child == static_cast<int>(u);
      if (!edge) report("backward action " + std::to_string(b) + " at " + env.describe(c) + " leaves the DAG");
    }
    if (valid != dag.parents[u].size())
      report(env.describe(c) + " has " + std::to_string(dag.parents[u].size()) + " parents but " +
             std::to_string(valid) + " valid backward actions");
  }
  return bad;
}

GradientCheck check_batch_gradient(const GCModel& model, const Environment& env,
                                   std::span<const TrajectoryRecord* const> records,
                                   const ObjectiveConfig& config, long step, int probes, Rng& rng,
                                   double h) {
  const BatchLoss base = batch_total_loss(model, env, records, config, step);
  GCModel probe = model;
  GradientCheck out;
  const std::size_t layers = model.net().num_layers();
  for (int p = 0; p < probes; ++p) {
    const std::size_t l = uniform_index(rng, layers);
    DenseLayer& layer = probe.net().layer(l);
    const bool bias = uniform01(rng) < 0.3;
    double* w;
    double analytic;
    if (bias) {
      const auto i = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::uint64_t>(layer.bias.size())));
      w = &layer.bias(i);
      analytic = base.tape.bias[l](i);
    } else {
      const auto r = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::uint64_t>(layer.weight.rows())));
      const auto c = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::uint64_t>(layer.weight.cols())));
      w = &layer.weight(r, c);
      analytic = base.tape.weight[l](r, c);
    }
    const double keep = *w;
    *w = keep + h;
    const double up = batch_total_loss(probe, env, records, config, step).loss;
    *w = keep - h;
    const double down = batch_total_loss(probe, env, records, config, step).loss;
    *w = keep;
    const double numeric = (up - down) / (2.0 * h);
    const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    out.max_relative_error = std::max(out.max_relative_error, std::abs(analytic - numeric) / scale);
    ++out.probes;
  }
  return out;
}

}  // namespace rbs
