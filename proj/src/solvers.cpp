#include "iolvm/solvers.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <queue>
#include <random>

#include "iolvm/error.hpp"
#include "iolvm/rng.hpp"

namespace iolvm {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_inputs(SolverKind kind, const Graph& g, std::span<const double> y, const Requirement& p) {
  if (y.size() != g.num_edges())
    fail(ErrorCode::LengthMismatch, "cost vector length " + std::to_string(y.size()) +
                                        " != |E| = " + std::to_string(g.num_edges()));
  for (double v : y)
    if (!std::isfinite(v)) fail(ErrorCode::NonFiniteCost, "cost vector has a non-finite entry");
  const bool wants_path = kind == SolverKind::Spp;
  if (wants_path != p.is_source_target())
    fail(ErrorCode::RequirementMismatch,
         to_string(kind) + (wants_path ? " needs a source/target requirement" : " takes no requirement"));
  check_requirement(g, p);
}

// Enumerating tied optima stops after this many candidates.
constexpr std::size_t kMaxTiedCandidates = std::size_t{1} << 16;

bool lexicographically_smaller(const SolutionVector& a, const SolutionVector& b) {
  const auto ea = a.edges();
  const auto eb = b.edges();
  return std::lexicographical_compare(ea.begin(), ea.end(), eb.begin(), eb.end());
}

// Keeps the cheapest candidate, ties going to the smallest sorted edge-id set.
struct Incumbent {
  bool found = false;
  double cost = kInf;
  SolutionVector x;

  void offer(SolutionVector cand, std::span<const double> y) {
    const double cc = solution_cost(y, cand);
    if (!found || cc < cost || (cc == cost && lexicographically_smaller(cand, x))) {
      found = true;
      cost = cc;
      x = std::move(cand);
    }
  }
};

// Among all shortest s-t paths, returns the one with the smallest sorted
// edge-id set. Tight arcs (dist[a] + w = dist[b]) form a DAG because every
// weight is positive after clamping.
SolutionVector resolve_path_ties(const Graph& g, const std::vector<double>& w, const std::vector<double>& dist,
                                 const std::vector<bool>& done, NodeId s, NodeId t, SolutionVector fallback) {
  const std::size_t n = g.num_nodes();
  std::vector<std::vector<Arc>> tight_in(n);  // Arc.to holds the tail node
  auto consider = [&](NodeId a, NodeId b, EdgeId e) {
    const auto ai = static_cast<std::size_t>(a), bi = static_cast<std::size_t>(b);
    if (done[ai] && dist[bi] < kInf && dist[ai] + w[static_cast<std::size_t>(e)] == dist[bi])
      tight_in[bi].push_back({a, e});
  };
  for (const auto& e : g.edges()) {
    consider(e.src, e.dst, e.id);
    if (!g.directed()) consider(e.dst, e.src, e.id);
  }

  // Number of tight paths from s to each node, in order of distance.
  std::vector<std::size_t> by_dist;
  for (std::size_t v = 0; v < n; ++v)
    if (done[v]) by_dist.push_back(v);
  std::sort(by_dist.begin(), by_dist.end(), [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
  std::vector<double> count(n, 0.0);
  count[static_cast<std::size_t>(s)] = 1.0;
  for (std::size_t v : by_dist)
    for (const auto& arc : tight_in[v]) count[v] += count[static_cast<std::size_t>(arc.to)];
  const double paths = count[static_cast<std::size_t>(t)];
  if (paths <= 1.0 || paths > static_cast<double>(kMaxTiedCandidates)) return fallback;

  Incumbent inc;
  SolutionVector cur(g.num_edges());
  std::function<void(NodeId)> walk = [&](NodeId v) {
    if (v == s) {
      inc.offer(cur, w);
      return;
    }
    for (const auto& arc : tight_in[static_cast<std::size_t>(v)]) {
      cur.set(static_cast<std::size_t>(arc.edge));
      walk(arc.to);
      cur.set(static_cast<std::size_t>(arc.edge), false);
    }
  };
  walk(t);
  return inc.x;
}

SolutionVector dijkstra(const Graph& g, std::span<const double> y, NodeId s, NodeId t,
                        const SolverOptions& opts, SolveStats* stats) {
  const std::size_t n = g.num_nodes();
  std::vector<double> w(y.begin(), y.end());
  std::size_t clamped = 0;
  for (auto& c : w) {
    if (c < opts.clamp_floor) {
      c = opts.clamp_floor;
      ++clamped;
    }
  }
  if (stats) stats->clamped_edges += clamped;

  std::vector<double> dist(n, kInf);
  std::vector<EdgeId> pred(n, -1);
  std::vector<bool> done(n, false);
  using Entry = std::pair<double, NodeId>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;
  dist[static_cast<std::size_t>(s)] = 0.0;
  heap.push({0.0, s});
  while (!heap.empty()) {
    const auto [d, v] = heap.top();
    heap.pop();
    const auto vi = static_cast<std::size_t>(v);
    if (done[vi]) continue;
    done[vi] = true;
    if (v == t) break;
    for (const auto& arc : g.out_arcs(v)) {
      const auto ui = static_cast<std::size_t>(arc.to);
      if (done[ui]) continue;
      const double cand = d + w[static_cast<std::size_t>(arc.edge)];
      if (cand < dist[ui]) {
        dist[ui] = cand;
        pred[ui] = arc.edge;
        heap.push({cand, arc.to});
      }
    }
  }
  if (!done[static_cast<std::size_t>(t)])
    fail(ErrorCode::NoPathExists, "target " + std::to_string(t) + " unreachable from " + std::to_string(s));

  SolutionVector x(g.num_edges());
  NodeId v = t;
  while (v != s) {
    const EdgeId e = pred[static_cast<std::size_t>(v)];
    x.set(static_cast<std::size_t>(e));
    const auto& ed = g.edge(e);
    v = (ed.dst == v) ? ed.src : ed.dst;
  }
  return resolve_path_ties(g, w, dist, done, s, t, std::move(x));
}

// Dense cost matrix with +inf for missing arcs.
std::vector<double> cost_matrix(const Graph& g, std::span<const double> y) {
  const std::size_t n = g.num_nodes();
  std::vector<double> c(n * n, kInf);
  for (const auto& e : g.edges()) {
    const auto s = static_cast<std::size_t>(e.src);
    const auto d = static_cast<std::size_t>(e.dst);
    c[s * n + d] = y[static_cast<std::size_t>(e.id)];
    if (!g.directed()) c[d * n + s] = y[static_cast<std::size_t>(e.id)];
  }
  return c;
}

SolutionVector tour_to_solution(const Graph& g, std::span<const NodeId> order) {
  SolutionVector x(g.num_edges());
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto e = g.find_edge(order[i], order[(i + 1) % order.size()]);
    if (!e) fail(ErrorCode::NoFeasibleSolution, "tour uses a missing edge");
    x.set(static_cast<std::size_t>(*e));
  }
  return x;
}

void check_tour_size(const Graph& g) {
  if (g.num_nodes() < (g.directed() ? 2u : 3u))
    fail(ErrorCode::NoFeasibleSolution, "graph too small for a Hamiltonian cycle");
}

SolutionVector held_karp(const Graph& g, std::span<const double> y) {
  const std::size_t n = g.num_nodes();
  if (n > kMaxExactTspNodes)
    fail(ErrorCode::GraphTooLargeForExact,
         "exact TSP supports at most " + std::to_string(kMaxExactTspNodes) + " nodes, got " + std::to_string(n));
  check_tour_size(g);
  const auto c = cost_matrix(g, y);
  const std::size_t m = n - 1;  // node j >= 1 is bit j-1
  const std::size_t full = (std::size_t{1} << m) - 1;

  thread_local std::vector<double> dp;
  thread_local std::vector<std::uint8_t> parent;
  thread_local std::vector<double> ways;  // optimal partial paths per state
  dp.assign((full + 1) * n, kInf);
  parent.assign((full + 1) * n, 0);
  ways.assign((full + 1) * n, 0.0);
  auto at = [n](std::size_t mask, std::size_t j) { return mask * n + j; };

  for (std::size_t j = 1; j < n; ++j) {
    dp[at(std::size_t{1} << (j - 1), j)] = c[j];
    parent[at(std::size_t{1} << (j - 1), j)] = 0;
    ways[at(std::size_t{1} << (j - 1), j)] = c[j] < kInf ? 1.0 : 0.0;
  }
  for (std::size_t mask = 1; mask <= full; ++mask) {
    for (std::size_t j = 1; j < n; ++j) {
      if (!(mask & (std::size_t{1} << (j - 1)))) continue;
      const double base = dp[at(mask, j)];
      if (base == kInf) continue;
      const double* row = &c[j * n];
      for (std::size_t k = 1; k < n; ++k) {
        const std::size_t bit = std::size_t{1} << (k - 1);
        if (mask & bit) continue;
        const double cand = base + row[k];
        const std::size_t slot = at(mask | bit, k);
        if (cand < dp[slot]) {
          dp[slot] = cand;
          parent[slot] = static_cast<std::uint8_t>(j);
          ways[slot] = ways[at(mask, j)];
        } else if (cand == dp[slot]) {
          ways[slot] += ways[at(mask, j)];
        }
      }
    }
  }
  double best = kInf;
  std::size_t last = 0;
  double tours = 0.0;
  for (std::size_t j = 1; j < n; ++j) {
    const double cand = dp[at(full, j)] + c[j * n];
    if (cand < best) {
      best = cand;
      last = j;
      tours = ways[at(full, j)];
    } else if (cand == best) {
      tours += ways[at(full, j)];
    }
  }
  if (best == kInf) fail(ErrorCode::NoFeasibleSolution, "graph has no Hamiltonian cycle");

  // An undirected tour is counted once per orientation.
  const double distinct_tours = g.directed() ? tours : tours / 2.0;
  if (distinct_tours > 1.0 && tours <= static_cast<double>(kMaxTiedCandidates)) {
    Incumbent inc;
    std::vector<NodeId> order(n, 0);
    std::function<void(std::size_t, std::size_t, std::size_t)> walk = [&](std::size_t mask, std::size_t j,
                                                                             std::size_t pos) {
      order[pos] = static_cast<NodeId>(j);
      const std::size_t prev_mask = mask & ~(std::size_t{1} << (j - 1));
      if (prev_mask == 0) {
        inc.offer(tour_to_solution(g, order), y);
        return;
      }
      for (std::size_t i = 1; i < n; ++i) {
        if (!(prev_mask & (std::size_t{1} << (i - 1)))) continue;
        if (dp[at(prev_mask, i)] + c[i * n + j] == dp[at(mask, j)]) walk(prev_mask, i, pos - 1);
      }
    };
    for (std::size_t j = 1; j < n; ++j)
      if (dp[at(full, j)] + c[j * n] == best) walk(full, j, n - 1);
    return inc.x;
  }

  std::vector<NodeId> order(n);
  std::size_t mask = full;
  std::size_t j = last;
  for (std::size_t pos = n - 1; pos >= 1; --pos) {
    order[pos] = static_cast<NodeId>(j);
    const std::size_t pj = parent[at(mask, j)];
    mask &= ~(std::size_t{1} << (j - 1));
    j = pj;
  }
  order[0] = 0;
  return tour_to_solution(g, order);
}

// Cost change of reversing order[i..j] (1 <= i < j <= n-1).
double two_opt_delta(const std::vector<double>& c, std::size_t n, bool directed,
                     const std::vector<NodeId>& order, std::size_t i, std::size_t j) {
  auto cost = [&](NodeId a, NodeId b) {
    return c[static_cast<std::size_t>(a) * n + static_cast<std::size_t>(b)];
  };
  const NodeId a = order[i - 1];
  const NodeId b = order[i];
  const NodeId d = order[j];
  const NodeId e = order[(j + 1) % n];
  double delta = cost(a, d) + cost(b, e) - cost(a, b) - cost(d, e);
  if (directed) {
    for (std::size_t q = i; q < j; ++q)
      delta += cost(order[q + 1], order[q]) - cost(order[q], order[q + 1]);
  }
  return delta;
}

double tour_cost(const std::vector<double>& c, std::size_t n, const std::vector<NodeId>& order) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    s += c[static_cast<std::size_t>(order[i]) * n + static_cast<std::size_t>(order[(i + 1) % n])];
  return s;
}

struct BestMove {
  double delta = 0.0;
  std::size_t i = 0, j = 0;
};

BestMove best_two_opt_move(const std::vector<double>& c, std::size_t n, bool directed,
                           const std::vector<NodeId>& order) {
  BestMove best;
  for (std::size_t i = 1; i + 1 < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (!directed && i == 1 && j == n - 1) continue;  // same undirected cycle
      const double delta = two_opt_delta(c, n, directed, order, i, j);
      if (delta < best.delta) best = {delta, i, j};
    }
  }
  return best;
}

SolutionVector two_opt_heuristic(const Graph& g, std::span<const double> y) {
  check_tour_size(g);
  const std::size_t n = g.num_nodes();
  const auto c = cost_matrix(g, y);

  std::vector<NodeId> order;
  order.reserve(n);
  std::vector<bool> visited(n, false);
  order.push_back(0);
  visited[0] = true;
  for (std::size_t step = 1; step < n; ++step) {
    const auto cur = static_cast<std::size_t>(order.back());
    double best = kInf;
    std::size_t next = n;
    for (std::size_t k = 0; k < n; ++k) {
      if (!visited[k] && c[cur * n + k] < best) {
        best = c[cur * n + k];
        next = k;
      }
    }
    if (next == n) fail(ErrorCode::NoFeasibleSolution, "nearest-neighbour construction got stuck");
    visited[next] = true;
    order.push_back(static_cast<NodeId>(next));
  }
  if (c[static_cast<std::size_t>(order.back()) * n] == kInf)
    fail(ErrorCode::NoFeasibleSolution, "nearest-neighbour tour cannot close");

  constexpr double kRelTol = 1e-12;
  while (true) {
    const double tol = kRelTol * std::abs(tour_cost(c, n, order));
    const auto move = best_two_opt_move(c, n, g.directed(), order);
    if (!(move.delta < -tol)) break;
    std::reverse(order.begin() + static_cast<std::ptrdiff_t>(move.i),
                 order.begin() + static_cast<std::ptrdiff_t>(move.j) + 1);
  }
  return tour_to_solution(g, order);
}

SolutionVector brute_force_paths(const Graph& g, std::span<const double> y, NodeId s, NodeId t) {
  Incumbent inc;
  std::vector<bool> on_path(g.num_nodes(), false);
  SolutionVector cur(g.num_edges());
  std::function<void(NodeId)> dfs = [&](NodeId v) {
    if (v == t) {
      inc.offer(cur, y);
      return;
    }
    for (const auto& arc : g.out_arcs(v)) {
      const auto u = static_cast<std::size_t>(arc.to);
      if (on_path[u]) continue;
      on_path[u] = true;
      cur.set(static_cast<std::size_t>(arc.edge));
      dfs(arc.to);
      cur.set(static_cast<std::size_t>(arc.edge), false);
      on_path[u] = false;
    }
  };
  on_path[static_cast<std::size_t>(s)] = true;
  dfs(s);
  if (!inc.found) fail(ErrorCode::NoPathExists, "no simple path between requirement nodes");
  return inc.x;
}

SolutionVector brute_force_tours(const Graph& g, std::span<const double> y) {
  check_tour_size(g);
  const std::size_t n = g.num_nodes();
  std::vector<NodeId> rest(n - 1);
  std::iota(rest.begin(), rest.end(), 1);
  Incumbent inc;
  do {
    SolutionVector x(g.num_edges());
    NodeId prev = 0;
    bool ok = true;
    for (std::size_t i = 0; i <= rest.size() && ok; ++i) {
      const NodeId next = i < rest.size() ? rest[i] : 0;
      const auto e = g.find_edge(prev, next);
      if (!e) ok = false;
      else x.set(static_cast<std::size_t>(*e));
      prev = next;
    }
    if (ok) inc.offer(std::move(x), y);
  } while (std::next_permutation(rest.begin(), rest.end()));
  if (!inc.found) fail(ErrorCode::NoFeasibleSolution, "graph has no Hamiltonian cycle");
  return inc.x;
}

}  // namespace

std::string to_string(SolverKind kind) {
  switch (kind) {
    case SolverKind::Spp: return "spp";
    case SolverKind::TspExact: return "tsp_exact";
    case SolverKind::TspHeuristic: return "tsp_heuristic";
  }
  return "unknown";
}

SolverKind solver_kind_from_string(const std::string& s) {
  if (s == "spp") return SolverKind::Spp;
  if (s == "tsp_exact") return SolverKind::TspExact;
  if (s == "tsp_heuristic") return SolverKind::TspHeuristic;
  fail(ErrorCode::ConfigError, "unknown solver kind '" + s + "'");
}

SolutionVector solve(SolverKind kind, const Graph& g, std::span<const double> y,
                     const Requirement& p, const SolverOptions& opts, SolveStats* stats) {
  check_inputs(kind, g, y, p);
  switch (kind) {
    case SolverKind::Spp: return dijkstra(g, y, *p.source, *p.target, opts, stats);
    case SolverKind::TspExact: return held_karp(g, y);
    case SolverKind::TspHeuristic: return two_opt_heuristic(g, y);
  }
  fail(ErrorCode::ConfigError, "unknown solver kind");
}

std::vector<double> draw_perturbation(std::size_t n, double sigma_eps, std::uint64_t seed) {
  std::vector<double> eps(n, 0.0);
  if (sigma_eps > 0.0) {
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, sigma_eps);
    for (auto& v : eps) v = normal(rng);
  }
  return eps;
}

PerturbedSolution solve_perturbed(SolverKind kind, const Graph& g, std::span<const double> y,
                                  const Requirement& p, double sigma_eps, std::uint64_t seed,
                                  const SolverOptions& opts) {
  if (!(sigma_eps >= 0.0) || !std::isfinite(sigma_eps))
    fail(ErrorCode::ConfigError, "sigma_eps must be finite and >= 0");
  PerturbedSolution out;
  out.eps = draw_perturbation(y.size(), sigma_eps, seed);
  std::vector<double> perturbed(y.begin(), y.end());
  for (std::size_t e = 0; e < y.size(); ++e) perturbed[e] += out.eps[e];
  out.x = solve(kind, g, perturbed, p, opts, &out.stats);
  return out;
}

SolutionVector brute_force(SolverKind kind, const Graph& g, std::span<const double> y,
                           const Requirement& p) {
  check_inputs(kind, g, y, p);
  if (kind == SolverKind::Spp) {
    if (g.num_nodes() > kMaxBruteForceSppNodes)
      fail(ErrorCode::GraphTooLargeForBruteForce, "path enumeration limited to 10 nodes");
    return brute_force_paths(g, y, *p.source, *p.target);
  }
  if (g.num_nodes() > kMaxBruteForceTspNodes)
    fail(ErrorCode::GraphTooLargeForBruteForce, "tour enumeration limited to 8 nodes");
  return brute_force_tours(g, y);
}

std::vector<NodeId> tour_order(const Graph& g, const SolutionVector& tour) {
  std::vector<NodeId> order{0};
  std::vector<bool> used(g.num_edges(), false);
  NodeId v = 0;
  while (order.size() < g.num_nodes()) {
    bool moved = false;
    for (const auto& arc : g.out_arcs(v)) {
      const auto e = static_cast<std::size_t>(arc.edge);
      if (tour[e] && !used[e]) {
        used[e] = true;
        v = arc.to;
        moved = true;
        break;
      }
    }
    if (!moved || v == 0) fail(ErrorCode::InfeasibleSample, "solution is not a Hamiltonian cycle");
    order.push_back(v);
  }
  return order;
}

bool is_two_opt_optimal(const Graph& g, std::span<const double> y, const SolutionVector& tour,
                        double rel_tol) {
  const std::size_t n = g.num_nodes();
  const auto c = cost_matrix(g, y);
  const auto order = tour_order(g, tour);
  const double tol = rel_tol * std::abs(tour_cost(c, n, order));
  return !(best_two_opt_move(c, n, g.directed(), order).delta < -tol);
}

}  // namespace iolvm
