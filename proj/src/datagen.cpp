#include "iolvm/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>

#include "iolvm/error.hpp"
#include "iolvm/neural.hpp"
#include "iolvm/solvers.hpp"

namespace iolvm {

namespace {

constexpr std::uint64_t kPositionStream = 11;
constexpr std::uint64_t kLinkStream = 12;
constexpr std::uint64_t kPathStream = 13;
constexpr std::uint64_t kWeightStream = 14;
constexpr std::uint64_t kFeatureStream = 15;

std::string to_string(LatitudeBias b) {
  switch (b) {
    case LatitudeBias::None: return "none";
    case LatitudeBias::South: return "south";
    case LatitudeBias::North: return "north";
  }
  return "none";
}

LatitudeBias bias_from_string(const std::string& s) {
  if (s == "none") return LatitudeBias::None;
  if (s == "south") return LatitudeBias::South;
  if (s == "north") return LatitudeBias::North;
  fail(ErrorCode::ConfigError, "unknown bias '" + s + "'");
}

std::string to_string(RequirementMode m) { return m == RequirementMode::SingleST ? "single_st" : "multi_st"; }

RequirementMode mode_from_string(const std::string& s) {
  if (s == "single_st") return RequirementMode::SingleST;
  if (s == "multi_st") return RequirementMode::MultiST;
  fail(ErrorCode::ConfigError, "unknown requirement mode '" + s + "'");
}

double distance(const Point& a, const Point& b) { return std::hypot(a.x - b.x, a.y - b.y); }

struct DisjointSets {
  std::vector<int> parent;
  explicit DisjointSets(int n) : parent(static_cast<std::size_t>(n)) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int v) {
    while (parent[static_cast<std::size_t>(v)] != v) {
      auto& p = parent[static_cast<std::size_t>(v)];
      p = parent[static_cast<std::size_t>(p)];
      v = p;
    }
    return v;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
  }
};

NodeId nearest_node(const Graph& g, Point q) {
  NodeId best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t v = 0; v < g.num_nodes(); ++v) {
    const double d = distance(g.position(static_cast<NodeId>(v)), q);
    if (d < best_d) {
      best_d = d;
      best = static_cast<NodeId>(v);
    }
  }
  return best;
}

nlohmann::json region_to_json(const std::optional<Box>& b) {
  if (!b) return nullptr;
  return {b->x_min, b->x_max, b->y_min, b->y_max};
}

std::optional<Box> region_from_json(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 4 || v[0] > v[1] || v[2] > v[3])
    fail(ErrorCode::ConfigError, "regions must be [x_min, x_max, y_min, y_max]");
  return Box{v[0], v[1], v[2], v[3]};
}

std::vector<NodeId> nodes_in(const Graph& g, const std::optional<Box>& region) {
  std::vector<NodeId> out;
  for (std::size_t v = 0; v < g.num_nodes(); ++v)
    if (!region || region->contains(g.position(static_cast<NodeId>(v)))) out.push_back(static_cast<NodeId>(v));
  if (out.empty()) fail(ErrorCode::ConfigError, "requirement region contains no node");
  return out;
}

template <class T>
T json_get(const nlohmann::json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

}  // namespace

void WaxmanSpec::validate() const {
  if (n_nodes < 2) fail(ErrorCode::ConfigError, "n_nodes must be >= 2");
  if (!(alpha > 0.0 && alpha <= 1.0)) fail(ErrorCode::ConfigError, "alpha must lie in (0, 1]");
  if (!(beta_w > 0.0)) fail(ErrorCode::ConfigError, "beta_w must be positive");
  if (n_paths < 1) fail(ErrorCode::ConfigError, "n_paths must be >= 1");
  if (agents.empty()) fail(ErrorCode::ConfigError, "at least one agent is required");
  if (!(bias_width > 0.0)) fail(ErrorCode::ConfigError, "bias_width must be positive");
  for (const auto& a : agents)
    if (!(a.bias_strength >= 0.0) || !(a.noise_scale >= 0.0))
      fail(ErrorCode::ConfigError, "agent bias_strength and noise_scale must be >= 0");
}

void to_json(nlohmann::json& j, const WaxmanSpec& s) {
  auto agents = nlohmann::json::array();
  for (const auto& a : s.agents)
    agents.push_back({{"bias", to_string(a.bias)}, {"bias_strength", a.bias_strength}, {"noise_scale", a.noise_scale}});
  j = {{"n_nodes", s.n_nodes},
       {"alpha", s.alpha},
       {"beta_w", s.beta_w},
       {"seed", s.seed},
       {"agents", agents},
       {"n_paths", s.n_paths},
       {"requirement_mode", to_string(s.requirement_mode)},
       {"bias_width", s.bias_width},
       {"min_pair_distance", s.min_pair_distance},
       {"min_component_fraction", s.min_component_fraction},
       {"source_region", region_to_json(s.source_region)},
       {"target_region", region_to_json(s.target_region)}};
}

void from_json(const nlohmann::json& j, WaxmanSpec& s) {
  try {
    s.n_nodes = json_get(j, "n_nodes", s.n_nodes);
    s.alpha = json_get(j, "alpha", s.alpha);
    s.beta_w = json_get(j, "beta_w", s.beta_w);
    s.seed = json_get(j, "seed", s.seed);
    s.n_paths = json_get(j, "n_paths", s.n_paths);
    s.bias_width = json_get(j, "bias_width", s.bias_width);
    s.min_pair_distance = json_get(j, "min_pair_distance", s.min_pair_distance);
    s.min_component_fraction = json_get(j, "min_component_fraction", s.min_component_fraction);
    if (j.contains("source_region")) s.source_region = region_from_json(j.at("source_region"));
    if (j.contains("target_region")) s.target_region = region_from_json(j.at("target_region"));
    if (j.contains("requirement_mode")) s.requirement_mode = mode_from_string(j.at("requirement_mode").get<std::string>());
    if (j.contains("agents")) {
      s.agents.clear();
      for (const auto& a : j.at("agents"))
        s.agents.push_back({bias_from_string(json_get<std::string>(a, "bias", "none")),
                            json_get(a, "bias_strength", 0.0), json_get(a, "noise_scale", 0.0)});
    }
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorCode::ConfigError, std::string("waxman spec: ") + ex.what());
  }
  s.validate();
}

void TspCostSpec::validate() const {
  if (n_nodes < 3) fail(ErrorCode::ConfigError, "n_nodes must be >= 3");
  if (n_features < 1) fail(ErrorCode::ConfigError, "n_features must be >= 1");
  if (n_samples < 1) fail(ErrorCode::ConfigError, "n_samples must be >= 1");
  if (!(gamma >= 0.0) || !(weight_scale >= 0.0)) fail(ErrorCode::ConfigError, "gamma and weight_scale must be >= 0");
}

void to_json(nlohmann::json& j, const TspCostSpec& s) {
  j = {{"n_nodes", s.n_nodes},     {"n_features", s.n_features}, {"seed", s.seed},
       {"n_samples", s.n_samples}, {"gamma", s.gamma},           {"weight_scale", s.weight_scale}};
}

void from_json(const nlohmann::json& j, TspCostSpec& s) {
  try {
    s.n_nodes = json_get(j, "n_nodes", s.n_nodes);
    s.n_features = json_get(j, "n_features", s.n_features);
    s.seed = json_get(j, "seed", s.seed);
    s.n_samples = json_get(j, "n_samples", s.n_samples);
    s.gamma = json_get(j, "gamma", s.gamma);
    s.weight_scale = json_get(j, "weight_scale", s.weight_scale);
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorCode::ConfigError, std::string("tsp spec: ") + ex.what());
  }
  s.validate();
}

std::vector<Sample> Dataset::samples() const {
  std::vector<Sample> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.sample);
  return out;
}

// ---------------------------------------------------------------------------

double waxman_probability(double d, double d_max, double alpha, double beta_w) {
  return alpha * std::exp(-d / (beta_w * d_max));
}

Graph gen_waxman_graph(const WaxmanSpec& spec) {
  if (spec.n_nodes < 2) fail(ErrorCode::ConfigError, "n_nodes must be >= 2");
  if (!(spec.alpha > 0.0 && spec.alpha <= 1.0) || !(spec.beta_w > 0.0))
    fail(ErrorCode::ConfigError, "alpha must lie in (0, 1] and beta_w must be positive");
  const int n = spec.n_nodes;
  Rng pos_rng = make_rng(spec.seed, {kPositionStream});
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Point> pos(static_cast<std::size_t>(n));
  for (auto& p : pos) {
    p.x = unit(pos_rng);
    p.y = unit(pos_rng);
  }
  double d_max = 0.0;
  for (int u = 0; u < n; ++u)
    for (int v = u + 1; v < n; ++v) d_max = std::max(d_max, distance(pos[static_cast<std::size_t>(u)], pos[static_cast<std::size_t>(v)]));

  Rng link_rng = make_rng(spec.seed, {kLinkStream});
  std::vector<std::pair<int, int>> pairs;
  DisjointSets sets(n);
  for (int u = 0; u < n; ++u)
    for (int v = u + 1; v < n; ++v) {
      const double d = distance(pos[static_cast<std::size_t>(u)], pos[static_cast<std::size_t>(v)]);
      if (unit(link_rng) < waxman_probability(d, d_max, spec.alpha, spec.beta_w)) {
        pairs.emplace_back(u, v);
        sets.unite(u, v);
      }
    }

  std::vector<int> size(static_cast<std::size_t>(n), 0);
  for (int v = 0; v < n; ++v) ++size[static_cast<std::size_t>(sets.find(v))];
  const int root = static_cast<int>(std::max_element(size.begin(), size.end()) - size.begin());
  const int kept = size[static_cast<std::size_t>(root)];
  if (static_cast<double>(kept) < spec.min_component_fraction * n)
    fail(ErrorCode::DisconnectedBeyondThreshold,
         "largest component holds " + std::to_string(kept) + " of " + std::to_string(n) + " nodes");

  std::vector<int> new_id(static_cast<std::size_t>(n), -1);
  std::vector<NodeSpec> nodes;
  for (int v = 0; v < n; ++v)
    if (sets.find(v) == root) {
      new_id[static_cast<std::size_t>(v)] = static_cast<int>(nodes.size());
      nodes.push_back({static_cast<NodeId>(nodes.size()), pos[static_cast<std::size_t>(v)]});
    }
  std::vector<EdgeSpec> edges;
  for (auto [u, v] : pairs) {
    const int a = new_id[static_cast<std::size_t>(u)], b = new_id[static_cast<std::size_t>(v)];
    if (a < 0) continue;
    edges.push_back({a, b});
    edges.push_back({b, a});
  }
  return build_graph(nodes, edges, true);
}

std::vector<double> gen_agent_costs(const Graph& g, const AgentSpec& agent, double bias_width, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> y(g.num_edges());
  for (std::size_t e = 0; e < y.size(); ++e) {
    const auto id = static_cast<EdgeId>(e);
    double factor = 1.0;
    if (agent.bias != LatitudeBias::None) {
      const double offset = (0.5 - g.edge_midpoint(id).y) / bias_width;
      factor += agent.bias_strength * sigmoid(agent.bias == LatitudeBias::South ? offset : -offset);
    }
    y[e] = g.edge_length(id) * factor;
    if (agent.noise_scale > 0.0) y[e] *= std::exp(agent.noise_scale * normal(rng));
  }
  return y;
}

Requirement single_st_requirement(const Graph& g) {
  return Requirement::source_target(nearest_node(g, {0.05, 0.5}), nearest_node(g, {0.95, 0.5}));
}

Dataset gen_waxman_dataset(const WaxmanSpec& spec) {
  spec.validate();
  return gen_waxman_dataset(spec, std::make_shared<const Graph>(gen_waxman_graph(spec)));
}

Dataset gen_waxman_dataset(const WaxmanSpec& spec, std::shared_ptr<const Graph> graph) {
  spec.validate();
  const Graph& g = *graph;
  const Requirement fixed = single_st_requirement(g);
  Dataset ds{graph, {}};
  ds.records.reserve(static_cast<std::size_t>(spec.n_paths));
  std::uniform_int_distribution<std::size_t> pick_agent(0, spec.agents.size() - 1);
  const auto sources = nodes_in(g, spec.source_region);
  const auto targets = nodes_in(g, spec.target_region);
  std::uniform_int_distribution<std::size_t> pick_source(0, sources.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_target(0, targets.size() - 1);
  for (int i = 0; i < spec.n_paths; ++i) {
    Rng rng = make_rng(spec.seed, {kPathStream, static_cast<std::uint64_t>(i)});
    const std::size_t agent = pick_agent(rng);
    const auto y = gen_agent_costs(g, spec.agents[agent], spec.bias_width, rng);
    Requirement p = fixed;
    if (spec.requirement_mode == RequirementMode::MultiST) {
      for (int attempt = 0;; ++attempt) {
        if (attempt > 10000) fail(ErrorCode::ConfigError, "min_pair_distance admits no node pair");
        const NodeId s = sources[pick_source(rng)];
        const NodeId t = targets[pick_target(rng)];
        if (s != t && distance(g.position(s), g.position(t)) >= spec.min_pair_distance) {
          p = Requirement::source_target(s, t);
          break;
        }
      }
    }
    ds.records.push_back({{solve(SolverKind::Spp, g, y, p), p}, {{"agent", agent}}});
  }
  return ds;
}

// ---------------------------------------------------------------------------

Graph gen_tsp_graph(const TspCostSpec& spec) {
  spec.validate();
  Rng rng = make_rng(spec.seed, {kPositionStream});
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<NodeSpec> nodes;
  for (int v = 0; v < spec.n_nodes; ++v) {
    const double x = unit(rng);
    nodes.push_back({v, {x, unit(rng)}});
  }
  std::vector<EdgeSpec> edges;
  for (int u = 0; u < spec.n_nodes; ++u)
    for (int v = u + 1; v < spec.n_nodes; ++v) edges.push_back({u, v});
  return build_graph(nodes, edges, false);
}

TspCostModel::TspCostModel(const Graph& g, const TspCostSpec& spec) : gamma_(spec.gamma) {
  spec.validate();
  lengths_.resize(g.num_edges());
  for (std::size_t e = 0; e < lengths_.size(); ++e) lengths_[e] = g.edge_length(static_cast<EdgeId>(e));
  Rng rng = make_rng(spec.seed, {kWeightStream});
  std::normal_distribution<double> normal(0.0, spec.weight_scale / std::sqrt(static_cast<double>(spec.n_features)));
  weights_.resize(static_cast<Eigen::Index>(g.num_edges()), spec.n_features);
  for (Eigen::Index e = 0; e < weights_.rows(); ++e)
    for (Eigen::Index f = 0; f < weights_.cols(); ++f) weights_(e, f) = normal(rng);
}

std::vector<double> TspCostModel::costs(const Eigen::VectorXd& features) const {
  if (features.size() != weights_.cols()) fail(ErrorCode::DimensionMismatch, "feature vector has the wrong size");
  const Eigen::VectorXd act = weights_ * features;
  std::vector<double> y(lengths_.size());
  for (std::size_t e = 0; e < y.size(); ++e)
    y[e] = lengths_[e] * (1.0 + gamma_ * softplus(act(static_cast<Eigen::Index>(e))) / std::numbers::ln2);
  return y;
}

Dataset gen_tsp_dataset(const TspCostSpec& spec) {
  spec.validate();
  auto graph = std::make_shared<const Graph>(gen_tsp_graph(spec));
  const TspCostModel model(*graph, spec);
  const SolverKind kind = static_cast<std::size_t>(spec.n_nodes) <= kMaxExactTspNodes ? SolverKind::TspExact
                                                                                       : SolverKind::TspHeuristic;
  Dataset ds{graph, {}};
  ds.records.reserve(static_cast<std::size_t>(spec.n_samples));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int i = 0; i < spec.n_samples; ++i) {
    Rng rng = make_rng(spec.seed, {kFeatureStream, static_cast<std::uint64_t>(i)});
    Eigen::VectorXd u(spec.n_features);
    for (auto& v : u) v = normal(rng);
    const auto x = solve(kind, *graph, model.costs(u), Requirement::none());
    ds.records.push_back({{x, Requirement::none()}, {{"features", std::vector<double>(u.begin(), u.end())}}});
  }
  return ds;
}

// ---------------------------------------------------------------------------

std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, std::size_t n_train) {
  if (n_train > ds.records.size()) fail(ErrorCode::ConfigError, "n_train exceeds the dataset size");
  Dataset train{ds.graph, {ds.records.begin(), ds.records.begin() + static_cast<std::ptrdiff_t>(n_train)}};
  Dataset test{ds.graph, {ds.records.begin() + static_cast<std::ptrdiff_t>(n_train), ds.records.end()}};
  return {std::move(train), std::move(test)};
}

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path);
  for (const auto& r : ds.records) {
    const auto& p = r.sample.p;
    nlohmann::json j{{"edges", r.sample.x.edges()},
                     {"source", p.source ? nlohmann::json(*p.source) : nlohmann::json()},
                     {"target", p.target ? nlohmann::json(*p.target) : nlohmann::json()},
                     {"meta", r.meta}};
    out << j.dump() << '\n';
  }
}

Dataset load_dataset(const std::string& path, std::shared_ptr<const Graph> graph) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot read " + path);
  const Graph& g = *graph;
  Dataset ds{graph, {}};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    nlohmann::json j;
    std::vector<EdgeId> edges;
    Requirement p;
    try {
      j = nlohmann::json::parse(line);
      edges = j.at("edges").get<std::vector<EdgeId>>();
      const auto& s = j.at("source");
      const auto& t = j.at("target");
      if (s.is_null() != t.is_null()) fail(ErrorCode::ParseError, where + ": source and target must both be set or null");
      if (!s.is_null()) p = Requirement::source_target(s.get<NodeId>(), t.get<NodeId>());
    } catch (const nlohmann::json::exception& ex) {
      fail(ErrorCode::ParseError, where + ": " + ex.what());
    }
    if (p.is_source_target() && (!g.has_node(*p.source) || !g.has_node(*p.target)))
      fail(ErrorCode::GraphMismatch, where + ": requirement references a node outside the graph");
    SolutionVector x = SolutionVector::from_edges(g.num_edges(), edges);
    if (p.is_source_target() && *p.source == *p.target)
      fail(ErrorCode::InfeasibleRecord, where + ": source equals target");
    const auto rep = validate_solution(g, x, p);
    if (!rep.feasible) fail(ErrorCode::InfeasibleRecord, where + ": " + to_string(*rep.failure));
    ds.records.push_back({{std::move(x), p}, j.contains("meta") ? j.at("meta") : nlohmann::json::object()});
  }
  return ds;
}

// ---------------------------------------------------------------------------

std::optional<SolutionVector> splice_detour(const Graph& g, const SolutionVector& x, const Requirement& p, Rng& rng) {
  if (!g.directed() || !p.is_source_target()) return std::nullopt;
  std::vector<bool> on_path(g.num_nodes(), false);
  const auto edges = x.edges();
  for (EdgeId e : edges) {
    on_path[static_cast<std::size_t>(g.edge(e).src)] = true;
    on_path[static_cast<std::size_t>(g.edge(e).dst)] = true;
  }
  struct Splice {
    EdgeId removed, first, second;
  };
  std::vector<Splice> options;
  for (EdgeId e : edges) {
    const auto [id, u, v] = g.edge(e);
    for (const Arc& a : g.out_arcs(u)) {
      if (on_path[static_cast<std::size_t>(a.to)]) continue;
      if (auto back = g.find_edge(a.to, v)) options.push_back({id, a.edge, *back});
    }
  }
  if (options.empty()) return std::nullopt;
  const auto& s = options[std::uniform_int_distribution<std::size_t>(0, options.size() - 1)(rng)];
  SolutionVector out = x;
  out.set(static_cast<std::size_t>(s.removed), false);
  out.set(static_cast<std::size_t>(s.first));
  out.set(static_cast<std::size_t>(s.second));
  return out;
}

std::optional<SolutionVector> solve_avoiding_box(const Graph& g, std::span<const double> costs, const Requirement& p,
                                                 const Box& box) {
  if (!p.is_source_target()) fail(ErrorCode::RequirementMismatch, "box avoidance needs a source and target");
  if (box.contains(g.position(*p.source)) || box.contains(g.position(*p.target))) return std::nullopt;
  double total = 0.0;
  for (double c : costs) total += std::abs(c);
  const double blocked = 1e6 * (total + 1.0);
  std::vector<double> y(costs.begin(), costs.end());
  std::vector<bool> removed(g.num_edges(), false);
  for (const auto& e : g.edges())
    if (box.contains(g.position(e.src)) || box.contains(g.position(e.dst))) {
      removed[static_cast<std::size_t>(e.id)] = true;
      y[static_cast<std::size_t>(e.id)] = blocked;
    }
  const auto x = solve(SolverKind::Spp, g, y, p);
  for (EdgeId e : x.edges())
    if (removed[static_cast<std::size_t>(e)]) return std::nullopt;
  return x;
}

}  // namespace iolvm
