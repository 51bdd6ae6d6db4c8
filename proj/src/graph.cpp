#include "iolvm/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <utility>

#include "iolvm/error.hpp"
#include "iolvm/rng.hpp"

namespace iolvm {

namespace {

std::string describe_edge(std::size_t i, const EdgeSpec& e) {
  std::ostringstream os;
  os << "edge #" << i << " (" << e.src << "->" << e.dst << ")";
  return os.str();
}

}  // namespace

Graph build_graph(std::span<const NodeSpec> nodes, std::span<const EdgeSpec> edges,
                  bool directed) {
  const std::size_t n = nodes.size();
  Graph g;
  g.directed_ = directed;
  g.positions_.assign(n, Point{});
  std::vector<bool> seen(n, false);
  for (const auto& node : nodes) {
    if (node.id < 0 || static_cast<std::size_t>(node.id) >= n) {
      // An id outside 0..n-1 in a list of n nodes means either a gap or a duplicate.
      std::set<NodeId> ids;
      for (const auto& m : nodes) {
        if (!ids.insert(m.id).second)
          fail(ErrorCode::DuplicateNode, "duplicate node id " + std::to_string(m.id));
      }
      fail(ErrorCode::NonDenseIds, "node ids must be 0..n-1, got " + std::to_string(node.id));
    }
    const auto idx = static_cast<std::size_t>(node.id);
    if (seen[idx]) fail(ErrorCode::DuplicateNode, "duplicate node id " + std::to_string(node.id));
    if (!std::isfinite(node.pos.x) || !std::isfinite(node.pos.y))
      fail(ErrorCode::ParseError, "non-finite position for node " + std::to_string(node.id));
    seen[idx] = true;
    g.positions_[idx] = node.pos;
  }

  std::set<std::pair<NodeId, NodeId>> pairs;
  g.edges_.reserve(edges.size());
  std::vector<std::size_t> degree(n, 0);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const auto& e = edges[i];
    if (!g.has_node(e.src) || !g.has_node(e.dst))
      fail(ErrorCode::DanglingEdge, describe_edge(i, e) + " references a missing node");
    if (e.src == e.dst) fail(ErrorCode::SelfLoop, describe_edge(i, e) + " is a self-loop");
    auto key = directed ? std::pair{e.src, e.dst}
                        : std::pair{std::min(e.src, e.dst), std::max(e.src, e.dst)};
    if (!pairs.insert(key).second)
      fail(ErrorCode::DuplicateEdge, describe_edge(i, e) + " duplicates an earlier edge");
    g.edges_.push_back({static_cast<EdgeId>(i), e.src, e.dst});
    ++degree[static_cast<std::size_t>(e.src)];
    if (!directed) ++degree[static_cast<std::size_t>(e.dst)];
  }

  g.arc_offsets_.assign(n + 1, 0);
  for (std::size_t v = 0; v < n; ++v) g.arc_offsets_[v + 1] = g.arc_offsets_[v] + degree[v];
  g.arcs_.resize(g.arc_offsets_[n]);
  std::vector<std::size_t> fill(g.arc_offsets_.begin(), g.arc_offsets_.end() - 1);
  for (const auto& e : g.edges_) {
    g.arcs_[fill[static_cast<std::size_t>(e.src)]++] = {e.dst, e.id};
    if (!directed) g.arcs_[fill[static_cast<std::size_t>(e.dst)]++] = {e.src, e.id};
  }
  for (std::size_t v = 0; v < n; ++v) {
    std::sort(g.arcs_.begin() + static_cast<std::ptrdiff_t>(g.arc_offsets_[v]),
              g.arcs_.begin() + static_cast<std::ptrdiff_t>(g.arc_offsets_[v + 1]),
              [](const Arc& a, const Arc& b) { return a.to < b.to; });
  }

  if (n > 0) {
    g.lo_ = g.hi_ = g.positions_[0];
    for (const auto& p : g.positions_) {
      g.lo_.x = std::min(g.lo_.x, p.x);
      g.lo_.y = std::min(g.lo_.y, p.y);
      g.hi_.x = std::max(g.hi_.x, p.x);
      g.hi_.y = std::max(g.hi_.y, p.y);
    }
  }
  return g;
}

std::span<const Arc> Graph::out_arcs(NodeId v) const {
  const auto i = static_cast<std::size_t>(v);
  return {arcs_.data() + arc_offsets_[i], arc_offsets_[i + 1] - arc_offsets_[i]};
}

std::optional<EdgeId> Graph::find_edge(NodeId u, NodeId v) const {
  if (!has_node(u) || !has_node(v)) return std::nullopt;
  auto arcs = out_arcs(u);
  auto it = std::lower_bound(arcs.begin(), arcs.end(), v,
                             [](const Arc& a, NodeId target) { return a.to < target; });
  if (it != arcs.end() && it->to == v) return it->edge;
  return std::nullopt;
}

double Graph::edge_length(EdgeId e) const {
  const auto& ed = edge(e);
  const auto& a = position(ed.src);
  const auto& b = position(ed.dst);
  return std::hypot(a.x - b.x, a.y - b.y);
}

Point Graph::edge_midpoint(EdgeId e) const {
  const auto& ed = edge(e);
  const auto& a = position(ed.src);
  const auto& b = position(ed.dst);
  return {0.5 * (a.x + b.x), 0.5 * (a.y + b.y)};
}

Point Graph::normalized_position(NodeId v) const {
  const auto& p = position(v);
  const double wx = hi_.x - lo_.x;
  const double wy = hi_.y - lo_.y;
  return {wx > 0 ? (p.x - lo_.x) / wx : 0.5, wy > 0 ? (p.y - lo_.y) / wy : 0.5};
}

std::uint64_t Graph::fingerprint() const {
  std::uint64_t h = fnv1a(&directed_, sizeof(directed_));
  h = fnv1a(positions_.data(), positions_.size() * sizeof(Point), h);
  for (const auto& e : edges_) {
    h = fnv1a(&e.src, sizeof(e.src), h);
    h = fnv1a(&e.dst, sizeof(e.dst), h);
  }
  return h;
}

// ---------------------------------------------------------------------------

SolutionVector::SolutionVector(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
  for (auto& b : bits_) {
    if (b > 1) fail(ErrorCode::ParseError, "solution bits must be 0 or 1");
  }
}

SolutionVector SolutionVector::from_edges(std::size_t num_edges, std::span<const EdgeId> edges) {
  SolutionVector x(num_edges);
  for (EdgeId e : edges) {
    if (e < 0 || static_cast<std::size_t>(e) >= num_edges)
      fail(ErrorCode::InfeasibleRecord, "edge id " + std::to_string(e) + " out of range");
    x.set(static_cast<std::size_t>(e));
  }
  return x;
}

std::size_t SolutionVector::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

std::vector<EdgeId> SolutionVector::edges() const {
  std::vector<EdgeId> out;
  for (std::size_t e = 0; e < bits_.size(); ++e)
    if (bits_[e]) out.push_back(static_cast<EdgeId>(e));
  return out;
}

std::size_t SolutionHash::operator()(const SolutionVector& x) const {
  return static_cast<std::size_t>(fnv1a(x.bits().data(), x.bits().size()));
}

void check_requirement(const Graph& g, const Requirement& p) {
  if (p.source.has_value() != p.target.has_value())
    fail(ErrorCode::InvalidRequirement, "requirement needs both source and target");
  if (!p.source) return;
  if (!g.has_node(*p.source) || !g.has_node(*p.target))
    fail(ErrorCode::InvalidRequirement, "requirement references a missing node");
  if (*p.source == *p.target)
    fail(ErrorCode::InvalidRequirement, "requirement source equals target");
}

std::string to_string(ValidationFailure f) {
  switch (f) {
    case ValidationFailure::DisconnectedEdges: return "DisconnectedEdges";
    case ValidationFailure::WrongEndpoints: return "WrongEndpoints";
    case ValidationFailure::NotACycle: return "NotACycle";
    case ValidationFailure::NodeRevisited: return "NodeRevisited";
    case ValidationFailure::NotHamiltonian: return "NotHamiltonian";
  }
  return "Unknown";
}

namespace {

// Per-node degrees restricted to the selected edges. For undirected graphs
// `in` mirrors `out` and both hold the undirected degree.
struct Degrees {
  std::vector<int> out, in;
};

Degrees selected_degrees(const Graph& g, const SolutionVector& x) {
  Degrees d{std::vector<int>(g.num_nodes(), 0), std::vector<int>(g.num_nodes(), 0)};
  for (const auto& e : g.edges()) {
    if (!x[static_cast<std::size_t>(e.id)]) continue;
    if (g.directed()) {
      ++d.out[static_cast<std::size_t>(e.src)];
      ++d.in[static_cast<std::size_t>(e.dst)];
    } else {
      ++d.out[static_cast<std::size_t>(e.src)];
      ++d.out[static_cast<std::size_t>(e.dst)];
    }
  }
  if (!g.directed()) d.in = d.out;
  return d;
}

// Follows selected edges from `start` without reusing an edge, stopping at
// `stop` (if given) or when no unused selected edge leaves the current node.
// Returns (last node, number of edges walked).
std::pair<NodeId, std::size_t> walk(const Graph& g, const SolutionVector& x, NodeId start,
                                    std::optional<NodeId> stop) {
  std::vector<bool> used(g.num_edges(), false);
  NodeId v = start;
  std::size_t steps = 0;
  while (true) {
    if (stop && v == *stop && steps > 0) break;
    bool moved = false;
    for (const auto& arc : g.out_arcs(v)) {
      const auto e = static_cast<std::size_t>(arc.edge);
      if (x[e] && !used[e]) {
        used[e] = true;
        v = arc.to;
        ++steps;
        moved = true;
        break;
      }
    }
    if (!moved) break;
    if (!stop && v == start) break;
  }
  return {v, steps};
}

ValidationReport validate_path(const Graph& g, const SolutionVector& x, NodeId s, NodeId t) {
  const auto d = selected_degrees(g, x);
  const int cap = g.directed() ? 1 : 2;
  for (std::size_t v = 0; v < g.num_nodes(); ++v) {
    if (d.out[v] > cap || d.in[v] > cap) return ValidationReport::fail(ValidationFailure::NodeRevisited);
  }
  const auto si = static_cast<std::size_t>(s);
  const auto ti = static_cast<std::size_t>(t);
  if (g.directed()) {
    if (d.out[si] != 1 || d.in[si] != 0 || d.in[ti] != 1 || d.out[ti] != 0)
      return ValidationReport::fail(ValidationFailure::WrongEndpoints);
  } else {
    if (d.out[si] != 1 || d.out[ti] != 1)
      return ValidationReport::fail(ValidationFailure::WrongEndpoints);
  }
  const auto [end, steps] = walk(g, x, s, t);
  if (end != t || steps != x.count()) return ValidationReport::fail(ValidationFailure::DisconnectedEdges);
  return ValidationReport::ok();
}

ValidationReport validate_cycle(const Graph& g, const SolutionVector& x) {
  const auto d = selected_degrees(g, x);
  const int want = g.directed() ? 1 : 2;
  for (std::size_t v = 0; v < g.num_nodes(); ++v) {
    if (d.out[v] > want || d.in[v] > want) return ValidationReport::fail(ValidationFailure::NodeRevisited);
  }
  for (std::size_t v = 0; v < g.num_nodes(); ++v) {
    if (d.out[v] == 0 && d.in[v] == 0) return ValidationReport::fail(ValidationFailure::NotHamiltonian);
  }
  for (std::size_t v = 0; v < g.num_nodes(); ++v) {
    if (d.out[v] != want || d.in[v] != want) return ValidationReport::fail(ValidationFailure::NotACycle);
  }
  if (g.num_nodes() < (g.directed() ? 2u : 3u)) return ValidationReport::fail(ValidationFailure::NotACycle);
  const auto [end, steps] = walk(g, x, 0, std::nullopt);
  if (end != 0 || steps != g.num_nodes() || x.count() != g.num_nodes())
    return ValidationReport::fail(ValidationFailure::NotACycle);
  return ValidationReport::ok();
}

}  // namespace

ValidationReport validate_solution(const Graph& g, const SolutionVector& x, const Requirement& p) {
  if (x.size() != g.num_edges())
    fail(ErrorCode::LengthMismatch, "solution length " + std::to_string(x.size()) +
                                        " != |E| = " + std::to_string(g.num_edges()));
  check_requirement(g, p);
  if (p.is_source_target()) return validate_path(g, x, *p.source, *p.target);
  return validate_cycle(g, x);
}

std::vector<double> edge_usage(std::span<const SolutionVector> xs, bool normalize) {
  if (xs.empty()) fail(ErrorCode::EmptyInput, "edge_usage needs at least one solution");
  const std::size_t m = xs.front().size();
  std::vector<double> counts(m, 0.0);
  for (const auto& x : xs) {
    if (x.size() != m) fail(ErrorCode::LengthMismatch, "solutions of different lengths");
    for (std::size_t e = 0; e < m; ++e) counts[e] += x[e] ? 1.0 : 0.0;
  }
  if (normalize) {
    const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
    if (total <= 0.0) fail(ErrorCode::EmptyInput, "cannot normalize usage of empty solutions");
    for (auto& c : counts) c /= total;
  }
  return counts;
}

double solution_cost(std::span<const double> y, const SolutionVector& x) {
  if (y.size() != x.size()) fail(ErrorCode::LengthMismatch, "cost and solution lengths differ");
  double s = 0.0;
  for (std::size_t e = 0; e < y.size(); ++e)
    if (x[e]) s += y[e];
  return s;
}

// ---------------------------------------------------------------------------

nlohmann::json graph_to_json(const Graph& g) {
  nlohmann::json j;
  j["directed"] = g.directed();
  auto& nodes = j["nodes"] = nlohmann::json::array();
  for (std::size_t v = 0; v < g.num_nodes(); ++v) {
    const auto& p = g.position(static_cast<NodeId>(v));
    nodes.push_back({{"id", v}, {"x", p.x}, {"y", p.y}});
  }
  auto& edges = j["edges"] = nlohmann::json::array();
  for (const auto& e : g.edges()) edges.push_back({{"id", e.id}, {"src", e.src}, {"dst", e.dst}});
  return j;
}

Graph graph_from_json(const nlohmann::json& j) {
  try {
    std::vector<NodeSpec> nodes;
    for (const auto& n : j.at("nodes"))
      nodes.push_back({n.at("id").get<NodeId>(), {n.at("x").get<double>(), n.at("y").get<double>()}});
    const auto& jedges = j.at("edges");
    std::vector<EdgeSpec> edges(jedges.size());
    std::vector<bool> seen(jedges.size(), false);
    for (const auto& e : jedges) {
      const auto id = e.at("id").get<long long>();
      if (id < 0 || static_cast<std::size_t>(id) >= jedges.size() || seen[static_cast<std::size_t>(id)])
        fail(ErrorCode::NonDenseIds, "edge ids must be dense and unique, got " + std::to_string(id));
      seen[static_cast<std::size_t>(id)] = true;
      edges[static_cast<std::size_t>(id)] = {e.at("src").get<NodeId>(), e.at("dst").get<NodeId>()};
    }
    return build_graph(nodes, edges, j.at("directed").get<bool>());
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorCode::ParseError, std::string("graph json: ") + ex.what());
  }
}

void save_graph(const Graph& g, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path);
  out << graph_to_json(g).dump() << '\n';
}

Graph load_graph(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot read " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorCode::ParseError, path + ": " + ex.what());
  }
  return graph_from_json(j);
}

}  // namespace iolvm
