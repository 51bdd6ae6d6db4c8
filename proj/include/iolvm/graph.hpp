#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace iolvm {

using NodeId = int;
using EdgeId = int;

struct Point {
  double x = 0.0;
  double y = 0.0;
};

struct NodeSpec {
  NodeId id;
  Point pos;
};

struct EdgeSpec {
  NodeId src;
  NodeId dst;
};

struct Edge {
  EdgeId id;
  NodeId src;
  NodeId dst;
};

/// Adjacency entry: neighbour reached through `edge`.
struct Arc {
  NodeId to;
  EdgeId edge;
};

/// Immutable graph with dense node ids 0..|V|-1 and dense edge ids
/// 0..|E|-1 in construction order. Undirected graphs hold one canonical edge
/// per node pair; the adjacency lists then expose it in both directions.
class Graph {
 public:
  std::size_t num_nodes() const { return positions_.size(); }
  std::size_t num_edges() const { return edges_.size(); }
  bool directed() const { return directed_; }

  const Point& position(NodeId v) const { return positions_[static_cast<std::size_t>(v)]; }
  const std::vector<Point>& positions() const { return positions_; }
  const Edge& edge(EdgeId e) const { return edges_[static_cast<std::size_t>(e)]; }
  const std::vector<Edge>& edges() const { return edges_; }

  /// Outgoing arcs of `v`, sorted by neighbour id.
  std::span<const Arc> out_arcs(NodeId v) const;

  /// Edge joining u -> v (either orientation when undirected).
  std::optional<EdgeId> find_edge(NodeId u, NodeId v) const;

  bool has_node(NodeId v) const { return v >= 0 && static_cast<std::size_t>(v) < num_nodes(); }

  /// Euclidean length of an edge.
  double edge_length(EdgeId e) const;
  Point edge_midpoint(EdgeId e) const;

  /// Position rescaled into [0,1]^2 by the graph's bounding box.
  Point normalized_position(NodeId v) const;

  /// Stable content fingerprint.
  std::uint64_t fingerprint() const;

 private:
  friend Graph build_graph(std::span<const NodeSpec>, std::span<const EdgeSpec>, bool);

  bool directed_ = true;
  std::vector<Point> positions_;
  std::vector<Edge> edges_;
  std::vector<std::size_t> arc_offsets_;
  std::vector<Arc> arcs_;
  Point lo_{}, hi_{};
};

/// Builds a graph. Node ids must be a permutation of 0..n-1; edges receive
/// ids in input order.
Graph build_graph(std::span<const NodeSpec> nodes, std::span<const EdgeSpec> edges,
                  bool directed);

/// Binary edge-usage vector over a graph's edges.
class SolutionVector {
 public:
  SolutionVector() = default;
  explicit SolutionVector(std::size_t num_edges) : bits_(num_edges, 0) {}
  explicit SolutionVector(std::vector<std::uint8_t> bits);

  static SolutionVector from_edges(std::size_t num_edges, std::span<const EdgeId> edges);

  std::size_t size() const { return bits_.size(); }
  bool operator[](std::size_t e) const { return bits_[e] != 0; }
  void set(std::size_t e, bool on = true) { bits_[e] = on ? 1 : 0; }

  /// Number of selected edges (the L0 norm).
  std::size_t count() const;
  /// Selected edge ids in increasing order.
  std::vector<EdgeId> edges() const;
  const std::vector<std::uint8_t>& bits() const { return bits_; }

  friend bool operator==(const SolutionVector&, const SolutionVector&) = default;
  friend auto operator<=>(const SolutionVector&, const SolutionVector&) = default;

 private:
  std::vector<std::uint8_t> bits_;
};

struct SolutionHash {
  std::size_t operator()(const SolutionVector& x) const;
};

/// Start/target pair for path problems, or no requirement for tours.
struct Requirement {
  std::optional<NodeId> source;
  std::optional<NodeId> target;

  static Requirement none() { return {}; }
  static Requirement source_target(NodeId s, NodeId t) { return {s, t}; }
  bool is_source_target() const { return source.has_value(); }

  friend bool operator==(const Requirement&, const Requirement&) = default;
};

/// Throws InvalidRequirement unless s != t and both exist (SourceTarget),
/// or both are absent.
void check_requirement(const Graph& g, const Requirement& p);

enum class ValidationFailure {
  DisconnectedEdges,
  WrongEndpoints,
  NotACycle,
  NodeRevisited,
  NotHamiltonian,
};

std::string to_string(ValidationFailure f);

struct ValidationReport {
  bool feasible = true;
  std::optional<ValidationFailure> failure;

  static ValidationReport ok() { return {}; }
  static ValidationReport fail(ValidationFailure f) { return {false, f}; }
};

ValidationReport validate_solution(const Graph& g, const SolutionVector& x, const Requirement& p);

/// Per-edge usage counts summed over `xs`; normalized to a probability
/// vector when requested.
std::vector<double> edge_usage(std::span<const SolutionVector> xs, bool normalize);

/// ⟨y, x⟩ summed in edge-id order.
double solution_cost(std::span<const double> y, const SolutionVector& x);

nlohmann::json graph_to_json(const Graph& g);
Graph graph_from_json(const nlohmann::json& j);
void save_graph(const Graph& g, const std::string& path);
Graph load_graph(const std::string& path);

}  // namespace iolvm
