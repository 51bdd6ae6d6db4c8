#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "iolvm/graph.hpp"
#include "iolvm/model.hpp"
#include "iolvm/rng.hpp"

namespace iolvm {

enum class LatitudeBias { None, South, North };
enum class RequirementMode { SingleST, MultiST };

struct Box {
  double x_min, x_max, y_min, y_max;
  bool contains(const Point& q) const { return q.x >= x_min && q.x <= x_max && q.y >= y_min && q.y <= y_max; }
};

struct AgentSpec {
  LatitudeBias bias = LatitudeBias::None;
  double bias_strength = 0.0;
  double noise_scale = 0.0;
};

struct WaxmanSpec {
  int n_nodes = 200;
  double alpha = 0.05;
  double beta_w = 0.6;
  std::uint64_t seed = 0;
  std::vector<AgentSpec> agents;
  int n_paths = 1500;
  RequirementMode requirement_mode = RequirementMode::SingleST;
  /// Width of the latitude sigmoid.
  double bias_width = 0.2;
  /// Minimum Euclidean separation of random (s, t) pairs in MultiST mode.
  double min_pair_distance = 0.5;
  /// Optional MultiST regions the source and target are drawn from.
  std::optional<Box> source_region;
  std::optional<Box> target_region;
  /// The giant component must keep at least this share of the nodes.
  double min_component_fraction = 0.9;

  void validate() const;
};

void to_json(nlohmann::json& j, const WaxmanSpec& s);
void from_json(const nlohmann::json& j, WaxmanSpec& s);

struct TspCostSpec {
  int n_nodes = 14;
  int n_features = 3;
  std::uint64_t seed = 0;
  int n_samples = 3000;
  /// Amplitude of the feature-driven cost inflation.
  double gamma = 1.0;
  /// Standard deviation of <w_e, u> across samples.
  double weight_scale = 1.0;

  void validate() const;
};

void to_json(nlohmann::json& j, const TspCostSpec& s);
void from_json(const nlohmann::json& j, TspCostSpec& s);

struct Record {
  Sample sample;
  nlohmann::json meta = nlohmann::json::object();
};

struct Dataset {
  std::shared_ptr<const Graph> graph;
  std::vector<Record> records;

  /// Training view: (x, p) pairs only.
  std::vector<Sample> samples() const;
  std::size_t size() const { return records.size(); }
};

/// Waxman graph over uniform positions in the unit square; each accepted
/// node pair yields arcs u->v and v->u. Only the largest connected component
/// is kept, with dense re-indexing.
Graph gen_waxman_graph(const WaxmanSpec& spec);

/// Connection probability alpha * exp(-d / (beta_w * d_max)).
double waxman_probability(double d, double d_max, double alpha, double beta_w);

/// Euclidean length times (1 + strength * sigmoid(±(0.5 - y_mid) / width)),
/// then times exp(noise_scale * N(0, 1)) per edge.
std::vector<double> gen_agent_costs(const Graph& g, const AgentSpec& agent, double bias_width, Rng& rng);

/// Fixed pair for SingleST: nodes nearest to (0.05, 0.5) and (0.95, 0.5).
Requirement single_st_requirement(const Graph& g);

/// Paths solved under noisy agent costs; agent id stored in meta.
Dataset gen_waxman_dataset(const WaxmanSpec& spec);
Dataset gen_waxman_dataset(const WaxmanSpec& spec, std::shared_ptr<const Graph> graph);

/// Complete undirected graph over uniform positions.
Graph gen_tsp_graph(const TspCostSpec& spec);

/// Hidden-feature TSP costs: y_e = d_e * (1 + gamma * softplus(<w_e, u>) / ln 2).
class TspCostModel {
 public:
  TspCostModel(const Graph& g, const TspCostSpec& spec);
  std::vector<double> costs(const Eigen::VectorXd& features) const;
  const Eigen::MatrixXd& weights() const { return weights_; }

 private:
  std::vector<double> lengths_;
  Eigen::MatrixXd weights_;  // |E| x h
  double gamma_;
};

/// Tours solved on hidden-feature costs; features stored in meta.
Dataset gen_tsp_dataset(const TspCostSpec& spec);

/// First n_train records vs the rest.
std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, std::size_t n_train);

/// One JSON object per line: {"edges", "source", "target", "meta"}.
void save_dataset(const Dataset& ds, const std::string& path);
/// Validates every record against `graph`.
Dataset load_dataset(const std::string& path, std::shared_ptr<const Graph> graph);

/// Replaces one edge u->v of a path with u->w->v through a node w not on the
/// path. Returns nothing when no such splice exists.
std::optional<SolutionVector> splice_detour(const Graph& g, const SolutionVector& x, const Requirement& p, Rng& rng);

/// Shortest path under `costs` avoiding every edge with an endpoint inside
/// `box`. Returns nothing when s or t lies inside or no path remains.
std::optional<SolutionVector> solve_avoiding_box(const Graph& g, std::span<const double> costs, const Requirement& p,
                                                 const Box& box);

}  // namespace iolvm
