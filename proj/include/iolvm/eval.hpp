#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "iolvm/graph.hpp"

namespace iolvm {

/// Base-2 Jensen-Shannon divergence of two probability vectors, in [0, 1].
double js_divergence(std::span<const double> freq_a, std::span<const double> freq_b);

/// sqrt(mean_e (a_e - b_e)^2).
double rmse_edge_usage(std::span<const double> counts_a, std::span<const double> counts_b);

/// |x ∩ x_hat| / |x ∪ x_hat|; 1 when both are empty.
double iou(const SolutionVector& x, const SolutionVector& x_hat);

/// Reference solution paired with a prediction; an absent prediction stands
/// for an infeasible output.
struct ReconstructionPair {
  SolutionVector truth;
  std::optional<SolutionVector> predicted;
};

double full_match_rate(std::span<const ReconstructionPair> pairs);
double edge_recall(std::span<const ReconstructionPair> pairs);

/// k-means (fixed seed, 20 restarts) followed by majority-label purity.
/// `latents` holds one point per column.
double cluster_purity(const Eigen::MatrixXd& latents, std::span<const int> labels, int n_clusters,
                      std::uint64_t seed = 0);

std::size_t distinct_path_count(std::span<const SolutionVector> xs);

struct MetricReport {
  std::string name;
  double value = 0.0;
  std::optional<double> std;
  std::size_t n = 1;
  std::string dataset;
  std::string model;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
};

std::string metrics_csv_header();
std::string to_csv_row(const MetricReport& r);

/// Mean and sample standard deviation.
std::pair<double, double> mean_std(std::span<const double> v);

}  // namespace iolvm
