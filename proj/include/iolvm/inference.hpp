#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "iolvm/model.hpp"

namespace iolvm {

/// Gaussian KDE over latent means with a per-dimension bandwidth.
struct LatentKde {
  Eigen::MatrixXd centers;    // k x n, one center per column
  Eigen::VectorXd bandwidth;  // k

  int dim() const { return static_cast<int>(centers.rows()); }
  std::size_t size() const { return static_cast<std::size_t>(centers.cols()); }
  double density(const Eigen::VectorXd& z) const;
};

/// Scott's rule n^(-1/(k+4)) * std per dimension. Dimensions with zero or
/// undefined spread get bandwidth 1. `bandwidth_override` replaces every
/// entry when given.
LatentKde kde_fit(const Eigen::MatrixXd& latents, std::optional<double> bandwidth_override = std::nullopt);

/// n draws (k x n): a uniformly chosen center plus bandwidth-scaled noise.
Eigen::MatrixXd kde_sample(const LatentKde& kde, std::size_t n, Rng& rng);

struct PathDistribution {
  /// Distinct solutions with counts, sorted by decreasing count.
  std::vector<std::pair<SolutionVector, std::size_t>> samples;
  std::size_t total = 0;

  /// Per-edge usage counts, each solution weighted by its count.
  std::vector<double> usage_counts() const;
  std::vector<double> usage_frequencies() const;
  std::vector<SolutionVector> expand() const;
};

/// Groups solutions into a distribution.
PathDistribution aggregate(std::span<const SolutionVector> xs);

/// n KDE draws, each decoded and solved without perturbation.
PathDistribution predict_distribution(const IoLvmModel& m, const LatentKde& kde, const Requirement& p,
                                      std::size_t n, Rng& rng, int threads = 1,
                                      const SolverOptions& opts = {});

/// encode -> posterior mean -> decode -> solve.
SolutionVector denoise(const IoLvmModel& m, const SolutionVector& x, const Requirement& p,
                       const SolverOptions& opts = {});

struct OutlierOptions {
  double tau = 0.02;
  std::size_t n_z = 200;
  std::size_t n_costs = 100;
  int threads = 1;
};

/// Latent-sampled cost vectors and inferred solutions shared by all scores
/// computed under one requirement.
struct OutlierReference {
  Eigen::MatrixXd costs;                  // |E| x n_costs
  std::vector<SolutionVector> inferred;   // n_z solutions
};

OutlierReference outlier_reference(const IoLvmModel& m, const LatentKde& kde, const Requirement& p,
                                   const OutlierOptions& opts, Rng& rng);

/// d_j = RMSE over cost draws of (<x, y_i> - <x_hat_j, y_i>), sorted ascending.
std::vector<double> outlier_distances(const OutlierReference& ref, const SolutionVector& x);

/// Linear-interpolation quantile of an ascending sample.
double quantile_sorted(std::span<const double> sorted, double tau);

double outlier_score(const OutlierReference& ref, const SolutionVector& x, double tau);

/// One-shot score: draws a fresh reference, then takes the tau-quantile.
double outlier_score(const IoLvmModel& m, const LatentKde& kde, const SolutionVector& x, const Requirement& p,
                     const OutlierOptions& opts, Rng& rng);

/// JSONL rows {"edge_ids": [...], "count": n}.
void write_distribution_jsonl(std::ostream& os, const PathDistribution& d);

/// CSV rows sample_id,z_1..z_k[,label].
void write_latents_csv(std::ostream& os, const Eigen::MatrixXd& latents,
                       std::span<const std::string> labels = {});

}  // namespace iolvm
