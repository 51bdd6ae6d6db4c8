#include "iolvm/inference.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>

#include <nlohmann/json.hpp>

#include "iolvm/error.hpp"
#include "iolvm/parallel.hpp"

namespace iolvm {

double LatentKde::density(const Eigen::VectorXd& z) const {
  if (z.size() != centers.rows()) fail(ErrorCode::DimensionMismatch, "density query has the wrong dimension");
  const double norm = std::pow(2.0 * std::numbers::pi, -0.5 * static_cast<double>(dim())) / bandwidth.prod();
  double sum = 0.0;
  for (Eigen::Index c = 0; c < centers.cols(); ++c) {
    const double q = ((z - centers.col(c)).array() / bandwidth.array()).square().sum();
    sum += std::exp(-0.5 * q);
  }
  return norm * sum / static_cast<double>(centers.cols());
}

LatentKde kde_fit(const Eigen::MatrixXd& latents, std::optional<double> bandwidth_override) {
  if (latents.cols() == 0 || latents.rows() == 0) fail(ErrorCode::EmptyInput, "KDE needs at least one latent");
  if (!latents.allFinite()) fail(ErrorCode::NonFiniteCost, "KDE latents must be finite");
  LatentKde kde{latents, Eigen::VectorXd::Ones(latents.rows())};
  const auto n = static_cast<double>(latents.cols());
  const auto k = static_cast<double>(latents.rows());
  if (bandwidth_override) {
    if (!(*bandwidth_override > 0.0) || !std::isfinite(*bandwidth_override))
      fail(ErrorCode::ConfigError, "KDE bandwidth must be positive");
    kde.bandwidth.setConstant(*bandwidth_override);
    return kde;
  }
  if (latents.cols() < 2) return kde;
  const double factor = std::pow(n, -1.0 / (k + 4.0));
  const Eigen::VectorXd mean = latents.rowwise().mean();
  for (Eigen::Index d = 0; d < latents.rows(); ++d) {
    const double var = (latents.row(d).array() - mean(d)).square().sum() / (n - 1.0);
    const double h = factor * std::sqrt(var);
    if (h > 0.0 && std::isfinite(h)) kde.bandwidth(d) = h;
  }
  return kde;
}

Eigen::MatrixXd kde_sample(const LatentKde& kde, std::size_t n, Rng& rng) {
  if (n == 0) fail(ErrorCode::EmptyInput, "kde_sample needs n >= 1");
  std::uniform_int_distribution<Eigen::Index> pick(0, kde.centers.cols() - 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd out(kde.centers.rows(), static_cast<Eigen::Index>(n));
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    const Eigen::Index c = pick(rng);
    for (Eigen::Index d = 0; d < out.rows(); ++d) out(d, j) = kde.centers(d, c) + kde.bandwidth(d) * normal(rng);
  }
  return out;
}

std::vector<double> PathDistribution::usage_counts() const {
  if (samples.empty()) fail(ErrorCode::EmptyInput, "empty path distribution");
  std::vector<double> u(samples.front().first.size(), 0.0);
  for (const auto& [x, count] : samples)
    for (std::size_t e = 0; e < x.size(); ++e)
      if (x[e]) u[e] += static_cast<double>(count);
  return u;
}

std::vector<double> PathDistribution::usage_frequencies() const {
  auto u = usage_counts();
  double s = 0.0;
  for (double v : u) s += v;
  if (s > 0.0)
    for (double& v : u) v /= s;
  return u;
}

std::vector<SolutionVector> PathDistribution::expand() const {
  std::vector<SolutionVector> out;
  out.reserve(total);
  for (const auto& [x, count] : samples) out.insert(out.end(), count, x);
  return out;
}

PathDistribution aggregate(std::span<const SolutionVector> xs) {
  std::map<SolutionVector, std::size_t> counts;
  for (const auto& x : xs) ++counts[x];
  PathDistribution d;
  d.total = xs.size();
  d.samples.assign(counts.begin(), counts.end());
  std::stable_sort(d.samples.begin(), d.samples.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  return d;
}

namespace {

std::vector<SolutionVector> solve_columns(const IoLvmModel& m, const Eigen::MatrixXd& costs, const Requirement& p,
                                          int threads, const SolverOptions& opts) {
  std::vector<SolutionVector> xs(static_cast<std::size_t>(costs.cols()));
  const auto rows = static_cast<std::size_t>(costs.rows());
  parallel_for(xs.size(), threads, [&](std::size_t j) {
    xs[j] = solve(m.solver_kind(), m.graph(), {costs.col(static_cast<Eigen::Index>(j)).data(), rows}, p, opts);
  });
  return xs;
}

}  // namespace

PathDistribution predict_distribution(const IoLvmModel& m, const LatentKde& kde, const Requirement& p,
                                      std::size_t n, Rng& rng, int threads, const SolverOptions& opts) {
  if (kde.dim() != m.latent_dim()) fail(ErrorCode::DimensionMismatch, "KDE dimension differs from the model");
  const Eigen::MatrixXd z = kde_sample(kde, n, rng);
  const auto xs = solve_columns(m, m.decode_costs(z), p, threads, opts);
  return aggregate(xs);
}

SolutionVector denoise(const IoLvmModel& m, const SolutionVector& x, const Requirement& p, const SolverOptions& opts) {
  const auto rep = validate_solution(m.graph(), x, p);
  if (!rep.feasible) fail(ErrorCode::InfeasibleSample, "denoise input is infeasible");
  return m.reconstruct(x, p, opts);
}

OutlierReference outlier_reference(const IoLvmModel& m, const LatentKde& kde, const Requirement& p,
                                   const OutlierOptions& opts, Rng& rng) {
  if (opts.n_z == 0 || opts.n_costs == 0) fail(ErrorCode::ConfigError, "n_z and n_costs must be positive");
  if (kde.dim() != m.latent_dim()) fail(ErrorCode::DimensionMismatch, "KDE dimension differs from the model");
  OutlierReference ref;
  ref.costs = m.decode_costs(kde_sample(kde, opts.n_costs, rng));
  ref.inferred = solve_columns(m, m.decode_costs(kde_sample(kde, opts.n_z, rng)), p, opts.threads, {});
  return ref;
}

std::vector<double> outlier_distances(const OutlierReference& ref, const SolutionVector& x) {
  if (static_cast<Eigen::Index>(x.size()) != ref.costs.rows())
    fail(ErrorCode::LengthMismatch, "solution length differs from the cost draws");
  auto indicator = [](const SolutionVector& s) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(s.size()));
    for (std::size_t e = 0; e < s.size(); ++e) v(static_cast<Eigen::Index>(e)) = s[e] ? 1.0 : 0.0;
    return v;
  };
  const Eigen::RowVectorXd observed = indicator(x).transpose() * ref.costs;
  std::vector<double> d;
  d.reserve(ref.inferred.size());
  for (const auto& xh : ref.inferred) {
    const Eigen::RowVectorXd inferred = indicator(xh).transpose() * ref.costs;
    d.push_back(std::sqrt((observed - inferred).array().square().mean()));
  }
  std::sort(d.begin(), d.end());
  return d;
}

double quantile_sorted(std::span<const double> sorted, double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) fail(ErrorCode::InvalidTau, "tau must lie in (0, 1]");
  if (sorted.empty()) fail(ErrorCode::EmptyInput, "quantile of nothing");
  const double pos = tau * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

double outlier_score(const OutlierReference& ref, const SolutionVector& x, double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) fail(ErrorCode::InvalidTau, "tau must lie in (0, 1]");
  const auto d = outlier_distances(ref, x);
  return quantile_sorted(d, tau);
}

double outlier_score(const IoLvmModel& m, const LatentKde& kde, const SolutionVector& x, const Requirement& p,
                     const OutlierOptions& opts, Rng& rng) {
  if (!(opts.tau > 0.0 && opts.tau <= 1.0)) fail(ErrorCode::InvalidTau, "tau must lie in (0, 1]");
  if (!validate_solution(m.graph(), x, p).feasible) fail(ErrorCode::InfeasibleSample, "scored path is infeasible");
  return outlier_score(outlier_reference(m, kde, p, opts, rng), x, opts.tau);
}

void write_distribution_jsonl(std::ostream& os, const PathDistribution& d) {
  for (const auto& [x, count] : d.samples)
    os << nlohmann::json{{"edge_ids", x.edges()}, {"count", count}}.dump() << '\n';
}

void write_latents_csv(std::ostream& os, const Eigen::MatrixXd& latents, std::span<const std::string> labels) {
  if (!labels.empty() && labels.size() != static_cast<std::size_t>(latents.cols()))
    fail(ErrorCode::LengthMismatch, "labels differ in length from latents");
  os << "sample_id";
  for (Eigen::Index d = 0; d < latents.rows(); ++d) os << ",z_" << d + 1;
  if (!labels.empty()) os << ",label";
  os << '\n';
  os.precision(10);
  for (Eigen::Index i = 0; i < latents.cols(); ++i) {
    os << i;
    for (Eigen::Index d = 0; d < latents.rows(); ++d) os << ',' << latents(d, i);
    if (!labels.empty()) os << ',' << labels[static_cast<std::size_t>(i)];
    os << '\n';
  }
}

}  // namespace iolvm
