#include "iolvm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <unordered_set>

#include "iolvm/error.hpp"
#include "iolvm/rng.hpp"

namespace iolvm {

namespace {

void check_probability(std::span<const double> p, const char* name) {
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) fail(ErrorCode::NotNormalized, std::string(name) + " has a negative entry");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) fail(ErrorCode::NotNormalized, std::string(name) + " does not sum to 1");
}

double xlog2_ratio(double p, double q) { return p > 0.0 ? p * std::log2(p / q) : 0.0; }

void check_pairs(std::span<const ReconstructionPair> pairs) {
  if (pairs.empty()) fail(ErrorCode::EmptyInput, "no reconstruction pairs");
  for (const auto& pr : pairs)
    if (pr.predicted && pr.predicted->size() != pr.truth.size())
      fail(ErrorCode::LengthMismatch, "prediction length differs from truth");
}

std::size_t overlap(const SolutionVector& a, const SolutionVector& b) {
  std::size_t n = 0;
  for (std::size_t e = 0; e < a.size(); ++e) n += (a[e] && b[e]) ? 1 : 0;
  return n;
}

struct KMeansResult {
  std::vector<int> assignment;
  double inertia = 0.0;
};

// Lloyd iterations from k-means++ seeding.
KMeansResult kmeans_once(const Eigen::MatrixXd& pts, int k, Rng& rng) {
  const auto n = pts.cols();
  Eigen::MatrixXd centers(pts.rows(), k);
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  centers.col(0) = pts.col(pick(rng));
  Eigen::VectorXd d2(n);
  for (int c = 1; c < k; ++c) {
    for (Eigen::Index i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int j = 0; j < c; ++j) best = std::min(best, (pts.col(i) - centers.col(j)).squaredNorm());
      d2(i) = best;
    }
    const double total = d2.sum();
    Eigen::Index chosen = pick(rng);
    if (total > 0.0) {
      double r = std::uniform_real_distribution<double>(0.0, total)(rng);
      for (Eigen::Index i = 0; i < n; ++i) {
        r -= d2(i);
        if (r <= 0.0) {
          chosen = i;
          break;
        }
      }
    }
    centers.col(c) = pts.col(chosen);
  }

  KMeansResult res;
  res.assignment.assign(static_cast<std::size_t>(n), -1);
  for (int iter = 0; iter < 300; ++iter) {
    bool changed = false;
    res.inertia = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = (pts.col(i) - centers.col(c)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      res.inertia += best_d;
      auto& slot = res.assignment[static_cast<std::size_t>(i)];
      if (slot != best) {
        slot = best;
        changed = true;
      }
    }
    if (!changed) break;
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(pts.rows(), k);
    std::vector<int> sizes(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int c = res.assignment[static_cast<std::size_t>(i)];
      sums.col(c) += pts.col(i);
      ++sizes[static_cast<std::size_t>(c)];
    }
    for (int c = 0; c < k; ++c)
      if (sizes[static_cast<std::size_t>(c)] > 0) centers.col(c) = sums.col(c) / sizes[static_cast<std::size_t>(c)];
  }
  return res;
}

}  // namespace

double js_divergence(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail(ErrorCode::LengthMismatch, "js_divergence operands differ in length");
  check_probability(a, "freq_a");
  check_probability(b, "freq_b");
  double js = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double m = 0.5 * (a[i] + b[i]);
    js += 0.5 * xlog2_ratio(a[i], m) + 0.5 * xlog2_ratio(b[i], m);
  }
  return std::clamp(js, 0.0, 1.0);
}

double rmse_edge_usage(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail(ErrorCode::LengthMismatch, "rmse operands differ in length");
  if (a.empty()) fail(ErrorCode::EmptyInput, "rmse of empty vectors");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s / static_cast<double>(a.size()));
}

double iou(const SolutionVector& x, const SolutionVector& x_hat) {
  if (x.size() != x_hat.size()) fail(ErrorCode::LengthMismatch, "iou operands differ in length");
  std::size_t inter = 0, uni = 0;
  for (std::size_t e = 0; e < x.size(); ++e) {
    inter += (x[e] && x_hat[e]) ? 1 : 0;
    uni += (x[e] || x_hat[e]) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double full_match_rate(std::span<const ReconstructionPair> pairs) {
  check_pairs(pairs);
  std::size_t hits = 0;
  for (const auto& pr : pairs) hits += (pr.predicted && *pr.predicted == pr.truth) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

double edge_recall(std::span<const ReconstructionPair> pairs) {
  check_pairs(pairs);
  double sum = 0.0;
  for (const auto& pr : pairs) {
    const std::size_t truth = pr.truth.count();
    if (truth == 0) fail(ErrorCode::EmptyGroundTruth, "ground-truth solution has no edges");
    if (pr.predicted) sum += static_cast<double>(overlap(pr.truth, *pr.predicted)) / static_cast<double>(truth);
  }
  return sum / static_cast<double>(pairs.size());
}

double cluster_purity(const Eigen::MatrixXd& latents, std::span<const int> labels, int n_clusters,
                      std::uint64_t seed) {
  if (static_cast<std::size_t>(latents.cols()) != labels.size())
    fail(ErrorCode::LengthMismatch, "latents and labels differ in length");
  if (labels.empty()) fail(ErrorCode::EmptyInput, "no latents");
  if (n_clusters < 1) fail(ErrorCode::ConfigError, "n_clusters must be >= 1");
  const int k = std::min<int>(n_clusters, static_cast<int>(latents.cols()));

  Rng rng(seed);
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int r = 0; r < 20; ++r) {
    auto res = kmeans_once(latents, k, rng);
    if (res.inertia < best.inertia) best = std::move(res);
  }

  std::vector<std::map<int, std::size_t>> tally(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < labels.size(); ++i) ++tally[static_cast<std::size_t>(best.assignment[i])][labels[i]];
  std::size_t correct = 0;
  for (const auto& t : tally) {
    std::size_t top = 0;
    for (const auto& [label, count] : t) top = std::max(top, count);
    correct += top;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

std::size_t distinct_path_count(std::span<const SolutionVector> xs) {
  if (xs.empty()) fail(ErrorCode::EmptyInput, "no solutions");
  std::unordered_set<SolutionVector, SolutionHash> seen(xs.begin(), xs.end());
  return seen.size();
}

std::string metrics_csv_header() { return "metric,value,std,n,dataset,model,seed,config_hash"; }

std::string to_csv_row(const MetricReport& r) {
  std::ostringstream os;
  os.precision(10);
  os << r.name << ',' << r.value << ',';
  if (r.std) os << *r.std;
  os << ',' << r.n << ',' << r.dataset << ',' << r.model << ',' << r.seed << ',' << std::hex << r.config_hash;
  return os.str();
}

std::pair<double, double> mean_std(std::span<const double> v) {
  if (v.empty()) fail(ErrorCode::EmptyInput, "mean of nothing");
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, v.size() > 1 ? std::sqrt(s / static_cast<double>(v.size() - 1)) : 0.0};
}

}  // namespace iolvm
