#include <algorithm>

#include "helpers.hpp"
#include "iolvm/eval.hpp"

using namespace iolvm;
using namespace testutil;

namespace {

// Textbook form: (KL(a||m) + KL(b||m)) / 2 in bits.
double jsd_reference(const std::vector<double>& a, const std::vector<double>& b) {
  double out = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double m = 0.5 * (a[i] + b[i]);
    if (a[i] > 0) out += 0.5 * a[i] * std::log2(a[i] / m);
    if (b[i] > 0) out += 0.5 * b[i] * std::log2(b[i] / m);
  }
  return out;
}

}  // namespace

TEST_SUITE("eval") {
  TEST_CASE("jensen-shannon examples") {
    const std::vector<double> a{0.5, 0.5, 0.0}, b{0.0, 0.0, 1.0}, c{1.0, 0.0, 0.0};
    CHECK(js_divergence(a, a) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(js_divergence(a, b) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(js_divergence(a, c) == doctest::Approx(jsd_reference(a, c)).epsilon(1e-14));
    CHECK(js_divergence(a, c) == doctest::Approx(js_divergence(c, a)).epsilon(1e-15));
  }

  TEST_CASE("jensen-shannon against the textbook form on random inputs") {
    Rng rng(31);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int t = 0; t < 100; ++t) {
      std::vector<double> a(12), b(12);
      double sa = 0, sb = 0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] = unit(rng) < 0.2 ? 0.0 : unit(rng);
        b[i] = unit(rng) < 0.2 ? 0.0 : unit(rng);
        sa += a[i];
        sb += b[i];
      }
      for (auto& v : a) v /= sa;
      for (auto& v : b) v /= sb;
      const double d = js_divergence(a, b);
      CHECK(d >= 0.0);
      CHECK(d <= 1.0);
      CHECK(d == doctest::Approx(jsd_reference(a, b)).epsilon(1e-9));
    }
  }

  TEST_CASE("jensen-shannon rejects unnormalized input") {
    const std::vector<double> a{0.5, 0.6}, b{0.5, 0.5};
    CHECK_THROWS_CODE(js_divergence(a, b), ErrorCode::NotNormalized);
    const std::vector<double> neg{1.5, -0.5};
    CHECK_THROWS_CODE(js_divergence(neg, b), ErrorCode::NotNormalized);
  }

  TEST_CASE("rmse") {
    const std::vector<double> a{1, 2, 3}, b{1, 2, 5};
    CHECK(rmse_edge_usage(a, b) == doctest::Approx(std::sqrt(4.0 / 3.0)).epsilon(1e-15));
    CHECK(rmse_edge_usage(a, a) == 0.0);
  }

  TEST_CASE("intersection over union") {
    const Graph g = diamond();
    CHECK(iou(edges_of(g, {0, 2}), edges_of(g, {0, 2})) == 1.0);
    CHECK(iou(edges_of(g, {0, 2}), edges_of(g, {1, 3})) == 0.0);
    CHECK(iou(edges_of(g, {0, 4, 3}), edges_of(g, {0, 2})) == doctest::Approx(0.25));
    CHECK(iou(SolutionVector(5), SolutionVector(5)) == 1.0);
  }

  TEST_CASE("full match and recall count infeasible outputs as misses") {
    const Graph g = diamond();
    const auto a = edges_of(g, {0, 2}), b = edges_of(g, {1, 3}), mixed = edges_of(g, {0, 4, 3});
    const std::vector<ReconstructionPair> pairs{{a, a}, {a, mixed}, {b, std::nullopt}, {b, b}};
    CHECK(full_match_rate(pairs) == 0.5);
    // Recalls: 1, 1/2, 0, 1.
    CHECK(edge_recall(pairs) == doctest::Approx(2.5 / 4));
    const std::vector<ReconstructionPair> empty_truth{{SolutionVector(5), a}};
    CHECK_THROWS_CODE(edge_recall(empty_truth), ErrorCode::EmptyGroundTruth);
    CHECK_THROWS_CODE(full_match_rate(std::vector<ReconstructionPair>{}), ErrorCode::EmptyInput);
  }

  TEST_CASE("purity of separated and mixed clusters") {
    Rng rng(2);
    std::normal_distribution<double> noise(0.0, 0.05);
    const int per = 40;
    Eigen::MatrixXd z(2, 3 * per);
    std::vector<int> labels;
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < per; ++i) {
        z(0, c * per + i) = 3.0 * c + noise(rng);
        z(1, c * per + i) = noise(rng);
        labels.push_back(c);
      }
    CHECK(cluster_purity(z, labels, 3) == 1.0);

    // Labels independent of position: purity near the majority share.
    std::vector<int> shuffled = labels;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    CHECK(cluster_purity(z, shuffled, 3) < 0.6);
    CHECK(cluster_purity(z, labels, 3, 1) == cluster_purity(z, labels, 3, 1));
  }

  TEST_CASE("distinct paths") {
    const Graph g = diamond();
    const std::vector<SolutionVector> xs{edges_of(g, {0, 2}), edges_of(g, {1, 3}), edges_of(g, {0, 2})};
    CHECK(distinct_path_count(xs) == 2);
    CHECK_THROWS_CODE(distinct_path_count(std::vector<SolutionVector>{}), ErrorCode::EmptyInput);
  }

  TEST_CASE("mean and sample standard deviation") {
    const std::vector<double> v{2, 4, 4, 4, 5, 5, 7, 9};
    const auto [mean, sd] = mean_std(v);
    CHECK(mean == 5.0);
    CHECK(sd == doctest::Approx(std::sqrt(32.0 / 7.0)));
  }

  TEST_CASE("metric rows") {
    MetricReport r{"test_iou", 0.5, 0.1, 3, "waxman", "iolvm", 7, 42};
    const std::string row = to_csv_row(r);
    CHECK(row.rfind("test_iou,0.5", 0) == 0);
    const std::string header = metrics_csv_header();
    CHECK(std::count(row.begin(), row.end(), ',') == std::count(header.begin(), header.end(), ','));
  }
}
