#include <algorithm>
#include <array>
#include <filesystem>
#include <set>

#include "helpers.hpp"
#include "iolvm/datagen.hpp"
#include "iolvm/solvers.hpp"

using namespace iolvm;
using namespace testutil;

namespace {

WaxmanSpec small_spec() {
  WaxmanSpec s;
  s.n_nodes = 60;
  s.alpha = 0.3;
  s.seed = 4;
  s.n_paths = 40;
  s.agents = {{LatitudeBias::South, 5.0, 0.1}, {LatitudeBias::North, 5.0, 0.1}};
  return s;
}

double dist(const Point& a, const Point& b) { return std::hypot(a.x - b.x, a.y - b.y); }

}  // namespace

TEST_SUITE("datagen") {
  TEST_CASE("waxman probability") {
    CHECK(waxman_probability(0.0, 1.0, 0.05, 0.6) == 0.05);
    CHECK(waxman_probability(0.6, 1.0, 0.05, 0.6) == doctest::Approx(0.05 / std::exp(1.0)).epsilon(1e-15));
  }

  TEST_CASE("edge count of a 700-node waxman graph") {
    WaxmanSpec spec;
    spec.n_nodes = 700;
    spec.seed = 1;
    spec.agents = {{}};
    const Graph g = gen_waxman_graph(spec);
    CHECK(g.num_nodes() >= 630);
    CHECK(g.directed());
    CHECK(g.num_edges() % 2 == 0);

    // Expected pair count given the retained positions.
    const auto& pos = g.positions();
    double d_max = 0, expected = 0, variance = 0;
    for (std::size_t u = 0; u < pos.size(); ++u)
      for (std::size_t v = u + 1; v < pos.size(); ++v) d_max = std::max(d_max, dist(pos[u], pos[v]));
    for (std::size_t u = 0; u < pos.size(); ++u)
      for (std::size_t v = u + 1; v < pos.size(); ++v) {
        const double pr = 0.05 * std::exp(-dist(pos[u], pos[v]) / (0.6 * d_max));
        expected += pr;
        variance += pr * (1 - pr);
      }
    const double pairs = g.num_edges() / 2.0;
    CHECK(std::abs(pairs - expected) < 4 * std::sqrt(variance) + 0.01 * expected);
    CHECK(std::abs(pairs - 7230) <= 0.2 * 7230);
    for (NodeId v = 0; v < static_cast<NodeId>(g.num_nodes()); ++v) CHECK(!g.out_arcs(v).empty());
  }

  TEST_CASE("edge frequency per distance bucket follows the connection probability") {
    // 24 nodes per graph, 10^4 graphs: pairs bucketed by d / d_max.
    WaxmanSpec spec;
    spec.n_nodes = 24;
    spec.alpha = 0.9;
    spec.beta_w = 0.4;
    spec.agents = {{}};
    spec.min_component_fraction = 0.0;
    constexpr int kBuckets = 5;
    std::array<double, kBuckets> hits{}, expect{}, var{};
    int skipped = 0;
    for (int trial = 0; trial < 10000; ++trial) {
      spec.seed = static_cast<std::uint64_t>(trial);
      const Graph g = gen_waxman_graph(spec);
      if (g.num_nodes() != 24) {
        ++skipped;
        continue;
      }
      const auto& pos = g.positions();
      double d_max = 0;
      for (std::size_t u = 0; u < pos.size(); ++u)
        for (std::size_t v = u + 1; v < pos.size(); ++v) d_max = std::max(d_max, dist(pos[u], pos[v]));
      for (NodeId u = 0; u < 24; ++u)
        for (NodeId v = u + 1; v < 24; ++v) {
          const double d = dist(pos[u], pos[v]);
          const int b = std::min(kBuckets - 1, static_cast<int>(kBuckets * d / d_max));
          const double pr = 0.9 * std::exp(-d / (0.4 * d_max));
          expect[b] += pr;
          var[b] += pr * (1 - pr);
          hits[b] += g.find_edge(u, v) ? 1 : 0;
        }
    }
    // Conditioning on connected draws biases the counts, so keep such draws rare.
    CHECK(skipped < 100);
    for (int b = 0; b < kBuckets; ++b) CHECK(std::abs(hits[b] - expect[b]) <= 3 * std::sqrt(var[b]));
  }

  TEST_CASE("latitude bias raises costs on the avoided side") {
    const Graph g = gen_waxman_graph(small_spec());
    Rng rng(1);
    const auto south = gen_agent_costs(g, {LatitudeBias::South, 5.0, 0.0}, 0.1, rng);
    const auto north = gen_agent_costs(g, {LatitudeBias::North, 5.0, 0.0}, 0.1, rng);
    const auto plain = gen_agent_costs(g, {LatitudeBias::None, 5.0, 0.0}, 0.1, rng);
    for (std::size_t e = 0; e < g.num_edges(); ++e) {
      const auto id = static_cast<EdgeId>(e);
      const double len = g.edge_length(id), y = g.edge_midpoint(id).y;
      CHECK(plain[e] == doctest::Approx(len).epsilon(1e-14));
      const double expect_s = len * (1 + 5.0 / (1 + std::exp(-(0.5 - y) / 0.1)));
      CHECK(south[e] == doctest::Approx(expect_s).epsilon(1e-12));
      if (y > 0.5) CHECK(north[e] > south[e]);
      if (y < 0.5) CHECK(south[e] > north[e]);
    }
    // Bottom-quartile edges cost more than top-quartile ones for a South agent.
    std::vector<double> ys;
    for (std::size_t e = 0; e < g.num_edges(); ++e) ys.push_back(g.edge_midpoint(static_cast<EdgeId>(e)).y);
    auto sorted = ys;
    std::sort(sorted.begin(), sorted.end());
    const double q1 = sorted[sorted.size() / 4], q3 = sorted[3 * sorted.size() / 4];
    double low = 0, high = 0;
    int n_low = 0, n_high = 0;
    for (std::size_t e = 0; e < ys.size(); ++e) {
      if (ys[e] <= q1) low += south[e], ++n_low;
      if (ys[e] >= q3) high += south[e], ++n_high;
    }
    CHECK(low / n_low > high / n_high);
  }

  TEST_CASE("cost noise is log-normal with the requested scale") {
    const Graph g = gen_waxman_graph(small_spec());
    Rng rng(2);
    std::vector<double> logs;
    for (int rep = 0; rep < 40; ++rep) {
      const auto y = gen_agent_costs(g, {LatitudeBias::None, 0.0, 0.3}, 0.1, rng);
      for (std::size_t e = 0; e < y.size(); ++e) logs.push_back(std::log(y[e] / g.edge_length(static_cast<EdgeId>(e))));
    }
    double mean = 0, sq = 0;
    for (double v : logs) mean += v;
    mean /= logs.size();
    for (double v : logs) sq += (v - mean) * (v - mean);
    CHECK(std::abs(mean) < 4 * 0.3 / std::sqrt(double(logs.size())));
    CHECK(std::sqrt(sq / (logs.size() - 1)) == doctest::Approx(0.3).epsilon(0.03));
  }

  TEST_CASE("agents route away from their penalized side") {
    auto spec = small_spec();
    spec.n_paths = 60;
    spec.bias_width = 0.05;
    spec.agents = {{LatitudeBias::South, 20.0, 0.05}, {LatitudeBias::North, 20.0, 0.05}};
    const auto ds = gen_waxman_dataset(spec);
    double south_y = 0, north_y = 0;
    int n_south = 0, n_north = 0;
    for (const auto& r : ds.records) {
      double y = 0;
      const auto ids = r.sample.x.edges();
      for (EdgeId e : ids) y += ds.graph->edge_midpoint(e).y;
      y /= ids.size();
      if (r.meta["agent"] == 0) {
        south_y += y;
        ++n_south;
      } else {
        north_y += y;
        ++n_north;
      }
    }
    REQUIRE(n_south > 0);
    REQUIRE(n_north > 0);
    CHECK(south_y / n_south > north_y / n_north);
  }

  TEST_CASE("datasets are feasible, labelled and reproducible") {
    const auto spec = small_spec();
    const auto ds = gen_waxman_dataset(spec);
    CHECK(ds.size() == 40);
    const auto p = single_st_requirement(*ds.graph);
    for (const auto& r : ds.records) {
      CHECK(r.sample.p == p);
      CHECK(validate_solution(*ds.graph, r.sample.x, r.sample.p).feasible);
      CHECK(r.meta.contains("agent"));
    }
    const auto again = gen_waxman_dataset(spec);
    for (std::size_t i = 0; i < ds.size(); ++i) CHECK(again.records[i].sample.x == ds.records[i].sample.x);
  }

  TEST_CASE("multi requirement pairs respect the minimum distance") {
    auto spec = small_spec();
    spec.requirement_mode = RequirementMode::MultiST;
    spec.min_pair_distance = 0.5;
    const auto ds = gen_waxman_dataset(spec);
    std::set<std::pair<int, int>> pairs;
    for (const auto& r : ds.records) {
      const auto s = *r.sample.p.source, t = *r.sample.p.target;
      CHECK(dist(ds.graph->position(s), ds.graph->position(t)) >= 0.5);
      pairs.insert({s, t});
    }
    CHECK(pairs.size() > 1);
  }

  TEST_CASE("split keeps order and sizes") {
    auto spec = small_spec();
    spec.n_paths = 60;
    const auto ds = gen_waxman_dataset(spec);
    const auto [train, test] = split_dataset(ds, 50);
    CHECK(train.size() == 50);
    CHECK(test.size() == 10);
    CHECK(test.records[0].sample.x == ds.records[50].sample.x);
    CHECK(train.graph == ds.graph);
    CHECK_THROWS_CODE(split_dataset(ds, 61), ErrorCode::ConfigError);
  }

  TEST_CASE("dataset file round trip") {
    const auto ds = gen_waxman_dataset(small_spec());
    const auto dir = std::filesystem::temp_directory_path() / "iolvm_unit_roundtrip";
    std::filesystem::create_directories(dir);
    save_graph(*ds.graph, (dir / "graph.json").string());
    save_dataset(ds, (dir / "data.jsonl").string());
    auto graph = std::make_shared<const Graph>(load_graph((dir / "graph.json").string()));
    CHECK(graph->fingerprint() == ds.graph->fingerprint());
    const auto back = load_dataset((dir / "data.jsonl").string(), graph);
    REQUIRE(back.size() == ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
      CHECK(back.records[i].sample.x == ds.records[i].sample.x);
      CHECK(back.records[i].sample.p == ds.records[i].sample.p);
      CHECK(back.records[i].meta == ds.records[i].meta);
    }
    // A record that is not a path must be rejected on load.
    auto other = std::make_shared<const Graph>(line_graph(4));
    CHECK_THROWS(load_dataset((dir / "data.jsonl").string(), other));
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("tsp costs reduce to lengths without feature weight") {
    TspCostSpec spec;
    spec.n_nodes = 8;
    spec.gamma = 0.0;
    const Graph g = gen_tsp_graph(spec);
    CHECK(g.num_edges() == 28);
    const TspCostModel model(g, spec);
    const auto y = model.costs(Eigen::VectorXd::Random(spec.n_features));
    for (std::size_t e = 0; e < y.size(); ++e) CHECK(y[e] == doctest::Approx(g.edge_length(static_cast<EdgeId>(e))));
    CHECK_THROWS_CODE(model.costs(Eigen::VectorXd::Zero(spec.n_features + 1)), ErrorCode::DimensionMismatch);
  }

  TEST_CASE("tsp cost formula") {
    TspCostSpec spec;
    spec.n_nodes = 6;
    spec.gamma = 2.0;
    const Graph g = gen_tsp_graph(spec);
    const TspCostModel model(g, spec);
    Eigen::VectorXd u = Eigen::VectorXd::Random(spec.n_features);
    const auto y = model.costs(u);
    for (std::size_t e = 0; e < y.size(); ++e) {
      const double s = model.weights().row(static_cast<Eigen::Index>(e)).dot(u);
      const double expect = g.edge_length(static_cast<EdgeId>(e)) * (1 + 2.0 * std::log1p(std::exp(s)) / std::log(2.0));
      CHECK(y[e] == doctest::Approx(expect).epsilon(1e-12));
    }
  }

  TEST_CASE("tsp datasets contain several distinct tours") {
    TspCostSpec spec;
    spec.n_nodes = 9;
    spec.n_samples = 100;
    spec.seed = 3;
    const auto ds = gen_tsp_dataset(spec);
    CHECK(ds.size() == 100);
    std::vector<SolutionVector> xs;
    for (const auto& r : ds.records) {
      CHECK(validate_solution(*ds.graph, r.sample.x, Requirement::none()).feasible);
      xs.push_back(r.sample.x);
    }
    std::sort(xs.begin(), xs.end());
    CHECK(std::unique(xs.begin(), xs.end()) - xs.begin() > 5);
  }

  TEST_CASE("detour splice adds a node and stays a path") {
    const auto ds = gen_waxman_dataset(small_spec());
    Rng rng(7);
    int spliced = 0;
    for (const auto& r : ds.records) {
      const auto d = splice_detour(*ds.graph, r.sample.x, r.sample.p, rng);
      if (!d) continue;
      ++spliced;
      CHECK(d->count() == r.sample.x.count() + 1);
      CHECK(validate_solution(*ds.graph, *d, r.sample.p).feasible);
    }
    CHECK(spliced > 0);
  }

  TEST_CASE("box avoidance") {
    auto spec = small_spec();
    const Graph g = gen_waxman_graph(spec);
    std::vector<double> y(g.num_edges());
    for (std::size_t e = 0; e < y.size(); ++e) y[e] = g.edge_length(static_cast<EdgeId>(e));
    const auto p = single_st_requirement(g);
    const Box box{0.45, 0.55, 0.3, 0.7};
    const auto x = solve_avoiding_box(g, y, p, box);
    REQUIRE(x.has_value());
    CHECK(validate_solution(g, *x, p).feasible);
    for (EdgeId e : x->edges()) {
      CHECK_FALSE(box.contains(g.position(g.edge(e).src)));
      CHECK_FALSE(box.contains(g.position(g.edge(e).dst)));
    }
    const Box everything{-1, 2, -1, 2};
    CHECK_FALSE(solve_avoiding_box(g, y, p, everything).has_value());
  }

  TEST_CASE("generator parameter validation") {
    auto spec = small_spec();
    spec.agents.clear();
    CHECK_THROWS_CODE(spec.validate(), ErrorCode::ConfigError);
    TspCostSpec tsp;
    tsp.n_features = 0;
    CHECK_THROWS_CODE(tsp.validate(), ErrorCode::ConfigError);
  }
}
