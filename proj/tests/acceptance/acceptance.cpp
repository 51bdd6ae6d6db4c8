// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero when any criterion fails.
//
//   iolvm_acceptance [criterion ids...]   (default: all)
//
// Experiment settings come from the JSON files under IOLVM_CONFIG_DIR.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "iolvm/error.hpp"
#include "iolvm/eval.hpp"
#include "iolvm/experiment.hpp"
#include "iolvm/inference.hpp"
#include "iolvm/model.hpp"
#include "iolvm/solvers.hpp"

namespace fs = std::filesystem;
using namespace iolvm;

namespace {

// ---------------------------------------------------------------------------
// Pinned tolerances and sizes.

constexpr int kSppInstances = 500;
constexpr int kTspInstances = 200;
constexpr int kFyDraws = 100'000;
constexpr double kFyRelTol = 0.05;
constexpr double kBackpropRelTol = 1e-4;
constexpr int kBackpropSeeds = 10;
constexpr int kCycleCount = 10;
constexpr int kCycleDraws = 40'000;
constexpr double kMeanStdErrs = 3.0;
constexpr double kVarianceRelTol = 0.05;
constexpr double kPurityFloor = 0.85;
constexpr double kPurityGap = 0.15;
constexpr double kTspFullMatchFloor = 0.7;
constexpr double kJsdSlack = 0.02;
constexpr double kJsdCeiling = 0.15;
constexpr double kSpearmanCeiling = -0.8;
constexpr double kOutlierQuantile = 0.95;
constexpr std::size_t kInDistributionScores = 200;
constexpr std::size_t kDenoisePaths = 50;
constexpr int kMetricInputs = 100;
constexpr double kMetricTol = 1e-6;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// Feasibility ledger shared by every IO-LVM output produced in this run.

struct FeasibilityTally {
  std::size_t checked = 0;
  std::size_t infeasible = 0;

  void add(const Graph& g, const SolutionVector& x, const Requirement& p) {
    ++checked;
    if (!validate_solution(g, x, p).feasible) ++infeasible;
  }
  void add(const Graph& g, const std::optional<SolutionVector>& x, const Requirement& p) {
    ++checked;
    if (!x || !validate_solution(g, *x, p).feasible) ++infeasible;
  }
};

FeasibilityTally g_iolvm_feasibility;

// ---------------------------------------------------------------------------
// Lazily trained experiments, shared between criteria.

ExperimentConfig config(const std::string& name) {
  return load_experiment_config(fs::path(IOLVM_CONFIG_DIR) / (name + ".json"));
}

struct Experiment {
  ExperimentConfig cfg;
  DataSplit data;
  std::map<std::string, std::unique_ptr<TrainingSession>> sessions;

  std::vector<Sample> train() const { return data.train.samples(); }
  std::vector<Sample> test() const { return data.test.samples(); }

  const TrainingSession& session(ModelType type, const std::string& key = "") {
    const std::string id = to_string(type) + key;
    auto& slot = sessions[id];
    if (!slot) {
      slot = std::make_unique<TrainingSession>(type, data.train.graph, cfg.model, cfg.train_config(type));
      const auto samples = train();
      for (int e = 0; e < cfg.train_config(type).epochs; ++e) slot->train_epoch(samples);
    }
    return *slot;
  }
};

Experiment& experiment(const std::string& name) {
  static std::map<std::string, std::unique_ptr<Experiment>> cache;
  auto& slot = cache[name];
  if (!slot) {
    slot = std::make_unique<Experiment>();
    slot->cfg = config(name);
    slot->data = generate_data(slot->cfg.dataset);
  }
  return *slot;
}

std::vector<int> agent_labels(const Dataset& ds) {
  std::vector<int> labels;
  labels.reserve(ds.size());
  for (const auto& r : ds.records) labels.push_back(r.meta.at("agent").get<int>());
  return labels;
}

// Reconstructions of `data` with IO-LVM outputs recorded in the tally.
ReconstructionSummary reconstruct_all(const TrainingSession& s, const Graph& g, std::span<const Sample> data) {
  auto summary = summarize_reconstructions(s, data);
  if (s.type() == ModelType::IoLvm)
    for (std::size_t i = 0; i < data.size(); ++i) g_iolvm_feasibility.add(g, summary.outputs[i], data[i].p);
  return summary;
}

// ---------------------------------------------------------------------------
// 1. Solver equivalence with exhaustive enumeration.

Graph random_graph(int n, double arc_prob, bool directed, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<NodeSpec> nodes;
  for (int v = 0; v < n; ++v) nodes.push_back({v, {unit(rng), unit(rng)}});
  std::vector<EdgeSpec> edges;
  for (int u = 0; u < n; ++u)
    for (int v = directed ? 0 : u + 1; v < n; ++v)
      if (u != v && unit(rng) < arc_prob) edges.push_back({u, v});
  return build_graph(nodes, edges, directed);
}

std::vector<double> small_integer_costs(std::size_t m, int max_cost, Rng& rng) {
  std::uniform_int_distribution<int> cost(1, max_cost);
  std::vector<double> y(m);
  for (auto& v : y) v = cost(rng);
  return y;
}

Outcome solver_equivalence() {
  Rng rng(derive_seed(1, {1}));
  int spp = 0, tsp = 0, mismatches = 0, attempts = 0;
  while (spp < kSppInstances) {
    ++attempts;
    const bool directed = attempts % 2 == 0;
    const Graph g = random_graph(8, 0.35, directed, rng);
    if (g.num_edges() == 0) continue;
    // Integer costs in a narrow range produce frequent ties.
    const auto y = small_integer_costs(g.num_edges(), 4, rng);
    std::uniform_int_distribution<int> node(0, 7);
    const int s = node(rng);
    int t = node(rng);
    if (s == t) continue;
    const auto p = Requirement::source_target(s, t);
    SolutionVector bf;
    try {
      bf = brute_force(SolverKind::Spp, g, y, p);
    } catch (const Error&) {
      continue;  // unreachable target
    }
    const auto fast = solve(SolverKind::Spp, g, y, p);
    if (!(fast == bf) || solution_cost(y, fast) != solution_cost(y, bf)) ++mismatches;
    ++spp;
  }
  while (tsp < kTspInstances) {
    const Graph g = random_graph(7, 1.0, false, rng);
    const auto y = small_integer_costs(g.num_edges(), 5, rng);
    const auto bf = brute_force(SolverKind::TspExact, g, y, Requirement::none());
    const auto fast = solve(SolverKind::TspExact, g, y, Requirement::none());
    if (!(fast == bf) || solution_cost(y, fast) != solution_cost(y, bf)) ++mismatches;
    ++tsp;
  }
  return {mismatches == 0, std::to_string(spp) + " SPP + " + std::to_string(tsp) +
                               " TSP instances, mismatches=" + std::to_string(mismatches)};
}

// ---------------------------------------------------------------------------
// 2. Perturbed-optimizer gradient against finite differences of the
//    Monte Carlo expected perturbed minimum (common random numbers).

Graph toy_graph() {
  const std::vector<NodeSpec> nodes{{0, {0, 0}}, {1, {1, 1}}, {2, {1, -1}}, {3, {2, 0}}};
  const std::vector<EdgeSpec> edges{{0, 1}, {0, 2}, {1, 3}, {2, 3}, {1, 2}};
  return build_graph(nodes, edges, true);
}

Outcome fy_gradient() {
  const Graph g = toy_graph();
  const auto p = Requirement::source_target(0, 3);
  const std::vector<double> y{1.0, 1.2, 1.1, 0.8, 0.3};
  const SolutionVector x = SolutionVector::from_edges(5, std::vector<EdgeId>{0, 2});
  const double sigma = 0.5, h = 1e-4;
  const std::size_t m = y.size();

  std::vector<std::vector<double>> draws(kFyDraws);
  for (int i = 0; i < kFyDraws; ++i) draws[i] = draw_perturbation(m, sigma, derive_seed(2, {static_cast<std::uint64_t>(i)}));

  auto expected_min = [&](const std::vector<double>& base) {
    double total = 0.0;
    std::vector<double> yp(m);
    for (const auto& eps : draws) {
      for (std::size_t e = 0; e < m; ++e) yp[e] = base[e] + eps[e];
      total += solution_cost(yp, solve(SolverKind::Spp, g, yp, p));
    }
    return total / kFyDraws;
  };

  // Estimator under test: mean of x - x_hat over the same draws.
  std::vector<double> grad(m, 0.0);
  for (const auto& eps : draws) {
    std::vector<double> yp(m);
    for (std::size_t e = 0; e < m; ++e) yp[e] = y[e] + eps[e];
    const auto gy = fy_grad_y(x, solve(SolverKind::Spp, g, yp, p));
    for (std::size_t e = 0; e < m; ++e) grad[e] += gy[e] / kFyDraws;
  }
  // FY loss = <y, x> - F(y), so its gradient is x - dF/dy.
  std::vector<double> fd(m);
  for (std::size_t e = 0; e < m; ++e) {
    auto up = y, down = y;
    up[e] += h;
    down[e] -= h;
    fd[e] = (x[e] ? 1.0 : 0.0) - (expected_min(up) - expected_min(down)) / (2 * h);
  }
  double num = 0.0, den = 0.0;
  for (std::size_t e = 0; e < m; ++e) {
    num += (grad[e] - fd[e]) * (grad[e] - fd[e]);
    den += fd[e] * fd[e];
  }
  const double rel = std::sqrt(num / den);
  return {rel < kFyRelTol, "relative error " + fmt(rel) + " over " + std::to_string(kFyDraws) + " draws"};
}

// ---------------------------------------------------------------------------
// 3. Backprop against central finite differences.

double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(num) / std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
}

std::vector<double> flatten(const Mlp::Gradients& g) {
  std::vector<double> out;
  for (const auto& v : Mlp::gradient_views(g)) out.insert(out.end(), v.begin(), v.end());
  return out;
}

// Random weights and biases keep ReLU pre-activations away from the kink.
void randomize(Mlp& net, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 0.5);
  for (auto view : net.parameter_views())
    for (double& w : view) w = normal(rng);
}

// Central differences of `loss` over every parameter of `net`.
std::vector<double> numeric_gradient(Mlp& net, const std::function<double()>& loss, double h = 1e-6) {
  std::vector<double> out;
  for (auto view : net.parameter_views()) {
    for (double& w : view) {
      const double keep = w;
      w = keep + h;
      const double up = loss();
      w = keep - h;
      const double down = loss();
      w = keep;
      out.push_back((up - down) / (2 * h));
    }
  }
  return out;
}

Outcome backprop() {
  const auto graph = std::make_shared<const Graph>(toy_graph());
  const auto p = Requirement::source_target(0, 3);
  const std::vector<std::vector<EdgeId>> paths{{0, 2}, {1, 3}, {0, 4, 3}};
  ModelConfig mcfg;
  mcfg.latent_dim = 2;
  mcfg.hidden = {6, 5};
  const double beta = 0.7;
  double worst = 0.0;

  for (int seed = 0; seed < kBackpropSeeds; ++seed) {
    Rng rng(derive_seed(3, {static_cast<std::uint64_t>(seed)}));
    std::vector<Sample> batch;
    std::vector<SolutionVector> x_hat;
    for (int b = 0; b < 3; ++b) {
      batch.push_back({SolutionVector::from_edges(5, paths[(b + seed) % 3]), p});
      x_hat.push_back(SolutionVector::from_edges(5, paths[(seed + 1) % 3]));
    }
    std::normal_distribution<double> normal;
    Eigen::MatrixXd xi(2, 3);
    for (Eigen::Index i = 0; i < xi.size(); ++i) xi(i) = normal(rng);

    IoLvmModel io(graph, mcfg, derive_seed(3, {static_cast<std::uint64_t>(seed), 1}));
    randomize(io.encoder(), rng);
    randomize(io.decoder(), rng);
    const auto ga = iolvm_gradients(io, batch, xi, x_hat, beta);
    auto io_loss = [&] { return iolvm_gradients(io, batch, xi, x_hat, beta).loss; };
    worst = std::max(worst, relative_error(flatten(ga.encoder), numeric_gradient(io.encoder(), io_loss)));
    worst = std::max(worst, relative_error(flatten(ga.decoder), numeric_gradient(io.decoder(), io_loss)));

    VaeModel vae(graph, mcfg, derive_seed(3, {static_cast<std::uint64_t>(seed), 2}));
    randomize(vae.encoder(), rng);
    randomize(vae.decoder(), rng);
    const auto gv = vae_gradients(vae, batch, xi, beta);
    auto vae_loss = [&] { return vae_gradients(vae, batch, xi, beta).loss; };
    worst = std::max(worst, relative_error(flatten(gv.encoder), numeric_gradient(vae.encoder(), vae_loss)));
    worst = std::max(worst, relative_error(flatten(gv.decoder), numeric_gradient(vae.decoder(), vae_loss)));

    PoModel po(graph, SolverKind::Spp);
    for (Eigen::Index e = 0; e < po.free_parameters().size(); ++e) po.free_parameters()(e) = normal(rng);
    const auto gp = po_gradients(po, batch, x_hat);
    std::vector<double> fd;
    for (Eigen::Index e = 0; e < po.free_parameters().size(); ++e) {
      double& w = po.free_parameters()(e);
      const double keep = w;
      w = keep + 1e-6;
      const double up = po_gradients(po, batch, x_hat).loss;
      w = keep - 1e-6;
      const double down = po_gradients(po, batch, x_hat).loss;
      w = keep;
      fd.push_back((up - down) / 2e-6);
    }
    worst = std::max(worst, relative_error(std::vector<double>(gp.grad.data(), gp.grad.data() + gp.grad.size()), fd));
  }
  return {worst < kBackpropRelTol, "worst relative error " + fmt(worst) + " over " + std::to_string(kBackpropSeeds) +
                                       " seeds (IO-LVM, VAE, PO)"};
}

// ---------------------------------------------------------------------------
// 4. Perturbed cost statistics of equal-length Hamiltonian cycles.

Outcome cycle_statistics() {
  const Graph g = random_graph(8, 1.0, false, *std::make_unique<Rng>(derive_seed(4, {0})));
  const std::vector<double> y(g.num_edges(), 1.0);  // every cycle has length 8
  const double sigma = 0.3;
  Rng rng(derive_seed(4, {1}));
  std::vector<SolutionVector> cycles;
  while (cycles.size() < kCycleCount) {
    std::vector<NodeId> order(8);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin() + 1, order.end(), rng);
    std::vector<EdgeId> edges;
    for (int i = 0; i < 8; ++i) edges.push_back(*g.find_edge(order[i], order[(i + 1) % 8]));
    auto x = SolutionVector::from_edges(g.num_edges(), edges);
    if (std::find(cycles.begin(), cycles.end(), x) == cycles.end()) cycles.push_back(std::move(x));
  }

  bool ok = true;
  double worst_z = 0.0, worst_var = 0.0, min_var = 1e300, max_var = 0.0;
  for (std::size_t c = 0; c < cycles.size(); ++c) {
    const auto& x = cycles[c];
    const double target_mean = solution_cost(y, x);
    const double target_var = sigma * sigma * static_cast<double>(x.count());
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < kCycleDraws; ++i) {
      const auto eps = draw_perturbation(y.size(), sigma, derive_seed(4, {2, c, static_cast<std::uint64_t>(i)}));
      double v = 0.0;
      for (EdgeId e : x.edges()) v += y[e] + eps[e];
      sum += v;
      sum2 += v * v;
    }
    const double mean = sum / kCycleDraws;
    const double var = (sum2 - kCycleDraws * mean * mean) / (kCycleDraws - 1);
    const double z = std::abs(mean - target_mean) / std::sqrt(var / kCycleDraws);
    const double rel = std::abs(var - target_var) / target_var;
    worst_z = std::max(worst_z, z);
    worst_var = std::max(worst_var, rel);
    min_var = std::min(min_var, var);
    max_var = std::max(max_var, var);
    ok = ok && z <= kMeanStdErrs && rel <= kVarianceRelTol;
  }
  // Identical statistics: every cycle's variance sits in the same band.
  ok = ok && (max_var - min_var) / min_var <= 2 * kVarianceRelTol;
  return {ok, "max |mean err| " + fmt(worst_z, 3) + " SE, max variance rel err " + fmt(worst_var, 3) +
                  ", variance spread " + fmt((max_var - min_var) / min_var, 3)};
}

// ---------------------------------------------------------------------------
// 5. Latent separation of agents.

Outcome latent_separation() {
  auto& ex = experiment("waxman_multi");
  const auto train = ex.train();
  const auto labels = agent_labels(ex.data.train);
  const auto& io = ex.session(ModelType::IoLvm);
  const auto& vae = ex.session(ModelType::Vae);
  const double p_io = cluster_purity(io.iolvm()->encode_means(train), labels, 3);
  const double p_vae = cluster_purity(vae.vae()->encode_means(train), labels, 3);
  reconstruct_all(io, *ex.data.train.graph, ex.test());
  return {p_io >= kPurityFloor && p_vae <= p_io - kPurityGap,
          "purity IO-LVM " + fmt(p_io) + ", VAE " + fmt(p_vae)};
}

// ---------------------------------------------------------------------------
// 6. TSP full-match ordering.

Outcome tsp_ordering() {
  auto& ex = experiment("burma14_h3");
  const auto test = ex.test();
  const Graph& g = *ex.data.test.graph;
  const auto& io2 = ex.session(ModelType::IoLvm);
  const auto& vae2 = ex.session(ModelType::Vae);
  // k = 10 variant of the same config.
  auto& slot = ex.sessions["iolvm_k10"];
  if (!slot) {
    ModelConfig wide = ex.cfg.model;
    wide.latent_dim = 10;
    slot = std::make_unique<TrainingSession>(ModelType::IoLvm, ex.data.train.graph, wide, ex.cfg.train);
    const auto samples = ex.train();
    for (int e = 0; e < ex.cfg.train.epochs; ++e) slot->train_epoch(samples);
  }
  const double fm10 = reconstruct_all(*slot, g, test).full_match;
  const double fm2 = reconstruct_all(io2, g, test).full_match;
  const double fm_vae = reconstruct_all(vae2, g, test).full_match;
  std::vector<std::optional<SolutionVector>> euclid;
  for (const auto& s : test) euclid.push_back(euclidean_baseline(g, ex.cfg.model.solver, s.p));
  const double fm_euc = summarize(test, std::move(euclid)).full_match;
  const bool ok = fm10 > fm2 && fm2 > fm_vae && fm_vae > fm_euc && fm10 >= kTspFullMatchFloor;
  return {ok, "full match IO-LVM k10 " + fmt(fm10) + " > k2 " + fmt(fm2) + " > VAE " + fmt(fm_vae) + " > Euclidean " +
                  fmt(fm_euc)};
}

// ---------------------------------------------------------------------------
// 7. Feasibility: every IO-LVM output so far, plus VAE infeasibility on the
//    large-feature TSP config.

Outcome feasibility() {
  auto& ex = experiment("bayg29_h50");
  const auto test = ex.test();
  const Graph& g = *ex.data.test.graph;
  const auto vae = reconstruct_all(ex.session(ModelType::Vae), g, test);
  reconstruct_all(ex.session(ModelType::IoLvm), g, test);
  const bool ok = g_iolvm_feasibility.infeasible == 0 && g_iolvm_feasibility.checked > 0 && vae.feasible_fraction < 1.0;
  return {ok, "IO-LVM infeasible " + std::to_string(g_iolvm_feasibility.infeasible) + "/" +
                  std::to_string(g_iolvm_feasibility.checked) + ", VAE feasible fraction " +
                  fmt(vae.feasible_fraction)};
}

// ---------------------------------------------------------------------------
// 8. Path distribution prediction against the perturbed-optimizer baseline.

DistributionScores distribution_scores(Experiment& ex, ModelType type) {
  const auto train = ex.train();
  const auto test = ex.test();
  std::vector<Requirement> reqs;
  std::vector<SolutionVector> reference;
  for (const auto& s : test) {
    reqs.push_back(s.p);
    reference.push_back(s.x);
  }
  const auto& session = ex.session(type);
  const std::size_t k = ex.cfg.inference.samples_per_record;
  const auto predicted =
      sample_paths(session, train, reqs, k, ex.cfg.inference.kde_bandwidth, derive_seed(8, {0}), 1);
  if (type == ModelType::IoLvm)
    for (std::size_t i = 0; i < predicted.size(); ++i) g_iolvm_feasibility.add(*ex.data.test.graph, predicted[i], reqs[i / k]);
  return compare_distributions(predicted, reference);
}

Outcome distribution_prediction() {
  auto& ex = experiment("waxman_single");
  const auto io = distribution_scores(ex, ModelType::IoLvm);
  const auto po = distribution_scores(ex, ModelType::Po);
  const bool ok = io.jsd <= po.jsd + kJsdSlack && io.jsd <= kJsdCeiling && io.rmse < po.rmse;
  return {ok, "JSD IO-LVM " + fmt(io.jsd) + " vs PO " + fmt(po.jsd) + ", RMSE IO-LVM " + fmt(io.rmse) + " vs PO " +
                  fmt(po.rmse)};
}

// ---------------------------------------------------------------------------
// 9. KL weight sweep.

Outcome beta_sweep() {
  auto& ex = experiment("waxman_single");
  const auto train = ex.train();
  const Graph& g = *ex.data.train.graph;
  std::vector<double> distinct, ious;
  std::ostringstream detail;
  for (double beta : ex.cfg.sweep_betas) {
    auto& slot = ex.sessions["sweep_" + fmt(beta)];
    if (!slot) {
      TrainConfig tcfg = ex.cfg.train;
      tcfg.beta = beta;
      slot = std::make_unique<TrainingSession>(ModelType::IoLvm, ex.data.train.graph, ex.cfg.model, tcfg);
      for (int e = 0; e < tcfg.epochs; ++e) slot->train_epoch(train);
    }
    const auto r = reconstruct_all(*slot, g, train);
    distinct.push_back(static_cast<double>(r.distinct));
    ious.push_back(r.mean_iou);
    detail << "beta=" << beta << ": " << r.distinct << " paths, IoU " << fmt(r.mean_iou, 3) << "; ";
  }
  const double rho = spearman(ex.cfg.sweep_betas, distinct);
  bool monotone = true;
  for (std::size_t i = 1; i < ious.size(); ++i) monotone = monotone && ious[i] <= ious[i - 1];
  detail << "spearman " << fmt(rho, 3);
  return {rho <= kSpearmanCeiling && monotone, detail.str()};
}

// ---------------------------------------------------------------------------
// 10. Outlier score of an enforced detour.

Outcome outlier_detection() {
  auto& ex = experiment("waxman_single");
  const auto train = ex.train();
  const auto test = ex.test();
  const IoLvmModel& model = *ex.session(ModelType::IoLvm).iolvm();
  const Graph& g = model.graph();
  if (!ex.cfg.inference.detour_box) fail(ErrorCode::ConfigError, "waxman_single needs inference.detour_box");

  const LatentKde kde = kde_fit(model.encode_means(train), ex.cfg.inference.kde_bandwidth);
  OutlierOptions opts = ex.cfg.inference.outlier;
  Rng rng(derive_seed(10, {0}));
  const auto p = test.front().p;
  const auto ref = outlier_reference(model, kde, p, opts, rng);
  for (const auto& x : ref.inferred) g_iolvm_feasibility.add(g, x, p);

  std::vector<double> scores;
  for (std::size_t i = 0; i < test.size() && scores.size() < kInDistributionScores; ++i)
    if (test[i].p == p) scores.push_back(outlier_score(ref, test[i].x, opts.tau));
  std::sort(scores.begin(), scores.end());
  const double threshold = quantile_sorted(scores, kOutlierQuantile);

  std::vector<double> lengths(g.num_edges());
  for (std::size_t e = 0; e < lengths.size(); ++e) lengths[e] = g.edge_length(static_cast<EdgeId>(e));
  const auto detour = solve_avoiding_box(g, lengths, p, *ex.cfg.inference.detour_box);
  if (!detour) return {false, "detour box leaves no path"};
  const double score = outlier_score(ref, *detour, opts.tau);
  return {score > threshold, "detour score " + fmt(score) + " vs in-distribution p95 " + fmt(threshold) + " (n=" +
                                 std::to_string(scores.size()) + ", tau=" + fmt(opts.tau) + ")"};
}

// ---------------------------------------------------------------------------
// 11. Denoising spliced detours.

Outcome denoising() {
  auto& ex = experiment("waxman_single");
  const IoLvmModel& model = *ex.session(ModelType::IoLvm).iolvm();
  const Graph& g = model.graph();
  Rng rng(derive_seed(11, {0}));
  std::vector<double> before, after;
  for (const auto& s : ex.test()) {
    if (before.size() == kDenoisePaths) break;
    const auto corrupt = splice_detour(g, s.x, s.p, rng);
    if (!corrupt) continue;
    const auto clean = denoise(model, *corrupt, s.p);
    g_iolvm_feasibility.add(g, clean, s.p);
    before.push_back(iou(*corrupt, s.x));
    after.push_back(iou(clean, s.x));
  }
  const double mb = mean_std(before).first, ma = mean_std(after).first;
  return {before.size() == kDenoisePaths && ma > mb,
          "mean IoU corrupted " + fmt(mb) + " -> denoised " + fmt(ma) + " over " + std::to_string(before.size()) +
              " paths"};
}

// ---------------------------------------------------------------------------
// 12. Metric oracles.

double entropy_bits(const std::vector<long double>& p) {
  long double h = 0.0L;
  for (long double v : p)
    if (v > 0.0L) h -= v * std::log2(v);
  return static_cast<double>(h);
}

// Gaussian KL by Simpson quadrature, one dimension at a time.
double kl_quadrature(double mu, double sigma) {
  const int n = 20000;
  const double lo = mu - 14 * sigma, hi = mu + 14 * sigma, step = (hi - lo) / n;
  auto f = [&](double z) {
    const double q = std::exp(-0.5 * ((z - mu) / sigma) * ((z - mu) / sigma)) / (sigma * std::sqrt(2 * M_PI));
    const double log_ratio = -std::log(sigma) - 0.5 * ((z - mu) / sigma) * ((z - mu) / sigma) + 0.5 * z * z;
    return q * log_ratio;
  };
  double total = f(lo) + f(hi);
  for (int i = 1; i < n; ++i) total += (i % 2 ? 4.0 : 2.0) * f(lo + i * step);
  return total * step / 3.0;
}

Outcome metric_oracles() {
  Rng rng(derive_seed(12, {0}));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> size(2, 40);
  double worst_js = 0.0, worst_kl = 0.0, worst_rmse = 0.0;
  for (int t = 0; t < kMetricInputs; ++t) {
    const int n = size(rng);
    std::vector<double> a(n), b(n);
    for (int i = 0; i < n; ++i) {
      a[i] = unit(rng) < 0.2 ? 0.0 : unit(rng);
      b[i] = unit(rng) < 0.2 ? 0.0 : unit(rng);
    }
    a[0] += 0.1;
    b[1] += 0.1;
    const double sa = std::accumulate(a.begin(), a.end(), 0.0), sb = std::accumulate(b.begin(), b.end(), 0.0);
    std::vector<double> pa(n), pb(n);
    std::vector<long double> la(n), lb(n), lm(n);
    for (int i = 0; i < n; ++i) {
      pa[i] = a[i] / sa;
      pb[i] = b[i] / sb;
      la[i] = static_cast<long double>(a[i]) / sa;
      lb[i] = static_cast<long double>(b[i]) / sb;
      lm[i] = 0.5L * (la[i] + lb[i]);
    }
    // JSD as the entropy of the mixture minus the mean entropy.
    const double js_oracle = entropy_bits(lm) - 0.5 * (entropy_bits(la) + entropy_bits(lb));
    worst_js = std::max(worst_js, std::abs(js_divergence(pa, pb) - js_oracle));

    long double sq = 0.0L;
    for (int i = 0; i < n; ++i) sq += (static_cast<long double>(a[i]) * 30 - b[i] * 30) * (a[i] * 30 - b[i] * 30);
    std::vector<double> ca(n), cb(n);
    for (int i = 0; i < n; ++i) {
      ca[i] = a[i] * 30;
      cb[i] = b[i] * 30;
    }
    worst_rmse = std::max(worst_rmse, std::abs(rmse_edge_usage(ca, cb) - static_cast<double>(std::sqrt(sq / n))));

    const int k = 1 + t % 4;
    Eigen::VectorXd mu(k), sigma(k);
    double kl_oracle = 0.0;
    for (int i = 0; i < k; ++i) {
      mu(i) = 4 * unit(rng) - 2;
      sigma(i) = 0.2 + 2 * unit(rng);
      kl_oracle += kl_quadrature(mu(i), sigma(i));
    }
    worst_kl = std::max(worst_kl, std::abs(kl_gaussian(mu, sigma) - kl_oracle));
  }
  const bool ok = worst_js < kMetricTol && worst_kl < kMetricTol && worst_rmse < kMetricTol;
  return {ok, "max abs error JSD " + fmt(worst_js, 3) + ", KL " + fmt(worst_kl, 3) + ", RMSE " + fmt(worst_rmse, 3)};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  std::cout << std::unitbuf;
  // Order matters for 7: it tallies every IO-LVM output produced before it.
  const std::vector<Criterion> criteria{
      {1, "solver oracle equivalence", solver_equivalence},
      {2, "perturbed gradient vs finite differences", fy_gradient},
      {3, "backprop vs finite differences", backprop},
      {4, "perturbed cycle cost statistics", cycle_statistics},
      {12, "metric oracles", metric_oracles},
      {5, "latent separation", latent_separation},
      {6, "TSP reconstruction ordering", tsp_ordering},
      {8, "distribution prediction", distribution_prediction},
      {9, "beta sweep", beta_sweep},
      {10, "outlier scoring", outlier_detection},
      {11, "denoising", denoising},
      {7, "feasibility guarantee", feasibility},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::stoi(argv[i]));

  int failures = 0;
  for (const auto& c : criteria) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome r;
    try {
      r = c.run();
    } catch (const std::exception& e) {
      r = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!r.pass) ++failures;
    std::cout << (r.pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << ": " << r.detail << " ("
              << fmt(secs, 3) << " s)\n";
  }
  return failures == 0 ? 0 : 1;
}
