#include "iolvm/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_set>

#include "iolvm/error.hpp"
#include "iolvm/eval.hpp"
#include "iolvm/parallel.hpp"

namespace iolvm {

namespace {

constexpr std::uint64_t kLatentNoiseStream = 0;
constexpr std::uint64_t kCostNoiseStream = 1;

std::span<const double> column(const Eigen::MatrixXd& m, Eigen::Index c) {
  return {m.col(c).data(), static_cast<std::size_t>(m.rows())};
}

Eigen::MatrixXd gather_inputs(const Graph& g, std::span<const Sample> data,
                              std::span<const std::size_t> idx) {
  const auto m = static_cast<Eigen::Index>(g.num_edges());
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(m + kRequirementFeatures, static_cast<Eigen::Index>(idx.size()));
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto& s = data[idx[b]];
    if (s.x.size() != g.num_edges())
      fail(ErrorCode::DimensionMismatch, "sample length does not match the graph");
    const auto col = static_cast<Eigen::Index>(b);
    for (Eigen::Index e = 0; e < m; ++e) X(e, col) = s.x[static_cast<std::size_t>(e)] ? 1.0 : 0.0;
    X.block<kRequirementFeatures, 1>(m, col) = requirement_encoding(g, s.p);
  }
  return X;
}

Eigen::MatrixXd latent_noise(int k, std::uint64_t seed, int epoch, std::span<const std::size_t> idx) {
  Eigen::MatrixXd xi(k, static_cast<Eigen::Index>(idx.size()));
  for (std::size_t b = 0; b < idx.size(); ++b) {
    Rng rng = make_rng(seed, {static_cast<std::uint64_t>(epoch), idx[b], kLatentNoiseStream});
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int d = 0; d < k; ++d) xi(d, static_cast<Eigen::Index>(b)) = normal(rng);
  }
  return xi;
}

std::vector<int> encoder_dims(const Graph& g, const ModelConfig& cfg) {
  std::vector<int> dims{static_cast<int>(g.num_edges()) + kRequirementFeatures};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(2 * cfg.latent_dim);
  return dims;
}

std::vector<int> decoder_dims(const Graph& g, const ModelConfig& cfg) {
  std::vector<int> dims{cfg.latent_dim};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(static_cast<int>(g.num_edges()));
  return dims;
}

void check_config(const ModelConfig& cfg) {
  if (cfg.latent_dim <= 0) fail(ErrorCode::ConfigError, "latent_dim must be positive");
  for (int h : cfg.hidden)
    if (h <= 0) fail(ErrorCode::ConfigError, "hidden widths must be positive");
}

void check_architecture(const Mlp& m, const std::vector<int>& dims, Activation head, const char* what) {
  if (m.dims() != dims || m.head() != head)
    fail(ErrorCode::ShapeMismatch, std::string(what) + " architecture does not match the model config");
}

Posterior split_posterior(const Eigen::VectorXd& out, int k) {
  return {out.head(k), out.tail(k).array().exp().matrix()};
}

void step(Optimizer& opt, Mlp& net, const Mlp::Gradients& grads) {
  auto params = net.parameter_views();
  auto gv = Mlp::gradient_views(grads);
  opt.step(params, gv);
}

void check_finite(double v, const char* what) {
  if (!std::isfinite(v)) fail(ErrorCode::NumericalFailure, std::string(what) + " became non-finite");
}

struct Accumulator {
  double loss = 0, rec = 0, kl = 0, iou = 0, mu_norm = 0, sigma = 0, feasible = 0;
  std::size_t samples = 0, batches = 0, clamps = 0;
  std::unordered_set<SolutionVector, SolutionHash> distinct;

  EpochReport finish(int epoch) const {
    EpochReport r;
    r.epoch = epoch;
    const double n = static_cast<double>(samples);
    r.loss = loss / n;
    r.reconstruction = rec / n;
    r.kl = kl / n;
    r.iou = iou / n;
    r.mean_mu_norm = mu_norm / n;
    r.feasible_fraction = feasible / n;
    r.sigma_eps = batches ? sigma / static_cast<double>(batches) : 0.0;
    r.distinct_paths = distinct.size();
    r.clamp_count = clamps;
    return r;
  }
};

std::vector<std::size_t> batch_slice(const std::vector<std::size_t>& order, std::size_t start, std::size_t bs) {
  const std::size_t end = std::min(order.size(), start + bs);
  return {order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end)};
}

}  // namespace

// ---------------------------------------------------------------------------

Eigen::Vector4d requirement_encoding(const Graph& g, const Requirement& p) {
  if (!p.is_source_target()) return Eigen::Vector4d::Zero();
  check_requirement(g, p);
  const auto s = g.normalized_position(*p.source);
  const auto t = g.normalized_position(*p.target);
  return {s.x, s.y, t.x, t.y};
}

Eigen::MatrixXd encoder_inputs(const Graph& g, std::span<const Sample> batch) {
  std::vector<std::size_t> idx(batch.size());
  std::iota(idx.begin(), idx.end(), 0);
  return gather_inputs(g, batch, idx);
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"latent_dim", c.latent_dim}, {"hidden", c.hidden}, {"solver", to_string(c.solver)}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.hidden = j.value("hidden", c.hidden);
  if (j.contains("solver")) c.solver = solver_kind_from_string(j.at("solver").get<std::string>());
  check_config(c);
}

IoLvmModel::IoLvmModel(std::shared_ptr<const Graph> graph, ModelConfig cfg, std::uint64_t seed)
    : graph_(std::move(graph)), cfg_(std::move(cfg)) {
  check_config(cfg_);
  Rng enc_rng = make_rng(seed, {1});
  Rng dec_rng = make_rng(seed, {2});
  encoder_ = Mlp::he_uniform(encoder_dims(*graph_, cfg_), Activation::Identity, enc_rng);
  decoder_ = Mlp::he_uniform(decoder_dims(*graph_, cfg_), Activation::Softplus, dec_rng);
}

IoLvmModel::IoLvmModel(std::shared_ptr<const Graph> graph, ModelConfig cfg, Mlp encoder, Mlp decoder)
    : graph_(std::move(graph)), cfg_(std::move(cfg)), encoder_(std::move(encoder)), decoder_(std::move(decoder)) {
  check_config(cfg_);
  check_architecture(encoder_, encoder_dims(*graph_, cfg_), Activation::Identity, "encoder");
  check_architecture(decoder_, decoder_dims(*graph_, cfg_), Activation::Softplus, "decoder");
}

Posterior IoLvmModel::encode(const SolutionVector& x, const Requirement& p) const {
  if (x.size() != graph_->num_edges()) fail(ErrorCode::DimensionMismatch, "solution length != |E|");
  const Sample s{x, p};
  return split_posterior(encoder_.forward(encoder_inputs(*graph_, {&s, 1})).col(0), cfg_.latent_dim);
}

Eigen::MatrixXd IoLvmModel::encode_means(std::span<const Sample> batch) const {
  return encoder_.forward(encoder_inputs(*graph_, batch)).topRows(cfg_.latent_dim);
}

std::vector<double> IoLvmModel::decode_cost(const Eigen::VectorXd& z) const {
  if (z.size() != cfg_.latent_dim) fail(ErrorCode::DimensionMismatch, "latent has the wrong dimension");
  const Eigen::VectorXd y = decoder_.forward(z);
  return {y.data(), y.data() + y.size()};
}

Eigen::MatrixXd IoLvmModel::decode_costs(const Eigen::MatrixXd& z) const {
  if (z.rows() != cfg_.latent_dim) fail(ErrorCode::DimensionMismatch, "latent has the wrong dimension");
  return decoder_.forward(z);
}

SolutionVector IoLvmModel::reconstruct(const SolutionVector& x, const Requirement& p,
                                       const SolverOptions& opts) const {
  const auto post = encode(x, p);
  return solve(cfg_.solver, *graph_, decode_cost(post.mu), p, opts);
}

nlohmann::json IoLvmModel::to_json() const {
  return {{"type", "iolvm"},
          {"graph_fingerprint", graph_->fingerprint()},
          {"num_edges", graph_->num_edges()},
          {"config", cfg_},
          {"encoder", encoder_.to_json()},
          {"decoder", decoder_.to_json()}};
}

IoLvmModel IoLvmModel::from_json(const nlohmann::json& j, std::shared_ptr<const Graph> graph) {
  if (j.at("type").get<std::string>() != "iolvm") fail(ErrorCode::ParseError, "checkpoint is not an IO-LVM model");
  if (j.at("graph_fingerprint").get<std::uint64_t>() != graph->fingerprint())
    fail(ErrorCode::GraphMismatch, "checkpoint was trained on a different graph");
  return IoLvmModel(std::move(graph), j.at("config").get<ModelConfig>(), Mlp::from_json(j.at("encoder")),
                    Mlp::from_json(j.at("decoder")));
}

Eigen::VectorXd reparameterize(const Eigen::VectorXd& mu, const Eigen::VectorXd& sigma, Rng& rng) {
  if (mu.size() != sigma.size()) fail(ErrorCode::DimensionMismatch, "mu and sigma differ in size");
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd z(mu.size());
  for (Eigen::Index i = 0; i < mu.size(); ++i) z(i) = mu(i) + sigma(i) * normal(rng);
  return z;
}

double fy_loss(std::span<const double> y, const SolutionVector& x, const SolutionVector& x_hat,
               std::span<const double> eps) {
  if (y.size() != x.size() || y.size() != x_hat.size() || y.size() != eps.size())
    fail(ErrorCode::LengthMismatch, "fy_loss operands differ in length");
  double observed = 0.0, perturbed = 0.0;
  for (std::size_t e = 0; e < y.size(); ++e) {
    if (x[e]) observed += y[e];
    if (x_hat[e]) perturbed += y[e] + eps[e];
  }
  return observed - perturbed;
}

std::vector<double> fy_grad_y(const SolutionVector& x, const SolutionVector& x_hat) {
  if (x.size() != x_hat.size()) fail(ErrorCode::LengthMismatch, "fy_grad_y operands differ in length");
  std::vector<double> g(x.size());
  for (std::size_t e = 0; e < x.size(); ++e) g[e] = (x[e] ? 1.0 : 0.0) - (x_hat[e] ? 1.0 : 0.0);
  return g;
}

double kl_gaussian(const Eigen::VectorXd& mu, const Eigen::VectorXd& sigma) {
  if (mu.size() != sigma.size()) fail(ErrorCode::DimensionMismatch, "mu and sigma differ in size");
  double kl = 0.0;
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    if (!(sigma(i) > 0.0)) fail(ErrorCode::NonPositiveSigma, "sigma must be strictly positive");
    const double s2 = sigma(i) * sigma(i);
    kl += mu(i) * mu(i) + s2 - 1.0 - std::log(s2);
  }
  return 0.5 * kl;
}

// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (!(beta >= 0.0)) fail(ErrorCode::ConfigError, "beta must be >= 0");
  if (!(sigma_eps_relative >= 0.0)) fail(ErrorCode::ConfigError, "sigma_eps_relative must be >= 0");
  if (sigma_eps_absolute && !(*sigma_eps_absolute >= 0.0))
    fail(ErrorCode::ConfigError, "sigma_eps_absolute must be >= 0");
  if (!(learning_rate >= 0.0)) fail(ErrorCode::ConfigError, "learning_rate must be >= 0");
  if (batch_size <= 0) fail(ErrorCode::ConfigError, "batch_size must be positive");
  if (epochs < 0) fail(ErrorCode::ConfigError, "epochs must be >= 0");
  if (threads <= 0) fail(ErrorCode::ConfigError, "threads must be positive");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"beta", c.beta},
       {"sigma_eps_relative", c.sigma_eps_relative},
       {"sigma_eps_absolute", c.sigma_eps_absolute ? nlohmann::json(*c.sigma_eps_absolute) : nlohmann::json()},
       {"learning_rate", c.learning_rate},
       {"batch_size", c.batch_size},
       {"epochs", c.epochs},
       {"optimizer", to_string(c.optimizer)},
       {"seed", c.seed},
       {"clamp_floor", c.clamp_floor}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  try {
    c.beta = j.value("beta", c.beta);
    c.sigma_eps_relative = j.value("sigma_eps_relative", c.sigma_eps_relative);
    if (j.contains("sigma_eps_absolute") && !j.at("sigma_eps_absolute").is_null())
      c.sigma_eps_absolute = j.at("sigma_eps_absolute").get<double>();
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    if (j.contains("optimizer")) c.optimizer = optimizer_kind_from_string(j.at("optimizer").get<std::string>());
    c.seed = j.value("seed", c.seed);
    c.clamp_floor = j.value("clamp_floor", c.clamp_floor);
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorCode::ConfigError, std::string("train config: ") + ex.what());
  }
  c.validate();
}

std::string epoch_csv_header() {
  return "epoch,loss,fy,kl,iou,distinct_paths,clamp_count,sigma_eps,mean_mu_norm,feasible_fraction";
}

std::string to_csv_row(const EpochReport& r) {
  std::ostringstream os;
  os.precision(10);
  os << r.epoch << ',' << r.loss << ',' << r.reconstruction << ',' << r.kl << ',' << r.iou << ','
     << r.distinct_paths << ',' << r.clamp_count << ',' << r.sigma_eps << ',' << r.mean_mu_norm << ','
     << r.feasible_fraction;
  return os.str();
}

void check_samples(const Graph& g, std::span<const Sample> data) {
  if (data.empty()) fail(ErrorCode::EmptyInput, "training data is empty");
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].x.size() != g.num_edges())
      fail(ErrorCode::InfeasibleSample, "sample " + std::to_string(i) + " has the wrong length");
    const auto rep = validate_solution(g, data[i].x, data[i].p);
    if (!rep.feasible)
      fail(ErrorCode::InfeasibleSample, "sample " + std::to_string(i) + " is infeasible: " + to_string(*rep.failure));
  }
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(seed, {static_cast<std::uint64_t>(epoch), 0xF00DULL});
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

BatchGradients iolvm_gradients(const IoLvmModel& m, std::span<const Sample> batch, const Eigen::MatrixXd& xi,
                               std::span<const SolutionVector> x_hat, double beta) {
  const Graph& g = m.graph();
  const int k = m.latent_dim();
  const auto B = static_cast<Eigen::Index>(batch.size());
  if (B == 0 || x_hat.size() != batch.size() || xi.rows() != k || xi.cols() != B)
    fail(ErrorCode::ShapeMismatch, "gradient batch shapes disagree");
  const double inv_b = 1.0 / static_cast<double>(B);

  const Eigen::MatrixXd X = encoder_inputs(g, batch);
  Mlp::Cache enc_cache, dec_cache;
  const Eigen::MatrixXd enc_out = m.encoder().forward(X, &enc_cache);
  const Eigen::MatrixXd mu = enc_out.topRows(k);
  const Eigen::MatrixXd sigma = enc_out.bottomRows(k).array().exp().matrix();
  const Eigen::MatrixXd y = m.decoder().forward(Eigen::MatrixXd(mu + sigma.cwiseProduct(xi)), &dec_cache);

  const auto n_edges = static_cast<Eigen::Index>(g.num_edges());
  Eigen::MatrixXd grad_y(n_edges, B);
  BatchGradients out;
  for (Eigen::Index b = 0; b < B; ++b) {
    const auto& x = batch[static_cast<std::size_t>(b)].x;
    const auto& xh = x_hat[static_cast<std::size_t>(b)];
    for (Eigen::Index e = 0; e < n_edges; ++e) {
      const auto ue = static_cast<std::size_t>(e);
      grad_y(e, b) = ((x[ue] ? 1.0 : 0.0) - (xh[ue] ? 1.0 : 0.0)) * inv_b;
    }
    out.loss += y.col(b).dot(grad_y.col(b)) + beta * inv_b * kl_gaussian(mu.col(b), sigma.col(b));
  }

  out.decoder = m.decoder().zero_gradients();
  const Eigen::MatrixXd grad_z = m.decoder().backward(dec_cache, grad_y, out.decoder);
  Eigen::MatrixXd grad_enc(2 * k, B);
  grad_enc.topRows(k) = grad_z + (beta * inv_b) * mu;
  grad_enc.bottomRows(k) =
      grad_z.cwiseProduct(sigma).cwiseProduct(xi) + (beta * inv_b) * (sigma.array().square() - 1.0).matrix();
  out.encoder = m.encoder().zero_gradients();
  m.encoder().backward(enc_cache, grad_enc, out.encoder);
  return out;
}

BatchGradients vae_gradients(const VaeModel& m, std::span<const Sample> batch, const Eigen::MatrixXd& xi, double beta) {
  const Graph& g = m.graph();
  const int k = m.latent_dim();
  const auto B = static_cast<Eigen::Index>(batch.size());
  if (B == 0 || xi.rows() != k || xi.cols() != B) fail(ErrorCode::ShapeMismatch, "gradient batch shapes disagree");
  const double inv_b = 1.0 / static_cast<double>(B);
  const auto n_edges = static_cast<Eigen::Index>(g.num_edges());

  const Eigen::MatrixXd X = encoder_inputs(g, batch);
  Mlp::Cache enc_cache, dec_cache;
  const Eigen::MatrixXd enc_out = m.encoder().forward(X, &enc_cache);
  const Eigen::MatrixXd mu = enc_out.topRows(k);
  const Eigen::MatrixXd sigma = enc_out.bottomRows(k).array().exp().matrix();
  const Eigen::MatrixXd prob = m.decoder().forward(Eigen::MatrixXd(mu + sigma.cwiseProduct(xi)), &dec_cache);
  const Eigen::MatrixXd& logits = dec_cache.preacts.back();
  const auto bits = X.topRows(n_edges);

  BatchGradients out;
  for (Eigen::Index b = 0; b < B; ++b) {
    double bce = 0.0;
    for (Eigen::Index e = 0; e < n_edges; ++e) bce += softplus(logits(e, b)) - bits(e, b) * logits(e, b);
    out.loss += inv_b * (bce + beta * kl_gaussian(mu.col(b), sigma.col(b)));
  }

  const Eigen::MatrixXd grad_logits = (prob - bits) * inv_b;
  out.decoder = m.decoder().zero_gradients();
  const Eigen::MatrixXd grad_z = m.decoder().backward(dec_cache, grad_logits, out.decoder, GradientAt::HeadInput);
  Eigen::MatrixXd grad_enc(2 * k, B);
  grad_enc.topRows(k) = grad_z + (beta * inv_b) * mu;
  grad_enc.bottomRows(k) =
      grad_z.cwiseProduct(sigma).cwiseProduct(xi) + (beta * inv_b) * (sigma.array().square() - 1.0).matrix();
  out.encoder = m.encoder().zero_gradients();
  m.encoder().backward(enc_cache, grad_enc, out.encoder);
  return out;
}

PoGradient po_gradients(const PoModel& m, std::span<const Sample> batch, std::span<const SolutionVector> x_hat) {
  if (batch.empty() || x_hat.size() != batch.size()) fail(ErrorCode::ShapeMismatch, "gradient batch shapes disagree");
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const Eigen::VectorXd& w = m.free_parameters();
  const auto y = m.costs();
  PoGradient out;
  out.grad = Eigen::VectorXd::Zero(w.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto gy = fy_grad_y(batch[b].x, x_hat[b]);
    for (Eigen::Index e = 0; e < w.size(); ++e) {
      const auto ue = static_cast<std::size_t>(e);
      out.grad(e) += gy[ue] * inv_b;
      out.loss += y[ue] * gy[ue] * inv_b;
    }
  }
  // dy/dw of the Softplus reparameterization.
  for (Eigen::Index e = 0; e < w.size(); ++e) out.grad(e) *= sigmoid(w(e));
  return out;
}

IoLvmTrainer::IoLvmTrainer(IoLvmModel& model, TrainConfig cfg)
    : model_(model),
      cfg_(cfg),
      enc_opt_(cfg.optimizer_config(), model.encoder().parameter_sizes()),
      dec_opt_(cfg.optimizer_config(), model.decoder().parameter_sizes()) {
  cfg_.validate();
}

EpochReport IoLvmTrainer::train_epoch(std::span<const Sample> data) {
  const Graph& g = model_.graph();
  check_samples(g, data);
  const int k = model_.latent_dim();
  const SolverOptions sopts{cfg_.clamp_floor};
  const auto order = epoch_order(data.size(), cfg_.seed, epoch_);
  Accumulator acc;

  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg_.batch_size)) {
    const auto idx = batch_slice(order, start, static_cast<std::size_t>(cfg_.batch_size));
    const auto B = static_cast<Eigen::Index>(idx.size());

    // Steps 1-3: encode, reparameterize, decode.
    const Eigen::MatrixXd X = gather_inputs(g, data, idx);
    const Eigen::MatrixXd enc_out = model_.encoder().forward(X);
    const Eigen::MatrixXd mu = enc_out.topRows(k);
    const Eigen::MatrixXd sigma = enc_out.bottomRows(k).array().exp().matrix();
    const Eigen::MatrixXd xi = latent_noise(k, cfg_.seed, epoch_, idx);
    const Eigen::MatrixXd y = model_.decoder().forward(Eigen::MatrixXd(mu + sigma.cwiseProduct(xi)));

    // Step 4: one perturbed solve per sample.
    const double sigma_eps = cfg_.sigma_eps_absolute ? *cfg_.sigma_eps_absolute : cfg_.sigma_eps_relative * y.mean();
    std::vector<PerturbedSolution> sol(idx.size());
    parallel_for(idx.size(), cfg_.threads, [&](std::size_t b) {
      const auto& s = data[idx[b]];
      sol[b] = solve_perturbed(model_.solver_kind(), g, column(y, static_cast<Eigen::Index>(b)), s.p, sigma_eps,
                               derive_seed(cfg_.seed, {static_cast<std::uint64_t>(epoch_), idx[b], kCostNoiseStream}),
                               sopts);
    });

    // Step 5: per-sample statistics.
    std::vector<Sample> batch;
    std::vector<SolutionVector> x_hat;
    batch.reserve(idx.size());
    x_hat.reserve(idx.size());
    for (Eigen::Index b = 0; b < B; ++b) {
      const auto& s = data[idx[static_cast<std::size_t>(b)]];
      const auto& r = sol[static_cast<std::size_t>(b)];
      if (!validate_solution(g, r.x, s.p).feasible)
        fail(ErrorCode::NumericalFailure, "solver returned an infeasible reconstruction");
      const double fy = fy_loss(column(y, b), s.x, r.x, r.eps);
      const double kl = kl_gaussian(mu.col(b), sigma.col(b));
      acc.rec += fy;
      acc.kl += kl;
      acc.loss += fy + cfg_.beta * kl;
      acc.iou += iou(s.x, r.x);
      acc.mu_norm += mu.col(b).norm();
      acc.feasible += 1.0;
      acc.clamps += r.stats.clamped_edges;
      acc.distinct.insert(r.x);
      batch.push_back(s);
      x_hat.push_back(r.x);
    }
    check_finite(acc.loss, "training loss");

    // Step 6: chain through decoder, reparameterization and encoder.
    const auto grads = iolvm_gradients(model_, batch, xi, x_hat, cfg_.beta);
    const auto& dec_grads = grads.decoder;
    const auto& enc_grads = grads.encoder;
    step(dec_opt_, model_.decoder(), dec_grads);
    step(enc_opt_, model_.encoder(), enc_grads);
    if (!model_.decoder().all_finite() || !model_.encoder().all_finite())
      fail(ErrorCode::NumericalFailure, "parameters became non-finite");

    acc.samples += idx.size();
    acc.sigma += sigma_eps;
    ++acc.batches;
    last_sigma_eps_ = sigma_eps;
  }
  ++epoch_;
  return acc.finish(epoch_);
}

nlohmann::json IoLvmTrainer::state_to_json() const {
  return {{"epoch", epoch_},
          {"last_sigma_eps", last_sigma_eps_},
          {"encoder_optimizer", enc_opt_.to_json()},
          {"decoder_optimizer", dec_opt_.to_json()}};
}

void IoLvmTrainer::restore_state(const nlohmann::json& j) {
  epoch_ = j.at("epoch").get<int>();
  last_sigma_eps_ = j.at("last_sigma_eps").get<double>();
  enc_opt_ = Optimizer::from_json(j.at("encoder_optimizer"));
  dec_opt_ = Optimizer::from_json(j.at("decoder_optimizer"));
  if (enc_opt_.to_json().at("sizes") != nlohmann::json(model_.encoder().parameter_sizes()) ||
      dec_opt_.to_json().at("sizes") != nlohmann::json(model_.decoder().parameter_sizes()))
    fail(ErrorCode::ShapeMismatch, "optimizer state does not match the model");
}

// ---------------------------------------------------------------------------

VaeModel::VaeModel(std::shared_ptr<const Graph> graph, ModelConfig cfg, std::uint64_t seed)
    : graph_(std::move(graph)), cfg_(std::move(cfg)) {
  check_config(cfg_);
  Rng enc_rng = make_rng(seed, {1});
  Rng dec_rng = make_rng(seed, {2});
  encoder_ = Mlp::he_uniform(encoder_dims(*graph_, cfg_), Activation::Identity, enc_rng);
  decoder_ = Mlp::he_uniform(decoder_dims(*graph_, cfg_), Activation::Sigmoid, dec_rng);
}

VaeModel::VaeModel(std::shared_ptr<const Graph> graph, ModelConfig cfg, Mlp encoder, Mlp decoder)
    : graph_(std::move(graph)), cfg_(std::move(cfg)), encoder_(std::move(encoder)), decoder_(std::move(decoder)) {
  check_config(cfg_);
  check_architecture(encoder_, encoder_dims(*graph_, cfg_), Activation::Identity, "encoder");
  check_architecture(decoder_, decoder_dims(*graph_, cfg_), Activation::Sigmoid, "decoder");
}

Posterior VaeModel::encode(const SolutionVector& x, const Requirement& p) const {
  if (x.size() != graph_->num_edges()) fail(ErrorCode::DimensionMismatch, "solution length != |E|");
  const Sample s{x, p};
  return split_posterior(encoder_.forward(encoder_inputs(*graph_, {&s, 1})).col(0), cfg_.latent_dim);
}

Eigen::MatrixXd VaeModel::encode_means(std::span<const Sample> batch) const {
  return encoder_.forward(encoder_inputs(*graph_, batch)).topRows(cfg_.latent_dim);
}

Eigen::VectorXd VaeModel::decode_probabilities(const Eigen::VectorXd& z) const {
  if (z.size() != cfg_.latent_dim) fail(ErrorCode::DimensionMismatch, "latent has the wrong dimension");
  return decoder_.forward(z);
}

SolutionVector VaeModel::reconstruct(const SolutionVector& x, const Requirement& p) const {
  const Eigen::VectorXd prob = decode_probabilities(encode(x, p).mu);
  SolutionVector out(graph_->num_edges());
  for (Eigen::Index e = 0; e < prob.size(); ++e) out.set(static_cast<std::size_t>(e), prob(e) >= 0.5);
  return out;
}

nlohmann::json VaeModel::to_json() const {
  return {{"type", "vae"},
          {"graph_fingerprint", graph_->fingerprint()},
          {"num_edges", graph_->num_edges()},
          {"config", cfg_},
          {"encoder", encoder_.to_json()},
          {"decoder", decoder_.to_json()}};
}

VaeModel VaeModel::from_json(const nlohmann::json& j, std::shared_ptr<const Graph> graph) {
  if (j.at("type").get<std::string>() != "vae") fail(ErrorCode::ParseError, "checkpoint is not a VAE model");
  if (j.at("graph_fingerprint").get<std::uint64_t>() != graph->fingerprint())
    fail(ErrorCode::GraphMismatch, "checkpoint was trained on a different graph");
  return VaeModel(std::move(graph), j.at("config").get<ModelConfig>(), Mlp::from_json(j.at("encoder")),
                  Mlp::from_json(j.at("decoder")));
}

VaeTrainer::VaeTrainer(VaeModel& model, TrainConfig cfg)
    : model_(model),
      cfg_(cfg),
      enc_opt_(cfg.optimizer_config(), model.encoder().parameter_sizes()),
      dec_opt_(cfg.optimizer_config(), model.decoder().parameter_sizes()) {
  cfg_.validate();
}

EpochReport VaeTrainer::train_epoch(std::span<const Sample> data) {
  const Graph& g = model_.graph();
  check_samples(g, data);
  const int k = model_.latent_dim();
  const auto m = static_cast<Eigen::Index>(g.num_edges());
  const auto order = epoch_order(data.size(), cfg_.seed, epoch_);
  Accumulator acc;

  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg_.batch_size)) {
    const auto idx = batch_slice(order, start, static_cast<std::size_t>(cfg_.batch_size));
    const auto B = static_cast<Eigen::Index>(idx.size());

    const Eigen::MatrixXd X = gather_inputs(g, data, idx);
    const Eigen::MatrixXd enc_out = model_.encoder().forward(X);
    const Eigen::MatrixXd mu = enc_out.topRows(k);
    const Eigen::MatrixXd sigma = enc_out.bottomRows(k).array().exp().matrix();
    const Eigen::MatrixXd xi = latent_noise(k, cfg_.seed, epoch_, idx);
    Mlp::Cache dec_cache;
    const Eigen::MatrixXd prob = model_.decoder().forward(Eigen::MatrixXd(mu + sigma.cwiseProduct(xi)), &dec_cache);
    const Eigen::MatrixXd& logits = dec_cache.preacts.back();
    const auto bits = X.topRows(m);

    std::vector<Sample> batch;
    batch.reserve(idx.size());
    for (Eigen::Index b = 0; b < B; ++b) {
      const auto& s = data[idx[static_cast<std::size_t>(b)]];
      double bce = 0.0;
      SolutionVector rec(g.num_edges());
      for (Eigen::Index e = 0; e < m; ++e) {
        const double l = logits(e, b);
        bce += softplus(l) - bits(e, b) * l;
        rec.set(static_cast<std::size_t>(e), prob(e, b) >= 0.5);
      }
      const double kl = kl_gaussian(mu.col(b), sigma.col(b));
      acc.rec += bce;
      acc.kl += kl;
      acc.loss += bce + cfg_.beta * kl;
      acc.iou += iou(s.x, rec);
      acc.mu_norm += mu.col(b).norm();
      acc.feasible += validate_solution(g, rec, s.p).feasible ? 1.0 : 0.0;
      acc.distinct.insert(std::move(rec));
      batch.push_back(s);
    }
    check_finite(acc.loss, "training loss");

    const auto grads = vae_gradients(model_, batch, xi, cfg_.beta);
    const auto& dec_grads = grads.decoder;
    const auto& enc_grads = grads.encoder;
    step(dec_opt_, model_.decoder(), dec_grads);
    step(enc_opt_, model_.encoder(), enc_grads);
    if (!model_.decoder().all_finite() || !model_.encoder().all_finite())
      fail(ErrorCode::NumericalFailure, "parameters became non-finite");

    acc.samples += idx.size();
    ++acc.batches;
  }
  ++epoch_;
  return acc.finish(epoch_);
}

nlohmann::json VaeTrainer::state_to_json() const {
  return {{"epoch", epoch_}, {"encoder_optimizer", enc_opt_.to_json()}, {"decoder_optimizer", dec_opt_.to_json()}};
}

void VaeTrainer::restore_state(const nlohmann::json& j) {
  epoch_ = j.at("epoch").get<int>();
  enc_opt_ = Optimizer::from_json(j.at("encoder_optimizer"));
  dec_opt_ = Optimizer::from_json(j.at("decoder_optimizer"));
}

// ---------------------------------------------------------------------------

PoModel::PoModel(std::shared_ptr<const Graph> graph, SolverKind solver)
    : graph_(std::move(graph)), solver_(solver), free_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(graph_->num_edges()))) {}

std::vector<double> PoModel::costs() const {
  std::vector<double> y(static_cast<std::size_t>(free_.size()));
  for (Eigen::Index e = 0; e < free_.size(); ++e) y[static_cast<std::size_t>(e)] = softplus(free_(e));
  return y;
}

SolutionVector PoModel::sample(const Requirement& p, std::uint64_t seed, const SolverOptions& opts) const {
  return solve_perturbed(solver_, *graph_, costs(), p, sigma_eps_, seed, opts).x;
}

nlohmann::json PoModel::to_json() const {
  return {{"type", "po"},
          {"graph_fingerprint", graph_->fingerprint()},
          {"num_edges", graph_->num_edges()},
          {"solver", to_string(solver_)},
          {"sigma_eps", sigma_eps_},
          {"free_parameters", std::vector<double>(free_.data(), free_.data() + free_.size())}};
}

PoModel PoModel::from_json(const nlohmann::json& j, std::shared_ptr<const Graph> graph) {
  if (j.at("type").get<std::string>() != "po") fail(ErrorCode::ParseError, "checkpoint is not a PO model");
  if (j.at("graph_fingerprint").get<std::uint64_t>() != graph->fingerprint())
    fail(ErrorCode::GraphMismatch, "checkpoint was trained on a different graph");
  PoModel m(std::move(graph), solver_kind_from_string(j.at("solver").get<std::string>()));
  const auto w = j.at("free_parameters").get<std::vector<double>>();
  if (w.size() != static_cast<std::size_t>(m.free_.size())) fail(ErrorCode::ShapeMismatch, "PO parameter size mismatch");
  m.free_ = Eigen::Map<const Eigen::VectorXd>(w.data(), m.free_.size());
  m.sigma_eps_ = j.at("sigma_eps").get<double>();
  return m;
}

PoTrainer::PoTrainer(PoModel& model, TrainConfig cfg)
    : model_(model), cfg_(cfg), opt_(cfg.optimizer_config(), {static_cast<std::size_t>(model.free_parameters().size())}) {
  cfg_.validate();
}

EpochReport PoTrainer::train_epoch(std::span<const Sample> data) {
  const Graph& g = model_.graph();
  check_samples(g, data);
  const SolverOptions sopts{cfg_.clamp_floor};
  const auto order = epoch_order(data.size(), cfg_.seed, epoch_);
  Accumulator acc;

  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg_.batch_size)) {
    const auto idx = batch_slice(order, start, static_cast<std::size_t>(cfg_.batch_size));
    const auto y = model_.costs();
    const double mean_cost = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
    const double sigma_eps = cfg_.sigma_eps_absolute ? *cfg_.sigma_eps_absolute : cfg_.sigma_eps_relative * mean_cost;

    std::vector<PerturbedSolution> sol(idx.size());
    parallel_for(idx.size(), cfg_.threads, [&](std::size_t b) {
      sol[b] = solve_perturbed(model_.solver_kind(), g, y, data[idx[b]].p, sigma_eps,
                               derive_seed(cfg_.seed, {static_cast<std::uint64_t>(epoch_), idx[b], kCostNoiseStream}),
                               sopts);
    });

    std::vector<SolutionVector> x_hat;
    std::vector<Sample> batch;
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const auto& s = data[idx[b]];
      const auto& r = sol[b];
      const double fy = fy_loss(y, s.x, r.x, r.eps);
      acc.rec += fy;
      acc.loss += fy;
      acc.iou += iou(s.x, r.x);
      acc.feasible += 1.0;
      acc.clamps += r.stats.clamped_edges;
      acc.distinct.insert(r.x);
      batch.push_back(s);
      x_hat.push_back(r.x);
    }
    check_finite(acc.loss, "training loss");
    Eigen::VectorXd grad = po_gradients(model_, batch, x_hat).grad;

    std::vector<std::span<double>> params{{model_.free_parameters().data(), static_cast<std::size_t>(grad.size())}};
    std::vector<std::span<const double>> grads{{grad.data(), static_cast<std::size_t>(grad.size())}};
    opt_.step(params, grads);
    model_.set_sigma_eps(sigma_eps);

    acc.samples += idx.size();
    acc.sigma += sigma_eps;
    ++acc.batches;
  }
  ++epoch_;
  return acc.finish(epoch_);
}

nlohmann::json PoTrainer::state_to_json() const { return {{"epoch", epoch_}, {"optimizer", opt_.to_json()}}; }

void PoTrainer::restore_state(const nlohmann::json& j) {
  epoch_ = j.at("epoch").get<int>();
  opt_ = Optimizer::from_json(j.at("optimizer"));
}

// ---------------------------------------------------------------------------

IoLvmModel train_iolvm(std::shared_ptr<const Graph> graph, std::span<const Sample> data, const ModelConfig& mcfg,
                       const TrainConfig& cfg, std::vector<EpochReport>* log) {
  IoLvmModel model(std::move(graph), mcfg, cfg.seed);
  IoLvmTrainer trainer(model, cfg);
  for (int e = 0; e < cfg.epochs; ++e) {
    auto r = trainer.train_epoch(data);
    if (log) log->push_back(r);
  }
  return model;
}

VaeModel train_vae_baseline(std::shared_ptr<const Graph> graph, std::span<const Sample> data, const ModelConfig& mcfg,
                            const TrainConfig& cfg, std::vector<EpochReport>* log) {
  VaeModel model(std::move(graph), mcfg, cfg.seed);
  VaeTrainer trainer(model, cfg);
  for (int e = 0; e < cfg.epochs; ++e) {
    auto r = trainer.train_epoch(data);
    if (log) log->push_back(r);
  }
  return model;
}

PoModel train_po_baseline(std::shared_ptr<const Graph> graph, std::span<const Sample> data, SolverKind solver,
                          const TrainConfig& cfg, std::vector<EpochReport>* log) {
  PoModel model(std::move(graph), solver);
  PoTrainer trainer(model, cfg);
  for (int e = 0; e < cfg.epochs; ++e) {
    auto r = trainer.train_epoch(data);
    if (log) log->push_back(r);
  }
  return model;
}

}  // namespace iolvm
