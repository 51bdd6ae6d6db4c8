#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "iolvm/graph.hpp"
#include "iolvm/neural.hpp"
#include "iolvm/rng.hpp"
#include "iolvm/solvers.hpp"

namespace iolvm {

/// One training pair (x, p). Carries no metadata, so labels attached to a
/// dataset cannot reach the training code.
struct Sample {
  SolutionVector x;
  Requirement p;
};

/// Number of reals appended to the edge bits: normalized (sx, sy, tx, ty).
inline constexpr int kRequirementFeatures = 4;

Eigen::Vector4d requirement_encoding(const Graph& g, const Requirement& p);
/// (|E| + 4) x B matrix of encoder inputs.
Eigen::MatrixXd encoder_inputs(const Graph& g, std::span<const Sample> batch);

struct ModelConfig {
  int latent_dim = 2;
  std::vector<int> hidden{128, 128};
  SolverKind solver = SolverKind::Spp;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct Posterior {
  Eigen::VectorXd mu;
  Eigen::VectorXd sigma;
};

/// Encoder/decoder pair around a black-box solver: the encoder emits
/// (mu, log sigma) for q(z | x, p); the decoder's Softplus head maps z to a
/// strictly positive edge-cost vector.
class IoLvmModel {
 public:
  IoLvmModel(std::shared_ptr<const Graph> graph, ModelConfig cfg, std::uint64_t seed);
  IoLvmModel(std::shared_ptr<const Graph> graph, ModelConfig cfg, Mlp encoder, Mlp decoder);

  const Graph& graph() const { return *graph_; }
  std::shared_ptr<const Graph> graph_ptr() const { return graph_; }
  const ModelConfig& config() const { return cfg_; }
  int latent_dim() const { return cfg_.latent_dim; }
  SolverKind solver_kind() const { return cfg_.solver; }

  Mlp& encoder() { return encoder_; }
  const Mlp& encoder() const { return encoder_; }
  Mlp& decoder() { return decoder_; }
  const Mlp& decoder() const { return decoder_; }

  Posterior encode(const SolutionVector& x, const Requirement& p) const;
  /// Posterior means for a batch, k x B.
  Eigen::MatrixXd encode_means(std::span<const Sample> batch) const;
  std::vector<double> decode_cost(const Eigen::VectorXd& z) const;
  /// Costs for a batch of latents (k x B) -> |E| x B.
  Eigen::MatrixXd decode_costs(const Eigen::MatrixXd& z) const;

  /// omega(decode(mu(x, p)), p), no perturbation.
  SolutionVector reconstruct(const SolutionVector& x, const Requirement& p,
                             const SolverOptions& opts = {}) const;

  nlohmann::json to_json() const;
  static IoLvmModel from_json(const nlohmann::json& j, std::shared_ptr<const Graph> graph);

 private:
  std::shared_ptr<const Graph> graph_;
  ModelConfig cfg_;
  Mlp encoder_;
  Mlp decoder_;
};

/// z = mu + sigma * xi with xi ~ N(0, I).
Eigen::VectorXd reparameterize(const Eigen::VectorXd& mu, const Eigen::VectorXd& sigma, Rng& rng);

/// Single-sample perturbed Fenchel-Young estimate <y, x> - <y + eps, x_hat>.
double fy_loss(std::span<const double> y, const SolutionVector& x, const SolutionVector& x_hat,
               std::span<const double> eps);

/// Gradient of the FY loss w.r.t. the costs: x - x_hat.
std::vector<double> fy_grad_y(const SolutionVector& x, const SolutionVector& x_hat);

/// KL(N(mu, diag sigma^2) || N(0, I)).
double kl_gaussian(const Eigen::VectorXd& mu, const Eigen::VectorXd& sigma);

struct TrainConfig {
  double beta = 1.0;
  /// Perturbation scale relative to the batch mean decoded edge cost.
  double sigma_eps_relative = 0.25;
  /// When set, overrides the relative rule with a constant scale.
  std::optional<double> sigma_eps_absolute;
  double learning_rate = 4e-5;
  int batch_size = 250;
  int epochs = 100;
  OptimizerKind optimizer = OptimizerKind::RmsProp;
  std::uint64_t seed = 0;
  double clamp_floor = 1e-6;
  int threads = 1;

  OptimizerConfig optimizer_config() const {
    return OptimizerConfig::defaults_for(optimizer, learning_rate);
  }
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct EpochReport {
  int epoch = 0;
  double loss = 0.0;
  /// FY term for IO-LVM and PO; binary cross-entropy for the VAE.
  double reconstruction = 0.0;
  double kl = 0.0;
  double iou = 0.0;
  std::size_t distinct_paths = 0;
  std::size_t clamp_count = 0;
  double sigma_eps = 0.0;
  double mean_mu_norm = 0.0;
  /// Fraction of training reconstructions that are feasible (always 1 for
  /// solver-backed models).
  double feasible_fraction = 1.0;
};

std::string epoch_csv_header();
std::string to_csv_row(const EpochReport& r);

/// Throws InfeasibleSample unless every sample is feasible.
void check_samples(const Graph& g, std::span<const Sample> data);

/// Batch objective and parameter gradients with the latent noise `xi` (k x B)
/// and the solver outputs held fixed.
struct BatchGradients {
  double loss = 0.0;
  Mlp::Gradients encoder;
  Mlp::Gradients decoder;
};

/// mean_b <y_b, x_b - x_hat_b> + beta * mean_b KL_b.
BatchGradients iolvm_gradients(const IoLvmModel& m, std::span<const Sample> batch, const Eigen::MatrixXd& xi,
                               std::span<const SolutionVector> x_hat, double beta);

/// Mini-batch trainer for the IO-LVM objective. Per sample it encodes,
/// reparameterizes, decodes, runs the perturbed solver once and
/// back-propagates (x - x_hat) through decoder and encoder together with
/// the beta-weighted KL gradient.
class IoLvmTrainer {
 public:
  IoLvmTrainer(IoLvmModel& model, TrainConfig cfg);

  EpochReport train_epoch(std::span<const Sample> data);
  int epochs_done() const { return epoch_; }
  const TrainConfig& config() const { return cfg_; }
  double last_sigma_eps() const { return last_sigma_eps_; }

  nlohmann::json state_to_json() const;
  void restore_state(const nlohmann::json& j);

 private:
  IoLvmModel& model_;
  TrainConfig cfg_;
  Optimizer enc_opt_;
  Optimizer dec_opt_;
  int epoch_ = 0;
  double last_sigma_eps_ = 0.0;
};

/// Shuffled order for one epoch.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch);

// ---------------------------------------------------------------------------
// VAE baseline: same encoder, Sigmoid decoder over per-edge usage.

class VaeModel {
 public:
  VaeModel(std::shared_ptr<const Graph> graph, ModelConfig cfg, std::uint64_t seed);
  VaeModel(std::shared_ptr<const Graph> graph, ModelConfig cfg, Mlp encoder, Mlp decoder);

  const Graph& graph() const { return *graph_; }
  const ModelConfig& config() const { return cfg_; }
  int latent_dim() const { return cfg_.latent_dim; }
  Mlp& encoder() { return encoder_; }
  const Mlp& encoder() const { return encoder_; }
  Mlp& decoder() { return decoder_; }
  const Mlp& decoder() const { return decoder_; }

  Posterior encode(const SolutionVector& x, const Requirement& p) const;
  Eigen::MatrixXd encode_means(std::span<const Sample> batch) const;
  /// Per-edge usage probabilities in (0, 1).
  Eigen::VectorXd decode_probabilities(const Eigen::VectorXd& z) const;
  /// Decoder at mu, binarized at 0.5; feasibility is not guaranteed.
  SolutionVector reconstruct(const SolutionVector& x, const Requirement& p) const;

  nlohmann::json to_json() const;
  static VaeModel from_json(const nlohmann::json& j, std::shared_ptr<const Graph> graph);

 private:
  std::shared_ptr<const Graph> graph_;
  ModelConfig cfg_;
  Mlp encoder_;
  Mlp decoder_;
};

/// mean_b (BCE_b + beta * KL_b).
BatchGradients vae_gradients(const VaeModel& m, std::span<const Sample> batch, const Eigen::MatrixXd& xi, double beta);

/// beta-VAE with a Bernoulli likelihood on the edge bits.
class VaeTrainer {
 public:
  VaeTrainer(VaeModel& model, TrainConfig cfg);

  EpochReport train_epoch(std::span<const Sample> data);
  int epochs_done() const { return epoch_; }

  nlohmann::json state_to_json() const;
  void restore_state(const nlohmann::json& j);

 private:
  VaeModel& model_;
  TrainConfig cfg_;
  Optimizer enc_opt_;
  Optimizer dec_opt_;
  int epoch_ = 0;
};

// ---------------------------------------------------------------------------
// PO baseline: one global cost vector y = softplus(w) trained with the same
// perturbed FY loss, sampled as omega(y + eps) at inference.

class PoModel {
 public:
  PoModel(std::shared_ptr<const Graph> graph, SolverKind solver);

  const Graph& graph() const { return *graph_; }
  SolverKind solver_kind() const { return solver_; }
  Eigen::VectorXd& free_parameters() { return free_; }
  const Eigen::VectorXd& free_parameters() const { return free_; }
  std::vector<double> costs() const;
  /// Perturbation scale used when sampling (the last training-time scale).
  double sigma_eps() const { return sigma_eps_; }
  void set_sigma_eps(double s) { sigma_eps_ = s; }

  SolutionVector sample(const Requirement& p, std::uint64_t seed, const SolverOptions& opts = {}) const;

  nlohmann::json to_json() const;
  static PoModel from_json(const nlohmann::json& j, std::shared_ptr<const Graph> graph);

 private:
  std::shared_ptr<const Graph> graph_;
  SolverKind solver_;
  Eigen::VectorXd free_;
  double sigma_eps_ = 0.0;
};

struct PoGradient {
  double loss = 0.0;
  Eigen::VectorXd grad;
};

/// mean_b <softplus(w), x_b - x_hat_b> and its gradient w.r.t. w.
PoGradient po_gradients(const PoModel& m, std::span<const Sample> batch, std::span<const SolutionVector> x_hat);

class PoTrainer {
 public:
  PoTrainer(PoModel& model, TrainConfig cfg);

  EpochReport train_epoch(std::span<const Sample> data);
  int epochs_done() const { return epoch_; }

  nlohmann::json state_to_json() const;
  void restore_state(const nlohmann::json& j);

 private:
  PoModel& model_;
  TrainConfig cfg_;
  Optimizer opt_;
  int epoch_ = 0;
};

/// Convenience drivers running cfg.epochs epochs from scratch.
IoLvmModel train_iolvm(std::shared_ptr<const Graph> graph, std::span<const Sample> data,
                       const ModelConfig& mcfg, const TrainConfig& cfg,
                       std::vector<EpochReport>* log = nullptr);
VaeModel train_vae_baseline(std::shared_ptr<const Graph> graph, std::span<const Sample> data,
                            const ModelConfig& mcfg, const TrainConfig& cfg,
                            std::vector<EpochReport>* log = nullptr);
PoModel train_po_baseline(std::shared_ptr<const Graph> graph, std::span<const Sample> data,
                          SolverKind solver, const TrainConfig& cfg,
                          std::vector<EpochReport>* log = nullptr);

}  // namespace iolvm
