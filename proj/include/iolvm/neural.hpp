#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "iolvm/rng.hpp"

namespace iolvm {

enum class Activation { Identity, ReLU, Softplus, Sigmoid };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

/// Numerically stable log(1 + exp(x)).
double softplus(double x);
double sigmoid(double x);

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

/// Where the gradient handed to Mlp::backward is taken.
enum class GradientAt {
  Output,      // w.r.t. the activated output
  HeadInput,   // w.r.t. the output layer's pre-activation (logits)
};

/// Fully connected network: ReLU hidden layers and a configurable head.
/// Batches are matrices with one sample per column.
class Mlp {
 public:
  struct Cache {
    const Mlp* owner = nullptr;
    std::uint64_t version = 0;
    std::vector<Eigen::MatrixXd> inputs;   // input of each layer
    std::vector<Eigen::MatrixXd> preacts;  // pre-activation of each layer
    Eigen::MatrixXd output;
  };

  using Gradients = std::vector<DenseLayer>;

  Mlp() = default;
  /// Zero-initialised network with layer widths dims[0] -> ... -> dims.back().
  Mlp(std::vector<int> dims, Activation head);

  /// He-uniform weights, zero biases.
  static Mlp he_uniform(std::vector<int> dims, Activation head, Rng& rng);

  int input_dim() const { return dims_.front(); }
  int output_dim() const { return dims_.back(); }
  const std::vector<int>& dims() const { return dims_; }
  Activation head() const { return head_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  /// Mutable access; invalidates outstanding caches.
  std::vector<DenseLayer>& mutable_layers();

  Eigen::MatrixXd forward(const Eigen::MatrixXd& input, Cache* cache = nullptr) const;
  Eigen::VectorXd forward(const Eigen::VectorXd& input, Cache* cache = nullptr) const;

  /// Accumulates parameter gradients of <grad, output> (summed over the
  /// batch) into `grads` and returns the gradient w.r.t. the input.
  Eigen::MatrixXd backward(const Cache& cache, const Eigen::MatrixXd& grad, Gradients& grads,
                           GradientAt at = GradientAt::Output) const;

  Gradients zero_gradients() const;

  /// Flat views over every parameter tensor (weights then bias per layer);
  /// invalidates outstanding caches.
  std::vector<std::span<double>> parameter_views();
  static std::vector<std::span<const double>> gradient_views(const Gradients& g);
  std::vector<std::size_t> parameter_sizes() const;
  std::size_t parameter_count() const;
  bool all_finite() const;

  nlohmann::json to_json() const;
  static Mlp from_json(const nlohmann::json& j);

 private:
  std::vector<int> dims_;
  Activation head_ = Activation::Identity;
  std::vector<DenseLayer> layers_;
  std::uint64_t version_ = 0;
};

enum class OptimizerKind { RmsProp, AdamW };

std::string to_string(OptimizerKind k);
OptimizerKind optimizer_kind_from_string(const std::string& s);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::RmsProp;
  double learning_rate = 4e-5;
  double rms_alpha = 0.99;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;

  static OptimizerConfig defaults_for(OptimizerKind kind, double lr);
};

void to_json(nlohmann::json& j, const OptimizerConfig& c);
void from_json(const nlohmann::json& j, OptimizerConfig& c);

/// RMSProp / AdamW with the PyTorch update rules.
class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(OptimizerConfig cfg, std::vector<std::size_t> sizes);

  void step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads);

  const OptimizerConfig& config() const { return cfg_; }
  std::uint64_t steps() const { return steps_; }

  nlohmann::json to_json() const;
  static Optimizer from_json(const nlohmann::json& j);

 private:
  OptimizerConfig cfg_;
  std::vector<std::size_t> sizes_;
  std::vector<Eigen::VectorXd> first_;   // AdamW first moment
  std::vector<Eigen::VectorXd> second_;  // squared-gradient average
  std::uint64_t steps_ = 0;
};

}  // namespace iolvm
