#include "iolvm/neural.hpp"

#include <cmath>
#include <random>

#include "iolvm/error.hpp"

namespace iolvm {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::ReLU: return "relu";
    case Activation::Softplus: return "softplus";
    case Activation::Sigmoid: return "sigmoid";
  }
  return "unknown";
}

Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::Identity;
  if (s == "relu") return Activation::ReLU;
  if (s == "softplus") return Activation::Softplus;
  if (s == "sigmoid") return Activation::Sigmoid;
  fail(ErrorCode::ParseError, "unknown activation '" + s + "'");
}

double softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {

void apply(Activation a, Eigen::MatrixXd& m) {
  switch (a) {
    case Activation::Identity: break;
    case Activation::ReLU: m = m.cwiseMax(0.0); break;
    case Activation::Softplus: m = m.unaryExpr([](double v) { return softplus(v); }); break;
    case Activation::Sigmoid: m = m.unaryExpr([](double v) { return sigmoid(v); }); break;
  }
}

// Multiplies `grad` in place by the activation derivative at `pre`.
void apply_derivative(Activation a, const Eigen::MatrixXd& pre, Eigen::MatrixXd& grad) {
  switch (a) {
    case Activation::Identity: break;
    case Activation::ReLU:
      grad = grad.cwiseProduct(pre.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; }));
      break;
    case Activation::Softplus:
      grad = grad.cwiseProduct(pre.unaryExpr([](double v) { return sigmoid(v); }));
      break;
    case Activation::Sigmoid:
      grad = grad.cwiseProduct(pre.unaryExpr([](double v) {
        const double s = sigmoid(v);
        return s * (1.0 - s);
      }));
      break;
  }
}

}  // namespace

Mlp::Mlp(std::vector<int> dims, Activation head) : dims_(std::move(dims)), head_(head) {
  if (dims_.size() < 2) fail(ErrorCode::ShapeMismatch, "an MLP needs at least input and output dims");
  for (int d : dims_)
    if (d <= 0) fail(ErrorCode::ShapeMismatch, "layer widths must be positive");
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    layers_.push_back({Eigen::MatrixXd::Zero(dims_[l + 1], dims_[l]), Eigen::VectorXd::Zero(dims_[l + 1])});
  }
}

Mlp Mlp::he_uniform(std::vector<int> dims, Activation head, Rng& rng) {
  Mlp m(std::move(dims), head);
  for (auto& layer : m.layers_) {
    const double bound = std::sqrt(6.0 / static_cast<double>(layer.weight.cols()));
    std::uniform_real_distribution<double> u(-bound, bound);
    // Column-major fill order is part of the reproducibility contract.
    for (Eigen::Index j = 0; j < layer.weight.cols(); ++j)
      for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) layer.weight(i, j) = u(rng);
  }
  return m;
}

std::vector<DenseLayer>& Mlp::mutable_layers() {
  ++version_;
  return layers_;
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& input, Cache* cache) const {
  if (input.rows() != input_dim())
    fail(ErrorCode::DimensionMismatch, "MLP expects input dim " + std::to_string(input_dim()) +
                                           ", got " + std::to_string(input.rows()));
  if (cache) {
    cache->owner = this;
    cache->version = version_;
    cache->inputs.clear();
    cache->preacts.clear();
  }
  Eigen::MatrixXd a = input;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Eigen::MatrixXd z = layers_[l].weight * a;
    z.colwise() += layers_[l].bias;
    if (cache) {
      cache->inputs.push_back(std::move(a));
      cache->preacts.push_back(z);
    }
    apply(l + 1 == layers_.size() ? head_ : Activation::ReLU, z);
    a = std::move(z);
  }
  if (cache) cache->output = a;
  return a;
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& input, Cache* cache) const {
  return forward(Eigen::MatrixXd(input), cache).col(0);
}

Eigen::MatrixXd Mlp::backward(const Cache& cache, const Eigen::MatrixXd& grad, Gradients& grads,
                              GradientAt at) const {
  if (cache.owner != this || cache.version != version_ || cache.preacts.size() != layers_.size())
    fail(ErrorCode::StaleCache, "backward called with a cache from a different forward pass");
  if (grad.rows() != output_dim() || grad.cols() != cache.output.cols())
    fail(ErrorCode::DimensionMismatch, "gradient shape does not match the cached output");
  if (grads.size() != layers_.size()) grads = zero_gradients();

  Eigen::MatrixXd delta = grad;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const bool is_head = l + 1 == layers_.size();
    if (!(is_head && at == GradientAt::HeadInput))
      apply_derivative(is_head ? head_ : Activation::ReLU, cache.preacts[l], delta);
    grads[l].weight.noalias() += delta * cache.inputs[l].transpose();
    grads[l].bias.noalias() += delta.rowwise().sum();
    delta = layers_[l].weight.transpose() * delta;
  }
  return delta;
}

Mlp::Gradients Mlp::zero_gradients() const {
  Gradients g;
  for (const auto& layer : layers_)
    g.push_back({Eigen::MatrixXd::Zero(layer.weight.rows(), layer.weight.cols()),
                 Eigen::VectorXd::Zero(layer.bias.size())});
  return g;
}

std::vector<std::span<double>> Mlp::parameter_views() {
  ++version_;
  std::vector<std::span<double>> views;
  for (auto& layer : layers_) {
    views.emplace_back(layer.weight.data(), static_cast<std::size_t>(layer.weight.size()));
    views.emplace_back(layer.bias.data(), static_cast<std::size_t>(layer.bias.size()));
  }
  return views;
}

std::vector<std::span<const double>> Mlp::gradient_views(const Gradients& g) {
  std::vector<std::span<const double>> views;
  for (const auto& layer : g) {
    views.emplace_back(layer.weight.data(), static_cast<std::size_t>(layer.weight.size()));
    views.emplace_back(layer.bias.data(), static_cast<std::size_t>(layer.bias.size()));
  }
  return views;
}

std::vector<std::size_t> Mlp::parameter_sizes() const {
  std::vector<std::size_t> sizes;
  for (const auto& layer : layers_) {
    sizes.push_back(static_cast<std::size_t>(layer.weight.size()));
    sizes.push_back(static_cast<std::size_t>(layer.bias.size()));
  }
  return sizes;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (auto s : parameter_sizes()) n += s;
  return n;
}

bool Mlp::all_finite() const {
  for (const auto& layer : layers_)
    if (!layer.weight.allFinite() || !layer.bias.allFinite()) return false;
  return true;
}

nlohmann::json Mlp::to_json() const {
  nlohmann::json j;
  j["dims"] = dims_;
  j["head"] = to_string(head_);
  auto& layers = j["layers"] = nlohmann::json::array();
  for (const auto& layer : layers_) {
    std::vector<double> w(layer.weight.data(), layer.weight.data() + layer.weight.size());
    std::vector<double> b(layer.bias.data(), layer.bias.data() + layer.bias.size());
    layers.push_back({{"weight", w}, {"bias", b}});
  }
  return j;
}

Mlp Mlp::from_json(const nlohmann::json& j) {
  Mlp m(j.at("dims").get<std::vector<int>>(), activation_from_string(j.at("head").get<std::string>()));
  const auto& layers = j.at("layers");
  if (layers.size() != m.layers_.size()) fail(ErrorCode::ShapeMismatch, "checkpoint layer count mismatch");
  for (std::size_t l = 0; l < m.layers_.size(); ++l) {
    const auto w = layers[l].at("weight").get<std::vector<double>>();
    const auto b = layers[l].at("bias").get<std::vector<double>>();
    auto& layer = m.layers_[l];
    if (w.size() != static_cast<std::size_t>(layer.weight.size()) ||
        b.size() != static_cast<std::size_t>(layer.bias.size()))
      fail(ErrorCode::ShapeMismatch, "checkpoint tensor size mismatch");
    layer.weight = Eigen::Map<const Eigen::MatrixXd>(w.data(), layer.weight.rows(), layer.weight.cols());
    layer.bias = Eigen::Map<const Eigen::VectorXd>(b.data(), layer.bias.size());
  }
  return m;
}

// ---------------------------------------------------------------------------

std::string to_string(OptimizerKind k) { return k == OptimizerKind::RmsProp ? "rmsprop" : "adamw"; }

OptimizerKind optimizer_kind_from_string(const std::string& s) {
  if (s == "rmsprop") return OptimizerKind::RmsProp;
  if (s == "adamw") return OptimizerKind::AdamW;
  fail(ErrorCode::ConfigError, "unknown optimizer '" + s + "'");
}

OptimizerConfig OptimizerConfig::defaults_for(OptimizerKind kind, double lr) {
  OptimizerConfig c;
  c.kind = kind;
  c.learning_rate = lr;
  c.weight_decay = kind == OptimizerKind::AdamW ? 0.01 : 0.0;
  return c;
}

void to_json(nlohmann::json& j, const OptimizerConfig& c) {
  j = {{"kind", to_string(c.kind)}, {"learning_rate", c.learning_rate}, {"rms_alpha", c.rms_alpha},
       {"beta1", c.beta1},         {"beta2", c.beta2},                 {"epsilon", c.epsilon},
       {"weight_decay", c.weight_decay}};
}

void from_json(const nlohmann::json& j, OptimizerConfig& c) {
  c.kind = optimizer_kind_from_string(j.at("kind").get<std::string>());
  c = OptimizerConfig::defaults_for(c.kind, j.value("learning_rate", c.learning_rate));
  c.rms_alpha = j.value("rms_alpha", c.rms_alpha);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
}

Optimizer::Optimizer(OptimizerConfig cfg, std::vector<std::size_t> sizes)
    : cfg_(cfg), sizes_(std::move(sizes)) {
  for (auto s : sizes_) {
    second_.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(s)));
    if (cfg_.kind == OptimizerKind::AdamW) first_.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(s)));
  }
}

void Optimizer::step(std::span<const std::span<double>> params,
                     std::span<const std::span<const double>> grads) {
  if (params.size() != sizes_.size() || grads.size() != sizes_.size())
    fail(ErrorCode::ShapeMismatch, "optimizer received a different number of tensors");
  for (std::size_t i = 0; i < sizes_.size(); ++i) {
    if (params[i].size() != sizes_[i] || grads[i].size() != sizes_[i])
      fail(ErrorCode::ShapeMismatch, "optimizer tensor " + std::to_string(i) + " has the wrong size");
  }
  ++steps_;
  const double lr = cfg_.learning_rate;
  for (std::size_t i = 0; i < sizes_.size(); ++i) {
    const auto n = static_cast<Eigen::Index>(sizes_[i]);
    Eigen::Map<Eigen::ArrayXd> p(params[i].data(), n);
    Eigen::Map<const Eigen::ArrayXd> g0(grads[i].data(), n);
    auto v = second_[i].array();
    if (cfg_.kind == OptimizerKind::RmsProp) {
      Eigen::ArrayXd g = g0;
      if (cfg_.weight_decay != 0.0) g += cfg_.weight_decay * p;
      v = cfg_.rms_alpha * v + (1.0 - cfg_.rms_alpha) * g.square();
      p -= lr * g / (v.sqrt() + cfg_.epsilon);
    } else {
      auto m = first_[i].array();
      p *= 1.0 - lr * cfg_.weight_decay;
      m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g0;
      v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g0.square();
      const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
      const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
      p -= lr * (m / bc1) / ((v / bc2).sqrt() + cfg_.epsilon);
    }
  }
}

nlohmann::json Optimizer::to_json() const {
  nlohmann::json j;
  j["config"] = cfg_;
  j["sizes"] = sizes_;
  j["steps"] = steps_;
  auto dump = [](const std::vector<Eigen::VectorXd>& bufs) {
    auto arr = nlohmann::json::array();
    for (const auto& b : bufs) arr.push_back(std::vector<double>(b.data(), b.data() + b.size()));
    return arr;
  };
  j["first"] = dump(first_);
  j["second"] = dump(second_);
  return j;
}

Optimizer Optimizer::from_json(const nlohmann::json& j) {
  Optimizer o(j.at("config").get<OptimizerConfig>(), j.at("sizes").get<std::vector<std::size_t>>());
  o.steps_ = j.at("steps").get<std::uint64_t>();
  auto load = [](const nlohmann::json& arr, std::vector<Eigen::VectorXd>& bufs) {
    if (arr.size() != bufs.size()) fail(ErrorCode::ShapeMismatch, "optimizer buffer count mismatch");
    for (std::size_t i = 0; i < bufs.size(); ++i) {
      const auto v = arr[i].get<std::vector<double>>();
      if (v.size() != static_cast<std::size_t>(bufs[i].size()))
        fail(ErrorCode::ShapeMismatch, "optimizer buffer size mismatch");
      bufs[i] = Eigen::Map<const Eigen::VectorXd>(v.data(), bufs[i].size());
    }
  };
  load(j.at("first"), o.first_);
  load(j.at("second"), o.second_);
  return o;
}

}  // namespace iolvm
