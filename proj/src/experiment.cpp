#include "iolvm/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "iolvm/error.hpp"
#include "iolvm/parallel.hpp"

namespace iolvm {

namespace fs = std::filesystem;

std::string to_string(ModelType t) {
  switch (t) {
    case ModelType::IoLvm: return "iolvm";
    case ModelType::Vae: return "vae";
    case ModelType::Po: return "po";
  }
  return "iolvm";
}

ModelType model_type_from_string(const std::string& s) {
  if (s == "iolvm") return ModelType::IoLvm;
  if (s == "vae") return ModelType::Vae;
  if (s == "po") return ModelType::Po;
  fail(ErrorCode::ConfigError, "unknown model type '" + s + "'");
}

// ---------------------------------------------------------------------------
// Config

const TrainConfig& ExperimentConfig::train_config(ModelType t) const {
  switch (t) {
    case ModelType::Vae: return vae_train;
    case ModelType::Po: return po_train;
    default: return train;
  }
}

std::uint64_t ExperimentConfig::hash() const {
  const std::string s = nlohmann::json(*this).dump();
  return fnv1a(s.data(), s.size());
}

std::uint64_t ExperimentConfig::resume_hash() const {
  ExperimentConfig c = *this;
  for (auto* t : {&c.train, &c.vae_train, &c.po_train}) {
    t->epochs = 0;
    t->threads = 1;
  }
  return c.hash();
}

namespace {

nlohmann::json box_to_json(const std::optional<Box>& b) {
  if (!b) return nullptr;
  return {b->x_min, b->x_max, b->y_min, b->y_max};
}

std::optional<Box> box_from_json(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 4 || v[0] > v[1] || v[2] > v[3])
    fail(ErrorCode::ConfigError, "detour_box must be [x_min, x_max, y_min, y_max]");
  return Box{v[0], v[1], v[2], v[3]};
}

}  // namespace

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  nlohmann::json data{{"kind", c.dataset.kind == DatasetKind::Waxman ? "waxman" : "tsp"}, {"n_train", c.dataset.n_train}};
  if (c.dataset.kind == DatasetKind::Waxman)
    data["spec"] = c.dataset.waxman;
  else
    data["spec"] = c.dataset.tsp;
  j = {{"name", c.name},
       {"dataset", data},
       {"model", c.model},
       {"train", c.train},
       {"baselines", {{"vae", c.vae_train}, {"po", c.po_train}}},
       {"inference",
        {{"kde_bandwidth", c.inference.kde_bandwidth ? nlohmann::json(*c.inference.kde_bandwidth) : nlohmann::json()},
         {"samples_per_record", c.inference.samples_per_record},
         {"tau", c.inference.outlier.tau},
         {"n_z", c.inference.outlier.n_z},
         {"n_costs", c.inference.outlier.n_costs},
         {"detour_box", box_to_json(c.inference.detour_box)}}},
       {"sweep_betas", c.sweep_betas},
       {"checkpoint_every", c.checkpoint_every}};
}

ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  try {
    c.name = j.value("name", c.name);
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      const std::string kind = d.value("kind", std::string("waxman"));
      if (kind == "waxman") {
        c.dataset.kind = DatasetKind::Waxman;
        c.dataset.waxman = d.at("spec").get<WaxmanSpec>();
      } else if (kind == "tsp") {
        c.dataset.kind = DatasetKind::Tsp;
        c.dataset.tsp = d.at("spec").get<TspCostSpec>();
      } else {
        fail(ErrorCode::ConfigError, "unknown dataset kind '" + kind + "'");
      }
      c.dataset.n_train = d.value("n_train", c.dataset.n_train);
    }
    if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
    if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
    // Baselines inherit the main training config and override selected fields.
    c.vae_train = c.train;
    c.po_train = c.train;
    if (j.contains("baselines")) {
      const auto& b = j.at("baselines");
      if (b.contains("vae")) from_json(b.at("vae"), c.vae_train);
      if (b.contains("po")) from_json(b.at("po"), c.po_train);
    }
    if (j.contains("inference")) {
      const auto& in = j.at("inference");
      if (in.contains("kde_bandwidth") && !in.at("kde_bandwidth").is_null())
        c.inference.kde_bandwidth = in.at("kde_bandwidth").get<double>();
      c.inference.samples_per_record = in.value("samples_per_record", c.inference.samples_per_record);
      c.inference.outlier.tau = in.value("tau", c.inference.outlier.tau);
      c.inference.outlier.n_z = in.value("n_z", c.inference.outlier.n_z);
      c.inference.outlier.n_costs = in.value("n_costs", c.inference.outlier.n_costs);
      if (in.contains("detour_box")) c.inference.detour_box = box_from_json(in.at("detour_box"));
    }
    c.sweep_betas = j.value("sweep_betas", c.sweep_betas);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorCode::ConfigError, std::string("experiment config: ") + ex.what());
  }
  if (!(c.inference.outlier.tau > 0.0 && c.inference.outlier.tau <= 1.0))
    fail(ErrorCode::InvalidTau, "tau must lie in (0, 1]");
  if (c.inference.samples_per_record == 0) fail(ErrorCode::ConfigError, "samples_per_record must be >= 1");
  if (c.checkpoint_every < 1) fail(ErrorCode::ConfigError, "checkpoint_every must be >= 1");
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) { return experiment_from_json(load_json(path)); }

void apply_seed(ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.dataset.waxman.seed = seed;
  cfg.dataset.tsp.seed = seed;
  cfg.train.seed = seed;
  cfg.vae_train.seed = seed;
  cfg.po_train.seed = seed;
}

// ---------------------------------------------------------------------------
// Data

DataSplit generate_data(const DatasetConfig& cfg) {
  const Dataset all = cfg.kind == DatasetKind::Waxman ? gen_waxman_dataset(cfg.waxman) : gen_tsp_dataset(cfg.tsp);
  auto [train, test] = split_dataset(all, cfg.n_train);
  return {std::move(train), std::move(test)};
}

void save_data_dir(const DataSplit& data, const fs::path& dir) {
  fs::create_directories(dir);
  save_graph(*data.train.graph, (dir / "graph.json").string());
  save_dataset(data.train, (dir / "train.jsonl").string());
  save_dataset(data.test, (dir / "test.jsonl").string());
}

DataSplit load_data_dir(const fs::path& dir) {
  auto graph = std::make_shared<const Graph>(load_graph((dir / "graph.json").string()));
  return {load_dataset((dir / "train.jsonl").string(), graph), load_dataset((dir / "test.jsonl").string(), graph)};
}

void save_json(const nlohmann::json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

nlohmann::json load_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorCode::ParseError, path.string() + ": " + ex.what());
  }
}

// ---------------------------------------------------------------------------
// Training sessions

struct TrainingSession::State {
  std::unique_ptr<IoLvmModel> iolvm;
  std::unique_ptr<IoLvmTrainer> iolvm_trainer;
  std::unique_ptr<VaeModel> vae;
  std::unique_ptr<VaeTrainer> vae_trainer;
  std::unique_ptr<PoModel> po;
  std::unique_ptr<PoTrainer> po_trainer;
};

TrainingSession::TrainingSession(TrainingSession&&) noexcept = default;
TrainingSession& TrainingSession::operator=(TrainingSession&&) noexcept = default;
TrainingSession::~TrainingSession() = default;

TrainingSession::TrainingSession(ModelType type, std::shared_ptr<const Graph> graph, const ModelConfig& mcfg,
                                 const TrainConfig& tcfg)
    : type_(type), tcfg_(tcfg), state_(std::make_unique<State>()) {
  tcfg_.validate();
  switch (type) {
    case ModelType::IoLvm:
      state_->iolvm = std::make_unique<IoLvmModel>(graph, mcfg, tcfg.seed);
      state_->iolvm_trainer = std::make_unique<IoLvmTrainer>(*state_->iolvm, tcfg);
      break;
    case ModelType::Vae:
      state_->vae = std::make_unique<VaeModel>(graph, mcfg, tcfg.seed);
      state_->vae_trainer = std::make_unique<VaeTrainer>(*state_->vae, tcfg);
      break;
    case ModelType::Po:
      state_->po = std::make_unique<PoModel>(graph, mcfg.solver);
      state_->po_trainer = std::make_unique<PoTrainer>(*state_->po, tcfg);
      break;
  }
}

TrainingSession TrainingSession::from_checkpoint(const nlohmann::json& j, std::shared_ptr<const Graph> graph) {
  TrainingSession s;
  try {
    if (j.at("format").get<std::string>() != "iolvm-checkpoint" || j.at("version").get<int>() != 1)
      fail(ErrorCode::ParseError, "unsupported checkpoint format");
    s.type_ = model_type_from_string(j.at("model_type").get<std::string>());
    s.tcfg_ = j.at("train_config").get<TrainConfig>();
    s.tcfg_.threads = default_thread_count();
    s.state_ = std::make_unique<State>();
    const auto& m = j.at("model");
    const auto& tr = j.at("trainer");
    switch (s.type_) {
      case ModelType::IoLvm:
        s.state_->iolvm = std::make_unique<IoLvmModel>(IoLvmModel::from_json(m, graph));
        s.state_->iolvm_trainer = std::make_unique<IoLvmTrainer>(*s.state_->iolvm, s.tcfg_);
        s.state_->iolvm_trainer->restore_state(tr);
        break;
      case ModelType::Vae:
        s.state_->vae = std::make_unique<VaeModel>(VaeModel::from_json(m, graph));
        s.state_->vae_trainer = std::make_unique<VaeTrainer>(*s.state_->vae, s.tcfg_);
        s.state_->vae_trainer->restore_state(tr);
        break;
      case ModelType::Po:
        s.state_->po = std::make_unique<PoModel>(PoModel::from_json(m, graph));
        s.state_->po_trainer = std::make_unique<PoTrainer>(*s.state_->po, s.tcfg_);
        s.state_->po_trainer->restore_state(tr);
        break;
    }
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorCode::ParseError, std::string("checkpoint: ") + ex.what());
  }
  return s;
}

EpochReport TrainingSession::train_epoch(std::span<const Sample> data) {
  switch (type_) {
    case ModelType::IoLvm: return state_->iolvm_trainer->train_epoch(data);
    case ModelType::Vae: return state_->vae_trainer->train_epoch(data);
    case ModelType::Po: return state_->po_trainer->train_epoch(data);
  }
  return {};
}

int TrainingSession::epochs_done() const {
  switch (type_) {
    case ModelType::IoLvm: return state_->iolvm_trainer->epochs_done();
    case ModelType::Vae: return state_->vae_trainer->epochs_done();
    case ModelType::Po: return state_->po_trainer->epochs_done();
  }
  return 0;
}

const IoLvmModel* TrainingSession::iolvm() const { return state_->iolvm.get(); }
const VaeModel* TrainingSession::vae() const { return state_->vae.get(); }
const PoModel* TrainingSession::po() const { return state_->po.get(); }

nlohmann::json TrainingSession::checkpoint(std::uint64_t config_hash) const {
  nlohmann::json model, trainer;
  const Graph* g = nullptr;
  switch (type_) {
    case ModelType::IoLvm:
      model = state_->iolvm->to_json();
      trainer = state_->iolvm_trainer->state_to_json();
      g = &state_->iolvm->graph();
      break;
    case ModelType::Vae:
      model = state_->vae->to_json();
      trainer = state_->vae_trainer->state_to_json();
      g = &state_->vae->graph();
      break;
    case ModelType::Po:
      model = state_->po->to_json();
      trainer = state_->po_trainer->state_to_json();
      g = &state_->po->graph();
      break;
  }
  return {{"format", "iolvm-checkpoint"},
          {"version", 1},
          {"model_type", to_string(type_)},
          {"graph_fingerprint", g->fingerprint()},
          {"num_edges", g->num_edges()},
          {"config_hash", config_hash},
          {"train_config", tcfg_},
          {"model", model},
          {"trainer", trainer}};
}

// ---------------------------------------------------------------------------
// Evaluation helpers

std::optional<SolutionVector> reconstruct_with(const TrainingSession& s, const Sample& sample) {
  switch (s.type()) {
    case ModelType::IoLvm: return s.iolvm()->reconstruct(sample.x, sample.p);
    case ModelType::Vae: {
      auto x = s.vae()->reconstruct(sample.x, sample.p);
      if (!validate_solution(s.vae()->graph(), x, sample.p).feasible) return std::nullopt;
      return x;
    }
    case ModelType::Po: return solve(s.po()->solver_kind(), s.po()->graph(), s.po()->costs(), sample.p);
  }
  return std::nullopt;
}

ReconstructionSummary summarize(std::span<const Sample> truth, std::vector<std::optional<SolutionVector>> outputs) {
  if (truth.size() != outputs.size()) fail(ErrorCode::LengthMismatch, "one output per sample is required");
  if (truth.empty()) fail(ErrorCode::EmptyInput, "nothing to summarize");
  ReconstructionSummary r;
  std::vector<ReconstructionPair> pairs;
  std::vector<SolutionVector> feasible;
  double iou_sum = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    pairs.push_back({truth[i].x, outputs[i]});
    if (outputs[i]) {
      iou_sum += iou(truth[i].x, *outputs[i]);
      feasible.push_back(*outputs[i]);
    }
  }
  const auto n = static_cast<double>(truth.size());
  r.full_match = full_match_rate(pairs);
  r.edge_recall = edge_recall(pairs);
  r.mean_iou = iou_sum / n;
  r.feasible_fraction = static_cast<double>(feasible.size()) / n;
  r.distinct = feasible.empty() ? 0 : distinct_path_count(feasible);
  r.outputs = std::move(outputs);
  return r;
}

ReconstructionSummary summarize_reconstructions(const TrainingSession& s, std::span<const Sample> data, int threads) {
  std::vector<std::optional<SolutionVector>> out(data.size());
  parallel_for(data.size(), threads, [&](std::size_t i) { out[i] = reconstruct_with(s, data[i]); });
  return summarize(data, std::move(out));
}

SolutionVector euclidean_baseline(const Graph& g, SolverKind kind, const Requirement& p) {
  std::vector<double> y(g.num_edges());
  for (std::size_t e = 0; e < y.size(); ++e) y[e] = g.edge_length(static_cast<EdgeId>(e));
  return solve(kind, g, y, p);
}

std::vector<SolutionVector> sample_paths(const TrainingSession& s, std::span<const Sample> train,
                                         std::span<const Requirement> requirements, std::size_t per_record,
                                         std::optional<double> kde_bandwidth, std::uint64_t seed, int threads) {
  const std::size_t n = requirements.size() * per_record;
  std::vector<SolutionVector> out(n);
  if (s.type() == ModelType::Po) {
    parallel_for(n, threads, [&](std::size_t i) {
      out[i] = s.po()->sample(requirements[i / per_record], derive_seed(seed, {i, 7}));
    });
    return out;
  }
  Rng rng(seed);
  const Eigen::MatrixXd mu = s.type() == ModelType::IoLvm ? s.iolvm()->encode_means(train) : s.vae()->encode_means(train);
  const LatentKde kde = kde_fit(mu, kde_bandwidth);
  const Eigen::MatrixXd z = kde_sample(kde, n, rng);
  if (s.type() == ModelType::IoLvm) {
    const IoLvmModel& m = *s.iolvm();
    const Eigen::MatrixXd y = m.decode_costs(z);
    parallel_for(n, threads, [&](std::size_t i) {
      out[i] = solve(m.solver_kind(), m.graph(), {y.col(static_cast<Eigen::Index>(i)).data(), m.graph().num_edges()},
                     requirements[i / per_record]);
    });
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const Eigen::VectorXd prob = s.vae()->decode_probabilities(z.col(static_cast<Eigen::Index>(i)));
      SolutionVector x(static_cast<std::size_t>(prob.size()));
      for (Eigen::Index e = 0; e < prob.size(); ++e) x.set(static_cast<std::size_t>(e), prob(e) >= 0.5);
      out[i] = std::move(x);
    }
  }
  return out;
}

DistributionScores compare_distributions(std::span<const SolutionVector> predicted,
                                         std::span<const SolutionVector> reference) {
  const auto a = edge_usage(predicted, false);
  const auto b = edge_usage(reference, false);
  if (a.size() != b.size()) fail(ErrorCode::LengthMismatch, "distributions over different graphs");
  const double scale = static_cast<double>(reference.size()) / static_cast<double>(predicted.size());
  std::vector<double> scaled(a.size());
  for (std::size_t e = 0; e < a.size(); ++e) scaled[e] = a[e] * scale;

  auto normalize = [](std::vector<double> v) {
    const double s = std::accumulate(v.begin(), v.end(), 0.0);
    if (s <= 0.0) fail(ErrorCode::NotNormalized, "edge usage is empty");
    for (double& x : v) x /= s;
    return v;
  };
  return {js_divergence(normalize(a), normalize(b)), rmse_edge_usage(scaled, b)};
}

namespace {

std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail(ErrorCode::LengthMismatch, "spearman operands differ in length");
  if (a.size() < 2) fail(ErrorCode::EmptyInput, "spearman needs at least two points");
  const auto ra = ranks(a), rb = ranks(b);
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / static_cast<double>(ra.size());
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / static_cast<double>(rb.size());
  double num = 0.0, da = 0.0, db = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    num += (ra[i] - ma) * (rb[i] - mb);
    da += (ra[i] - ma) * (ra[i] - ma);
    db += (rb[i] - mb) * (rb[i] - mb);
  }
  if (da == 0.0 || db == 0.0) return 0.0;
  return num / std::sqrt(da * db);
}

void RunManifest::write(const fs::path& dir) const {
  fs::create_directories(dir);
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(config_hash));
  save_json({{"command", command},
             {"config_path", config_path},
             {"seed", seed},
             {"config_hash", hash},
             {"inputs", inputs},
             {"outputs", outputs},
             {"seconds", seconds},
             {"extra", extra}},
            dir / "manifest.json");
}

}  // namespace iolvm
