#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iolvm/datagen.hpp"
#include "iolvm/eval.hpp"
#include "iolvm/inference.hpp"
#include "iolvm/model.hpp"

namespace iolvm {

enum class DatasetKind { Waxman, Tsp };
enum class ModelType { IoLvm, Vae, Po };

std::string to_string(ModelType t);
ModelType model_type_from_string(const std::string& s);

struct DatasetConfig {
  DatasetKind kind = DatasetKind::Waxman;
  WaxmanSpec waxman;
  TspCostSpec tsp;
  std::size_t n_train = 1500;
};

struct InferenceConfig {
  std::optional<double> kde_bandwidth;
  /// Model draws per held-out record when predicting distributions.
  std::size_t samples_per_record = 1;
  OutlierOptions outlier;
  /// Region whose edges are removed to build an enforced detour.
  std::optional<Box> detour_box;
};

/// Everything one named experiment needs; loaded from a JSON file.
struct ExperimentConfig {
  std::string name = "experiment";
  DatasetConfig dataset;
  ModelConfig model;
  TrainConfig train;
  TrainConfig vae_train;
  TrainConfig po_train;
  InferenceConfig inference;
  std::vector<double> sweep_betas{0.01, 0.1, 1.0, 10.0};
  int checkpoint_every = 10;

  const TrainConfig& train_config(ModelType t) const;
  std::uint64_t hash() const;
  /// Hash with epoch counts and thread counts zeroed; a checkpoint may be
  /// resumed under any config sharing it.
  std::uint64_t resume_hash() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
ExperimentConfig experiment_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Reseeds data generation and every trainer from one master seed.
void apply_seed(ExperimentConfig& cfg, std::uint64_t seed);

struct DataSplit {
  Dataset train;
  Dataset test;
};

DataSplit generate_data(const DatasetConfig& cfg);
/// graph.json, train.jsonl, test.jsonl.
void save_data_dir(const DataSplit& data, const std::filesystem::path& dir);
DataSplit load_data_dir(const std::filesystem::path& dir);

/// One model plus its trainer, independent of model type.
class TrainingSession {
 public:
  TrainingSession(ModelType type, std::shared_ptr<const Graph> graph, const ModelConfig& mcfg,
                  const TrainConfig& tcfg);
  /// Restores model and optimizer state; rejects a checkpoint for another graph.
  static TrainingSession from_checkpoint(const nlohmann::json& j, std::shared_ptr<const Graph> graph);

  TrainingSession(TrainingSession&&) noexcept;
  TrainingSession& operator=(TrainingSession&&) noexcept;
  ~TrainingSession();

  EpochReport train_epoch(std::span<const Sample> data);
  int epochs_done() const;
  ModelType type() const { return type_; }
  const TrainConfig& train_config() const { return tcfg_; }
  void set_target_epochs(int epochs) { tcfg_.epochs = epochs; }

  const IoLvmModel* iolvm() const;
  const VaeModel* vae() const;
  const PoModel* po() const;

  nlohmann::json checkpoint(std::uint64_t config_hash) const;

 private:
  TrainingSession() = default;
  struct State;
  ModelType type_ = ModelType::IoLvm;
  TrainConfig tcfg_;
  std::unique_ptr<State> state_;
};

void save_json(const nlohmann::json& j, const std::filesystem::path& path);
nlohmann::json load_json(const std::filesystem::path& path);

/// Deterministic reconstruction under each model type; nullopt marks an
/// infeasible output.
std::optional<SolutionVector> reconstruct_with(const TrainingSession& s, const Sample& sample);

struct ReconstructionSummary {
  double full_match = 0.0;
  double edge_recall = 0.0;
  double mean_iou = 0.0;
  double feasible_fraction = 0.0;
  std::size_t distinct = 0;
  std::vector<std::optional<SolutionVector>> outputs;
};

/// Scores predictions against `truth`; infeasible outputs count as misses
/// with IoU 0.
ReconstructionSummary summarize(std::span<const Sample> truth, std::vector<std::optional<SolutionVector>> outputs);
ReconstructionSummary summarize_reconstructions(const TrainingSession& s, std::span<const Sample> data,
                                                int threads = 1);

/// Unperturbed solve on Euclidean edge lengths.
SolutionVector euclidean_baseline(const Graph& g, SolverKind kind, const Requirement& p);

/// Draws `per_record` paths for each requirement: KDE latents for the
/// latent models (fitted on `train` means), perturbed costs for PO.
std::vector<SolutionVector> sample_paths(const TrainingSession& s, std::span<const Sample> train,
                                         std::span<const Requirement> requirements, std::size_t per_record,
                                         std::optional<double> kde_bandwidth, std::uint64_t seed, int threads = 1);

struct DistributionScores {
  double jsd = 0.0;
  double rmse = 0.0;
};

/// JSD on normalized edge usage and RMSE on usage counts scaled to the
/// reference cardinality.
DistributionScores compare_distributions(std::span<const SolutionVector> predicted,
                                         std::span<const SolutionVector> reference);

/// Spearman rank correlation (average ranks for ties).
double spearman(std::span<const double> a, std::span<const double> b);

/// Written next to every run's outputs.
struct RunManifest {
  std::string command;
  std::string config_path;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  double seconds = 0.0;
  nlohmann::json extra = nlohmann::json::object();

  void write(const std::filesystem::path& dir) const;
};

}  // namespace iolvm
