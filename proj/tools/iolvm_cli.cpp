// Command-line driver: dataset generation, training, and post-training
// analyses. Every command writes its outputs plus manifest.json into one
// directory.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iolvm/error.hpp"
#include "iolvm/experiment.hpp"
#include "iolvm/parallel.hpp"

namespace fs = std::filesystem;
using namespace iolvm;

namespace {

using Clock = std::chrono::steady_clock;

struct Common {
  std::string config;
  std::string data;
  std::string out;
  std::string run;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = default_thread_count();
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

ExperimentConfig resolve_config(const Common& c) {
  auto cfg = load_experiment_config(c.config);
  if (c.seed_set) apply_seed(cfg, c.seed);
  for (auto* t : {&cfg.train, &cfg.vae_train, &cfg.po_train}) t->threads = c.threads;
  return cfg;
}

DataSplit obtain_data(const ExperimentConfig& cfg, const std::string& data_dir) {
  return data_dir.empty() ? generate_data(cfg.dataset) : load_data_dir(data_dir);
}

std::vector<Sample> samples_of(const Dataset& d) { return d.samples(); }

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  for (const auto& l : lines) out << l << '\n';
}

struct MetricsWriter {
  std::vector<std::string> rows{metrics_csv_header()};
  std::string dataset, model;
  std::uint64_t seed = 0, hash = 0;

  void add(const std::string& name, double value, std::size_t n, std::optional<double> sd = std::nullopt,
           const std::string& model_override = "") {
    rows.push_back(to_csv_row(MetricReport{name, value, sd, n, dataset, model_override.empty() ? model : model_override,
                                           seed, hash}));
  }
  void write(const fs::path& dir) const { write_lines(dir / "metrics.csv", rows); }
};

void write_paths(const fs::path& path, std::span<const SolutionVector> xs) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  write_distribution_jsonl(out, aggregate(xs));
}

// A trained run directory: its resolved config, data, and model.
struct LoadedRun {
  ExperimentConfig cfg;
  DataSplit data;
  TrainingSession session;
};

LoadedRun load_run(const Common& c) {
  const fs::path run(c.run);
  ExperimentConfig cfg = experiment_from_json(load_json(run / "config.json"));
  for (auto* t : {&cfg.train, &cfg.vae_train, &cfg.po_train}) t->threads = c.threads;
  DataSplit data = obtain_data(cfg, c.data);
  TrainingSession session = TrainingSession::from_checkpoint(load_json(run / "checkpoint.json"), data.train.graph);
  return {std::move(cfg), std::move(data), std::move(session)};
}

const IoLvmModel& require_iolvm(const TrainingSession& s, const char* what) {
  if (!s.iolvm()) fail(ErrorCode::ConfigError, std::string(what) + " needs an IO-LVM run");
  return *s.iolvm();
}

RunManifest manifest_for(const std::string& command, const Common& c, const ExperimentConfig& cfg) {
  RunManifest m;
  m.command = command;
  m.config_path = c.config;
  m.seed = cfg.train.seed;
  m.config_hash = cfg.hash();
  if (!c.data.empty()) m.inputs.push_back(c.data);
  if (!c.run.empty()) m.inputs.push_back(c.run);
  return m;
}

// ---------------------------------------------------------------------------

int cmd_generate(const Common& c, const std::string& command, DatasetKind expected) {
  const auto t0 = Clock::now();
  const auto cfg = resolve_config(c);
  if (cfg.dataset.kind != expected) fail(ErrorCode::ConfigError, "config does not describe a dataset for " + command);
  const DataSplit data = generate_data(cfg.dataset);
  save_data_dir(data, c.out);
  auto m = manifest_for(command, c, cfg);
  m.outputs = {"graph.json", "train.jsonl", "test.jsonl"};
  m.extra = {{"nodes", data.train.graph->num_nodes()},
             {"edges", data.train.graph->num_edges()},
             {"train", data.train.size()},
             {"test", data.test.size()}};
  m.seconds = seconds_since(t0);
  m.write(c.out);
  return 0;
}

TrainingSession run_training(const ExperimentConfig& cfg, ModelType type, const DataSplit& data, const fs::path& out,
                             bool resume, std::vector<EpochReport>* reports) {
  fs::create_directories(out);
  save_json(cfg, out / "config.json");
  const auto train = samples_of(data.train);
  const TrainConfig& tcfg = cfg.train_config(type);
  const std::uint64_t hash = cfg.resume_hash();
  const fs::path ckpt = out / "checkpoint.json";
  const fs::path log_path = out / "training_log.csv";

  std::vector<std::string> log{epoch_csv_header()};
  std::optional<TrainingSession> session;
  if (resume && fs::exists(ckpt)) {
    const auto j = load_json(ckpt);
    if (j.at("config_hash").get<std::uint64_t>() != hash)
      fail(ErrorCode::ConfigError, "checkpoint was written under a different config");
    session.emplace(TrainingSession::from_checkpoint(j, data.train.graph));
    session->set_target_epochs(tcfg.epochs);
    std::ifstream in(log_path);
    std::string line;
    std::getline(in, line);
    for (int e = 0; e < session->epochs_done() && std::getline(in, line); ++e) log.push_back(line);
  } else {
    session.emplace(type, data.train.graph, cfg.model, tcfg);
  }

  while (session->epochs_done() < tcfg.epochs) {
    const auto r = session->train_epoch(train);
    log.push_back(to_csv_row(r));
    if (reports) reports->push_back(r);
    if (session->epochs_done() % cfg.checkpoint_every == 0 || session->epochs_done() == tcfg.epochs) {
      save_json(session->checkpoint(hash), ckpt);
      write_lines(log_path, log);
    }
  }
  if (tcfg.epochs == 0) save_json(session->checkpoint(hash), ckpt);
  write_lines(log_path, log);
  return std::move(*session);
}

void add_summary(MetricsWriter& mw, const std::string& prefix, const ReconstructionSummary& r, std::size_t n,
                 const std::string& model = "") {
  mw.add(prefix + "full_match", r.full_match, n, std::nullopt, model);
  mw.add(prefix + "edge_recall", r.edge_recall, n, std::nullopt, model);
  mw.add(prefix + "iou", r.mean_iou, n, std::nullopt, model);
  mw.add(prefix + "feasible_fraction", r.feasible_fraction, n, std::nullopt, model);
  mw.add(prefix + "distinct_paths", static_cast<double>(r.distinct), n, std::nullopt, model);
}

MetricsWriter metrics_for(const ExperimentConfig& cfg, ModelType type) {
  return {.dataset = cfg.name, .model = to_string(type), .seed = cfg.train_config(type).seed, .hash = cfg.hash()};
}

int cmd_train(const Common& c, const std::string& model_name, std::optional<int> epochs, std::optional<double> beta,
              bool resume) {
  const auto t0 = Clock::now();
  auto cfg = resolve_config(c);
  const ModelType type = model_type_from_string(model_name);
  for (auto* t : {&cfg.train, &cfg.vae_train, &cfg.po_train}) {
    if (epochs) t->epochs = *epochs;
    if (beta) t->beta = *beta;
  }
  const DataSplit data = obtain_data(cfg, c.data);
  const auto session = run_training(cfg, type, data, c.out, resume, nullptr);

  const auto train = samples_of(data.train);
  const auto summary = summarize_reconstructions(session, train, c.threads);
  MetricsWriter mw = metrics_for(cfg, type);
  add_summary(mw, "train_", summary, train.size());
  mw.write(c.out);

  auto m = manifest_for("train", c, cfg);
  m.outputs = {"config.json", "checkpoint.json", "training_log.csv", "metrics.csv"};
  m.extra = {{"model", model_name}, {"epochs", session.epochs_done()}, {"resumed", resume}};
  m.seconds = seconds_since(t0);
  m.write(c.out);
  return 0;
}

int cmd_reconstruct(const Common& c) {
  const auto t0 = Clock::now();
  auto run = load_run(c);
  const auto test = samples_of(run.data.test);
  const auto summary = summarize_reconstructions(run.session, test, c.threads);

  const Graph& g = *run.data.test.graph;
  std::vector<std::optional<SolutionVector>> euclid(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) euclid[i] = euclidean_baseline(g, run.cfg.model.solver, test[i].p);
  const auto base = summarize(test, std::move(euclid));

  MetricsWriter mw = metrics_for(run.cfg, run.session.type());
  add_summary(mw, "test_", summary, test.size());
  add_summary(mw, "test_", base, test.size(), "euclidean");
  const fs::path out = c.out.empty() ? fs::path(c.run) : fs::path(c.out);
  fs::create_directories(out);
  mw.write(out);
  std::vector<SolutionVector> feasible;
  for (const auto& x : summary.outputs)
    if (x) feasible.push_back(*x);
  if (!feasible.empty()) write_paths(out / "paths.jsonl", feasible);

  auto m = manifest_for("reconstruct", c, run.cfg);
  m.outputs = {"metrics.csv", "paths.jsonl"};
  m.seconds = seconds_since(t0);
  m.write(out);
  return 0;
}

int cmd_predict_dist(const Common& c, std::optional<std::size_t> per_record) {
  const auto t0 = Clock::now();
  auto run = load_run(c);
  const auto train = samples_of(run.data.train);
  const auto test = samples_of(run.data.test);
  std::vector<Requirement> reqs;
  std::vector<SolutionVector> reference;
  for (const auto& s : test) {
    reqs.push_back(s.p);
    reference.push_back(s.x);
  }
  const std::size_t k = per_record.value_or(run.cfg.inference.samples_per_record);
  const auto predicted = sample_paths(run.session, train, reqs, k, run.cfg.inference.kde_bandwidth,
                                      derive_seed(run.cfg.train.seed, {0xD157}), c.threads);
  const auto scores = compare_distributions(predicted, reference);
  std::size_t feasible = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i)
    feasible += validate_solution(*run.data.test.graph, predicted[i], reqs[i / k]).feasible ? 1 : 0;

  MetricsWriter mw = metrics_for(run.cfg, run.session.type());
  mw.add("jsd", scores.jsd, predicted.size());
  mw.add("rmse", scores.rmse, predicted.size());
  mw.add("feasible_fraction", static_cast<double>(feasible) / static_cast<double>(predicted.size()), predicted.size());
  const fs::path out = c.out.empty() ? fs::path(c.run) : fs::path(c.out);
  fs::create_directories(out);
  mw.write(out);
  write_paths(out / "paths.jsonl", predicted);

  auto m = manifest_for("predict-dist", c, run.cfg);
  m.outputs = {"metrics.csv", "paths.jsonl"};
  m.seconds = seconds_since(t0);
  m.write(out);
  return 0;
}

int cmd_denoise(const Common& c, std::size_t count) {
  const auto t0 = Clock::now();
  auto run = load_run(c);
  const IoLvmModel& model = require_iolvm(run.session, "denoise");
  const Graph& g = model.graph();
  Rng rng(derive_seed(run.cfg.train.seed, {0xDE705E}));
  std::vector<double> before, after;
  std::vector<SolutionVector> outputs;
  for (const auto& rec : run.data.test.records) {
    if (before.size() >= count) break;
    const auto corrupt = splice_detour(g, rec.sample.x, rec.sample.p, rng);
    if (!corrupt) continue;
    const auto clean = denoise(model, *corrupt, rec.sample.p);
    before.push_back(iou(*corrupt, rec.sample.x));
    after.push_back(iou(clean, rec.sample.x));
    outputs.push_back(clean);
  }
  if (before.empty()) fail(ErrorCode::EmptyInput, "no test path admits a detour");
  const auto [mb, sb] = mean_std(before);
  const auto [ma, sa] = mean_std(after);
  MetricsWriter mw = metrics_for(run.cfg, run.session.type());
  mw.add("iou_corrupted", mb, before.size(), sb);
  mw.add("iou_denoised", ma, after.size(), sa);
  const fs::path out = c.out.empty() ? fs::path(c.run) : fs::path(c.out);
  fs::create_directories(out);
  mw.write(out);
  write_paths(out / "paths.jsonl", outputs);

  auto m = manifest_for("denoise", c, run.cfg);
  m.outputs = {"metrics.csv", "paths.jsonl"};
  m.seconds = seconds_since(t0);
  m.write(out);
  return 0;
}

int cmd_outlier(const Common& c, std::optional<double> tau, std::size_t count) {
  const auto t0 = Clock::now();
  auto run = load_run(c);
  const IoLvmModel& model = require_iolvm(run.session, "outlier-score");
  OutlierOptions opts = run.cfg.inference.outlier;
  opts.threads = c.threads;
  if (tau) opts.tau = *tau;
  const auto train = samples_of(run.data.train);
  const LatentKde kde = kde_fit(model.encode_means(train), run.cfg.inference.kde_bandwidth);
  Rng rng(derive_seed(run.cfg.train.seed, {0x07u}));

  // References are shared across records with the same requirement.
  std::map<std::pair<int, int>, OutlierReference> refs;
  auto reference_for = [&](const Requirement& p) -> const OutlierReference& {
    const auto key = std::make_pair(p.source.value_or(-1), p.target.value_or(-1));
    auto it = refs.find(key);
    if (it == refs.end()) it = refs.emplace(key, outlier_reference(model, kde, p, opts, rng)).first;
    return it->second;
  };

  std::vector<std::string> rows{"record,score"};
  std::vector<double> scores;
  for (std::size_t i = 0; i < run.data.test.size() && i < count; ++i) {
    const auto& s = run.data.test.records[i].sample;
    scores.push_back(outlier_score(reference_for(s.p), s.x, opts.tau));
    rows.push_back(std::to_string(i) + "," + std::to_string(scores.back()));
  }
  const fs::path out = c.out.empty() ? fs::path(c.run) : fs::path(c.out);
  fs::create_directories(out);
  write_lines(out / "outlier_scores.csv", rows);

  MetricsWriter mw = metrics_for(run.cfg, run.session.type());
  std::vector<double> sorted = scores;
  std::sort(sorted.begin(), sorted.end());
  const double p95 = quantile_sorted(sorted, 0.95);
  mw.add("in_distribution_p95", p95, scores.size());
  if (const auto& box = run.cfg.inference.detour_box) {
    const auto& first = run.data.test.records.front().sample;
    const std::vector<double> euclid = [&] {
      std::vector<double> y(model.graph().num_edges());
      for (std::size_t e = 0; e < y.size(); ++e) y[e] = model.graph().edge_length(static_cast<EdgeId>(e));
      return y;
    }();
    if (auto detour = solve_avoiding_box(model.graph(), euclid, first.p, *box)) {
      const double score = outlier_score(reference_for(first.p), *detour, opts.tau);
      mw.add("detour_score", score, 1);
      mw.add("detour_above_p95", score > p95 ? 1.0 : 0.0, 1);
    }
  }
  mw.write(out);

  auto m = manifest_for("outlier-score", c, run.cfg);
  m.outputs = {"metrics.csv", "outlier_scores.csv"};
  m.extra = {{"tau", opts.tau}};
  m.seconds = seconds_since(t0);
  m.write(out);
  return 0;
}

int cmd_sweep_beta(const Common& c, std::vector<double> betas) {
  const auto t0 = Clock::now();
  auto cfg = resolve_config(c);
  if (betas.empty()) betas = cfg.sweep_betas;
  const DataSplit data = obtain_data(cfg, c.data);
  const auto train = samples_of(data.train);
  MetricsWriter mw = metrics_for(cfg, ModelType::IoLvm);
  std::vector<double> distinct, ious;
  for (double beta : betas) {
    ExperimentConfig run_cfg = cfg;
    run_cfg.train.beta = beta;
    std::ostringstream name;
    name << "beta_" << beta;
    const auto session = run_training(run_cfg, ModelType::IoLvm, data, fs::path(c.out) / name.str(), false, nullptr);
    const auto summary = summarize_reconstructions(session, train, c.threads);
    distinct.push_back(static_cast<double>(summary.distinct));
    ious.push_back(summary.mean_iou);
    mw.add("distinct_paths@beta=" + name.str().substr(5), distinct.back(), train.size());
    mw.add("train_iou@beta=" + name.str().substr(5), ious.back(), train.size());
  }
  if (betas.size() >= 2) mw.add("spearman_distinct_vs_beta", spearman(betas, distinct), betas.size());
  mw.write(c.out);

  auto m = manifest_for("sweep-beta", c, cfg);
  m.outputs = {"metrics.csv"};
  m.extra = {{"betas", betas}};
  m.seconds = seconds_since(t0);
  m.write(c.out);
  return 0;
}

int cmd_export_latents(const Common& c, const std::string& split, const std::string& label_key) {
  const auto t0 = Clock::now();
  auto run = load_run(c);
  const Dataset& ds = split == "test" ? run.data.test : run.data.train;
  const auto samples = samples_of(ds);
  Eigen::MatrixXd mu;
  if (run.session.iolvm())
    mu = run.session.iolvm()->encode_means(samples);
  else if (run.session.vae())
    mu = run.session.vae()->encode_means(samples);
  else
    fail(ErrorCode::ConfigError, "export-latents needs a latent-variable model");
  // Labels are read here only, after training, for plotting.
  std::vector<std::string> labels;
  bool any = false;
  for (const auto& r : ds.records) {
    const bool has = r.meta.contains(label_key);
    any = any || has;
    labels.push_back(has ? r.meta.at(label_key).dump() : "");
  }
  const fs::path out = c.out.empty() ? fs::path(c.run) : fs::path(c.out);
  fs::create_directories(out);
  std::ofstream f(out / "latents.csv");
  if (!f) fail(ErrorCode::IoError, "cannot write latents.csv");
  write_latents_csv(f, mu, any ? std::span<const std::string>(labels) : std::span<const std::string>());

  auto m = manifest_for("export-latents", c, run.cfg);
  m.outputs = {"latents.csv"};
  m.extra = {{"split", split}};
  m.seconds = seconds_since(t0);
  m.write(out);
  return 0;
}

int exit_code_for(ErrorCategory cat) {
  switch (cat) {
    case ErrorCategory::Config: return 2;
    case ErrorCategory::Data: return 3;
    case ErrorCategory::Numerical: return 4;
  }
  return 3;
}

void report_error(const std::string& code, const std::string& category, const std::string& message) {
  std::cerr << nlohmann::json{{"error", code}, {"category", category}, {"message", message}}.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Inverse-optimization latent variable models over graph solvers"};
  app.require_subcommand(1);
  Common c;
  std::optional<std::uint64_t> seed;

  auto add_threads = [&](CLI::App* sub) {
    sub->add_option("--threads", c.threads, "Worker threads (default: IOLVM_THREADS or 1)")->check(CLI::PositiveNumber);
  };
  auto add_config = [&](CLI::App* sub, bool required) {
    auto* o = sub->add_option("--config", c.config, "Experiment config (JSON)");
    if (required) o->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Master seed overriding the config");
  };
  auto add_run = [&](CLI::App* sub) {
    sub->add_option("--run", c.run, "Run directory written by train")->required()->check(CLI::ExistingDirectory);
    sub->add_option("--data", c.data, "Dataset directory (default: regenerate from the run config)");
    sub->add_option("--out", c.out, "Output directory (default: the run directory)");
    add_threads(sub);
  };

  auto* gen_wax = app.add_subcommand("gen-waxman", "Generate a Waxman path dataset");
  add_config(gen_wax, true);
  gen_wax->add_option("--out", c.out, "Output dataset directory")->required();

  auto* gen_tsp = app.add_subcommand("gen-tsp", "Generate a hidden-feature TSP dataset");
  add_config(gen_tsp, true);
  gen_tsp->add_option("--out", c.out, "Output dataset directory")->required();

  std::string model_name = "iolvm";
  std::optional<int> epochs;
  std::optional<double> beta;
  bool resume = false;
  auto* train = app.add_subcommand("train", "Train a model and write a run directory");
  add_config(train, true);
  train->add_option("--data", c.data, "Dataset directory (default: generate from the config)");
  train->add_option("--out", c.out, "Run directory")->required();
  train->add_option("--model", model_name, "iolvm | vae | po")->check(CLI::IsMember({"iolvm", "vae", "po"}));
  train->add_option("--epochs", epochs, "Override the epoch count");
  train->add_option("--beta", beta, "Override the KL weight");
  train->add_flag("--resume", resume, "Continue from the run's checkpoint");
  add_threads(train);

  auto* rec = app.add_subcommand("reconstruct", "Reconstruction metrics on held-out data");
  add_run(rec);

  std::optional<std::size_t> per_record;
  auto* pred = app.add_subcommand("predict-dist", "Compare predicted and held-out path distributions");
  add_run(pred);
  pred->add_option("--samples-per-record", per_record, "Model draws per held-out record");

  std::size_t count = 50;
  auto* den = app.add_subcommand("denoise", "Remove spliced detours from held-out paths");
  add_run(den);
  den->add_option("--count", count, "Number of corrupted paths");

  std::optional<double> tau;
  std::size_t outlier_count = 200;
  auto* out = app.add_subcommand("outlier-score", "Quantile outlier scores for held-out paths");
  add_run(out);
  out->add_option("--tau", tau, "Quantile level in (0, 1]");
  out->add_option("--count", outlier_count, "Number of held-out records to score");

  std::vector<double> betas;
  auto* sweep = app.add_subcommand("sweep-beta", "Train one IO-LVM per KL weight");
  add_config(sweep, true);
  sweep->add_option("--data", c.data, "Dataset directory (default: generate from the config)");
  sweep->add_option("--out", c.out, "Output directory")->required();
  sweep->add_option("--betas", betas, "KL weights (default: from the config)")->delimiter(',');
  add_threads(sweep);

  std::string split = "train", label_key = "agent";
  auto* lat = app.add_subcommand("export-latents", "Write posterior means as CSV");
  add_run(lat);
  lat->add_option("--split", split, "train | test")->check(CLI::IsMember({"train", "test"}));
  lat->add_option("--label", label_key, "Metadata field used as the label column");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    report_error("UsageError", "config", e.what());
    return 2;
  }
  if (seed) {
    c.seed = *seed;
    c.seed_set = true;
  }

  try {
    if (*gen_wax) return cmd_generate(c, "gen-waxman", DatasetKind::Waxman);
    if (*gen_tsp) return cmd_generate(c, "gen-tsp", DatasetKind::Tsp);
    if (*train) return cmd_train(c, model_name, epochs, beta, resume);
    if (*rec) return cmd_reconstruct(c);
    if (*pred) return cmd_predict_dist(c, per_record);
    if (*den) return cmd_denoise(c, count);
    if (*out) return cmd_outlier(c, tau, outlier_count);
    if (*sweep) return cmd_sweep_beta(c, betas);
    if (*lat) return cmd_export_latents(c, split, label_key);
  } catch (const Error& e) {
    const char* category = e.category() == ErrorCategory::Config ? "config"
                           : e.category() == ErrorCategory::Data ? "data"
                                                                 : "numerical";
    report_error(std::string(to_string(e.code())), category, e.what());
    return exit_code_for(e.category());
  } catch (const std::exception& e) {
    report_error("IoError", "data", e.what());
    return 3;
  }
  return 0;
}
