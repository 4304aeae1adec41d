#pragma once

// Experiment orchestration: joint training of the classifier and the learnable
// quantizer over leave-one-subject-out splits and seeds, macro-F1 scoring,
// quantizer curve export and comparison.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gquant/data.hpp"
#include "gquant/model.hpp"
#include "gquant/quant.hpp"

namespace gquant {

enum class ParamScope { Global, PerAxis };

std::string to_string(ParamScope scope);
ParamScope parse_param_scope(std::string_view name);

/// How a method turns normalized windows into network input.
enum class Method { Raw, Linear, Log, Gamma };

std::string to_string(Method m);
Method parse_method(std::string_view name);

struct ExperimentConfig {
  // Main quantizer: the signed power law (learnable) or fixed linear.
  QuantKind kind = QuantKind::GammaSigned;
  double gamma0 = 0.4;
  double mu0 = 0.0;
  double eps_stab = kDefaultEpsStab;
  ParamScope scope = ParamScope::PerAxis;
  bool learn_quantizer = true;
  // Baselines trained alongside the main quantizer.
  bool baseline_raw = false;
  bool baseline_linear = true;
  bool baseline_log = false;
  double eps_log = kDefaultEpsLog;

  std::vector<int> bit_depths{2, 4};
  int epochs = 30;
  std::size_t batch_size = 100;
  double lr = 1e-4;
  double weight_decay = 1e-6;
  int schedule_every = 10;
  double schedule_factor = 0.9;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::optional<double> quant_lr;  // defaults to lr

  NormScope norm_scope = NormScope::Dataset;
  bool norm_full_dataset = false;  // fit min/max on train and validation windows
  double window_s = 1.0;
  double overlap = 0.5;
  bool class_weighting = true;
  std::size_t channels1 = 32;
  std::size_t channels2 = 64;
  std::size_t kernel = 5;
  std::size_t pool = 2;

  std::size_t jobs = 1;
  bool save_checkpoints = true;

  /// Throws ConfigError.
  void validate() const;
  /// Methods in run order: the main quantizer, then enabled baselines.
  std::vector<Method> methods() const;
  nlohmann::json to_json() const;
  /// Missing keys keep their defaults; unknown keys are rejected.
  static ExperimentConfig from_json(const nlohmann::json& j);
};

/// {"kind", "bits", "gamma", "mu", "eps_log", "eps_stab", "domain"}. Only
/// "kind" and "bits" are required; the domain defaults to signed for
/// gamma_signed and to the unit interval otherwise. Throws ConfigError.
QuantizerSpec spec_from_json(const nlohmann::json& j);
nlohmann::json spec_to_json(const QuantizerSpec& spec);

/// Per-unit quantizer parameters after training.
struct LearnedQuantizer {
  QuantizerSpec spec;          // kind, bit depth, eps, domain
  std::vector<double> gamma;   // one per unit; empty for kinds without gamma
  std::vector<double> mu;      // one per unit; empty for kinds without mu

  /// Spec for unit u (the shared one when there is a single unit).
  QuantizerSpec unit_spec(std::size_t u) const;
  /// Applies the quantizer to [batch, axes, len] windows.
  Tensor apply(const Tensor& windows) const;
  nlohmann::json to_json() const;
  static LearnedQuantizer from_json(const nlohmann::json& j);
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  std::vector<double> gamma;
  std::vector<double> mu;
};

struct RunResult {
  Method method = Method::Gamma;
  int bits = 0;  // 0 for the raw baseline
  std::string subject;
  std::uint64_t seed = 0;
  bool ok = true;
  std::string failure;
  double macro_f1 = 0.0;
  std::vector<double> class_f1;
  std::vector<std::vector<long>> confusion;  // [truth][prediction]
  std::optional<LearnedQuantizer> quantizer;
  std::vector<EpochRecord> curve;

  std::string tag() const;
  nlohmann::json to_json() const;
};

struct Aggregate {
  Method method = Method::Gamma;
  int bits = 0;
  std::vector<double> seed_means;  // mean over splits, one per seed
  double mean = 0.0;               // mean of seed_means
  double std = 0.0;                // population std of seed_means
  std::size_t failed = 0;
};

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<std::string> class_names;
  std::vector<std::string> subjects;
  std::vector<RunResult> runs;
  std::vector<Aggregate> aggregates;

  const Aggregate* find(Method m, int bits) const;
  /// `result v1` document.
  nlohmann::json to_json() const;
  std::string dump() const;
};

/// Seed-then-split aggregation of ok runs; failed runs are counted, not averaged.
std::vector<Aggregate> aggregate_runs(std::span<const RunResult> runs);

/// Everything a frozen model needs to score new recordings.
struct Checkpoint {
  ClassifierModel model;
  std::optional<LearnedQuantizer> quantizer;
  NormMeta norm;
  std::vector<std::string> class_names;
  double window_s = 1.0;
  double overlap = 0.5;

  nlohmann::json to_json() const;
  static Checkpoint from_json(const nlohmann::json& j);
};

struct Evaluation {
  double macro_f1 = 0.0;
  std::vector<double> class_f1;
  std::vector<std::vector<long>> confusion;
  std::size_t windows = 0;
};

/// Windows, normalizes (with the stored statistics), quantizes and scores.
Evaluation evaluate(const Checkpoint& ckpt, std::span<const Recording> recordings);

struct TrainOutputs {
  ExperimentResult result;
  std::vector<std::pair<std::string, Checkpoint>> checkpoints;  // tag -> checkpoint
};

/// Runs every (method, bit depth, split, seed) job. Diverged runs are recorded
/// as failures and the sweep continues.
TrainOutputs train_joint(const ExperimentConfig& cfg, std::span<const Recording> recordings);

/// Writes result.json, trajectories/<tag>.csv and checkpoints/<tag>.json.
void write_outputs(const std::filesystem::path& dir, const TrainOutputs& out);

/// Square confusion matrix [truth][prediction].
std::vector<std::vector<long>> confusion_matrix(std::span<const int> truth, std::span<const int> pred,
                                                std::size_t num_classes);
/// Per-class F1; classes with neither true nor predicted samples are NaN.
std::vector<double> class_f1(const std::vector<std::vector<long>>& confusion);
/// Mean F1 over classes present in truth or prediction. Throws DataError on
/// an empty or non-square matrix.
double macro_f1(const std::vector<std::vector<long>>& confusion);

/// Columns: x, then <name>_value (continuous, in code units) and <name>_code
/// for each spec. All specs must share a domain.
void export_curves(std::span<const QuantizerSpec> specs, std::span<const std::string> names,
                   std::ostream& os, std::size_t samples = 4096);

/// Max |log curve - power curve| over `grid` points of [0, 1], both curves
/// normalized to [0, 1].
double compare_log_gamma(double eps_log, double gamma, int bits, std::size_t grid = 4096);

/// Per-bit-depth macro-F1 table of two results, methods as columns.
std::string compare_table(const ExperimentResult& a, const ExperimentResult& b);

/// Reads a `result v1` document back (aggregates and runs).
ExperimentResult result_from_json(const nlohmann::json& j);

}  // namespace gquant
