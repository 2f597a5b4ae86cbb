#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hscal/data.hpp"
#include "hscal/evaluation.hpp"
#include "hscal/losses.hpp"
#include "hscal/model.hpp"
#include "hscal/sphere.hpp"

namespace hscal {

inline constexpr const char* kConfigFormat = "hscal-config/1";
inline constexpr const char* kRunRecordFormat = "hscal-run/1";

// Where the corpus comes from. Either `train_path` (with optional dev/test
// files; missing ones are carved from train by `split`) or `synth`.
struct DataConfig {
  std::string train_path;
  std::string dev_path;
  std::string test_path;
  std::optional<SynthSpec> synth;
  SplitSpec split{0.7, 0.15, 0.15, 0};
  // Fraction of TRAIN labels corrupted before training; dev/test stay clean.
  double label_noise = 0.0;
};

enum class HeadType { hyperspherical, linear };

std::string to_string(HeadType h);
HeadType head_type_from_string(const std::string& s);

// Both use a constant step; weight decay is decoupled from the gradient.
enum class OptimizerType { sgd, adam };

std::string to_string(OptimizerType o);
OptimizerType optimizer_from_string(const std::string& s);

struct TrainConfig {
  DataConfig data;
  Featurizer featurizer;
  EncoderDims encoder;
  HeadType head = HeadType::hyperspherical;
  ScaleMode scale_mode = ScaleMode::frobenius;
  double fixed_scale = 1.0;
  // Frame optimizer settings; its seed is derived from `seed`.
  FrameOptConfig frame;
  // Optional CSV frame to load instead of optimizing one.
  std::string frame_path;
  LossPlan loss;
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  OptimizerType optimizer = OptimizerType::sgd;
  double learning_rate = 0.05;
  double weight_decay = 0.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t u_theta_warm_epochs = 2;
  // Keep refreshing u_theta after warm-up instead of freezing it.
  bool u_theta_continuous = false;
  std::size_t kl_refreshes_per_epoch = 1;
  std::size_t bins = 10;
  std::size_t eval_every = 1;
  bool temperature_scaling = false;
  bool log_steps = false;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
// Missing keys keep their defaults; unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j);
TrainConfig load_train_config(const std::string& path);

// Mean of every uncertainty recorded in the first `warm_epochs` completed
// epochs (all epochs when fewer completed), clamped to [0, 1].
double update_u_theta(const std::vector<std::vector<double>>& history, std::size_t warm_epochs);

struct PreparedData {
  Dataset train;
  Dataset dev;
  Dataset test;
};

// Loads or generates the corpus, splits it and corrupts train labels.
PreparedData prepare_data(const DataConfig& cfg, std::uint64_t seed);

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  LossTerms terms;
  double u_theta = 0.0;
  bool aux_active = false;
  std::optional<double> dev_f1;
  std::optional<double> dev_ece_classwise;
  std::optional<double> dev_ece_standard;
};

struct StepRecord {
  std::size_t epoch = 0;
  std::vector<std::size_t> indices;
  double loss = 0.0;
};

struct RunRecord {
  std::vector<EpochRecord> epochs;
  std::vector<StepRecord> steps;  // only with log_steps
  std::optional<CalibrationReport> test;
  std::optional<CalibrationReport> test_scaled;
  std::vector<std::string> labels;
  double wall_clock_seconds = 0.0;
};

// Without `include_timing` the document is a pure function of config + seed.
nlohmann::json to_json(const RunRecord& r, bool include_timing = true);

// Builds a freshly initialized model for `labels` (frame optimized or loaded).
Model init_model(const TrainConfig& cfg, const std::vector<std::string>& labels);

// Mini-batch gradient descent over a prepared corpus. Exposes single steps
// so training can be replayed and inspected.
class Trainer {
 public:
  Trainer(TrainConfig cfg, PreparedData data);

  // Runs one epoch; returns its record (dev metrics per eval cadence).
  EpochRecord run_epoch();
  // Runs the remaining epochs and evaluates on test.
  RunRecord run();

  // One update on the given training indices. Returns the loss at the
  // pre-step parameters.
  TotalLoss step(std::span<const std::size_t> indices);
  // Loss the next step would report for `model` on `indices`.
  TotalLoss batch_loss(const Model& model, std::span<const std::size_t> indices) const;

  const Model& model() const { return model_; }
  const TrainConfig& config() const { return cfg_; }
  const PreparedData& data() const { return data_; }
  std::size_t epochs_done() const { return epoch_; }
  double u_theta() const { return u_theta_; }
  bool aux_active() const;
  const RunRecord& record() const { return record_; }

 private:
  LossPlan active_plan() const;
  void refresh_empirical();
  void apply_update();

  TrainConfig cfg_;
  PreparedData data_;
  Model model_;
  std::vector<SparseFeatures> train_x_;
  std::vector<std::size_t> train_y_;
  std::vector<SparseFeatures> dev_x_;
  std::vector<std::size_t> dev_y_;
  Rng shuffle_rng_;
  ModelGrads grads_;
  // Adam moments, one buffer per parameter tensor in update order.
  std::vector<std::vector<double>> adam_m_;
  std::vector<std::vector<double>> adam_v_;
  std::uint64_t adam_t_ = 0;
  std::vector<std::vector<double>> u_history_;
  std::vector<double> epoch_u_;
  double u_theta_ = 0.0;
  std::optional<EmpiricalTable> empirical_;
  std::size_t epoch_ = 0;
  RunRecord record_;
  std::vector<StepRecord>* step_log_ = nullptr;
};

// Full forward pass over `ds` (remapped into the model's vocabulary).
ProbBatch predict(const Model& model, const Dataset& ds, std::optional<double> temperature = std::nullopt);
Matrix predict_logits(const Model& model, const Dataset& ds);

CalibrationReport evaluate(const Model& model, const Dataset& ds, std::size_t m_bins,
                           const std::optional<TemperatureFit>& temperature = std::nullopt,
                           BinGrouping grouping = BinGrouping::predicted);

}  // namespace hscal
