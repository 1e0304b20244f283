#pragma once

#include <filesystem>
#include <optional>

#include "json.hpp"
#include "rccm/ccm.hpp"
#include "rccm/losses.hpp"
#include "rccm/metrics.hpp"
#include "rccm/model.hpp"
#include "rccm/synthdata.hpp"

namespace rccm::training {

struct AblationFlags {
  bool use_rcm = true;
  bool use_ccm = true;
};

struct TrainConfig {
  int epochs = 200;
  int batch_size = 10;
  double lr = 1e-3;  // ADAM, default moment coefficients
  uint64_t seed = 1;
  uint64_t split_seed = 1;
  int eval_every = 5;  // validation cadence in epochs; 0 disables
  AblationFlags ablation;
  ModelConfig model;
  losses::LossConfig loss;
  rcm::RcmWeights rcm_alpha;
  rcm::SoftmaxAxis rcm_axis = rcm::SoftmaxAxis::levels;
  ccm::CcmConfig ccm;
  bool average_seg_outputs = false;  // predict from the mean of the 4 outputs instead of s4

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);
// FNV-1a over the canonical JSON echo.
std::string config_hash(const TrainConfig& cfg);

struct ValSummary {
  double dsc_mean = 0.0;
  double acc = 0.0;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  losses::LossBreakdown mean_loss;
  std::optional<ValSummary> val;
};

struct RunRecord {
  std::vector<EpochRecord> epochs;
  double wall_seconds = 0.0;  // never serialized into deterministic artifacts
  uint64_t seed = 0;
  nlohmann::json config_echo;
  std::string config_hash;
};

struct TrainingDiverged : std::runtime_error {
  std::vector<std::string> batch_ids;
  TrainingDiverged(const std::string& msg, std::vector<std::string> ids)
      : std::runtime_error(msg), batch_ids(std::move(ids)) {}
};

class Adam {
 public:
  Adam() = default;
  Adam(std::vector<nn::NodePtr> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);
  void step();        // applies grads, then zeroes them
  int64_t t() const { return t_; }

  // state access for checkpointing
  const std::vector<Tensor>& m() const { return m_; }
  const std::vector<Tensor>& v() const { return v_; }
  void restore(int64_t t, std::vector<Tensor> m, std::vector<Tensor> v);

 private:
  std::vector<nn::NodePtr> params_;
  std::vector<Tensor> m_, v_;
  double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  int64_t t_ = 0;
};

// Owns the model, optimizer, and rng streams for one training run.
class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg);

  // Runs epochs [next_epoch, cfg.epochs]; resumable via load_checkpoint.
  // Stops early once `target` returns true on a validation summary.
  RunRecord fit(const synth::DatasetSplit& split,
                const std::function<bool(const ValSummary&)>& target = nullptr);

  metrics::MetricsReport evaluate(const std::vector<synth::Sample>& samples);

  // Per-sample inference on one image; returns (mask, class, probabilities).
  struct Prediction {
    Mask mask;
    int pred_class = 0;
    std::array<double, 3> probs{};
  };
  Prediction predict(const Tensor& image);

  void save_checkpoint(const std::filesystem::path& path) const;
  void load_checkpoint(const std::filesystem::path& path);

  const TrainConfig& config() const { return cfg_; }
  RccmNet& model() { return model_; }
  int next_epoch() const { return next_epoch_; }

  // Training-set forward pass for one mini-batch; exposed for tests.
  losses::LossBreakdown train_step(const std::vector<const synth::Sample*>& batch);

 private:
  nn::NodePtr batch_images(const std::vector<const synth::Sample*>& batch) const;

  TrainConfig cfg_;
  RccmNet model_;
  Adam opt_;
  Rng shuffle_rng_;
  int next_epoch_ = 1;  // 1-based epoch about to run
};

metrics::MetricsReport evaluate_checkpoint(const std::filesystem::path& ckpt,
                                           const std::vector<synth::Sample>& samples);

// One ablation table row: a flag combination with mean+-SD over seeds for the
// four segmentation and four classification metrics.
struct AblationRow {
  std::string name;
  AblationFlags flags;
  metrics::MeanSd dsc, assd, hd, d_pa, acc, precision, f1, kappa;
};

struct AblationTable {
  std::vector<AblationRow> rows;  // Base, +CCM, +RCM, +CCM+RCM
  bool full_model_best_dsc = false;
  bool full_model_best_acc = false;
  std::string csv() const;
  nlohmann::json summary_json() const;
};

AblationTable ablate(const synth::DatasetSplit& split, const TrainConfig& base,
                     const std::vector<uint64_t>& seeds);

}  // namespace rccm::training
