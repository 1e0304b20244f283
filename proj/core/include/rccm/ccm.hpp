#pragma once

#include <array>
#include <string>
#include <vector>

#include "rccm/tensor.hpp"

namespace rccm::ccm {

// How the raw KL divergence becomes a segmentation-loss weight.
// `identity` uses the divergence directly (hard samples weighted up);
// `exp_neg` uses e^-KL, i.e. the predicted probability of the true class
// (confident samples weighted up).
enum class Transform { identity, exp_neg };

struct CcmConfig {
  Transform transform = Transform::identity;
  bool normalize_mean_one = false;
  double epsilon = 1e-7;
};

struct SampleWeight {
  double omega = 0.0;
  static constexpr int num_classes = 3;
};

// KL(y || g) for a one-hot label y; equals -log g_c for the true class c.
// g is clamped below at eps before the log.
SampleWeight sample_weight(const std::array<double, 3>& y_onehot, const std::array<double, 3>& g,
                           double eps = 1e-7);

// Per-sample weights for a batch. `probs` is [N,3] of predicted class
// probabilities; values are read, never differentiated, so no gradient
// reaches the classification parameters through the weights.
std::vector<double> batch_weights(const std::vector<int>& labels, const Tensor& probs,
                                  const CcmConfig& cfg);

// Softmax over [N,3] logits, clamped to cfg.epsilon; plain values.
Tensor class_probabilities(const Tensor& cls_logits);

Transform transform_from_string(const std::string& s);
std::string to_string(Transform t);

}  // namespace rccm::ccm
