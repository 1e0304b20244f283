#include "rccm/ccm.hpp"

#include <cmath>
#include <stdexcept>

namespace rccm::ccm {

SampleWeight sample_weight(const std::array<double, 3>& y, const std::array<double, 3>& g,
                           double eps) {
  int hot = -1;
  for (int j = 0; j < 3; ++j) {
    if (y[static_cast<size_t>(j)] == 1.0) {
      if (hot >= 0) throw std::invalid_argument("sample_weight: label is not one-hot");
      hot = j;
    } else if (y[static_cast<size_t>(j)] != 0.0) {
      throw std::invalid_argument("sample_weight: label is not one-hot");
    }
  }
  if (hot < 0) throw std::invalid_argument("sample_weight: label is not one-hot");
  double sum = 0.0;
  for (double v : g) sum += v;
  if (std::abs(sum - 1.0) > 1e-4) {
    throw std::invalid_argument("sample_weight: prediction is not a probability vector");
  }
  // 0*log(0/.) terms vanish; the one-hot case reduces to -log g_c
  const double gc = std::max(g[static_cast<size_t>(hot)], eps);
  SampleWeight w;
  w.omega = -std::log(gc);
  return w;
}

Tensor class_probabilities(const Tensor& cls_logits) {
  if (cls_logits.rank() != 2 || cls_logits.dim(1) != 3) {
    throw std::invalid_argument("class_probabilities: expected [N,3] logits");
  }
  const int64_t n = cls_logits.dim(0);
  Tensor probs({n, 3});
  for (int64_t i = 0; i < n; ++i) {
    const double* row = cls_logits.data() + i * 3;
    double mx = std::max(row[0], std::max(row[1], row[2]));
    double z = 0.0;
    for (int j = 0; j < 3; ++j) z += std::exp(row[j] - mx);
    for (int j = 0; j < 3; ++j) probs[i * 3 + j] = std::exp(row[j] - mx) / z;
  }
  return probs;
}

std::vector<double> batch_weights(const std::vector<int>& labels, const Tensor& probs,
                                  const CcmConfig& cfg) {
  if (probs.rank() != 2 || probs.dim(1) != 3 ||
      probs.dim(0) != static_cast<int64_t>(labels.size())) {
    throw std::invalid_argument("batch_weights: labels/predictions length mismatch");
  }
  std::vector<double> out(labels.size());
  for (size_t i = 0; i < labels.size(); ++i) {
    std::array<double, 3> y{0.0, 0.0, 0.0};
    if (labels[i] < 0 || labels[i] > 2) throw std::invalid_argument("batch_weights: bad label");
    y[static_cast<size_t>(labels[i])] = 1.0;
    std::array<double, 3> g{probs[static_cast<int64_t>(i) * 3 + 0],
                            probs[static_cast<int64_t>(i) * 3 + 1],
                            probs[static_cast<int64_t>(i) * 3 + 2]};
    const double omega = sample_weight(y, g, cfg.epsilon).omega;
    out[i] = cfg.transform == Transform::identity ? omega : std::exp(-omega);
  }
  if (cfg.normalize_mean_one && !out.empty()) {
    double mean = 0.0;
    for (double v : out) mean += v;
    mean /= static_cast<double>(out.size());
    if (mean > 0.0) {
      for (double& v : out) v /= mean;
    }
  }
  return out;
}

Transform transform_from_string(const std::string& s) {
  if (s == "identity") return Transform::identity;
  if (s == "exp_neg") return Transform::exp_neg;
  throw std::invalid_argument("ccm.transform must be 'identity' or 'exp_neg', got '" + s + "'");
}

std::string to_string(Transform t) { return t == Transform::identity ? "identity" : "exp_neg"; }

}  // namespace rccm::ccm
