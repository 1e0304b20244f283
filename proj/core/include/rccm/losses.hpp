#pragma once

#include <vector>

#include "rccm/autograd.hpp"

namespace rccm {
struct ForwardOutputs;
}

namespace rccm::losses {

struct LossConfig {
  double lambda = 1.0;
  double entropy_weight_seg = 1.0;
  double entropy_weight_cls = 1.0;
  double epsilon = 1e-7;
};

struct LossBreakdown {
  double l_wce = 0.0;
  double l_ent_seg = 0.0;
  double l_ce = 0.0;
  double l_ent_cls = 0.0;
  double l_seg = 0.0;
  double l_cls = 0.0;
  double total = 0.0;
};

struct LossNodes {
  nn::NodePtr total;
  LossBreakdown values;
};

// Sample-weighted segmentation cross-entropy, averaged over the four
// deep-supervision outputs, pixels, and the batch. `mask` is [N,H,W] with
// values in {0,1}; it is one-hot encoded over the two class channels here.
// `weights` holds the per-sample scalars; they enter as constants.
nn::NodePtr weighted_ce_seg(const std::vector<nn::NodePtr>& seg_logits, const Tensor& mask,
                            const std::vector<double>& weights, double eps = 1e-7);

// Mean Shannon entropy of the per-pixel class distribution across outputs.
nn::NodePtr entropy_seg(const std::vector<nn::NodePtr>& seg_logits, double eps = 1e-7);

// Classification cross-entropy against integer labels, batch mean.
nn::NodePtr ce_cls(const nn::NodePtr& cls_logits, const std::vector<int>& labels,
                   double eps = 1e-7);

// Mean Shannon entropy of the predicted class distribution.
nn::NodePtr entropy_cls(const nn::NodePtr& cls_logits, double eps = 1e-7);

// total = (l_wce + w_es * l_ent_seg) + lambda * (l_ce + w_ec * l_ent_cls)
LossNodes total_loss(const ForwardOutputs& outputs, const Tensor& mask,
                     const std::vector<int>& labels, const std::vector<double>& weights,
                     const LossConfig& cfg);

}  // namespace rccm::losses
