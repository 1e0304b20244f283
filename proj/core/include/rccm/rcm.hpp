#pragma once

#include <array>

#include "rccm/autograd.hpp"

namespace rccm::rcm {

// Which axis Softmax normalizes over when turning decoder outputs into
// region probability maps: across the four decoder levels (as the summation
// in the region-probability formula reads) or across the two segmentation
// classes per level (as the module figure describes).
enum class SoftmaxAxis { levels, classes };

struct RcmWeights {
  std::array<double, 4> alpha{0.1, 0.2, 0.3, 0.4};
};

// Plaque-channel logit resized to the encoder feature-map grid: [N,2,H,W] -> [N,1,h,w].
nn::NodePtr downsample_logits(const nn::NodePtr& seg_logits, int64_t th, int64_t tw);

// The four per-level region probability maps, stacked as [N,4,h,w].
// In `levels` mode every pixel's four values sum to 1.
nn::NodePtr region_probability_maps(const std::vector<nn::NodePtr>& seg_logits, int64_t th,
                                    int64_t tw, SoftmaxAxis axis = SoftmaxAxis::levels);

// FM = sum_i alpha_i * p_i (*) M, p_i broadcast across M's channels.
nn::NodePtr fuse_features(const nn::NodePtr& probability_maps, const nn::NodePtr& features,
                          const RcmWeights& alpha);

SoftmaxAxis softmax_axis_from_string(const std::string& s);
std::string to_string(SoftmaxAxis axis);

}  // namespace rccm::rcm
