#pragma once

#include <array>
#include <optional>

#include "rccm/ops.hpp"
#include "rccm/rcm.hpp"

namespace rccm {

struct ModelConfig {
  int depth = 5;
  int base_channels = 16;
  int num_classes = 3;  // hyperechoic / hypoechoic / mixed
  int seg_channels = 2; // background / plaque
  int64_t input_h = 96;
  int64_t input_w = 144;
  uint64_t rng_seed = 0;

  void validate() const;
  int64_t channels_at(int level) const { return static_cast<int64_t>(base_channels) << level; }
  int64_t deepest_channels() const { return channels_at(depth - 1); }
};

// bottleneck residual block: 1x1 reduce, 3x3, 1x1 expand, shortcut
struct ResidualBlock {
  nn::Conv2d reduce, conv, expand;
  nn::BatchNorm2d bn1, bn2, bn3;
  std::optional<nn::Conv2d> proj;  // 1x1 shortcut projection when in != out
  std::optional<nn::BatchNorm2d> bn_proj;

  ResidualBlock() = default;
  ResidualBlock(int64_t in_ch, int64_t out_ch, Rng& rng);
  nn::NodePtr forward(const nn::NodePtr& x, bool training);
  void visit_params(const std::string& prefix, const nn::ParamVisitor& v);
  void visit_buffers(const std::string& prefix, const nn::BufferVisitor& v);
};

// decoder node: 1x1 fuse of the concatenated skips, then 3x3
struct ConvBlock {
  nn::Conv2d fuse, conv;
  nn::BatchNorm2d bn1, bn2;

  ConvBlock() = default;
  ConvBlock(int64_t in_ch, int64_t out_ch, Rng& rng);
  nn::NodePtr forward(const nn::NodePtr& x, bool training);
  void visit_params(const std::string& prefix, const nn::ParamVisitor& v);
  void visit_buffers(const std::string& prefix, const nn::BufferVisitor& v);
};

// bilinear x2 followed by a 1x1 channel-halving conv
struct UpBlock {
  nn::Conv2d conv;
  nn::BatchNorm2d bn;

  UpBlock() = default;
  UpBlock(int64_t in_ch, int64_t out_ch, Rng& rng);
  nn::NodePtr forward(const nn::NodePtr& x, bool training);
  void visit_params(const std::string& prefix, const nn::ParamVisitor& v);
  void visit_buffers(const std::string& prefix, const nn::BufferVisitor& v);
};

struct EncoderFeatures {
  std::vector<nn::NodePtr> levels;  // levels[i]: [N, base<<i, H>>i, W>>i]
  const nn::NodePtr& deepest() const { return levels.back(); }
};

struct ForwardOutputs {
  std::vector<nn::NodePtr> seg_logits;  // always 4 entries, each [N,2,H,W]
  nn::NodePtr cls_logits;               // [N,3]
  nn::NodePtr fused;                    // classification head input, [N,C,h,w]
};

// Shared-encoder multi-task network: residual encoder, UNet++-style densely
// connected decoder with deep supervision, classification head on the
// RCM-fused deepest encoder map.
class RccmNet {
 public:
  explicit RccmNet(const ModelConfig& cfg);

  EncoderFeatures encoder_forward(const nn::NodePtr& images, bool training);
  // Top-row head outputs, padded by repeating the deepest one so |S| == 4
  // for shallow configs.
  std::vector<nn::NodePtr> decoder_forward(const EncoderFeatures& enc, bool training);
  nn::NodePtr classification_head(const nn::NodePtr& fused, bool training);

  // Full multi-task pass. With use_rcm=false the head consumes the deepest
  // encoder map directly.
  ForwardOutputs forward(const nn::NodePtr& images, bool training, bool use_rcm,
                         const rcm::RcmWeights& alpha = {},
                         rcm::SoftmaxAxis axis = rcm::SoftmaxAxis::levels);

  const ModelConfig& config() const { return cfg_; }
  void visit_params(const nn::ParamVisitor& v);
  void visit_buffers(const nn::BufferVisitor& v);
  std::vector<nn::NodePtr> parameters();
  int64_t parameter_count();

 private:
  ModelConfig cfg_;
  std::vector<ResidualBlock> encoder_;            // per level
  std::vector<std::vector<UpBlock>> up_;          // up_[i][j-1]: into node (i,j)
  std::vector<std::vector<ConvBlock>> nodes_;     // nodes_[i][j-1]: X(i,j)
  std::vector<nn::Conv2d> heads_;                 // 1x1 seg heads on X(0,j)
  nn::Linear cls_fc_;
};

}  // namespace rccm
