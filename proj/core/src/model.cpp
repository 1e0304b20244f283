#include "rccm/model.hpp"

#include <stdexcept>

namespace rccm {

using nn::NodePtr;

void ModelConfig::validate() const {
  if (depth < 2) throw std::invalid_argument("model.depth must be >= 2");
  if (base_channels < 1) throw std::invalid_argument("model.base_channels must be >= 1");
  if (num_classes != 3) throw std::invalid_argument("model.num_classes must be 3");
  if (seg_channels != 2) throw std::invalid_argument("model.seg_channels must be 2");
  const int64_t div = int64_t{1} << (depth - 1);
  if (input_h <= 0 || input_w <= 0 || input_h % div != 0 || input_w % div != 0) {
    throw std::invalid_argument("model input size must be divisible by 2^(depth-1)");
  }
}

// ---------------------------------------------------------------------------
// Blocks
// ---------------------------------------------------------------------------

ResidualBlock::ResidualBlock(int64_t in_ch, int64_t out_ch, Rng& rng) {
  const int64_t mid = std::max<int64_t>(1, out_ch / 2);
  reduce = nn::Conv2d(in_ch, mid, 1, rng);
  bn1 = nn::BatchNorm2d(mid);
  conv = nn::Conv2d(mid, mid, 3, rng);
  bn2 = nn::BatchNorm2d(mid);
  expand = nn::Conv2d(mid, out_ch, 1, rng);
  bn3 = nn::BatchNorm2d(out_ch);
  if (in_ch != out_ch) {
    proj.emplace(in_ch, out_ch, 1, rng);
    bn_proj.emplace(out_ch);
  }
}

NodePtr ResidualBlock::forward(const NodePtr& x, bool training) {
  if (x->value.dim(1) != reduce.in_ch) {
    throw std::invalid_argument("residual_block: input channel mismatch without projection");
  }
  auto f = nn::relu(bn1.forward(reduce.forward(x), training));
  f = nn::relu(bn2.forward(conv.forward(f), training));
  f = bn3.forward(expand.forward(f), training);
  NodePtr shortcut = x;
  if (proj) shortcut = bn_proj->forward(proj->forward(x), training);
  return nn::relu(nn::add(f, shortcut));
}

void ResidualBlock::visit_params(const std::string& p, const nn::ParamVisitor& v) {
  reduce.visit_params(p + ".reduce", v);
  bn1.visit_params(p + ".bn1", v);
  conv.visit_params(p + ".conv", v);
  bn2.visit_params(p + ".bn2", v);
  expand.visit_params(p + ".expand", v);
  bn3.visit_params(p + ".bn3", v);
  if (proj) {
    proj->visit_params(p + ".proj", v);
    bn_proj->visit_params(p + ".bn_proj", v);
  }
}

void ResidualBlock::visit_buffers(const std::string& p, const nn::BufferVisitor& v) {
  bn1.visit_buffers(p + ".bn1", v);
  bn2.visit_buffers(p + ".bn2", v);
  bn3.visit_buffers(p + ".bn3", v);
  if (bn_proj) bn_proj->visit_buffers(p + ".bn_proj", v);
}

ConvBlock::ConvBlock(int64_t in_ch, int64_t out_ch, Rng& rng) {
  fuse = nn::Conv2d(in_ch, out_ch, 1, rng);
  bn1 = nn::BatchNorm2d(out_ch);
  conv = nn::Conv2d(out_ch, out_ch, 3, rng);
  bn2 = nn::BatchNorm2d(out_ch);
}

NodePtr ConvBlock::forward(const NodePtr& x, bool training) {
  auto y = nn::relu(bn1.forward(fuse.forward(x), training));
  return nn::relu(bn2.forward(conv.forward(y), training));
}

void ConvBlock::visit_params(const std::string& p, const nn::ParamVisitor& v) {
  fuse.visit_params(p + ".fuse", v);
  bn1.visit_params(p + ".bn1", v);
  conv.visit_params(p + ".conv", v);
  bn2.visit_params(p + ".bn2", v);
}

void ConvBlock::visit_buffers(const std::string& p, const nn::BufferVisitor& v) {
  bn1.visit_buffers(p + ".bn1", v);
  bn2.visit_buffers(p + ".bn2", v);
}

UpBlock::UpBlock(int64_t in_ch, int64_t out_ch, Rng& rng) {
  conv = nn::Conv2d(in_ch, out_ch, 1, rng);
  bn = nn::BatchNorm2d(out_ch);
}

NodePtr UpBlock::forward(const NodePtr& x, bool training) {
  auto up = nn::bilinear_resize(x, x->value.dim(2) * 2, x->value.dim(3) * 2);
  return nn::relu(bn.forward(conv.forward(up), training));
}

void UpBlock::visit_params(const std::string& p, const nn::ParamVisitor& v) {
  conv.visit_params(p + ".conv", v);
  bn.visit_params(p + ".bn", v);
}

void UpBlock::visit_buffers(const std::string& p, const nn::BufferVisitor& v) {
  bn.visit_buffers(p + ".bn", v);
}

// ---------------------------------------------------------------------------
// RccmNet
// ---------------------------------------------------------------------------

RccmNet::RccmNet(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(mix_seed(cfg.rng_seed, 0xA11C0DE));

  encoder_.reserve(static_cast<size_t>(cfg_.depth));
  for (int i = 0; i < cfg_.depth; ++i) {
    const int64_t in_ch = (i == 0) ? 1 : cfg_.channels_at(i - 1);
    encoder_.emplace_back(in_ch, cfg_.channels_at(i), rng);
  }

  // UNet++ wiring: node (i,j) consumes X(i,0..j-1) plus upsampled X(i+1,j-1).
  up_.resize(static_cast<size_t>(cfg_.depth - 1));
  nodes_.resize(static_cast<size_t>(cfg_.depth - 1));
  for (int i = 0; i + 1 < cfg_.depth; ++i) {
    for (int j = 1; i + j < cfg_.depth; ++j) {
      up_[i].emplace_back(cfg_.channels_at(i + 1), cfg_.channels_at(i), rng);
      nodes_[i].emplace_back((j + 1) * cfg_.channels_at(i), cfg_.channels_at(i), rng);
    }
  }

  for (int j = 1; j < cfg_.depth; ++j) {
    heads_.emplace_back(cfg_.channels_at(0), cfg_.seg_channels, 1, rng);
  }

  cls_fc_ = nn::Linear(cfg_.deepest_channels(), cfg_.num_classes, rng);
}

EncoderFeatures RccmNet::encoder_forward(const NodePtr& images, bool training) {
  const auto& shape = images->value.shape();
  if (shape.size() != 4 || shape[1] != 1 || shape[2] != cfg_.input_h || shape[3] != cfg_.input_w) {
    throw std::invalid_argument("encoder_forward: expected [N,1," + std::to_string(cfg_.input_h) +
                                "," + std::to_string(cfg_.input_w) + "] images");
  }
  EncoderFeatures out;
  NodePtr cur = images;
  for (int i = 0; i < cfg_.depth; ++i) {
    if (i > 0) cur = nn::max_pool2(cur);
    cur = encoder_[static_cast<size_t>(i)].forward(cur, training);
    out.levels.push_back(cur);
  }
  return out;
}

std::vector<NodePtr> RccmNet::decoder_forward(const EncoderFeatures& enc, bool training) {
  if (enc.levels.size() != static_cast<size_t>(cfg_.depth)) {
    throw std::invalid_argument("decoder_forward: features do not match the configured depth");
  }
  // grid[i][j] = X(i,j); column 0 is the encoder
  std::vector<std::vector<NodePtr>> grid(static_cast<size_t>(cfg_.depth));
  for (int i = 0; i < cfg_.depth; ++i) grid[static_cast<size_t>(i)].push_back(enc.levels[static_cast<size_t>(i)]);

  for (int j = 1; j < cfg_.depth; ++j) {
    for (int i = 0; i + j < cfg_.depth; ++i) {
      auto up = up_[static_cast<size_t>(i)][static_cast<size_t>(j - 1)].forward(
          grid[static_cast<size_t>(i + 1)][static_cast<size_t>(j - 1)], training);
      std::vector<NodePtr> cat(grid[static_cast<size_t>(i)].begin(), grid[static_cast<size_t>(i)].end());
      cat.push_back(up);
      grid[static_cast<size_t>(i)].push_back(
          nodes_[static_cast<size_t>(i)][static_cast<size_t>(j - 1)].forward(nn::concat_channels(cat), training));
    }
  }

  std::vector<NodePtr> seg;
  for (int j = 1; j < cfg_.depth; ++j) {
    seg.push_back(heads_[static_cast<size_t>(j - 1)].forward(grid[0][static_cast<size_t>(j)]));
  }
  // shallow configs repeat the deepest available output so |S| stays 4
  while (seg.size() < 4) seg.push_back(seg.back());
  return seg;
}

NodePtr RccmNet::classification_head(const NodePtr& fused, bool training) {
  (void)training;
  return cls_fc_.forward(nn::global_avg_pool(fused));
}

ForwardOutputs RccmNet::forward(const NodePtr& images, bool training, bool use_rcm,
                                const rcm::RcmWeights& alpha, rcm::SoftmaxAxis axis) {
  auto enc = encoder_forward(images, training);
  auto seg = decoder_forward(enc, training);
  const auto& m = enc.deepest();
  NodePtr fused = m;
  if (use_rcm) {
    auto p = rcm::region_probability_maps(seg, m->value.dim(2), m->value.dim(3), axis);
    fused = rcm::fuse_features(p, m, alpha);
  }
  ForwardOutputs out;
  out.seg_logits = std::move(seg);
  out.fused = fused;
  out.cls_logits = classification_head(fused, training);
  return out;
}

void RccmNet::visit_params(const nn::ParamVisitor& v) {
  for (size_t i = 0; i < encoder_.size(); ++i) {
    encoder_[i].visit_params("encoder." + std::to_string(i), v);
  }
  for (size_t i = 0; i < up_.size(); ++i) {
    for (size_t j = 0; j < up_[i].size(); ++j) {
      const std::string tag = std::to_string(i) + "." + std::to_string(j + 1);
      up_[i][j].visit_params("up." + tag, v);
      nodes_[i][j].visit_params("node." + tag, v);
    }
  }
  for (size_t j = 0; j < heads_.size(); ++j) {
    heads_[j].visit_params("head." + std::to_string(j + 1), v);
  }
  cls_fc_.visit_params("cls_fc", v);
}

void RccmNet::visit_buffers(const nn::BufferVisitor& v) {
  for (size_t i = 0; i < encoder_.size(); ++i) {
    encoder_[i].visit_buffers("encoder." + std::to_string(i), v);
  }
  for (size_t i = 0; i < up_.size(); ++i) {
    for (size_t j = 0; j < up_[i].size(); ++j) {
      const std::string tag = std::to_string(i) + "." + std::to_string(j + 1);
      up_[i][j].visit_buffers("up." + tag, v);
      nodes_[i][j].visit_buffers("node." + tag, v);
    }
  }
}

std::vector<NodePtr> RccmNet::parameters() {
  std::vector<NodePtr> out;
  visit_params([&](const std::string&, NodePtr& p) { out.push_back(p); });
  return out;
}

int64_t RccmNet::parameter_count() {
  int64_t n = 0;
  visit_params([&](const std::string&, NodePtr& p) { n += p->value.numel(); });
  return n;
}

}  // namespace rccm
