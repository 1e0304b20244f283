#include "rccm/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "rccm/model.hpp"
#include "rccm/ops.hpp"

namespace rccm::losses {

using nn::Node;
using nn::NodePtr;

namespace {

void check_seg_inputs(const std::vector<NodePtr>& seg, const Tensor& mask) {
  if (seg.empty()) throw std::invalid_argument("segmentation loss: empty output list");
  const auto& s0 = seg[0]->value;
  if (s0.rank() != 4 || s0.dim(1) != 2) {
    throw std::invalid_argument("segmentation loss: logits must be [N,2,H,W]");
  }
  for (const auto& s : seg) {
    if (!s->value.same_shape(s0)) {
      throw std::invalid_argument("segmentation loss: output shape mismatch");
    }
  }
  if (mask.rank() != 3 || mask.dim(0) != s0.dim(0) || mask.dim(1) != s0.dim(2) ||
      mask.dim(2) != s0.dim(3)) {
    throw std::invalid_argument("segmentation loss: mask must be [N,H,W] matching the logits");
  }
  for (int64_t i = 0; i < mask.numel(); ++i) {
    if (mask[i] != 0.0 && mask[i] != 1.0) {
      throw std::invalid_argument("segmentation loss: mask is not one-hot (values must be 0/1)");
    }
  }
}

// Per-pixel binary softmax with the stabilized log kept around.
struct PixelDist {
  double q0, q1, lq0, lq1;
};

inline PixelDist pixel_dist(double s0, double s1, double log_eps) {
  const double mx = s0 > s1 ? s0 : s1;
  const double e0 = std::exp(s0 - mx), e1 = std::exp(s1 - mx);
  const double z = e0 + e1;
  PixelDist d;
  d.q0 = e0 / z;
  d.q1 = e1 / z;
  const double lz = std::log(z);
  d.lq0 = std::max(s0 - mx - lz, log_eps);
  d.lq1 = std::max(s1 - mx - lz, log_eps);
  return d;
}

// Mean weighted CE of one deep-supervision output.
NodePtr seg_ce_one(const NodePtr& logits, const Tensor& mask, const std::vector<double>& weights,
                   double eps) {
  const int64_t n = logits->value.dim(0), h = logits->value.dim(2), w = logits->value.dim(3);
  const int64_t hw = h * w;
  const double log_eps = std::log(eps);
  double total = 0.0;
  const double* sd = logits->value.data();
  const double* md = mask.data();
  for (int64_t b = 0; b < n; ++b) {
    double acc = 0.0;
    for (int64_t j = 0; j < hw; ++j) {
      const auto d = pixel_dist(sd[(b * 2 + 0) * hw + j], sd[(b * 2 + 1) * hw + j], log_eps);
      acc -= md[b * hw + j] == 1.0 ? d.lq1 : d.lq0;
    }
    total += weights[static_cast<size_t>(b)] * acc / static_cast<double>(hw);
  }
  Tensor v({1});
  v[0] = total / static_cast<double>(n);
  auto sn = logits;
  auto mask_h = std::make_shared<Tensor>(mask);
  auto w_h = std::make_shared<std::vector<double>>(weights);
  return nn::make_node(
      std::move(v), {logits},
      [sn, mask_h, w_h, n, hw, log_eps](Node& self) {
        if (!sn->requires_grad) return;
        const double g = self.grad[0];
        double* dx = sn->grad_buf().data();
        const double* sd2 = sn->value.data();
        const double* md2 = mask_h->data();
        for (int64_t b = 0; b < n; ++b) {
          const double scale = g * (*w_h)[static_cast<size_t>(b)] /
                               (static_cast<double>(n) * static_cast<double>(hw));
          for (int64_t j = 0; j < hw; ++j) {
            const auto d =
                pixel_dist(sd2[(b * 2 + 0) * hw + j], sd2[(b * 2 + 1) * hw + j], log_eps);
            const bool plaque = md2[b * hw + j] == 1.0;
            const double hot_lq = plaque ? d.lq1 : d.lq0;
            if (hot_lq <= log_eps) continue;  // clamped log: constant w.r.t. s
            const double z0 = plaque ? 0.0 : 1.0;
            dx[(b * 2 + 0) * hw + j] += scale * (d.q0 - z0);
            dx[(b * 2 + 1) * hw + j] += scale * (d.q1 - (1.0 - z0));
          }
        }
      },
      "seg_ce");
}

NodePtr seg_entropy_one(const NodePtr& logits, double eps) {
  const int64_t n = logits->value.dim(0), h = logits->value.dim(2), w = logits->value.dim(3);
  const int64_t hw = h * w;
  const double log_eps = std::log(eps);
  const double* sd = logits->value.data();
  double total = 0.0;
  for (int64_t b = 0; b < n; ++b) {
    for (int64_t j = 0; j < hw; ++j) {
      const auto d = pixel_dist(sd[(b * 2 + 0) * hw + j], sd[(b * 2 + 1) * hw + j], log_eps);
      total -= d.q0 * d.lq0 + d.q1 * d.lq1;
    }
  }
  Tensor v({1});
  v[0] = total / static_cast<double>(n * hw);
  auto sn = logits;
  return nn::make_node(
      std::move(v), {logits},
      [sn, n, hw, log_eps](Node& self) {
        if (!sn->requires_grad) return;
        const double g = self.grad[0] / static_cast<double>(n * hw);
        double* dx = sn->grad_buf().data();
        const double* sd2 = sn->value.data();
        for (int64_t b = 0; b < n; ++b) {
          for (int64_t j = 0; j < hw; ++j) {
            const auto d =
                pixel_dist(sd2[(b * 2 + 0) * hw + j], sd2[(b * 2 + 1) * hw + j], log_eps);
            const double ent = -(d.q0 * d.lq0 + d.q1 * d.lq1);
            dx[(b * 2 + 0) * hw + j] += g * (-d.q0 * (d.lq0 + ent));
            dx[(b * 2 + 1) * hw + j] += g * (-d.q1 * (d.lq1 + ent));
          }
        }
      },
      "seg_entropy");
}

struct RowDist {
  double q[3];
  double lq[3];
};

RowDist row_dist(const double* s, double log_eps) {
  RowDist d;
  double mx = std::max(s[0], std::max(s[1], s[2]));
  double z = 0.0;
  for (int k = 0; k < 3; ++k) z += std::exp(s[k] - mx);
  const double lz = std::log(z);
  for (int k = 0; k < 3; ++k) {
    d.q[k] = std::exp(s[k] - mx) / z;
    d.lq[k] = std::max(s[k] - mx - lz, log_eps);
  }
  return d;
}

}  // namespace

NodePtr weighted_ce_seg(const std::vector<NodePtr>& seg_logits, const Tensor& mask,
                        const std::vector<double>& weights, double eps) {
  check_seg_inputs(seg_logits, mask);
  if (weights.size() != static_cast<size_t>(mask.dim(0))) {
    throw std::invalid_argument("weighted_ce_seg: one weight per sample required");
  }
  std::vector<NodePtr> terms;
  terms.reserve(seg_logits.size());
  for (const auto& s : seg_logits) terms.push_back(seg_ce_one(s, mask, weights, eps));
  const double c = 1.0 / static_cast<double>(terms.size());
  return nn::affine_scalars(terms, std::vector<double>(terms.size(), c));
}

NodePtr entropy_seg(const std::vector<NodePtr>& seg_logits, double eps) {
  if (seg_logits.empty()) throw std::invalid_argument("entropy_seg: empty output list");
  std::vector<NodePtr> terms;
  terms.reserve(seg_logits.size());
  for (const auto& s : seg_logits) terms.push_back(seg_entropy_one(s, eps));
  const double c = 1.0 / static_cast<double>(terms.size());
  return nn::affine_scalars(terms, std::vector<double>(terms.size(), c));
}

NodePtr ce_cls(const NodePtr& cls_logits, const std::vector<int>& labels, double eps) {
  if (cls_logits->value.rank() != 2 || cls_logits->value.dim(1) != 3) {
    throw std::invalid_argument("ce_cls: logits must be [N,3]");
  }
  const int64_t n = cls_logits->value.dim(0);
  if (static_cast<int64_t>(labels.size()) != n) {
    throw std::invalid_argument("ce_cls: one label per sample required");
  }
  for (int lab : labels) {
    if (lab < 0 || lab > 2) throw std::invalid_argument("ce_cls: label out of range");
  }
  const double log_eps = std::log(eps);
  double total = 0.0;
  for (int64_t b = 0; b < n; ++b) {
    const auto d = row_dist(cls_logits->value.data() + b * 3, log_eps);
    total -= d.lq[labels[static_cast<size_t>(b)]];
  }
  Tensor v({1});
  v[0] = total / static_cast<double>(n);
  auto sn = cls_logits;
  auto labs = std::make_shared<std::vector<int>>(labels);
  return nn::make_node(
      std::move(v), {cls_logits},
      [sn, labs, n, log_eps](Node& self) {
        if (!sn->requires_grad) return;
        const double g = self.grad[0] / static_cast<double>(n);
        double* dx = sn->grad_buf().data();
        for (int64_t b = 0; b < n; ++b) {
          const auto d = row_dist(sn->value.data() + b * 3, log_eps);
          const int c = (*labs)[static_cast<size_t>(b)];
          if (d.lq[c] <= log_eps) continue;
          for (int k = 0; k < 3; ++k) {
            dx[b * 3 + k] += g * (d.q[k] - (k == c ? 1.0 : 0.0));
          }
        }
      },
      "ce_cls");
}

NodePtr entropy_cls(const NodePtr& cls_logits, double eps) {
  if (cls_logits->value.rank() != 2 || cls_logits->value.dim(1) != 3) {
    throw std::invalid_argument("entropy_cls: logits must be [N,3]");
  }
  const int64_t n = cls_logits->value.dim(0);
  const double log_eps = std::log(eps);
  double total = 0.0;
  for (int64_t b = 0; b < n; ++b) {
    const auto d = row_dist(cls_logits->value.data() + b * 3, log_eps);
    for (int k = 0; k < 3; ++k) total -= d.q[k] * d.lq[k];
  }
  Tensor v({1});
  v[0] = total / static_cast<double>(n);
  auto sn = cls_logits;
  return nn::make_node(
      std::move(v), {cls_logits},
      [sn, n, log_eps](Node& self) {
        if (!sn->requires_grad) return;
        const double g = self.grad[0] / static_cast<double>(n);
        double* dx = sn->grad_buf().data();
        for (int64_t b = 0; b < n; ++b) {
          const auto d = row_dist(sn->value.data() + b * 3, log_eps);
          double ent = 0.0;
          for (int k = 0; k < 3; ++k) ent -= d.q[k] * d.lq[k];
          for (int k = 0; k < 3; ++k) dx[b * 3 + k] += g * (-d.q[k] * (d.lq[k] + ent));
        }
      },
      "entropy_cls");
}

LossNodes total_loss(const ForwardOutputs& outputs, const Tensor& mask,
                     const std::vector<int>& labels, const std::vector<double>& weights,
                     const LossConfig& cfg) {
  if (cfg.lambda < 0.0) throw std::invalid_argument("loss.lambda must be >= 0");
  if (cfg.epsilon <= 0.0) throw std::invalid_argument("loss.epsilon must be > 0");
  auto wce = weighted_ce_seg(outputs.seg_logits, mask, weights, cfg.epsilon);
  auto ent_s = entropy_seg(outputs.seg_logits, cfg.epsilon);
  auto ce = ce_cls(outputs.cls_logits, labels, cfg.epsilon);
  auto ent_c = entropy_cls(outputs.cls_logits, cfg.epsilon);

  LossNodes out;
  out.values.l_wce = wce->value[0];
  out.values.l_ent_seg = ent_s->value[0];
  out.values.l_ce = ce->value[0];
  out.values.l_ent_cls = ent_c->value[0];
  out.values.l_seg = out.values.l_wce + cfg.entropy_weight_seg * out.values.l_ent_seg;
  out.values.l_cls = out.values.l_ce + cfg.entropy_weight_cls * out.values.l_ent_cls;
  out.values.total = out.values.l_seg + cfg.lambda * out.values.l_cls;
  out.total = nn::affine_scalars(
      {wce, ent_s, ce, ent_c},
      {1.0, cfg.entropy_weight_seg, cfg.lambda, cfg.lambda * cfg.entropy_weight_cls});
  return out;
}

}  // namespace rccm::losses
