#include "rccm/rcm.hpp"

#include <stdexcept>

#include "rccm/ops.hpp"
#include "rccm/threadpool.hpp"

namespace rccm::rcm {

using nn::NodePtr;

NodePtr downsample_logits(const NodePtr& seg_logits, int64_t th, int64_t tw) {
  if (seg_logits->value.rank() != 4 || seg_logits->value.dim(1) != 2) {
    throw std::invalid_argument("downsample_logits: expected [N,2,H,W] segmentation logits");
  }
  if (th > seg_logits->value.dim(2) || tw > seg_logits->value.dim(3)) {
    throw std::invalid_argument("downsample_logits: target larger than source");
  }
  return nn::bilinear_resize(nn::select_channel(seg_logits, 1), th, tw);
}

NodePtr region_probability_maps(const std::vector<NodePtr>& seg_logits, int64_t th, int64_t tw,
                                SoftmaxAxis axis) {
  if (seg_logits.size() != 4) {
    throw std::invalid_argument("region_probability_maps: expected exactly 4 decoder outputs");
  }
  for (const auto& s : seg_logits) {
    if (!s->value.all_finite()) {
      throw std::invalid_argument("region_probability_maps: non-finite logits");
    }
  }
  if (axis == SoftmaxAxis::levels) {
    std::vector<NodePtr> down;
    down.reserve(4);
    for (const auto& s : seg_logits) down.push_back(downsample_logits(s, th, tw));
    return nn::softmax_channels(nn::concat_channels(down));  // softmax across the 4 levels
  }
  // classes: per-level softmax over the two class channels, keep the plaque one
  std::vector<NodePtr> maps;
  maps.reserve(4);
  for (const auto& s : seg_logits) {
    auto resized = nn::bilinear_resize(s, th, tw);
    maps.push_back(nn::select_channel(nn::softmax_channels(resized), 1));
  }
  return nn::concat_channels(maps);
}

NodePtr fuse_features(const NodePtr& probability_maps, const NodePtr& features,
                      const RcmWeights& alpha) {
  const Tensor& p = probability_maps->value;
  const Tensor& m = features->value;
  if (p.rank() != 4 || m.rank() != 4 || p.dim(1) != 4) {
    throw std::invalid_argument("fuse_features: expected P [N,4,h,w] and M [N,C,h,w]");
  }
  if (p.dim(0) != m.dim(0) || p.dim(2) != m.dim(2) || p.dim(3) != m.dim(3)) {
    throw std::invalid_argument("fuse_features: spatial shape mismatch");
  }
  const int64_t n = m.dim(0), c = m.dim(1), hw = m.dim(2) * m.dim(3);
  Tensor fm(m.shape());
  const double* pd = p.data();
  const double* md = m.data();
  double* fd = fm.data();
  parallel_for(n * c, [&](int64_t ib, int64_t ie) {
    for (int64_t i = ib; i < ie; ++i) {
      const int64_t b = i / c;
      const double* mrow = md + i * hw;
      double* frow = fd + i * hw;
      for (int64_t j = 0; j < hw; ++j) {
        double acc = 0.0;
        for (int64_t l = 0; l < 4; ++l) {
          acc += alpha.alpha[static_cast<size_t>(l)] * pd[(b * 4 + l) * hw + j] * mrow[j];
        }
        frow[j] = acc;
      }
    }
  });
  auto pn = probability_maps;
  auto mn = features;
  auto a = alpha.alpha;
  return nn::make_node(
      std::move(fm), {probability_maps, features},
      [pn, mn, a, n, c, hw](nn::Node& self) {
        const double* dy = self.grad.data();
        const double* pd2 = pn->value.data();
        const double* md2 = mn->value.data();
        if (mn->requires_grad) {
          double* dm = mn->grad_buf().data();
          parallel_for(n * c, [&](int64_t ib, int64_t ie) {
            for (int64_t i = ib; i < ie; ++i) {
              const int64_t b = i / c;
              const double* dyr = dy + i * hw;
              double* dmr = dm + i * hw;
              for (int64_t j = 0; j < hw; ++j) {
                double acc = 0.0;
                for (int64_t l = 0; l < 4; ++l) {
                  acc += a[static_cast<size_t>(l)] * pd2[(b * 4 + l) * hw + j];
                }
                dmr[j] += acc * dyr[j];
              }
            }
          });
        }
        if (pn->requires_grad) {
          double* dp = pn->grad_buf().data();
          parallel_for(n * 4, [&](int64_t ib, int64_t ie) {
            for (int64_t i = ib; i < ie; ++i) {
              const int64_t b = i / 4;
              const int64_t l = i % 4;
              double* dpr = dp + i * hw;
              for (int64_t j = 0; j < hw; ++j) {
                double acc = 0.0;
                for (int64_t cc = 0; cc < c; ++cc) {
                  acc += dy[(b * c + cc) * hw + j] * md2[(b * c + cc) * hw + j];
                }
                dpr[j] += a[static_cast<size_t>(l)] * acc;
              }
            }
          });
        }
      },
      "rcm_fuse");
}

SoftmaxAxis softmax_axis_from_string(const std::string& s) {
  if (s == "levels") return SoftmaxAxis::levels;
  if (s == "classes") return SoftmaxAxis::classes;
  throw std::invalid_argument("rcm.softmax_axis must be 'levels' or 'classes', got '" + s + "'");
}

std::string to_string(SoftmaxAxis axis) {
  return axis == SoftmaxAxis::levels ? "levels" : "classes";
}

}  // namespace rccm::rcm
