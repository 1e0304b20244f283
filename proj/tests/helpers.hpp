#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "rccm/autograd.hpp"
#include "rccm/mask.hpp"
#include "rccm/rng.hpp"

namespace rccm::testing {

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-4});
}

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst = "";
};

// Central finite differences against the analytic backward pass. `build_loss`
// must rebuild the graph from the parameters' current values.
inline GradCheckResult finite_diff_check(const std::vector<std::pair<std::string, nn::NodePtr>>& params,
                                         const std::function<nn::NodePtr()>& build_loss,
                                         double h = 1e-5) {
  for (auto& [name, p] : params) p->zero_grad();
  auto root = build_loss();
  nn::backward(root);

  std::vector<Tensor> analytic;
  for (auto& [name, p] : params) {
    analytic.push_back(p->has_grad() ? p->grad : Tensor(p->value.shape()));
  }

  GradCheckResult res;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi].second;
    for (int64_t i = 0; i < p->value.numel(); ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + h;
      const double up = build_loss()->value[0];
      p->value[i] = orig - h;
      const double dn = build_loss()->value[0];
      p->value[i] = orig;
      const double fd = (up - dn) / (2.0 * h);
      const double e = rel_err(analytic[pi][i], fd);
      if (e > res.max_rel_err) {
        res.max_rel_err = e;
        res.worst = params[pi].first + "[" + std::to_string(i) + "]";
      }
    }
  }
  return res;
}

inline Tensor random_tensor(const std::vector<int64_t>& shape, Rng& rng, double lo = -1.0,
                            double hi = 1.0) {
  Tensor t(shape);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

inline Mask random_mask(int64_t h, int64_t w, Rng& rng, double fill = 0.3) {
  Mask m(h, w);
  for (auto& v : m.v) v = rng.uniform() < fill ? 1 : 0;
  return m;
}

// O(|A|*|B|) surface-distance oracle, independent of the EDT implementation.
struct BruteForceSurface {
  double assd = 0.0;
  double hd = 0.0;
};

inline BruteForceSurface brute_force_surface(const std::vector<std::pair<int64_t, int64_t>>& a,
                                             const std::vector<std::pair<int64_t, int64_t>>& b,
                                             double spacing) {
  auto directed = [&](const auto& from, const auto& to, double& sum, double& mx) {
    for (const auto& [y, x] : from) {
      double best = 1e300;
      for (const auto& [y2, x2] : to) {
        const double dy = static_cast<double>(y - y2), dx = static_cast<double>(x - x2);
        best = std::min(best, dy * dy + dx * dx);
      }
      const double d = std::sqrt(best);
      sum += d;
      mx = std::max(mx, d);
    }
  };
  double sab = 0.0, mab = 0.0, sba = 0.0, mba = 0.0;
  directed(a, b, sab, mab);
  directed(b, a, sba, mba);
  BruteForceSurface r;
  r.assd = 0.5 * (sab / static_cast<double>(a.size()) + sba / static_cast<double>(b.size())) * spacing;
  r.hd = std::max(mab, mba) * spacing;
  return r;
}

// single 4-connected component check
inline bool is_single_4_connected(const Mask& m) {
  const int64_t area = m.area_px();
  if (area == 0) return false;
  std::vector<uint8_t> seen(m.v.size(), 0);
  std::vector<int64_t> stack;
  int64_t start = -1;
  for (int64_t i = 0; i < static_cast<int64_t>(m.v.size()); ++i) {
    if (m.v[static_cast<size_t>(i)]) {
      start = i;
      break;
    }
  }
  stack.push_back(start);
  seen[static_cast<size_t>(start)] = 1;
  int64_t count = 0;
  while (!stack.empty()) {
    const int64_t p = stack.back();
    stack.pop_back();
    ++count;
    const int64_t y = p / m.w, x = p % m.w;
    const int64_t nbr[4] = {p - m.w, p + m.w, p - 1, p + 1};
    const bool ok[4] = {y > 0, y < m.h - 1, x > 0, x < m.w - 1};
    for (int k = 0; k < 4; ++k) {
      if (ok[k] && m.v[static_cast<size_t>(nbr[k])] && !seen[static_cast<size_t>(nbr[k])]) {
        seen[static_cast<size_t>(nbr[k])] = 1;
        stack.push_back(nbr[k]);
      }
    }
  }
  return count == area;
}

}  // namespace rccm::testing
