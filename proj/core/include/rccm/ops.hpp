#pragma once

#include <optional>
#include <string>

#include "rccm/autograd.hpp"
#include "rccm/rng.hpp"

namespace rccm::nn {

// ---------------------------------------------------------------------------
// Functional ops. All inputs/outputs are [N,C,H,W] unless noted.
// ---------------------------------------------------------------------------

NodePtr relu(const NodePtr& x);
NodePtr add(const NodePtr& a, const NodePtr& b);
NodePtr scale(const NodePtr& x, double s);
NodePtr max_pool2(const NodePtr& x);  // 2x2 window, stride 2
NodePtr concat_channels(const std::vector<NodePtr>& xs);
NodePtr select_channel(const NodePtr& x, int64_t c);               // -> [N,1,H,W]
NodePtr bilinear_resize(const NodePtr& x, int64_t th, int64_t tw);  // any target size
NodePtr softmax_channels(const NodePtr& x);                         // softmax over dim 1, per pixel
NodePtr global_avg_pool(const NodePtr& x);                          // -> [N,C]
// sum_i coeffs[i] * xs[i] for scalar nodes
NodePtr affine_scalars(const std::vector<NodePtr>& xs, const std::vector<double>& coeffs);

// ---------------------------------------------------------------------------
// Parameterized layers. Construction draws fan-in-scaled uniform weights from
// the supplied rng, in a fixed order, so models are reproducible per seed.
// ---------------------------------------------------------------------------

using ParamVisitor = std::function<void(const std::string&, NodePtr&)>;
using BufferVisitor = std::function<void(const std::string&, Tensor&)>;

struct Conv2d {
  int64_t in_ch = 0, out_ch = 0, ksize = 1;
  NodePtr weight;  // [out,in,k,k]
  NodePtr bias;    // [out]

  Conv2d() = default;
  Conv2d(int64_t in, int64_t out, int64_t k, Rng& rng);
  NodePtr forward(const NodePtr& x) const;
  void visit_params(const std::string& prefix, const ParamVisitor& v);
};

struct BatchNorm2d {
  int64_t ch = 0;
  double eps = 1e-5;
  double momentum = 0.1;
  NodePtr gamma;  // [C]
  NodePtr beta;   // [C]
  Tensor running_mean;  // [C]
  Tensor running_var;   // [C]

  BatchNorm2d() = default;
  explicit BatchNorm2d(int64_t channels);
  NodePtr forward(const NodePtr& x, bool training);
  void visit_params(const std::string& prefix, const ParamVisitor& v);
  void visit_buffers(const std::string& prefix, const BufferVisitor& v);
};

struct Linear {
  int64_t in_f = 0, out_f = 0;
  NodePtr weight;  // [out,in]
  NodePtr bias;    // [out]

  Linear() = default;
  Linear(int64_t in, int64_t out, Rng& rng);
  NodePtr forward(const NodePtr& x) const;  // [N,in] -> [N,out]
  void visit_params(const std::string& prefix, const ParamVisitor& v);
};

// Row-major C[M,N] (+)= A[M,K] * B[K,N]; exposed for the benchmarks.
void gemm_nn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
             bool accumulate);

}  // namespace rccm::nn
