#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "rccm/ops.hpp"
#include "rccm/threadpool.hpp"

using namespace rccm;
using namespace rccm::nn;
using rccm::testing::finite_diff_check;
using rccm::testing::random_tensor;

TEST_SUITE_BEGIN("ops");

TEST_CASE("rng is portable and serializable") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  const auto state = a.state();
  const double next = a.uniform();
  Rng c;
  c.set_state(state);
  CHECK(c.uniform() == next);
}

TEST_CASE("parallel_for covers every index exactly once") {
  std::vector<int> hits(10000, 0);
  parallel_for(10000, [&](int64_t b, int64_t e) {
    for (int64_t i = b; i < e; ++i) hits[static_cast<size_t>(i)]++;
  });
  for (int h : hits) CHECK(h == 1);
}

TEST_CASE("gemm matches naive multiply") {
  Rng rng(7);
  const int64_t m = 5, k = 7, n = 11;
  Tensor a = random_tensor({m, k}, rng), b = random_tensor({k, n}, rng), c({m, n});
  gemm_nn(a.data(), b.data(), c.data(), m, k, n, false);
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int64_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      CHECK(c[i * n + j] == doctest::Approx(acc).epsilon(1e-12));
    }
  }
}

TEST_CASE("backward accumulates through fan-out") {
  auto x = make_leaf(Tensor::full({1, 1, 2, 2}, 2.0), true);
  auto y = add(x, x);                              // two paths into x
  auto root = affine_scalars({global_avg_pool(y)}, {1.0});  // [1,1] is scalar-sized
  backward(root);
  CHECK(x->grad[0] == doctest::Approx(0.5));  // 2 * 1/4 pooling
}

TEST_CASE("conv2d identity kernel reproduces input") {
  Rng rng(3);
  Conv2d conv(2, 2, 1, rng);
  conv.weight->value.zero();
  conv.bias->value.zero();
  conv.weight->value[0 * 2 + 0] = 1.0;  // out0 <- in0
  conv.weight->value[1 * 2 + 1] = 1.0;  // out1 <- in1
  auto x = make_leaf(random_tensor({2, 2, 4, 6}, rng));
  auto y = conv.forward(x);
  for (int64_t i = 0; i < x->value.numel(); ++i) CHECK(y->value[i] == x->value[i]);
}

TEST_CASE("op-level gradients match finite differences") {
  Rng rng(11);
  std::vector<std::pair<std::string, NodePtr>> params;
  auto x = make_leaf(random_tensor({2, 3, 4, 6}, rng), true);
  params.emplace_back("x", x);

  auto scalarize = [](const NodePtr& t) {
    // deterministic weighted sum so every element contributes a distinct grad
    Tensor w(t->value.shape());
    for (int64_t i = 0; i < w.numel(); ++i) w[i] = 0.1 + 0.01 * static_cast<double>(i % 17);
    auto wn = make_leaf(std::move(w));
    Tensor v({1});
    double acc = 0.0;
    for (int64_t i = 0; i < t->value.numel(); ++i) acc += t->value[i] * wn->value[i];
    v[0] = acc;
    return make_node(std::move(v), {t},
                     [t, wn](Node& self) {
                       if (!t->requires_grad) return;
                       double* g = t->grad_buf().data();
                       for (int64_t i = 0; i < t->value.numel(); ++i) {
                         g[i] += self.grad[0] * wn->value[i];
                       }
                     },
                     "scalarize");
  };

  SUBCASE("relu") {
    auto r = finite_diff_check(params, [&] { return scalarize(relu(x)); });
    CHECK(r.max_rel_err < 1e-4);
  }
  SUBCASE("max_pool2") {
    auto r = finite_diff_check(params, [&] { return scalarize(max_pool2(x)); });
    CHECK(r.max_rel_err < 1e-4);
  }
  SUBCASE("bilinear_resize down") {
    auto r = finite_diff_check(params, [&] { return scalarize(bilinear_resize(x, 2, 3)); });
    CHECK(r.max_rel_err < 1e-4);
  }
  SUBCASE("bilinear_resize up") {
    auto r = finite_diff_check(params, [&] { return scalarize(bilinear_resize(x, 8, 12)); });
    CHECK(r.max_rel_err < 1e-4);
  }
  SUBCASE("softmax_channels") {
    auto r = finite_diff_check(params, [&] { return scalarize(softmax_channels(x)); });
    CHECK(r.max_rel_err < 1e-4);
  }
  SUBCASE("select+concat") {
    auto r = finite_diff_check(params, [&] {
      return scalarize(concat_channels({select_channel(x, 1), select_channel(x, 0)}));
    });
    CHECK(r.max_rel_err < 1e-4);
  }
  SUBCASE("conv2d 3x3") {
    Rng wrng(5);
    Conv2d conv(3, 2, 3, wrng);
    params.emplace_back("W", conv.weight);
    params.emplace_back("b", conv.bias);
    auto r = finite_diff_check(params, [&] { return scalarize(conv.forward(x)); });
    CHECK(r.max_rel_err < 1e-4);
  }
  SUBCASE("conv2d 1x1") {
    Rng wrng(5);
    Conv2d conv(3, 4, 1, wrng);
    params.emplace_back("W", conv.weight);
    params.emplace_back("b", conv.bias);
    auto r = finite_diff_check(params, [&] { return scalarize(conv.forward(x)); });
    CHECK(r.max_rel_err < 1e-4);
  }
  SUBCASE("batchnorm train mode") {
    BatchNorm2d bn(3);
    params.emplace_back("gamma", bn.gamma);
    params.emplace_back("beta", bn.beta);
    auto r = finite_diff_check(params, [&] { return scalarize(bn.forward(x, true)); });
    CHECK(r.max_rel_err < 1e-4);
  }
  SUBCASE("linear") {
    Rng wrng(9);
    Linear fc(3, 2, wrng);
    auto x2 = make_leaf(random_tensor({4, 3}, rng), true);
    std::vector<std::pair<std::string, NodePtr>> p2{{"x", x2}, {"W", fc.weight}, {"b", fc.bias}};
    auto r = finite_diff_check(p2, [&] { return scalarize(fc.forward(x2)); });
    CHECK(r.max_rel_err < 1e-4);
  }
}

TEST_CASE("bilinear resize basics") {
  Rng rng(2);
  auto x = make_leaf(random_tensor({1, 1, 6, 9}, rng));
  SUBCASE("same size is the identity") {
    auto y = bilinear_resize(x, 6, 9);
    for (int64_t i = 0; i < x->value.numel(); ++i) CHECK(y->value[i] == x->value[i]);
  }
  SUBCASE("constant stays constant") {
    auto c = make_leaf(Tensor::full({1, 1, 6, 9}, 0.37));
    auto y = bilinear_resize(c, 4, 5);
    for (int64_t i = 0; i < y->value.numel(); ++i) {
      CHECK(y->value[i] == doctest::Approx(0.37).epsilon(1e-12));
    }
  }
}

TEST_CASE("maxpool keeps the max and halves size") {
  Tensor t({1, 1, 2, 2});
  t[0] = 1.0;
  t[1] = 5.0;
  t[2] = -2.0;
  t[3] = 0.0;
  auto y = max_pool2(make_leaf(std::move(t)));
  CHECK(y->value.shape() == std::vector<int64_t>{1, 1, 1, 1});
  CHECK(y->value[0] == 5.0);
}

TEST_SUITE_END();
