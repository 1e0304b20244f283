#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "rccm/losses.hpp"
#include "rccm/model.hpp"
#include "rccm/rcm.hpp"

using namespace rccm;
using namespace rccm::nn;
using rccm::testing::random_tensor;

namespace {

// four [N,2,H,W] logit maps from one rng
std::vector<NodePtr> random_logits(Rng& rng, int64_t n, int64_t h, int64_t w, double lo = -2.0,
                                   double hi = 2.0) {
  std::vector<NodePtr> s;
  for (int i = 0; i < 4; ++i) s.push_back(make_leaf(random_tensor({n, 2, h, w}, rng, lo, hi)));
  return s;
}

}  // namespace

TEST_SUITE_BEGIN("rcm");

TEST_CASE("downsample_logits basics") {
  SUBCASE("constant stays constant at any size") {
    auto s = make_leaf(Tensor::full({1, 2, 8, 12}, 1.4));
    auto d = rcm::downsample_logits(s, 3, 5);
    CHECK(d->value.shape() == std::vector<int64_t>{1, 1, 3, 5});
    for (int64_t i = 0; i < d->value.numel(); ++i) {
      CHECK(d->value[i] == doctest::Approx(1.4).epsilon(1e-12));
    }
  }
  SUBCASE("same-size extraction is the plaque channel unchanged") {
    Rng rng(1);
    auto s = make_leaf(random_tensor({1, 2, 4, 6}, rng));
    auto d = rcm::downsample_logits(s, 4, 6);
    for (int64_t i = 0; i < 24; ++i) CHECK(d->value[i] == s->value[24 + i]);
  }
  SUBCASE("shape contract for the default geometry") {
    auto s = make_leaf(Tensor({1, 2, 96, 144}));
    CHECK(rcm::downsample_logits(s, 6, 9)->value.shape() == std::vector<int64_t>{1, 1, 6, 9});
  }
  SUBCASE("upsampling target is rejected") {
    auto s = make_leaf(Tensor({1, 2, 4, 6}));
    CHECK_THROWS_AS(rcm::downsample_logits(s, 8, 6), std::invalid_argument);
  }
}

TEST_CASE("region probability maps follow the level softmax") {
  SUBCASE("equal logits give uniform 0.25") {
    std::vector<NodePtr> s;
    for (int i = 0; i < 4; ++i) s.push_back(make_leaf(Tensor::full({1, 2, 4, 4}, 0.7)));
    auto p = rcm::region_probability_maps(s, 4, 4);
    for (int64_t i = 0; i < p->value.numel(); ++i) {
      CHECK(p->value[i] == doctest::Approx(0.25).epsilon(1e-12));
    }
  }
  SUBCASE("frozen expected values for logits (1,0,0,0)") {
    std::vector<NodePtr> s;
    for (int i = 0; i < 4; ++i) {
      s.push_back(make_leaf(Tensor::full({1, 2, 2, 2}, i == 0 ? 1.0 : 0.0)));
    }
    auto p = rcm::region_probability_maps(s, 2, 2);
    // softmax(1,0,0,0) = e/(e+3), 1/(e+3) x3
    const double e = std::exp(1.0);
    CHECK(p->value[0] == doctest::Approx(e / (e + 3.0)).epsilon(1e-9));
    CHECK(p->value[0] == doctest::Approx(0.47536).epsilon(1e-4));
    for (int lvl = 1; lvl < 4; ++lvl) {
      CHECK(p->value[lvl * 4] == doctest::Approx(0.17488).epsilon(1e-4));
    }
  }
  SUBCASE("extreme logits do not overflow") {
    std::vector<NodePtr> s;
    for (int i = 0; i < 4; ++i) {
      s.push_back(make_leaf(Tensor::full({1, 2, 2, 2}, i == 0 ? 100.0 : 0.0)));
    }
    auto p = rcm::region_probability_maps(s, 2, 2);
    REQUIRE(p->value.all_finite());
    CHECK(p->value[0] == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(p->value[4] == doctest::Approx(0.0).epsilon(1e-9));
  }
  SUBCASE("per-pixel normalization and shift invariance on random inputs") {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
      auto s = random_logits(rng, 2, 6, 9);
      auto p = rcm::region_probability_maps(s, 3, 4);
      const int64_t hw = 12;
      for (int64_t b = 0; b < 2; ++b) {
        for (int64_t px = 0; px < hw; ++px) {
          double sum = 0.0;
          for (int lvl = 0; lvl < 4; ++lvl) sum += p->value[(b * 4 + lvl) * hw + px];
          REQUIRE(sum == doctest::Approx(1.0).epsilon(1e-6));
        }
      }
      // add the same constant to all four maps
      const double c = rng.uniform(-5.0, 5.0);
      std::vector<NodePtr> shifted;
      for (auto& si : s) {
        Tensor t(si->value.shape());
        for (int64_t i = 0; i < t.numel(); ++i) t[i] = si->value[i] + c;
        shifted.push_back(make_leaf(std::move(t)));
      }
      auto p2 = rcm::region_probability_maps(shifted, 3, 4);
      for (int64_t i = 0; i < p->value.numel(); ++i) {
        REQUIRE(p2->value[i] == doctest::Approx(p->value[i]).epsilon(1e-6));
      }
    }
  }
  SUBCASE("non-finite logits are rejected") {
    std::vector<NodePtr> s;
    for (int i = 0; i < 4; ++i) s.push_back(make_leaf(Tensor({1, 2, 2, 2})));
    s[1]->value[0] = std::nan("");
    CHECK_THROWS_AS(rcm::region_probability_maps(s, 2, 2), std::invalid_argument);
  }
  SUBCASE("classes axis produces per-level class probabilities") {
    Rng rng(5);
    auto s = random_logits(rng, 1, 4, 4);
    auto p = rcm::region_probability_maps(s, 4, 4, rcm::SoftmaxAxis::classes);
    CHECK(p->value.shape() == std::vector<int64_t>{1, 4, 4, 4});
    // each value is sigma(s1 - s0) of its level
    for (int lvl = 0; lvl < 4; ++lvl) {
      for (int64_t px = 0; px < 16; ++px) {
        const double s0 = s[static_cast<size_t>(lvl)]->value[px];
        const double s1 = s[static_cast<size_t>(lvl)]->value[16 + px];
        const double expect = 1.0 / (1.0 + std::exp(s0 - s1));
        REQUIRE(p->value[lvl * 16 + px] == doctest::Approx(expect).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("fuse_features algebra") {
  Rng rng(4);
  const rcm::RcmWeights alpha;  // defaults 0.1 0.2 0.3 0.4
  auto m = make_leaf(random_tensor({1, 5, 3, 4}, rng));

  SUBCASE("uniform maps scale M by 0.25 * sum(alpha)") {
    auto p = make_leaf(Tensor::full({1, 4, 3, 4}, 0.25));
    auto fm = rcm::fuse_features(p, m, alpha);
    for (int64_t i = 0; i < m->value.numel(); ++i) {
      CHECK(fm->value[i] == doctest::Approx(0.25 * m->value[i]).epsilon(1e-12));
    }
  }
  SUBCASE("zero weights annihilate") {
    rcm::RcmWeights zero;
    zero.alpha = {0.0, 0.0, 0.0, 0.0};
    auto p = make_leaf(Tensor::full({1, 4, 3, 4}, 0.25));
    auto fm = rcm::fuse_features(p, m, zero);
    for (int64_t i = 0; i < fm->value.numel(); ++i) CHECK(fm->value[i] == 0.0);
  }
  SUBCASE("single active level reduces to alpha4 * M") {
    Tensor p({1, 4, 3, 4});
    for (int64_t px = 0; px < 12; ++px) p[3 * 12 + px] = 1.0;
    auto fm = rcm::fuse_features(make_leaf(std::move(p)), m, alpha);
    for (int64_t i = 0; i < m->value.numel(); ++i) {
      CHECK(fm->value[i] == doctest::Approx(0.4 * m->value[i]).epsilon(1e-12));
    }
  }
  SUBCASE("linear in M and alpha by superposition") {
    auto p = make_leaf(random_tensor({1, 4, 3, 4}, rng, 0.0, 1.0));
    auto m2 = make_leaf(random_tensor({1, 5, 3, 4}, rng));
    auto msum = make_leaf(Tensor({1, 5, 3, 4}));
    for (int64_t i = 0; i < msum->value.numel(); ++i) {
      msum->value[i] = m->value[i] + m2->value[i];
    }
    auto f1 = rcm::fuse_features(p, m, alpha);
    auto f2 = rcm::fuse_features(p, m2, alpha);
    auto fsum = rcm::fuse_features(p, msum, alpha);
    for (int64_t i = 0; i < fsum->value.numel(); ++i) {
      REQUIRE(fsum->value[i] == doctest::Approx(f1->value[i] + f2->value[i]).epsilon(1e-9));
    }
    rcm::RcmWeights a1, a2, asum;
    a1.alpha = {0.1, 0.0, 0.2, 0.0};
    a2.alpha = {0.3, 0.5, 0.0, 0.4};
    for (int i = 0; i < 4; ++i) {
      asum.alpha[static_cast<size_t>(i)] =
          a1.alpha[static_cast<size_t>(i)] + a2.alpha[static_cast<size_t>(i)];
    }
    auto g1 = rcm::fuse_features(p, m, a1);
    auto g2 = rcm::fuse_features(p, m, a2);
    auto gsum = rcm::fuse_features(p, m, asum);
    for (int64_t i = 0; i < gsum->value.numel(); ++i) {
      REQUIRE(gsum->value[i] == doctest::Approx(g1->value[i] + g2->value[i]).epsilon(1e-9));
    }
  }
  SUBCASE("shape mismatch is rejected") {
    auto p = make_leaf(Tensor({1, 4, 2, 4}));
    CHECK_THROWS_AS(rcm::fuse_features(p, m, alpha), std::invalid_argument);
  }
}

TEST_CASE("classification gradient reaches decoder parameters through P") {
  // depth 3 so the four outputs are not all duplicates
  ModelConfig cfg;
  cfg.depth = 3;
  cfg.base_channels = 2;
  cfg.input_h = 8;
  cfg.input_w = 12;
  cfg.rng_seed = 5;
  RccmNet net(cfg);
  Rng rng(6);
  auto image = make_leaf(random_tensor({2, 1, 8, 12}, rng, 0.0, 1.0));
  auto out = net.forward(image, true, true);
  auto loss = losses::ce_cls(out.cls_logits, {0, 2});
  backward(loss);

  double decoder_grad_norm = 0.0;
  net.visit_params([&](const std::string& name, NodePtr& p) {
    if (name.rfind("node.", 0) == 0 || name.rfind("up.", 0) == 0 || name.rfind("head.", 0) == 0) {
      if (p->has_grad()) {
        for (int64_t i = 0; i < p->grad.numel(); ++i) {
          decoder_grad_norm += p->grad[i] * p->grad[i];
        }
      }
    }
  });
  CHECK(decoder_grad_norm > 0.0);
}

TEST_SUITE_END();
