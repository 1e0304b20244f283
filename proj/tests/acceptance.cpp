// Acceptance suite: one check per release criterion, each printing a
// [PASS]/[FAIL] line. Run with no arguments for all criteria or with a list
// of criterion numbers (e.g. `acceptance 1 4 11`).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "cli.hpp"
#include "helpers.hpp"
#include "json.hpp"
#include "rccm/ccm.hpp"
#include "rccm/losses.hpp"
#include "rccm/metrics.hpp"
#include "rccm/model.hpp"
#include "rccm/rcm.hpp"
#include "rccm/synthdata.hpp"
#include "rccm/training.hpp"

using namespace rccm;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& detail) {
  std::printf("[%s] criterion %2d: %s\n", pass ? "PASS" : "FAIL", criterion, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

fs::path work_dir() {
  const fs::path p = fs::temp_directory_path() / "rccm_acceptance";
  fs::create_directories(p);
  return p;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness on the tiny double-precision model
// ---------------------------------------------------------------------------
void criterion_1() {
  const double t0 = now_seconds();

  ModelConfig mc;
  mc.depth = 2;
  mc.base_channels = 2;
  mc.input_h = 8;
  mc.input_w = 12;
  mc.rng_seed = 3;
  RccmNet net(mc);

  Rng rng(17);
  const Tensor images = testing::random_tensor({2, 1, 8, 12}, rng, 0.0, 1.0);
  Tensor mask({2, 8, 12});
  for (int64_t b = 0; b < 2; ++b) {
    for (int64_t y = 2; y < 6; ++y) {
      for (int64_t x = 3; x < 9; ++x) mask[b * 96 + y * 12 + x] = 1.0;
    }
  }
  const std::vector<int> labels{0, 2};

  // RCM and CCM active; the CCM weights are frozen at the base point (they
  // are constants of the step by construction)
  auto base = net.forward(nn::make_leaf(images), true, true);
  const auto weights =
      ccm::batch_weights(labels, ccm::class_probabilities(base.cls_logits->value), {});

  losses::LossConfig lc;
  std::vector<std::pair<std::string, nn::NodePtr>> params;
  net.visit_params([&](const std::string& n, nn::NodePtr& p) { params.emplace_back(n, p); });
  int64_t nparams = 0;
  for (auto& [n, p] : params) nparams += p->value.numel();

  auto build = [&] {
    auto out = net.forward(nn::make_leaf(images), true, true);
    return losses::total_loss(out, mask, labels, weights, lc).total;
  };
  const auto res = testing::finite_diff_check(params, build, 1e-5);
  const double dt = now_seconds() - t0;

  char detail[256];
  std::snprintf(detail, sizeof(detail),
                "gradcheck max rel err %.3e over %lld params (tol 1e-4), %.1f s (limit 60)",
                res.max_rel_err, static_cast<long long>(nparams), dt);
  report(1, res.max_rel_err <= 1e-4 && dt < 60.0, detail);
}

// ---------------------------------------------------------------------------
// 2. RCM normalization and shift invariance
// ---------------------------------------------------------------------------
void criterion_2() {
  Rng rng(23);
  double worst_sum = 0.0, worst_shift = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int64_t h = 3 + static_cast<int64_t>(rng.below(4));
    const int64_t w = 3 + static_cast<int64_t>(rng.below(4));
    std::vector<nn::NodePtr> s;
    for (int i = 0; i < 4; ++i) {
      s.push_back(nn::make_leaf(testing::random_tensor({1, 2, 2 * h, 2 * w}, rng, -6.0, 6.0)));
    }
    auto p = rcm::region_probability_maps(s, h, w);
    const int64_t hw = h * w;
    for (int64_t px = 0; px < hw; ++px) {
      double sum = 0.0;
      for (int lvl = 0; lvl < 4; ++lvl) sum += p->value[lvl * hw + px];
      worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
    }
    const double c = rng.uniform(-10.0, 10.0);
    std::vector<nn::NodePtr> shifted;
    for (auto& si : s) {
      Tensor t(si->value.shape());
      for (int64_t i = 0; i < t.numel(); ++i) t[i] = si->value[i] + c;
      shifted.push_back(nn::make_leaf(std::move(t)));
    }
    auto p2 = rcm::region_probability_maps(shifted, h, w);
    for (int64_t i = 0; i < p->value.numel(); ++i) {
      worst_shift = std::max(worst_shift, std::abs(p2->value[i] - p->value[i]));
    }
  }
  char detail[256];
  std::snprintf(detail, sizeof(detail),
                "1000 random logit sets: max |sum(p)-1| = %.2e, max shift deviation = %.2e "
                "(tol 1e-6)",
                worst_sum, worst_shift);
  report(2, worst_sum <= 1e-6 && worst_shift <= 1e-6, detail);
}

// ---------------------------------------------------------------------------
// 3. CCM algebra: identity, monotonicity, detachment
// ---------------------------------------------------------------------------
void criterion_3() {
  Rng rng(29);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    double g[3];
    double z = 0.0;
    for (double& v : g) {
      v = rng.uniform(1e-6, 1.0);
      z += v;
    }
    for (double& v : g) v /= z;
    const int c = static_cast<int>(rng.below(3));
    std::array<double, 3> y{0, 0, 0};
    y[static_cast<size_t>(c)] = 1.0;
    const double omega = ccm::sample_weight(y, {g[0], g[1], g[2]}).omega;
    worst = std::max(worst, std::abs(omega - (-std::log(std::max(g[c], 1e-7)))));
  }

  bool monotone = true;
  double prev = 1e300;
  for (double gc = 0.02; gc < 1.0; gc += 0.01) {
    const double rest = (1.0 - gc) / 2.0;
    const double omega = ccm::sample_weight({1, 0, 0}, {gc, rest, rest}).omega;
    if (omega >= prev) monotone = false;
    prev = omega;
  }

  // detachment: with the loss reduced to the weighted segmentation CE, the
  // classification head influences it only through the (detached) weights
  ModelConfig mc;
  mc.depth = 2;
  mc.base_channels = 2;
  mc.input_h = 8;
  mc.input_w = 12;
  mc.rng_seed = 7;
  RccmNet net(mc);
  const Tensor images = testing::random_tensor({2, 1, 8, 12}, rng, 0.0, 1.0);
  Tensor mask({2, 8, 12});
  for (int64_t i = 20; i < 60; ++i) mask[i] = 1.0;
  auto out = net.forward(nn::make_leaf(images), true, true);
  const auto weights =
      ccm::batch_weights({0, 1}, ccm::class_probabilities(out.cls_logits->value), {});
  nn::backward(losses::weighted_ce_seg(out.seg_logits, mask, weights));
  double cls_grad = 0.0;
  net.visit_params([&](const std::string& name, nn::NodePtr& p) {
    if (name.rfind("cls_fc", 0) == 0 && p->has_grad()) {
      for (int64_t i = 0; i < p->grad.numel(); ++i) cls_grad += std::abs(p->grad[i]);
    }
  });

  char detail[256];
  std::snprintf(detail, sizeof(detail),
                "identity max err %.2e (tol 1e-12); monotone %s; detached cls-grad sum %.1e",
                worst, monotone ? "yes" : "no", cls_grad);
  report(3, worst <= 1e-12 && monotone && cls_grad == 0.0, detail);
}

// ---------------------------------------------------------------------------
// 4. Surface-distance and DSC oracles
// ---------------------------------------------------------------------------
void criterion_4() {
  Rng rng(31);
  int64_t pairs = 0;
  bool exact = true;
  std::string first_fail;
  while (pairs < 10000) {
    const int64_t h = 2 + static_cast<int64_t>(rng.below(15));
    const int64_t w = 2 + static_cast<int64_t>(rng.below(15));
    const double fill = rng.uniform(0.05, 0.6);
    const Mask a = testing::random_mask(h, w, rng, fill);
    const Mask b = testing::random_mask(h, w, rng, fill);
    if (a.empty_mask() || b.empty_mask()) continue;
    ++pairs;

    const double spacing = 0.1;
    const auto ca = metrics::contour_of(a, spacing);
    const auto cb = metrics::contour_of(b, spacing);
    const auto oracle = testing::brute_force_surface(ca.points, cb.points, spacing);
    const double assd = metrics::assd_mm(a, b, spacing);
    const double hd = metrics::hausdorff_mm(a, b, spacing);

    int64_t inter = 0, total = 0;
    for (size_t i = 0; i < a.v.size(); ++i) {
      inter += (a.v[i] & b.v[i]) ? 1 : 0;
      total += (a.v[i] ? 1 : 0) + (b.v[i] ? 1 : 0);
    }
    const double dice_oracle = 200.0 * static_cast<double>(inter) / static_cast<double>(total);

    if (assd != oracle.assd || hd != oracle.hd || hd < assd ||
        metrics::dice_percent(a, b) != dice_oracle) {
      exact = false;
      if (first_fail.empty()) {
        first_fail = "; first mismatch at pair " + std::to_string(pairs);
      }
    }
  }
  report(4, exact,
         "ASSD/HD equal the brute-force oracle exactly and DSC equals the set-count oracle on " +
             std::to_string(pairs) + " random pairs; HD >= ASSD on all" + first_fail);
}

// ---------------------------------------------------------------------------
// 5. Classification statistics
// ---------------------------------------------------------------------------
void criterion_5() {
  std::vector<int> truth, pred;
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < 10; ++i) {
      truth.push_back(c);
      pred.push_back(1);
    }
  }
  const auto constant = metrics::confusion_and_scores(truth, pred);
  const auto perfect = metrics::confusion_and_scores(truth, truth);

  double worst_f1 = 0.0;
  for (double p = 0.01; p <= 1.0; p += 0.01) {
    for (double r = 0.01; r <= 1.0; r += 0.01) {
      worst_f1 =
          std::max(worst_f1, std::abs(metrics::f1_score(p, r) - 2.0 * p * r / (p + r)));
    }
  }
  char detail[256];
  std::snprintf(detail, sizeof(detail),
                "constant-predictor kappa %.2e (expect 0), perfect kappa %.1f (expect 1), F1 grid "
                "max err %.2e (tol 1e-12)",
                constant.kappa, perfect.kappa, worst_f1);
  report(5, std::abs(constant.kappa) <= 1e-12 && perfect.kappa == 1.0 && worst_f1 <= 1e-12,
         detail);
}

// ---------------------------------------------------------------------------
// 6. Loss term isolation
// ---------------------------------------------------------------------------
void criterion_6() {
  ModelConfig mc;
  mc.depth = 2;
  mc.base_channels = 2;
  mc.input_h = 8;
  mc.input_w = 12;
  mc.rng_seed = 11;
  RccmNet net(mc);
  Rng rng(37);
  const Tensor images = testing::random_tensor({2, 1, 8, 12}, rng, 0.0, 1.0);
  Tensor mask({2, 8, 12});
  for (int64_t i = 10; i < 50; ++i) mask[i] = 1.0;
  const std::vector<int> labels{1, 2};
  auto out = net.forward(nn::make_leaf(images), true, true);

  losses::LossConfig a;
  a.lambda = 0.0;
  const auto la = losses::total_loss(out, mask, labels, {1.3, 0.7}, a).values;
  const double err_a = std::abs(la.total - la.l_seg);

  losses::LossConfig b;
  b.lambda = 0.6;
  b.entropy_weight_seg = 0.0;
  b.entropy_weight_cls = 0.0;
  const auto lb = losses::total_loss(out, mask, labels, {0.0, 0.0}, b).values;
  const double err_b = std::abs(lb.total - b.lambda * lb.l_ce);

  char detail[256];
  std::snprintf(detail, sizeof(detail),
                "lambda=0 => |total-l_seg| = %.2e; w=0,entropy=0 => |total-lambda*l_ce| = %.2e "
                "(tol 1e-12)",
                err_a, err_b);
  report(6, err_a <= 1e-12 && err_b <= 1e-12, detail);
}

// ---------------------------------------------------------------------------
// 7. Entropy minimization drives confident predictions
// ---------------------------------------------------------------------------
void criterion_7() {
  ModelConfig mc;
  mc.depth = 2;
  mc.base_channels = 4;
  mc.input_h = 8;
  mc.input_w = 12;
  mc.rng_seed = 13;
  RccmNet net(mc);
  Rng rng(41);
  const Tensor images = testing::random_tensor({1, 1, 8, 12}, rng, 0.0, 1.0);

  // freeze the features; only the classification head trains
  auto enc = net.encoder_forward(nn::make_leaf(images), false);
  auto frozen = nn::make_leaf(enc.deepest()->value);

  std::vector<nn::NodePtr> head_params;
  net.visit_params([&](const std::string& name, nn::NodePtr& p) {
    if (name.rfind("cls_fc", 0) == 0) head_params.push_back(p);
  });
  training::Adam opt(head_params, 0.1);

  double max_prob = 0.0;
  int steps = 0;
  for (; steps < 200; ++steps) {
    auto logits = net.classification_head(frozen, false);
    auto loss = losses::entropy_cls(logits);
    nn::backward(loss);
    opt.step();
    const Tensor probs = ccm::class_probabilities(logits->value);
    max_prob = std::max({probs[0], probs[1], probs[2]});
    if (max_prob >= 0.99) break;
  }
  char detail[128];
  std::snprintf(detail, sizeof(detail), "max class probability %.4f after %d steps (target 0.99)",
                max_prob, steps + 1);
  report(7, max_prob >= 0.99, detail);
}

// ---------------------------------------------------------------------------
// 8. Synthetic end-to-end training target
// ---------------------------------------------------------------------------
void criterion_8() {
  const double t0 = now_seconds();

  synth::PhantomConfig pc;
  pc.seed = 20240;
  // 240:475:285 = ratio 3:6:3.6 and splits stratified to exactly 600/200/200
  const auto samples = synth::generate_dataset(pc, {240, 475, 285});
  auto split = synth::split_dataset(samples, {0.6, 0.2, 0.2}, 8);

  training::TrainConfig cfg;
  cfg.model.depth = 3;
  cfg.model.base_channels = 4;
  cfg.model.input_h = 96;
  cfg.model.input_w = 144;
  cfg.model.rng_seed = 8;
  cfg.seed = 8;
  cfg.epochs = 50;
  cfg.batch_size = 10;
  cfg.lr = 1e-3;
  cfg.eval_every = 2;
  cfg.ccm.normalize_mean_one = true;
  cfg.ablation.use_rcm = true;
  cfg.ablation.use_ccm = true;

  training::Trainer trainer(cfg);
  const auto rec = trainer.fit(split, [](const training::ValSummary& v) {
    return v.dsc_mean >= 87.0 && v.acc >= 0.85;  // stop margin above the test targets
  });
  const auto report_test = trainer.evaluate(split.test);
  const double dt = now_seconds() - t0;

  char detail[256];
  std::snprintf(detail, sizeof(detail),
                "split %zu/%zu/%zu, %zu epochs: test DSC %.2f%% (target 85), test ACC %.2f%% "
                "(target 80), %.0f s (limit 1800)",
                split.train.size(), split.val.size(), split.test.size(), rec.epochs.size(),
                report_test.dsc.mean, 100.0 * report_test.classification.acc, dt);
  report(8,
         split.train.size() == 600 && split.val.size() == 200 && split.test.size() == 200 &&
             rec.epochs.size() <= 50 && report_test.dsc.mean >= 85.0 &&
             report_test.classification.acc >= 0.80 && dt < 1800.0,
         detail);
}

// ---------------------------------------------------------------------------
// 9. Ablation harness shape + directional report
// ---------------------------------------------------------------------------
void criterion_9() {
  const fs::path dir = work_dir() / "c9";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ostringstream out, err;

  auto r = cli::run({"generate-data", "--out", (dir / "data").string(), "--counts", "8,8,8",
                     "--seed", "5", "--height", "16", "--width", "24", "--area-min", "0.2",
                     "--area-max", "0.8"},
                    out, err);
  if (r.exit_code != 0) {
    report(9, false, "generate-data failed: " + err.str());
    return;
  }
  std::ofstream(dir / "c.toml") << "epochs = 2\nbatch_size = 4\nseed = 1\nsplit_seed = 1\n"
                                   "eval_every = 0\n[model]\ndepth = 2\nbase_channels = 2\n"
                                   "input_h = 16\ninput_w = 24\n";
  r = cli::run({"ablate", "--data", (dir / "data").string(), "--config", (dir / "c.toml").string(),
                "--seeds", "1,2,3", "--out", (dir / "table.csv").string()},
               out, err);
  if (r.exit_code != 0) {
    report(9, false, "ablate failed: " + err.str());
    return;
  }

  const std::string csv = file_bytes(dir / "table.csv");
  const auto lines = std::count(csv.begin(), csv.end(), '\n');
  const auto header_cols =
      std::count(csv.begin(), csv.begin() + static_cast<long>(csv.find('\n')), ',') + 1;
  const auto summary = nlohmann::json::parse(file_bytes(dir / "table.csv.summary.json"));
  const bool has_flags =
      summary.contains("full_model_best_dsc") && summary.contains("full_model_best_acc");
  const bool shape_ok = lines == 5 && header_cols == 11;  // 4 rows; config + 2 flags + 8 metrics

  char detail[300];
  std::snprintf(detail, sizeof(detail),
                "12 runs completed; table has %lld rows x %lld columns (8 metric columns); "
                "directional flags present: %s (full model best DSC: %s, best ACC: %s)",
                static_cast<long long>(lines - 1), static_cast<long long>(header_cols),
                has_flags ? "yes" : "no",
                summary.value("full_model_best_dsc", false) ? "yes" : "no",
                summary.value("full_model_best_acc", false) ? "yes" : "no");
  report(9, shape_ok && has_flags, detail);
}

// ---------------------------------------------------------------------------
// 10. Byte-level training determinism
// ---------------------------------------------------------------------------
void criterion_10() {
  const fs::path dir = work_dir() / "c10";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ostringstream out, err;

  auto r = cli::run({"generate-data", "--out", (dir / "data").string(), "--counts", "10,10,10",
                     "--seed", "6", "--height", "16", "--width", "24", "--area-min", "0.2",
                     "--area-max", "0.8"},
                    out, err);
  std::ofstream(dir / "c.toml") << "epochs = 3\nbatch_size = 5\nseed = 9\nsplit_seed = 9\n"
                                   "eval_every = 0\n[model]\ndepth = 2\nbase_channels = 2\n"
                                   "input_h = 16\ninput_w = 24\n";
  bool ok = r.exit_code == 0;
  for (const char* run : {"run_a", "run_b"}) {
    r = cli::run({"train", "--data", (dir / "data").string(), "--config",
                  (dir / "c.toml").string(), "--out", (dir / run).string()},
                 out, err);
    ok = ok && r.exit_code == 0;
  }
  const bool ckpt_same =
      ok && file_bytes(dir / "run_a/ckpt_final") == file_bytes(dir / "run_b/ckpt_final");
  const bool report_same =
      ok && file_bytes(dir / "run_a/report.json") == file_bytes(dir / "run_b/report.json");
  const bool record_same =
      ok && file_bytes(dir / "run_a/record.jsonl") == file_bytes(dir / "run_b/record.jsonl");
  report(10, ok && ckpt_same && report_same && record_same,
         std::string("two identical runs: checkpoints byte-identical: ") +
             (ckpt_same ? "yes" : "no") + ", reports byte-identical: " +
             (report_same ? "yes" : "no") + ", records byte-identical: " +
             (record_same ? "yes" : "no"));
}

// ---------------------------------------------------------------------------
// 11. Single-image inference latency at full scale
// ---------------------------------------------------------------------------
void criterion_11() {
  training::TrainConfig cfg;
  cfg.model.depth = 5;
  cfg.model.base_channels = 16;
  cfg.model.input_h = 96;
  cfg.model.input_w = 144;
  cfg.model.rng_seed = 21;
  cfg.seed = 21;
  training::Trainer trainer(cfg);

  synth::PhantomConfig pc;
  pc.seed = 33;
  const auto sample = synth::generate_phantom(pc, 0, 1);

  for (int i = 0; i < 2; ++i) trainer.predict(sample.image);  // warmup
  std::vector<double> times;
  for (int i = 0; i < 9; ++i) {
    const double t0 = now_seconds();
    trainer.predict(sample.image);
    times.push_back((now_seconds() - t0) * 1000.0);
  }
  std::sort(times.begin(), times.end());
  const double median = times[times.size() / 2];
  char detail[160];
  std::snprintf(detail, sizeof(detail),
                "predict median %.1f ms over 9 runs (96x144, depth 5, base 16; limit 200 ms)",
                median);
  report(11, median < 200.0, detail);
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> which;
  for (int i = 1; i < argc; ++i) which.push_back(std::atoi(argv[i]));
  auto want = [&](int c) {
    return which.empty() || std::find(which.begin(), which.end(), c) != which.end();
  };

  const std::pair<int, std::function<void()>> criteria[] = {
      {1, criterion_1}, {2, criterion_2},  {3, criterion_3},  {4, criterion_4},
      {5, criterion_5}, {6, criterion_6},  {7, criterion_7},  {8, criterion_8},
      {9, criterion_9}, {10, criterion_10}, {11, criterion_11},
  };
  for (const auto& [num, fn] : criteria) {
    if (!want(num)) continue;
    try {
      fn();
    } catch (const std::exception& e) {
      report(num, false, std::string("exception: ") + e.what());
    }
  }
  if (g_failures > 0) {
    std::printf("%d criterion(s) failed\n", g_failures);
    return 1;
  }
  std::printf("all selected criteria passed\n");
  return 0;
}
