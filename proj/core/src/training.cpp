#include "rccm/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "rccm/checkpoint.hpp"

namespace rccm::training {

using nn::NodePtr;

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("train.epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train.batch_size must be >= 1");
  if (lr <= 0.0) throw std::invalid_argument("train.lr must be > 0");
  if (eval_every < 0) throw std::invalid_argument("train.eval_every must be >= 0");
  model.validate();
  if (loss.lambda < 0.0) throw std::invalid_argument("loss.lambda must be >= 0");
  if (loss.epsilon <= 0.0) throw std::invalid_argument("loss.epsilon must be > 0");
  if (ccm.epsilon <= 0.0) throw std::invalid_argument("ccm.epsilon must be > 0");
  for (double a : rcm_alpha.alpha) {
    if (!std::isfinite(a)) throw std::invalid_argument("rcm.alpha must be finite");
  }
}

nlohmann::json to_json(const TrainConfig& cfg) {
  nlohmann::json j;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["lr"] = cfg.lr;
  j["seed"] = cfg.seed;
  j["split_seed"] = cfg.split_seed;
  j["eval_every"] = cfg.eval_every;
  j["average_seg_outputs"] = cfg.average_seg_outputs;
  j["ablation"] = {{"use_rcm", cfg.ablation.use_rcm}, {"use_ccm", cfg.ablation.use_ccm}};
  j["model"] = {{"depth", cfg.model.depth},
                {"base_channels", cfg.model.base_channels},
                {"input_h", cfg.model.input_h},
                {"input_w", cfg.model.input_w},
                {"rng_seed", cfg.model.rng_seed}};
  j["loss"] = {{"lambda", cfg.loss.lambda},
               {"entropy_weight_seg", cfg.loss.entropy_weight_seg},
               {"entropy_weight_cls", cfg.loss.entropy_weight_cls},
               {"epsilon", cfg.loss.epsilon}};
  j["rcm"] = {{"alpha", cfg.rcm_alpha.alpha}, {"softmax_axis", rcm::to_string(cfg.rcm_axis)}};
  j["ccm"] = {{"transform", ccm::to_string(cfg.ccm.transform)},
              {"normalize_mean_one", cfg.ccm.normalize_mean_one},
              {"epsilon", cfg.ccm.epsilon}};
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.lr = j.value("lr", cfg.lr);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.split_seed = j.value("split_seed", cfg.split_seed);
  cfg.eval_every = j.value("eval_every", cfg.eval_every);
  cfg.average_seg_outputs = j.value("average_seg_outputs", cfg.average_seg_outputs);
  if (j.contains("ablation")) {
    cfg.ablation.use_rcm = j["ablation"].value("use_rcm", true);
    cfg.ablation.use_ccm = j["ablation"].value("use_ccm", true);
  }
  if (j.contains("model")) {
    const auto& m = j["model"];
    cfg.model.depth = m.value("depth", cfg.model.depth);
    cfg.model.base_channels = m.value("base_channels", cfg.model.base_channels);
    cfg.model.input_h = m.value("input_h", cfg.model.input_h);
    cfg.model.input_w = m.value("input_w", cfg.model.input_w);
    cfg.model.rng_seed = m.value("rng_seed", cfg.seed);
  } else {
    cfg.model.rng_seed = cfg.seed;
  }
  if (j.contains("loss")) {
    const auto& l = j["loss"];
    cfg.loss.lambda = l.value("lambda", cfg.loss.lambda);
    cfg.loss.entropy_weight_seg = l.value("entropy_weight_seg", cfg.loss.entropy_weight_seg);
    cfg.loss.entropy_weight_cls = l.value("entropy_weight_cls", cfg.loss.entropy_weight_cls);
    cfg.loss.epsilon = l.value("epsilon", cfg.loss.epsilon);
  }
  if (j.contains("rcm")) {
    const auto& r = j["rcm"];
    if (r.contains("alpha")) {
      const auto a = r["alpha"].get<std::vector<double>>();
      if (a.size() != 4) throw std::invalid_argument("rcm.alpha must have 4 entries");
      std::copy(a.begin(), a.end(), cfg.rcm_alpha.alpha.begin());
    }
    if (r.contains("softmax_axis")) {
      cfg.rcm_axis = rcm::softmax_axis_from_string(r["softmax_axis"].get<std::string>());
    }
  }
  if (j.contains("ccm")) {
    const auto& c = j["ccm"];
    if (c.contains("transform")) {
      cfg.ccm.transform = ccm::transform_from_string(c["transform"].get<std::string>());
    }
    cfg.ccm.normalize_mean_one = c.value("normalize_mean_one", cfg.ccm.normalize_mean_one);
    cfg.ccm.epsilon = c.value("epsilon", cfg.ccm.epsilon);
  }
  cfg.validate();
  return cfg;
}

std::string config_hash(const TrainConfig& cfg) {
  const std::string text = to_json(cfg).dump();
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

Adam::Adam(std::vector<NodePtr> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p->has_grad()) continue;
    double* w = p->value.data();
    double* g = p->grad.data();
    double* m = m_[i].data();
    double* v = v_[i].data();
    const int64_t n = p->value.numel();
    for (int64_t k = 0; k < n; ++k) {
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      w[k] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      g[k] = 0.0;
    }
  }
}

void Adam::restore(int64_t t, std::vector<Tensor> m, std::vector<Tensor> v) {
  if (m.size() != params_.size() || v.size() != params_.size()) {
    throw CheckpointError("optimizer state does not match the parameter list");
  }
  t_ = t;
  m_ = std::move(m);
  v_ = std::move(v);
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

Trainer::Trainer(const TrainConfig& cfg)
    : cfg_(cfg), model_((cfg.validate(), cfg.model)), shuffle_rng_(mix_seed(cfg.seed, 0x5F1E)) {
  opt_ = Adam(model_.parameters(), cfg_.lr);
}

NodePtr Trainer::batch_images(const std::vector<const synth::Sample*>& batch) const {
  const int64_t n = static_cast<int64_t>(batch.size());
  const int64_t h = cfg_.model.input_h, w = cfg_.model.input_w;
  Tensor images({n, 1, h, w});
  for (int64_t b = 0; b < n; ++b) {
    const Tensor& img = batch[static_cast<size_t>(b)]->image;
    if (img.dim(0) != h || img.dim(1) != w) {
      throw std::invalid_argument("sample " + batch[static_cast<size_t>(b)]->id +
                                  " does not match the model input size");
    }
    std::copy(img.data(), img.data() + h * w, images.data() + b * h * w);
  }
  return nn::make_leaf(std::move(images));
}

losses::LossBreakdown Trainer::train_step(const std::vector<const synth::Sample*>& batch) {
  const int64_t n = static_cast<int64_t>(batch.size());
  const int64_t h = cfg_.model.input_h, w = cfg_.model.input_w;
  auto images = batch_images(batch);

  Tensor mask({n, h, w});
  std::vector<int> labels(static_cast<size_t>(n));
  for (int64_t b = 0; b < n; ++b) {
    const auto* s = batch[static_cast<size_t>(b)];
    for (int64_t i = 0; i < h * w; ++i) {
      mask[b * h * w + i] = s->mask.v[static_cast<size_t>(i)] ? 1.0 : 0.0;
    }
    labels[static_cast<size_t>(b)] = s->class_label;
  }

  auto out = model_.forward(images, /*training=*/true, cfg_.ablation.use_rcm, cfg_.rcm_alpha,
                            cfg_.rcm_axis);

  std::vector<double> weights(static_cast<size_t>(n), 1.0);
  if (cfg_.ablation.use_ccm) {
    // weights come from this same forward pass; values only, no gradient path
    weights = ccm::batch_weights(labels, ccm::class_probabilities(out.cls_logits->value), cfg_.ccm);
  }

  auto loss = losses::total_loss(out, mask, labels, weights, cfg_.loss);
  if (!std::isfinite(loss.values.total)) {
    std::vector<std::string> ids;
    for (const auto* s : batch) ids.push_back(s->id);
    std::string msg = "non-finite loss in batch:";
    for (const auto& id : ids) msg += " " + id;
    throw TrainingDiverged(msg, std::move(ids));
  }
  nn::backward(loss.total);
  opt_.step();
  return loss.values;
}

RunRecord Trainer::fit(const synth::DatasetSplit& split,
                       const std::function<bool(const ValSummary&)>& target) {
  if (split.train.empty()) throw std::invalid_argument("fit: empty training split");
  const auto t0 = std::chrono::steady_clock::now();

  RunRecord rec;
  rec.seed = cfg_.seed;
  rec.config_echo = to_json(cfg_);
  rec.config_hash = config_hash(cfg_);

  std::vector<size_t> order(split.train.size());

  for (int epoch = next_epoch_; epoch <= cfg_.epochs; ++epoch) {
    // re-derive from the identity so the permutation is a pure function of
    // the rng state (resumed runs replay the same epoch orders)
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle_rng_.shuffle(order);
    losses::LossBreakdown sum;
    int64_t batches = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg_.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg_.batch_size));
      std::vector<const synth::Sample*> batch;
      batch.reserve(end - start);
      for (size_t i = start; i < end; ++i) batch.push_back(&split.train[order[i]]);
      const auto b = train_step(batch);
      sum.l_wce += b.l_wce;
      sum.l_ent_seg += b.l_ent_seg;
      sum.l_ce += b.l_ce;
      sum.l_ent_cls += b.l_ent_cls;
      sum.l_seg += b.l_seg;
      sum.l_cls += b.l_cls;
      sum.total += b.total;
      ++batches;
    }
    EpochRecord er;
    er.epoch = epoch;
    const double inv = 1.0 / static_cast<double>(batches);
    er.mean_loss = {sum.l_wce * inv, sum.l_ent_seg * inv, sum.l_ce * inv,  sum.l_ent_cls * inv,
                    sum.l_seg * inv, sum.l_cls * inv,     sum.total * inv};
    next_epoch_ = epoch + 1;

    bool reached = false;
    if (cfg_.eval_every > 0 && !split.val.empty() &&
        (epoch % cfg_.eval_every == 0 || epoch == cfg_.epochs)) {
      const auto report = evaluate(split.val);
      ValSummary vs{report.dsc.mean, report.classification.acc};
      er.val = vs;
      reached = target && target(vs);
    }
    rec.epochs.push_back(std::move(er));
    if (reached) break;
  }
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

Trainer::Prediction Trainer::predict(const Tensor& image) {
  const int64_t h = cfg_.model.input_h, w = cfg_.model.input_w;
  if (image.rank() != 2 || image.dim(0) != h || image.dim(1) != w) {
    throw std::invalid_argument("predict: image does not match the model input size");
  }
  Tensor batch({1, 1, h, w});
  std::copy(image.data(), image.data() + h * w, batch.data());
  auto out = model_.forward(nn::make_leaf(std::move(batch)), /*training=*/false,
                            cfg_.ablation.use_rcm, cfg_.rcm_alpha, cfg_.rcm_axis);

  Prediction pred;
  pred.mask = Mask(h, w);
  const int64_t hw = h * w;
  if (cfg_.average_seg_outputs) {
    Tensor avg({2, h, w});
    for (const auto& s : out.seg_logits) {
      for (int64_t i = 0; i < 2 * hw; ++i) avg[i] += s->value[i];
    }
    for (int64_t i = 0; i < hw; ++i) pred.mask.v[static_cast<size_t>(i)] = avg[hw + i] > avg[i];
  } else {
    const Tensor& s4 = out.seg_logits.back()->value;  // deepest full path
    for (int64_t i = 0; i < hw; ++i) pred.mask.v[static_cast<size_t>(i)] = s4[hw + i] > s4[i];
  }

  const Tensor probs = ccm::class_probabilities(out.cls_logits->value);
  pred.probs = {probs[0], probs[1], probs[2]};
  pred.pred_class = 0;
  for (int k = 1; k < 3; ++k) {
    if (pred.probs[static_cast<size_t>(k)] > pred.probs[static_cast<size_t>(pred.pred_class)]) {
      pred.pred_class = k;
    }
  }
  return pred;
}

metrics::MetricsReport Trainer::evaluate(const std::vector<synth::Sample>& samples) {
  if (samples.empty()) throw std::invalid_argument("evaluate: empty sample list");
  std::vector<metrics::SampleEval> evals;
  evals.reserve(samples.size());
  for (const auto& s : samples) {
    const auto pred = predict(s.image);
    evals.push_back(metrics::evaluate_sample(s.id, pred.mask, s.mask, s.pixel_spacing,
                                             s.class_label, pred.pred_class));
  }
  return metrics::compile_report(std::move(evals));
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  ArrayStore store;
  store.meta["config"] = to_json(cfg_);
  store.meta["config_hash"] = config_hash(cfg_);
  store.meta["next_epoch"] = next_epoch_;
  store.meta["adam_t"] = opt_.t();
  const auto rng_state = shuffle_rng_.state();
  store.meta["shuffle_rng"] = std::vector<uint64_t>(rng_state.begin(), rng_state.end());

  auto& self = const_cast<Trainer&>(*this);
  size_t pi = 0;
  self.model_.visit_params([&](const std::string& name, NodePtr& p) {
    store.put("param/" + name, p->value);
    store.put("adam_m/" + name, opt_.m()[pi]);
    store.put("adam_v/" + name, opt_.v()[pi]);
    ++pi;
  });
  self.model_.visit_buffers(
      [&](const std::string& name, Tensor& buf) { store.put("buffer/" + name, buf); });
  store.save(path);
}

void Trainer::load_checkpoint(const std::filesystem::path& path) {
  ArrayStore store = ArrayStore::load(path);
  const TrainConfig file_cfg = train_config_from_json(store.meta.at("config"));
  if (to_json(file_cfg).at("model") != to_json(cfg_).at("model")) {
    throw CheckpointError("checkpoint model config does not match this trainer");
  }

  std::vector<Tensor> m, v;
  model_.visit_params([&](const std::string& name, NodePtr& p) {
    const Tensor& w = store.get("param/" + name);
    if (w.shape() != p->value.shape()) {
      throw CheckpointError("checkpoint array shape mismatch: " + name);
    }
    p->value = w;
    m.push_back(store.get("adam_m/" + name));
    v.push_back(store.get("adam_v/" + name));
  });
  model_.visit_buffers([&](const std::string& name, Tensor& buf) {
    buf = store.get("buffer/" + name);
  });
  opt_.restore(store.meta.at("adam_t").get<int64_t>(), std::move(m), std::move(v));
  next_epoch_ = store.meta.at("next_epoch").get<int>();
  const auto rs = store.meta.at("shuffle_rng").get<std::vector<uint64_t>>();
  if (rs.size() != 4) throw CheckpointError("bad rng state in checkpoint");
  shuffle_rng_.set_state({rs[0], rs[1], rs[2], rs[3]});
}

metrics::MetricsReport evaluate_checkpoint(const std::filesystem::path& ckpt,
                                           const std::vector<synth::Sample>& samples) {
  ArrayStore store = ArrayStore::load(ckpt);
  Trainer trainer(train_config_from_json(store.meta.at("config")));
  trainer.load_checkpoint(ckpt);
  return trainer.evaluate(samples);
}

// ---------------------------------------------------------------------------
// Ablation harness
// ---------------------------------------------------------------------------

namespace {

std::string format_meansd(const metrics::MeanSd& m) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f±%.4f", m.mean, m.sd);
  return buf;
}

}  // namespace

std::string AblationTable::csv() const {
  std::string out =
      "config,use_ccm,use_rcm,dsc_pct,assd_mm,hd_mm,d_pa_mm2,acc_pct,precision_pct,f1,kappa\n";
  for (const auto& r : rows) {
    out += r.name + "," + (r.flags.use_ccm ? "1" : "0") + "," + (r.flags.use_rcm ? "1" : "0");
    for (const auto* m : {&r.dsc, &r.assd, &r.hd, &r.d_pa, &r.acc, &r.precision, &r.f1, &r.kappa}) {
      out += "," + format_meansd(*m);
    }
    out += "\n";
  }
  return out;
}

nlohmann::json AblationTable::summary_json() const {
  nlohmann::json rows_j = nlohmann::json::array();
  for (const auto& r : rows) {
    rows_j.push_back({{"config", r.name},
                      {"use_ccm", r.flags.use_ccm},
                      {"use_rcm", r.flags.use_rcm},
                      {"dsc_pct", {{"mean", r.dsc.mean}, {"sd", r.dsc.sd}}},
                      {"assd_mm", {{"mean", r.assd.mean}, {"sd", r.assd.sd}}},
                      {"hd_mm", {{"mean", r.hd.mean}, {"sd", r.hd.sd}}},
                      {"d_pa_mm2", {{"mean", r.d_pa.mean}, {"sd", r.d_pa.sd}}},
                      {"acc_pct", {{"mean", r.acc.mean}, {"sd", r.acc.sd}}},
                      {"precision_pct", {{"mean", r.precision.mean}, {"sd", r.precision.sd}}},
                      {"f1", {{"mean", r.f1.mean}, {"sd", r.f1.sd}}},
                      {"kappa", {{"mean", r.kappa.mean}, {"sd", r.kappa.sd}}}});
  }
  return nlohmann::json{{"rows", rows_j},
                        {"full_model_best_dsc", full_model_best_dsc},
                        {"full_model_best_acc", full_model_best_acc}};
}

AblationTable ablate(const synth::DatasetSplit& split, const TrainConfig& base,
                     const std::vector<uint64_t>& seeds) {
  if (seeds.empty()) throw std::invalid_argument("ablate: need at least one seed");
  const std::array<std::pair<std::string, AblationFlags>, 4> variants{{
      {"Base", {false, false}},
      {"+CCM", {false, true}},
      {"+RCM", {true, false}},
      {"+CCM+RCM", {true, true}},
  }};

  AblationTable table;
  for (const auto& [name, flags] : variants) {
    std::vector<double> dsc, assd, hd, dpa, acc, prec, f1, kappa;
    for (uint64_t seed : seeds) {
      TrainConfig cfg = base;
      cfg.ablation = flags;
      cfg.seed = seed;
      cfg.model.rng_seed = seed;
      cfg.eval_every = 0;  // evaluation happens on the test split below
      Trainer trainer(cfg);
      trainer.fit(split);
      const auto report = trainer.evaluate(split.test);
      dsc.push_back(report.dsc.mean);
      assd.push_back(report.assd.mean);
      hd.push_back(report.hd.mean);
      dpa.push_back(report.d_pa.mean);
      acc.push_back(report.classification.acc * 100.0);
      prec.push_back(report.classification.precision_macro * 100.0);
      f1.push_back(report.classification.f1_macro);
      kappa.push_back(report.classification.kappa);
    }
    AblationRow row;
    row.name = name;
    row.flags = flags;
    row.dsc = metrics::mean_sd(dsc);
    row.assd = metrics::mean_sd(assd);
    row.hd = metrics::mean_sd(hd);
    row.d_pa = metrics::mean_sd(dpa);
    row.acc = metrics::mean_sd(acc);
    row.precision = metrics::mean_sd(prec);
    row.f1 = metrics::mean_sd(f1);
    row.kappa = metrics::mean_sd(kappa);
    table.rows.push_back(std::move(row));
  }

  const auto& full = table.rows.back();
  table.full_model_best_dsc = true;
  table.full_model_best_acc = true;
  for (size_t i = 0; i + 1 < table.rows.size(); ++i) {
    if (table.rows[i].dsc.mean >= full.dsc.mean) table.full_model_best_dsc = false;
    if (table.rows[i].acc.mean >= full.acc.mean) table.full_model_best_acc = false;
  }
  return table;
}

}  // namespace rccm::training
