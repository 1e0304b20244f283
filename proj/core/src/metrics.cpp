#include "rccm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "json.hpp"

namespace rccm::metrics {

namespace {

constexpr double kInf = 1e20;

void check_same_shape(const Mask& a, const Mask& m, const char* what) {
  if (a.h != m.h || a.w != m.w) {
    throw std::invalid_argument(std::string(what) + ": mask shapes differ");
  }
}

// 1D lower envelope of parabolas (Felzenszwalb/Huttenlocher). f and d may
// alias distinct buffers; sites with f=kInf never win against finite ones.
void edt_1d(const std::vector<double>& f, std::vector<double>& d, int64_t n,
            std::vector<int64_t>& v, std::vector<double>& z) {
  int64_t k = 0;
  v[0] = 0;
  z[0] = -kInf;
  z[1] = kInf;
  for (int64_t q = 1; q < n; ++q) {
    double s;
    for (;;) {
      const int64_t p = v[k];
      s = ((f[q] + static_cast<double>(q * q)) - (f[p] + static_cast<double>(p * p))) /
          static_cast<double>(2 * (q - p));
      if (s > z[k]) break;
      --k;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  k = 0;
  for (int64_t q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const int64_t p = v[k];
    const double dq = static_cast<double>(q - p);
    d[q] = dq * dq + f[p];
  }
}

// Exact squared Euclidean distance (pixel units) from every grid point to the
// nearest site.
std::vector<double> squared_edt(const std::vector<std::pair<int64_t, int64_t>>& sites, int64_t h,
                                int64_t w) {
  std::vector<double> g(static_cast<size_t>(h * w), kInf);
  for (const auto& [y, x] : sites) g[static_cast<size_t>(y * w + x)] = 0.0;

  // pass 1: per column, squared distance along y
  for (int64_t x = 0; x < w; ++x) {
    int64_t last = -1;
    std::vector<double> dist(static_cast<size_t>(h), kInf);
    for (int64_t y = 0; y < h; ++y) {
      if (g[static_cast<size_t>(y * w + x)] == 0.0) last = y;
      if (last >= 0) {
        const double dy = static_cast<double>(y - last);
        dist[static_cast<size_t>(y)] = dy * dy;
      }
    }
    last = -1;
    for (int64_t y = h - 1; y >= 0; --y) {
      if (g[static_cast<size_t>(y * w + x)] == 0.0) last = y;
      if (last >= 0) {
        const double dy = static_cast<double>(last - y);
        dist[static_cast<size_t>(y)] = std::min(dist[static_cast<size_t>(y)], dy * dy);
      }
    }
    for (int64_t y = 0; y < h; ++y) g[static_cast<size_t>(y * w + x)] = dist[static_cast<size_t>(y)];
  }

  // pass 2: per row, parabola envelope along x
  std::vector<double> f(static_cast<size_t>(w)), d(static_cast<size_t>(w));
  std::vector<int64_t> v(static_cast<size_t>(w));
  std::vector<double> z(static_cast<size_t>(w + 1));
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) f[static_cast<size_t>(x)] = g[static_cast<size_t>(y * w + x)];
    edt_1d(f, d, w, v, z);
    for (int64_t x = 0; x < w; ++x) g[static_cast<size_t>(y * w + x)] = d[static_cast<size_t>(x)];
  }
  return g;
}

struct DirectedStats {
  double sum = 0.0;
  double max = 0.0;
  int64_t n = 0;
};

DirectedStats directed_distances(const Contour& from, const std::vector<double>& edt_to,
                                 int64_t w) {
  DirectedStats s;
  for (const auto& [y, x] : from.points) {
    const double d = std::sqrt(edt_to[static_cast<size_t>(y * w + x)]);
    s.sum += d;
    s.max = std::max(s.max, d);
    ++s.n;
  }
  return s;
}

}  // namespace

Contour contour_of(const Mask& mask, double spacing_mm) {
  Contour c;
  c.spacing_mm = spacing_mm;
  for (int64_t y = 0; y < mask.h; ++y) {
    for (int64_t x = 0; x < mask.w; ++x) {
      if (!mask.at(y, x)) continue;
      const bool border = (y == 0 || !mask.at(y - 1, x)) || (y == mask.h - 1 || !mask.at(y + 1, x)) ||
                          (x == 0 || !mask.at(y, x - 1)) || (x == mask.w - 1 || !mask.at(y, x + 1));
      if (border) c.points.emplace_back(y, x);
    }
  }
  return c;
}

double dice_percent(const Mask& a, const Mask& m) {
  check_same_shape(a, m, "dice");
  int64_t inter = 0, total = 0;
  for (size_t i = 0; i < a.v.size(); ++i) {
    const int av = a.v[i] ? 1 : 0, mv = m.v[i] ? 1 : 0;
    inter += av & mv;
    total += av + mv;
  }
  if (total == 0) throw UndefinedMetricError("dice: both masks are empty");
  return 200.0 * static_cast<double>(inter) / static_cast<double>(total);
}

double area_mm2(const Mask& m, double spacing_mm) {
  return static_cast<double>(m.area_px()) * spacing_mm * spacing_mm;
}

double area_diff_mm2(const Mask& a, const Mask& m, double spacing_mm) {
  check_same_shape(a, m, "area_diff");
  // difference the integer pixel counts first: ||A|-|M|| * spacing^2
  return static_cast<double>(std::abs(a.area_px() - m.area_px())) * spacing_mm * spacing_mm;
}

double assd_mm(const Mask& a, const Mask& m, double spacing_mm) {
  check_same_shape(a, m, "assd");
  const Contour ca = contour_of(a, spacing_mm), cm = contour_of(m, spacing_mm);
  if (ca.points.empty() || cm.points.empty()) {
    throw UndefinedMetricError("assd: empty contour");
  }
  const auto edt_m = squared_edt(cm.points, a.h, a.w);
  const auto edt_a = squared_edt(ca.points, a.h, a.w);
  const auto am = directed_distances(ca, edt_m, a.w);
  const auto ma = directed_distances(cm, edt_a, a.w);
  return 0.5 * (am.sum / static_cast<double>(am.n) + ma.sum / static_cast<double>(ma.n)) *
         spacing_mm;
}

double hausdorff_mm(const Mask& a, const Mask& m, double spacing_mm) {
  check_same_shape(a, m, "hausdorff");
  const Contour ca = contour_of(a, spacing_mm), cm = contour_of(m, spacing_mm);
  if (ca.points.empty() || cm.points.empty()) {
    throw UndefinedMetricError("hausdorff: empty contour");
  }
  const auto edt_m = squared_edt(cm.points, a.h, a.w);
  const auto edt_a = squared_edt(ca.points, a.h, a.w);
  const auto am = directed_distances(ca, edt_m, a.w);
  const auto ma = directed_distances(cm, edt_a, a.w);
  return std::max(am.max, ma.max) * spacing_mm;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw std::invalid_argument("pearson: need two equal-length vectors of size >= 2");
  }
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedMetricError("pearson: zero variance input");
  return sxy / std::sqrt(sxx * syy);
}

double f1_score(double precision, double recall) {
  const double denom = precision + recall;
  if (denom == 0.0) return 0.0;
  return 2.0 * precision * recall / denom;
}

ClassificationScores confusion_and_scores(const std::vector<int>& truth,
                                          const std::vector<int>& pred) {
  if (truth.size() != pred.size() || truth.empty()) {
    throw std::invalid_argument("confusion_and_scores: need equal nonempty label vectors");
  }
  ClassificationScores s;
  for (size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] > 2 || pred[i] < 0 || pred[i] > 2) {
      throw std::invalid_argument("confusion_and_scores: label out of range");
    }
    s.confusion[static_cast<size_t>(truth[i])][static_cast<size_t>(pred[i])]++;
  }
  const double n = static_cast<double>(truth.size());
  double diag = 0.0;
  std::array<double, 3> rowsum{}, colsum{};
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      const double v = static_cast<double>(s.confusion[static_cast<size_t>(r)][static_cast<size_t>(c)]);
      if (r == c) diag += v;
      rowsum[static_cast<size_t>(r)] += v;
      colsum[static_cast<size_t>(c)] += v;
    }
  }
  s.acc = diag / n;

  double psum = 0.0, rsum = 0.0, fsum = 0.0;
  for (int c = 0; c < 3; ++c) {
    const double tp = static_cast<double>(s.confusion[static_cast<size_t>(c)][static_cast<size_t>(c)]);
    double prec = 0.0;
    if (colsum[static_cast<size_t>(c)] > 0.0) {
      prec = tp / colsum[static_cast<size_t>(c)];
    } else {
      s.zero_prediction_warning = true;
    }
    const double rec = rowsum[static_cast<size_t>(c)] > 0.0 ? tp / rowsum[static_cast<size_t>(c)] : 0.0;
    psum += prec;
    rsum += rec;
    fsum += f1_score(prec, rec);
  }
  s.precision_macro = psum / 3.0;
  s.recall_macro = rsum / 3.0;
  s.f1_macro = fsum / 3.0;
  s.precision_micro = s.acc;
  s.f1_micro = s.acc;

  double pe = 0.0;
  for (int c = 0; c < 3; ++c) pe += rowsum[static_cast<size_t>(c)] * colsum[static_cast<size_t>(c)];
  pe /= n * n;
  s.kappa = pe >= 1.0 ? (s.acc >= 1.0 ? 1.0 : 0.0) : (s.acc - pe) / (1.0 - pe);
  return s;
}

BlandAltman bland_altman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.empty()) {
    throw std::invalid_argument("bland_altman: need equal nonempty vectors");
  }
  std::vector<double> diff(x.size());
  for (size_t i = 0; i < x.size(); ++i) diff[i] = x[i] - y[i];
  const MeanSd ms = mean_sd(diff);
  BlandAltman b;
  b.bias = ms.mean;
  b.lo = ms.mean - 1.96 * ms.sd;
  b.hi = ms.mean + 1.96 * ms.sd;
  return b;
}

MeanSd mean_sd(const std::vector<double>& v) {
  MeanSd m;
  m.n = static_cast<int64_t>(v.size());
  if (v.empty()) return m;
  double s = 0.0;
  for (double x : v) s += x;
  m.mean = s / static_cast<double>(v.size());
  if (v.size() < 2) return m;
  double ss = 0.0;
  for (double x : v) {
    const double d = x - m.mean;
    ss += d * d;
  }
  m.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  return m;
}

SampleEval evaluate_sample(const std::string& id, const Mask& predicted, const Mask& truth,
                           double spacing_mm, int true_class, int pred_class) {
  if (truth.empty_mask()) throw std::invalid_argument("evaluate_sample: empty ground-truth mask");
  SampleEval e;
  e.id = id;
  e.true_class = true_class;
  e.pred_class = pred_class;
  e.pa_alg_mm2 = area_mm2(predicted, spacing_mm);
  e.pa_man_mm2 = area_mm2(truth, spacing_mm);
  e.d_pa_mm2 = area_diff_mm2(predicted, truth, spacing_mm);
  if (predicted.empty_mask()) {
    e.dsc = 0.0;  // distance metrics stay undefined
  } else {
    e.dsc = dice_percent(predicted, truth);
    e.assd_mm = assd_mm(predicted, truth, spacing_mm);
    e.hd_mm = hausdorff_mm(predicted, truth, spacing_mm);
  }
  return e;
}

MetricsReport compile_report(std::vector<SampleEval> samples) {
  if (samples.empty()) throw std::invalid_argument("compile_report: no samples");
  std::sort(samples.begin(), samples.end(),
            [](const SampleEval& a, const SampleEval& b) { return a.id < b.id; });
  MetricsReport r;
  r.n = static_cast<int64_t>(samples.size());
  std::vector<double> dscs, assds, hds, dpas, pa_alg, pa_man;
  std::vector<int> truth, pred;
  for (const auto& s : samples) {
    dscs.push_back(s.dsc);
    dpas.push_back(s.d_pa_mm2);
    if (s.assd_mm && s.hd_mm) {
      assds.push_back(*s.assd_mm);
      hds.push_back(*s.hd_mm);
    } else {
      ++r.excluded_distance_count;
    }
    pa_alg.push_back(s.pa_alg_mm2);
    pa_man.push_back(s.pa_man_mm2);
    truth.push_back(s.true_class);
    pred.push_back(s.pred_class);
  }
  r.dsc = mean_sd(dscs);
  r.assd = mean_sd(assds);
  r.hd = mean_sd(hds);
  r.d_pa = mean_sd(dpas);
  try {
    r.pcc = pearson(pa_alg, pa_man);
  } catch (const std::exception&) {
    r.pcc.reset();
  }
  r.area_agreement = bland_altman(pa_alg, pa_man);
  r.classification = confusion_and_scores(truth, pred);
  r.per_sample = std::move(samples);
  return r;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

using json = nlohmann::json;

json meansd_json(const MeanSd& m) { return json{{"mean", m.mean}, {"sd", m.sd}, {"n", m.n}}; }

MeanSd meansd_from(const json& j) {
  MeanSd m;
  m.mean = j.at("mean").get<double>();
  m.sd = j.at("sd").get<double>();
  m.n = j.at("n").get<int64_t>();
  return m;
}

}  // namespace

std::string report_to_json(const MetricsReport& r) {
  json per = json::array();
  for (const auto& s : r.per_sample) {
    json e{{"id", s.id},
           {"dsc", s.dsc},
           {"d_pa_mm2", s.d_pa_mm2},
           {"pa_alg_mm2", s.pa_alg_mm2},
           {"pa_man_mm2", s.pa_man_mm2},
           {"true_class", s.true_class},
           {"pred_class", s.pred_class}};
    e["assd_mm"] = s.assd_mm ? json(*s.assd_mm) : json(nullptr);
    e["hd_mm"] = s.hd_mm ? json(*s.hd_mm) : json(nullptr);
    per.push_back(std::move(e));
  }
  json cls{{"confusion", r.classification.confusion},
           {"acc", r.classification.acc},
           {"precision_macro", r.classification.precision_macro},
           {"recall_macro", r.classification.recall_macro},
           {"f1_macro", r.classification.f1_macro},
           {"precision_micro", r.classification.precision_micro},
           {"f1_micro", r.classification.f1_micro},
           {"kappa", r.classification.kappa},
           {"zero_prediction_warning", r.classification.zero_prediction_warning}};
  json out{{"n", r.n},
           {"excluded_distance_count", r.excluded_distance_count},
           {"segmentation",
            {{"dsc_pct", meansd_json(r.dsc)},
             {"assd_mm", meansd_json(r.assd)},
             {"hd_mm", meansd_json(r.hd)},
             {"d_pa_mm2", meansd_json(r.d_pa)},
             {"pcc", r.pcc ? json(*r.pcc) : json(nullptr)}}},
           {"bland_altman",
            {{"bias", r.area_agreement.bias}, {"lo", r.area_agreement.lo}, {"hi", r.area_agreement.hi}}},
           {"classification", cls},
           {"per_sample", per}};
  return out.dump(2);
}

MetricsReport report_from_json(const std::string& text) {
  const json j = json::parse(text);
  MetricsReport r;
  r.n = j.at("n").get<int64_t>();
  r.excluded_distance_count = j.at("excluded_distance_count").get<int64_t>();
  const json& seg = j.at("segmentation");
  r.dsc = meansd_from(seg.at("dsc_pct"));
  r.assd = meansd_from(seg.at("assd_mm"));
  r.hd = meansd_from(seg.at("hd_mm"));
  r.d_pa = meansd_from(seg.at("d_pa_mm2"));
  if (!seg.at("pcc").is_null()) r.pcc = seg.at("pcc").get<double>();
  const json& ba = j.at("bland_altman");
  r.area_agreement = {ba.at("bias").get<double>(), ba.at("lo").get<double>(), ba.at("hi").get<double>()};
  const json& cls = j.at("classification");
  cls.at("confusion").get_to(r.classification.confusion);
  r.classification.acc = cls.at("acc").get<double>();
  r.classification.precision_macro = cls.at("precision_macro").get<double>();
  r.classification.recall_macro = cls.at("recall_macro").get<double>();
  r.classification.f1_macro = cls.at("f1_macro").get<double>();
  r.classification.precision_micro = cls.at("precision_micro").get<double>();
  r.classification.f1_micro = cls.at("f1_micro").get<double>();
  r.classification.kappa = cls.at("kappa").get<double>();
  r.classification.zero_prediction_warning = cls.at("zero_prediction_warning").get<bool>();
  for (const auto& e : j.at("per_sample")) {
    SampleEval s;
    s.id = e.at("id").get<std::string>();
    s.dsc = e.at("dsc").get<double>();
    s.d_pa_mm2 = e.at("d_pa_mm2").get<double>();
    s.pa_alg_mm2 = e.at("pa_alg_mm2").get<double>();
    s.pa_man_mm2 = e.at("pa_man_mm2").get<double>();
    s.true_class = e.at("true_class").get<int>();
    s.pred_class = e.at("pred_class").get<int>();
    if (!e.at("assd_mm").is_null()) s.assd_mm = e.at("assd_mm").get<double>();
    if (!e.at("hd_mm").is_null()) s.hd_mm = e.at("hd_mm").get<double>();
    r.per_sample.push_back(std::move(s));
  }
  return r;
}

std::string per_sample_csv(const MetricsReport& r) {
  std::string out = "id,dsc_pct,d_pa_mm2,assd_mm,hd_mm,pa_alg_mm2,pa_man_mm2,true_class,pred_class\n";
  char buf[64];
  auto num = [&buf](double v) {
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return std::string(buf);
  };
  for (const auto& s : r.per_sample) {
    out += s.id + "," + num(s.dsc) + "," + num(s.d_pa_mm2) + ",";
    out += (s.assd_mm ? num(*s.assd_mm) : "") + std::string(",");
    out += (s.hd_mm ? num(*s.hd_mm) : "") + std::string(",");
    out += num(s.pa_alg_mm2) + "," + num(s.pa_man_mm2) + ",";
    out += std::to_string(s.true_class) + "," + std::to_string(s.pred_class) + "\n";
  }
  return out;
}

}  // namespace rccm::metrics
