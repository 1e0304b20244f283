#include "cli.hpp"

#include <chrono>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "rccm/checkpoint.hpp"
#include "rccm/config.hpp"
#include "rccm/plot.hpp"
#include "rccm/training.hpp"

namespace rccm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::array<int, 3> parse_counts(const std::string& s) {
  std::array<int, 3> counts{};
  size_t start = 0;
  for (int i = 0; i < 3; ++i) {
    const size_t comma = s.find(',', start);
    if ((i < 2) == (comma == std::string::npos)) {
      throw std::invalid_argument("--counts expects three comma-separated integers, got '" + s + "'");
    }
    counts[static_cast<size_t>(i)] = std::stoi(s.substr(start, comma - start));
    start = comma + 1;
  }
  return counts;
}

std::vector<uint64_t> parse_seeds(const std::string& s) {
  std::vector<uint64_t> seeds;
  size_t start = 0;
  while (start <= s.size()) {
    const size_t comma = s.find(',', start);
    const std::string tok = s.substr(start, comma == std::string::npos ? comma : comma - start);
    if (!tok.empty()) seeds.push_back(std::stoull(tok));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (seeds.empty()) throw std::invalid_argument("--seeds expects comma-separated integers");
  return seeds;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

std::string log_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%d %H:%M:%S", std::gmtime(&t));
  return buf;
}

// run directory bundle shared by train/evaluate/report
struct RunDir {
  fs::path dir;
  json echo;

  static RunDir open(const fs::path& dir) {
    RunDir r;
    r.dir = dir;
    std::ifstream f(dir / "config.echo.json");
    if (!f) throw std::runtime_error("not a run directory (missing config.echo.json): " + dir.string());
    f >> r.echo;
    return r;
  }

  training::TrainConfig config() const { return training::train_config_from_json(echo.at("config")); }
  fs::path checkpoint() const { return dir / "ckpt_final"; }
  std::string data_dir() const { return echo.at("data_dir").get<std::string>(); }
};

std::vector<synth::Sample> select_split(const synth::DatasetSplit& split, const std::string& name) {
  if (name == "train") return split.train;
  if (name == "val") return split.val;
  if (name == "test") return split.test;
  throw std::invalid_argument("--split must be one of train/val/test, got '" + name + "'");
}

std::string record_jsonl(const training::RunRecord& rec) {
  std::string out;
  for (const auto& e : rec.epochs) {
    json line{{"epoch", e.epoch},
              {"loss",
               {{"l_wce", e.mean_loss.l_wce},
                {"l_ent_seg", e.mean_loss.l_ent_seg},
                {"l_ce", e.mean_loss.l_ce},
                {"l_ent_cls", e.mean_loss.l_ent_cls},
                {"l_seg", e.mean_loss.l_seg},
                {"l_cls", e.mean_loss.l_cls},
                {"total", e.mean_loss.total}}}};
    if (e.val) line["val"] = {{"dsc_mean", e.val->dsc_mean}, {"acc", e.val->acc}};
    out += line.dump() + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Subcommand bodies
// ---------------------------------------------------------------------------

CommandResult cmd_generate_data(const fs::path& out_dir, const std::string& counts_str,
                                uint64_t seed, int64_t height, int64_t width, double spacing,
                                double area_min, double area_max) {
  synth::PhantomConfig cfg;
  cfg.image_height = height;
  cfg.image_width = width;
  cfg.pixel_spacing = spacing;
  cfg.area_min_mm2 = area_min;
  cfg.area_max_mm2 = area_max;
  cfg.seed = seed;
  const auto counts = parse_counts(counts_str);
  const auto samples = synth::generate_dataset(cfg, counts);
  synth::save_dataset(samples, out_dir);

  CommandResult res;
  res.artifacts.push_back((out_dir / "manifest.csv").string());
  for (const auto& s : samples) {
    res.artifacts.push_back((out_dir / ("images/" + s.id + ".pgm")).string());
    res.artifacts.push_back((out_dir / ("masks/" + s.id + ".pgm")).string());
  }
  res.summary = "generated " + std::to_string(samples.size()) + " samples in " + out_dir.string();
  return res;
}

CommandResult cmd_train(const fs::path& data_dir, const fs::path& config_path,
                        const fs::path& run_dir, const std::string& resume,
                        std::ostream& out) {
  auto cfg = config::load_train_config(config_path);
  auto samples = synth::load_dataset(data_dir);
  auto split = synth::split_dataset(std::move(samples), {0.6, 0.2, 0.2}, cfg.split_seed);

  fs::create_directories(run_dir);
  std::ofstream log(run_dir / "train.log", std::ios::app);
  log << "[" << log_timestamp() << "] training start: " << split.train.size() << " train / "
      << split.val.size() << " val / " << split.test.size() << " test samples\n";

  training::Trainer trainer(cfg);
  if (!resume.empty()) {
    trainer.load_checkpoint(resume);
    log << "[" << log_timestamp() << "] resumed from " << resume << " at epoch "
        << trainer.next_epoch() << "\n";
  }
  const auto record = trainer.fit(split);

  json echo{{"config", training::to_json(cfg)},
            {"config_hash", training::config_hash(cfg)},
            {"data_dir", data_dir.string()},
            {"split", {{"train", split.train.size()}, {"val", split.val.size()}, {"test", split.test.size()}}}};
  write_text(run_dir / "config.echo.json", echo.dump(2) + "\n");
  write_text(run_dir / "record.jsonl", record_jsonl(record));
  trainer.save_checkpoint(run_dir / "ckpt_final");
  const auto val_report = trainer.evaluate(split.val);
  write_text(run_dir / "report.json", metrics::report_to_json(val_report) + "\n");
  log << "[" << log_timestamp() << "] done in " << record.wall_seconds << " s; val DSC "
      << val_report.dsc.mean << "%, val ACC " << 100.0 * val_report.classification.acc << "%\n";
  out << "trained " << record.epochs.size() << " epochs; val DSC " << val_report.dsc.mean
      << "%, val ACC " << 100.0 * val_report.classification.acc << "%\n";

  CommandResult res;
  for (const char* f : {"config.echo.json", "record.jsonl", "ckpt_final", "report.json"}) {
    res.artifacts.push_back((run_dir / f).string());
  }
  res.summary = "run written to " + run_dir.string();
  return res;
}

CommandResult cmd_evaluate(const fs::path& run_dir, const std::string& split_name,
                           const std::string& data_override, const std::string& out_override,
                           std::ostream& out) {
  const RunDir run = RunDir::open(run_dir);
  const auto cfg = run.config();
  const fs::path data_dir = data_override.empty() ? fs::path(run.data_dir()) : fs::path(data_override);
  auto samples = synth::load_dataset(data_dir);
  auto split = synth::split_dataset(std::move(samples), {0.6, 0.2, 0.2}, cfg.split_seed);
  const auto subset = select_split(split, split_name);

  const auto report = training::evaluate_checkpoint(run.checkpoint(), subset);
  const fs::path out_path =
      out_override.empty() ? run_dir / ("report." + split_name + ".json") : fs::path(out_override);
  write_text(out_path, metrics::report_to_json(report) + "\n");
  out << split_name << ": DSC " << report.dsc.mean << "%, ACC "
      << 100.0 * report.classification.acc << "%, kappa " << report.classification.kappa << "\n";

  CommandResult res;
  res.artifacts.push_back(out_path.string());
  res.summary = "report written to " + out_path.string();
  return res;
}

CommandResult cmd_predict(const std::string& ckpt, const fs::path& image_path, std::ostream& out) {
  ArrayStore store = ArrayStore::load(ckpt);
  training::Trainer trainer(training::train_config_from_json(store.meta.at("config")));
  trainer.load_checkpoint(ckpt);

  const Tensor image = synth::read_pgm(image_path);
  const auto pred = trainer.predict(image);

  fs::path mask_path = image_path;
  mask_path.replace_extension(".mask.pgm");
  synth::write_mask_pgm(mask_path, pred.mask);

  char line[128];
  std::snprintf(line, sizeof(line), "class=%s probs=%.6f,%.6f,%.6f", synth::class_name(pred.pred_class),
                pred.probs[0], pred.probs[1], pred.probs[2]);
  out << line << "\n";

  CommandResult res;
  res.artifacts.push_back(mask_path.string());
  res.summary = line;
  return res;
}

CommandResult cmd_ablate(const fs::path& data_dir, const fs::path& config_path,
                         const std::string& seeds_str, const fs::path& out_path,
                         std::ostream& out) {
  auto cfg = config::load_train_config(config_path);
  auto samples = synth::load_dataset(data_dir);
  auto split = synth::split_dataset(std::move(samples), {0.6, 0.2, 0.2}, cfg.split_seed);
  const auto seeds = parse_seeds(seeds_str);

  const auto table = training::ablate(split, cfg, seeds);
  write_text(out_path, table.csv());
  const fs::path summary_path = out_path.string() + ".summary.json";
  write_text(summary_path, table.summary_json().dump(2) + "\n");

  out << table.csv();
  out << "full model best DSC: " << (table.full_model_best_dsc ? "yes" : "no")
      << ", best ACC: " << (table.full_model_best_acc ? "yes" : "no") << "\n";

  CommandResult res;
  res.artifacts.push_back(out_path.string());
  res.artifacts.push_back(summary_path.string());
  res.summary = "ablation table written to " + out_path.string();
  return res;
}

CommandResult cmd_report(const fs::path& run_dir, bool plots, const std::string& out_dir_str) {
  const fs::path out_dir = out_dir_str.empty() ? run_dir : fs::path(out_dir_str);
  fs::create_directories(out_dir);
  std::ifstream f(run_dir / "report.json");
  if (!f) throw std::runtime_error("missing report.json in " + run_dir.string());
  std::stringstream buf;
  buf << f.rdbuf();
  const auto report = metrics::report_from_json(buf.str());

  CommandResult res;
  const fs::path csv_path = out_dir / "per_sample.csv";
  write_text(csv_path, metrics::per_sample_csv(report));
  res.artifacts.push_back(csv_path.string());

  if (plots) {
    std::vector<double> alg, man;
    for (const auto& s : report.per_sample) {
      alg.push_back(s.pa_alg_mm2);
      man.push_back(s.pa_man_mm2);
    }
    const fs::path scatter = out_dir / "correlation_scatter.png";
    const fs::path ba = out_dir / "bland_altman.png";
    plot::scatter_plot(scatter, man, alg);
    plot::bland_altman_plot(ba, alg, man);
    res.artifacts.push_back(scatter.string());
    res.artifacts.push_back(ba.string());
  }
  res.summary = "report artifacts in " + out_dir.string();
  return res;
}

}  // namespace

CommandResult run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"RCCM-Net: multi-task carotid plaque segmentation + classification"};
  app.require_subcommand(1);

  // generate-data
  std::string gd_out, gd_counts = "10,10,10";
  uint64_t gd_seed = 1;
  int64_t gd_h = 96, gd_w = 144;
  double gd_spacing = 0.1, gd_area_min = 6.0, gd_area_max = 45.0;
  auto* gen = app.add_subcommand("generate-data", "Generate a synthetic phantom dataset");
  gen->add_option("--out", gd_out, "Output dataset directory")->required();
  gen->add_option("--counts", gd_counts, "Per-class sample counts A,B,C");
  gen->add_option("--seed", gd_seed, "Generator seed");
  gen->add_option("--height", gd_h, "Image height in pixels");
  gen->add_option("--width", gd_w, "Image width in pixels");
  gen->add_option("--spacing", gd_spacing, "Pixel spacing in mm");
  gen->add_option("--area-min", gd_area_min, "Smallest plaque area in mm^2");
  gen->add_option("--area-max", gd_area_max, "Largest plaque area in mm^2");

  // train
  std::string tr_data, tr_config, tr_out, tr_resume;
  auto* tr = app.add_subcommand("train", "Train on a dataset directory");
  tr->add_option("--data", tr_data, "Dataset directory")->required();
  tr->add_option("--config", tr_config, "Training config (.json or .toml)")->required();
  tr->add_option("--out", tr_out, "Run directory to create")->required();
  tr->add_option("--resume", tr_resume, "Checkpoint to resume from");

  // evaluate
  std::string ev_run, ev_split = "test", ev_data, ev_out;
  auto* ev = app.add_subcommand("evaluate", "Evaluate a finished run on a split");
  ev->add_option("--run", ev_run, "Run directory")->required();
  ev->add_option("--split", ev_split, "train, val or test");
  ev->add_option("--data", ev_data, "Override the dataset directory");
  ev->add_option("--out", ev_out, "Report output path");

  // predict
  std::string pr_ckpt, pr_image;
  auto* pr = app.add_subcommand("predict", "Segment + classify one image");
  pr->add_option("--ckpt", pr_ckpt, "Checkpoint file")->required();
  pr->add_option("--image", pr_image, "Input PGM image")->required();

  // ablate
  std::string ab_data, ab_config, ab_seeds = "1,2,3", ab_out;
  auto* ab = app.add_subcommand("ablate", "Run the Base/+CCM/+RCM/+both ablation grid");
  ab->add_option("--data", ab_data, "Dataset directory")->required();
  ab->add_option("--config", ab_config, "Training config")->required();
  ab->add_option("--seeds", ab_seeds, "Comma-separated seeds");
  ab->add_option("--out", ab_out, "Output CSV path")->required();

  // report
  std::string rp_run, rp_out_dir;
  bool rp_plots = false;
  auto* rp = app.add_subcommand("report", "Emit per-sample CSV and optional plots for a run");
  rp->add_option("--run", rp_run, "Run directory")->required();
  rp->add_flag("--plots", rp_plots, "Also write scatter and Bland-Altman PNGs");
  rp->add_option("--out-dir", rp_out_dir, "Directory for the artifacts");

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::ParseError& e) {
    CommandResult res;
    if (e.get_exit_code() == 0) {
      out << app.help();
      res.exit_code = 0;
      res.summary = "help";
      out << "RESULT " << json{{"ok", true}, {"summary", res.summary}}.dump() << "\n";
    } else {
      err << "usage error: " << e.what() << "\n";
      res.exit_code = 2;
      res.summary = e.what();
    }
    return res;
  }

  try {
    CommandResult res;
    if (gen->parsed()) {
      res = cmd_generate_data(gd_out, gd_counts, gd_seed, gd_h, gd_w, gd_spacing, gd_area_min,
                              gd_area_max);
    } else if (tr->parsed()) {
      res = cmd_train(tr_data, tr_config, tr_out, tr_resume, out);
    } else if (ev->parsed()) {
      res = cmd_evaluate(ev_run, ev_split, ev_data, ev_out, out);
    } else if (pr->parsed()) {
      res = cmd_predict(pr_ckpt, pr_image, out);
    } else if (ab->parsed()) {
      res = cmd_ablate(ab_data, ab_config, ab_seeds, ab_out, out);
    } else if (rp->parsed()) {
      res = cmd_report(rp_run, rp_plots, rp_out_dir);
    }
    json result{{"ok", true}, {"summary", res.summary}, {"artifacts", res.artifacts}};
    out << "RESULT " << result.dump() << "\n";
    return res;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    CommandResult res;
    res.exit_code = 1;
    res.summary = e.what();
    return res;
  }
}

}  // namespace rccm::cli
