// evp: command-line workbench.
//
// Exit status: 0 success, 2 usage error (bad flag or invalid argument),
// 3 numeric abort (NaN/Inf during a computation), 1 anything else.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "evp/compare.hpp"
#include "evp/dataset.hpp"
#include "evp/frequency.hpp"
#include "evp/gradsuite.hpp"
#include "evp/io.hpp"
#include "evp/metrics.hpp"
#include "evp/model.hpp"
#include "evp/params.hpp"
#include "evp/pretrain.hpp"
#include "evp/synth.hpp"
#include "evp/training.hpp"

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;
using namespace evp;

namespace {

struct Overrides {
  std::optional<std::string> strategy;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> steps, epochs, batch;
  std::optional<double> lr, tau;
  std::optional<std::size_t> r;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--strategy", strategy, "full | decoder | vpt | evp1 | evp2");
    cmd->add_option("--seed", seed, "random seed");
    cmd->add_option("--steps", steps, "optimizer step budget");
    cmd->add_option("--epochs", epochs, "epochs (ignored when --steps is set)");
    cmd->add_option("--batch", batch, "batch size")->check(CLI::PositiveNumber);
    cmd->add_option("--lr", lr, "base learning rate")->check(CLI::PositiveNumber);
    cmd->add_option("--tau", tau, "HFC mask ratio")->check(CLI::Range(0.0, 1.0));
    cmd->add_option("--r", r, "prompt scale factor")->check(CLI::PositiveNumber);
  }

  RunConfig apply(RunConfig c) const {
    if (strategy) c.train.strategy = parse_strategy(*strategy);
    if (seed) c.train.seed = *seed;
    if (steps) c.train.steps = *steps;
    if (epochs) c.train.epochs = *epochs;
    if (batch) c.train.batch_size = *batch;
    if (lr) c.train.lr = *lr;
    if (tau) c.model.prompt.tau = *tau;
    if (r) c.model.prompt.r = *r;
    return c;
  }
};

RunConfig load_config(const std::string& path) { return path.empty() ? RunConfig{} : load_run_config(path); }

ModelConfig model_of(const RunConfig& c) {
  ModelConfig m = c.model;
  m.vpt_tokens = c.train.vpt_tokens;
  return model_for(m, c.train);
}

std::string metrics_row(const std::string& label, const MetricsReport& m) {
  char line[256];
  std::snprintf(line, sizeof line, "%-20s %7.4f %7.4f %7.4f %7.4f %7.4f %7.2f %7.4f %7.4f %7.4f\n", label.c_str(),
                m.iou, m.f1, m.f_beta_max, m.f_beta_weighted, m.auc, m.ber, m.s_measure, m.e_measure, m.mae);
  return line;
}

std::string metrics_header() {
  char line[256];
  std::snprintf(line, sizeof line, "%-20s %7s %7s %7s %7s %7s %7s %7s %7s %7s\n", "sample", "IoU", "F1", "maxF", "wF",
                "AUC", "BER", "S", "E", "MAE");
  return line;
}

ojson metrics_json(const MetricsReport& m) {
  return {{"mae", m.mae},   {"f_beta_max", m.f_beta_max}, {"f_beta_weighted", m.f_beta_weighted},
          {"f1", m.f1},     {"auc", m.auc},               {"ber", m.ber},
          {"s_measure", m.s_measure}, {"e_measure", m.e_measure}, {"iou", m.iou}};
}

// Maps [H, W] from EVPT or PGM files.
Tensor load_map(const fs::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".pgm") {
    const Tensor t = read_pnm(path);
    return reshape(t, {t.dim(1), t.dim(2)});
  }
  return load_tensor(path);
}

std::map<std::string, fs::path> map_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::invalid_argument("not a directory: " + dir.string());
  std::map<std::string, fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension().string();
    if (!e.is_regular_file() || (ext != ".evpt" && ext != ".pgm")) continue;
    // The exact EVPT map wins over an 8-bit PGM of the same id.
    auto [it, fresh] = files.emplace(e.path().stem().string(), e.path());
    if (!fresh && ext == ".evpt") it->second = e.path();
  }
  return files;
}

// ---------------------------------------------------------------------------

int cmd_synth(const std::string& task, std::size_t n, std::size_t size, std::uint64_t seed, std::size_t stride,
              const std::string& out) {
  const Dataset ds = synth_dataset(parse_task(task), SplitCounts::from_total(n), size, seed, stride);
  const fs::path manifest = write_dataset(out, ds);
  std::cout << ojson{{"manifest", manifest.string()}, {"samples", ds.samples.size()}}.dump() << "\n";
  return 0;
}

int cmd_pretrain(const std::string& config, const std::string& data, PretrainConfig pc, const std::string& out,
                 const std::string& history) {
  const RunConfig rc = load_config(config);
  const Dataset ds = load_dataset(data);
  std::ofstream hist;
  if (!history.empty()) hist.open(history);
  const PretrainResult pr = pretrain(rc.model.backbone, ds.split("train"), pc, [&](std::size_t t, double loss) {
    if (hist) hist << ojson{{"step", t + 1}, {"loss", loss}}.dump() << "\n";
  });
  save_checkpoint(out, pr.backbone);
  std::cout << ojson{{"checkpoint", out},
                     {"steps", pr.losses.size()},
                     {"first_loss", pr.losses.front()},
                     {"last_loss", pr.losses.back()},
                     {"checksum", hex64(checksum(pr.backbone))}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_train(const std::string& config, const Overrides& ov, const std::string& data, const std::string& pretrained,
              const std::string& out) {
  const RunConfig rc = ov.apply(load_config(config));
  const Dataset ds = load_dataset(data);
  Segmenter model(model_of(rc), rc.train.seed);
  if (!pretrained.empty()) model.store().load(load_checkpoint(pretrained), "backbone.");
  TrainOptions opts;
  opts.on_epoch = [](const EpochRecord& r) { std::cout << to_json_line(r) << std::endl; };
  train(model, ds.split("train"), ds.split("val"), rc.train, opts);
  save_checkpoint(out, model.store().snapshot());
  return 0;
}

int cmd_predict(const std::string& config, const Overrides& ov, const std::string& data, const std::string& ckpt,
                const std::string& split, const std::string& out, bool pgm) {
  const RunConfig rc = ov.apply(load_config(config));
  const Dataset ds = load_dataset(data);
  Segmenter model(model_of(rc), rc.train.seed);
  model.store().load(load_checkpoint(ckpt));
  const auto samples = ds.split(split);
  const auto probs = predict(model, samples);
  fs::create_directories(out);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    save_tensor(fs::path(out) / (samples[i].id + ".evpt"), probs[i]);
    if (pgm) write_pgm(fs::path(out) / (samples[i].id + ".pgm"), probs[i]);
  }
  std::cout << ojson{{"predictions", samples.size()}, {"dir", out}}.dump() << "\n";
  return 0;
}

int cmd_eval(const std::string& pred_dir, const std::string& gt_dir, const std::string& out) {
  const auto preds = map_files(pred_dir);
  const auto gts = map_files(gt_dir);
  if (preds.empty()) throw std::invalid_argument("no prediction maps in " + pred_dir);
  ojson samples = ojson::array();
  std::vector<MetricsReport> reports;
  std::string table = metrics_header();
  // Every prediction is scored; the ground-truth directory may hold more
  // (e.g. all splits of a dataset).
  for (const auto& [id, pred_path] : preds) {
    const auto it = gts.find(id);
    if (it == gts.end()) throw std::invalid_argument("no ground truth for '" + id + "' in " + gt_dir);
    const MetricsReport m = evaluate(Map::from_tensor(load_map(pred_path)), Map::from_tensor(load_map(it->second)));
    reports.push_back(m);
    samples.push_back({{"id", id}, {"metrics", metrics_json(m)}});
    table += metrics_row(id, m);
  }
  const MetricsReport mean = mean_report(reports);
  table += metrics_row("mean", mean);
  ojson report{{"samples", samples}, {"mean", metrics_json(mean)}};
  if (!out.empty()) write_text(out, report.dump(2) + "\n");
  std::cout << table;
  return 0;
}

int cmd_hfc(const std::string& in, double tau, const std::string& out_hfc, const std::string& out_lfc) {
  const FrequencyDecomposition d = extract_hfc(load_tensor(in), tau);
  save_tensor(out_hfc, d.hfc);
  if (!out_lfc.empty()) save_tensor(out_lfc, d.lfc);
  return 0;
}

int cmd_mask_stats(std::size_t h, std::size_t w, double tau) {
  const FrequencyMask m = make_hfc_mask(h, w, tau);
  std::printf("%-14s %10s %10s %10s\n", "size", "tau", "zero_frac", "analytic");
  char size[32];
  std::snprintf(size, sizeof size, "%zux%zu", h, w);
  std::printf("%-14s %10.4f %10.4f %10.4f\n", size, tau, m.zero_fraction(), analytic_zero_fraction(tau));
  return 0;
}

int cmd_params(const std::string& config, const Overrides& ov, const std::string& out) {
  const RunConfig rc = ov.apply(load_config(config));
  ojson rows = ojson::array();
  std::printf("%-10s %12s %12s %12s %9s\n", "strategy", "total", "tunable", "prompt", "share");
  for (Strategy s : {Strategy::full, Strategy::decoder, Strategy::vpt, Strategy::evp1, Strategy::evp2}) {
    TrainConfig tc = rc.train;
    tc.strategy = s;
    ModelConfig mc = rc.model;
    mc.vpt_tokens = tc.vpt_tokens;
    mc = model_for(mc, tc);
    const ParamSpecs specs = Segmenter::specs(mc);
    const ParamCount pc = count_params(specs, partition(s, specs));
    const std::size_t prompt = count_prefix(specs, "prompt.") + count_prefix(specs, "vpt.");
    std::printf("%-10s %12zu %12zu %12zu %8.2f%%\n", strategy_name(s).c_str(), pc.total, pc.tunable, prompt,
                100.0 * pc.tunable_fraction);
    rows.push_back({{"strategy", strategy_name(s)},
                    {"total", pc.total},
                    {"tunable", pc.tunable},
                    {"prompt", prompt},
                    {"tunable_fraction", pc.tunable_fraction}});
  }
  if (!out.empty()) write_text(out, rows.dump(2) + "\n");
  return 0;
}

int cmd_gradcheck(const std::string& only, double threshold) {
  bool all_ok = true, any = false;
  std::printf("%-34s %12s %8s  %s\n", "case", "max_rel_err", "status", "worst");
  for (const auto& c : gradient_suite()) {
    if (!only.empty() && c.name != only) continue;
    any = true;
    try {
      const GradCheckResult r = c.run();
      const bool ok = r.max_rel_error < threshold;
      all_ok = all_ok && ok;
      std::printf("%-34s %12.3e %8s  %s[%zu]\n", c.name.c_str(), r.max_rel_error, ok ? "ok" : "FAIL",
                  r.worst_input.c_str(), r.worst_coordinate);
    } catch (const NonDifferentiableError& e) {
      all_ok = false;
      std::printf("%-34s %12s %8s  %s\n", c.name.c_str(), "-", "FAIL", e.what());
    }
  }
  if (!any) throw std::invalid_argument("no gradient case named '" + only + "'");
  return all_ok ? 0 : 1;
}

int cmd_compare(const std::string& config, const Overrides& ov, const std::string& data, const std::string& pretrained,
                const std::vector<std::uint64_t>& seeds, const std::vector<std::string>& strategies, bool tau_sweep,
                const std::vector<double>& taus, const std::string& out, const std::string& ckpt_dir) {
  const RunConfig rc = ov.apply(load_config(config));
  CompareConfig cc;
  cc.model = rc.model;
  cc.train = rc.train;
  cc.seeds = seeds;
  cc.threads = threads_from_env();
  if (tau_sweep) {
    cc.rows = tau_rows(taus);
  } else {
    std::vector<Strategy> list;
    for (const auto& s : strategies) list.push_back(parse_strategy(s));
    cc.rows = strategy_rows(list);
  }
  const Dataset ds = load_dataset(data);
  const NamedTensors backbone = load_checkpoint(pretrained);
  RunHook hook;
  if (!ckpt_dir.empty()) {
    hook = [&](const RowSpec& row, const SeedRun& run, const Segmenter& model) {
      save_checkpoint(fs::path(ckpt_dir) / (row.label + "-seed" + std::to_string(run.seed) + ".evpc"),
                      model.store().snapshot());
    };
  }
  const CompareReport report = compare(cc, backbone, ds, hook);
  if (!out.empty()) {
    write_text(out, report_json(report));
    write_text(out + ".timing.json", timing_json(report));
  }
  std::cout << format_table(report);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EVP workbench: explicit visual prompting on a desk-scale ViT"};
  app.set_help_flag("--help", "print help and exit");
  app.require_subcommand(1);

  // synth
  std::string task = "texture", out;
  std::size_t n = 100, size = 64, stride = 8;
  std::uint64_t seed = 1;
  auto* synth = app.add_subcommand("synth", "synthesize a segmentation dataset");
  synth->add_option("--task", task, "texture | blur | shade | camo")->capture_default_str();
  synth->add_option("--n", n, "total samples (80/10/10 split)")->capture_default_str();
  synth->add_option("--size", size, "image side")->capture_default_str();
  synth->add_option("--seed", seed, "generator seed")->capture_default_str();
  synth->add_option("--stride", stride, "backbone stride the size must divide")->capture_default_str();
  synth->add_option("--out", out, "output directory")->required();

  // pretrain
  std::string config, data, history;
  PretrainConfig pc;
  auto* pre = app.add_subcommand("pretrain", "denoising pretext for the backbone");
  pre->add_option("--config", config, "run config (backbone section is used)");
  pre->add_option("--data", data, "dataset manifest (train split is used)")->required();
  pre->add_option("--steps", pc.steps)->capture_default_str();
  pre->add_option("--batch", pc.batch_size)->capture_default_str();
  pre->add_option("--lr", pc.lr)->capture_default_str();
  pre->add_option("--noise", pc.noise, "noise standard deviation")->capture_default_str();
  pre->add_option("--seed", pc.seed)->capture_default_str();
  pre->add_option("--history", history, "per-step loss log (JSON lines)");
  pre->add_option("--out", out, "stripped backbone checkpoint")->required();

  // train
  Overrides ov;
  std::string pretrained;
  auto* tr = app.add_subcommand("train", "train one strategy; history as JSON lines");
  tr->add_option("--config", config);
  tr->add_option("--data", data)->required();
  tr->add_option("--pretrained", pretrained, "backbone checkpoint");
  tr->add_option("--out", out, "model checkpoint")->required();
  ov.add_to(tr);

  // predict
  std::string ckpt, split = "test";
  bool pgm = false;
  auto* pr = app.add_subcommand("predict", "write probability maps for a split");
  pr->add_option("--config", config);
  pr->add_option("--data", data)->required();
  pr->add_option("--checkpoint", ckpt)->required();
  pr->add_option("--split", split)->capture_default_str();
  pr->add_option("--out", out, "output directory")->required();
  pr->add_flag("--pgm", pgm, "also write 8-bit PGM maps");
  ov.add_to(pr);

  // eval
  std::string pred_dir, gt_dir;
  auto* ev = app.add_subcommand("eval", "score prediction maps against ground truth");
  ev->add_option("--pred-dir", pred_dir)->required();
  ev->add_option("--gt-dir", gt_dir)->required();
  ev->add_option("--out", out, "report JSON");

  // hfc
  std::string in, out_hfc, out_lfc;
  double tau = 0.25;
  auto* hfc = app.add_subcommand("hfc", "split an image into high- and low-frequency parts");
  hfc->add_option("--in", in, "EVPT image")->required();
  hfc->add_option("--tau", tau)->check(CLI::Range(0.0, 1.0))->capture_default_str();
  hfc->add_option("--out-hfc", out_hfc)->required();
  hfc->add_option("--out-lfc", out_lfc);

  // mask-stats
  std::size_t h = 256, w = 256;
  auto* ms = app.add_subcommand("mask-stats", "zero fraction of the HFC mask");
  ms->add_option("--h", h)->check(CLI::Range(std::size_t(2), std::size_t(1) << 20))->capture_default_str();
  ms->add_option("--w", w)->check(CLI::Range(std::size_t(2), std::size_t(1) << 20))->capture_default_str();
  ms->add_option("--tau", tau)->check(CLI::Range(0.0, 1.0))->capture_default_str();

  // params
  auto* pa = app.add_subcommand("params", "parameter accounting per strategy");
  pa->add_option("--config", config);
  pa->add_option("--out", out, "JSON output");
  ov.add_to(pa);

  // gradcheck
  std::string only;
  double threshold = 1e-6;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every registered op");
  gc->add_option("--case", only, "run a single case");
  gc->add_option("--threshold", threshold)->capture_default_str();

  // compare
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<std::string> strategies{"full", "decoder", "vpt", "evp1", "evp2"};
  std::vector<double> taus{0.1, 0.25, 0.5, 0.9};
  bool sweep = false;
  std::string ckpt_dir;
  auto* cmp = app.add_subcommand("compare", "train and score strategies over seeds");
  cmp->add_option("--config", config);
  cmp->add_option("--data", data)->required();
  cmp->add_option("--pretrained", pretrained, "backbone checkpoint")->required();
  cmp->add_option("--seeds", seeds)->delimiter(',')->capture_default_str();
  cmp->add_option("--strategies", strategies)->delimiter(',')->capture_default_str();
  cmp->add_flag("--tau-sweep", sweep, "evp1 rows over --taus instead of strategies");
  cmp->add_option("--taus", taus)->delimiter(',')->check(CLI::Range(0.0, 1.0))->capture_default_str();
  cmp->add_option("--out", out, "report JSON (timings go to <out>.timing.json)");
  cmp->add_option("--checkpoints", ckpt_dir, "directory for per-run model checkpoints");
  ov.add_to(cmp);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*synth) return cmd_synth(task, n, size, seed, stride, out);
    if (*pre) return cmd_pretrain(config, data, pc, out, history);
    if (*tr) return cmd_train(config, ov, data, pretrained, out);
    if (*pr) return cmd_predict(config, ov, data, ckpt, split, out, pgm);
    if (*ev) return cmd_eval(pred_dir, gt_dir, out);
    if (*hfc) return cmd_hfc(in, tau, out_hfc, out_lfc);
    if (*ms) return cmd_mask_stats(h, w, tau);
    if (*pa) return cmd_params(config, ov, out);
    if (*gc) return cmd_gradcheck(only, threshold);
    if (*cmp) return cmd_compare(config, ov, data, pretrained, seeds, strategies, sweep, taus, out, ckpt_dir);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
