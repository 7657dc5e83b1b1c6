// Acceptance runner: one PASS/FAIL line per criterion, tolerances fixed here.
//
//   evp-acceptance --criteria 1,2,3      run a subset
//   evp-acceptance --work DIR            where reports and checkpoints go
//
// Criteria 9-11 share one set of training runs: the τ sweep reuses the
// τ = 0.25 evp1 runs of the A/B, and the determinism check repeats seed 1.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "evp/compare.hpp"
#include "evp/fft.hpp"
#include "evp/frequency.hpp"
#include "evp/gradsuite.hpp"
#include "evp/metrics.hpp"
#include "evp/model.hpp"
#include "evp/pretrain.hpp"
#include "evp/rng.hpp"
#include "evp/synth.hpp"
#include "evp/training.hpp"
#include "support/metric_oracles.hpp"

using namespace evp;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Tensor random_tensor(Rng& rng, Shape shape, DType dtype) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = rng.uniform();
  return Tensor::from_values(std::move(shape), v, dtype);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  const auto x = a.to_doubles(), y = b.to_doubles();
  double m = 0;
  for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
  return m;
}

// ---------------------------------------------------------------------------

Verdict fft_round_trip() {
  const auto t0 = Clock::now();
  Rng rng(101);
  double e32 = 0, e64 = 0;
  for (int i = 0; i < 20; ++i) {
    const Tensor x = random_tensor(rng, {3, 64, 64}, DType::f32);
    e32 = std::max(e32, max_abs_diff(ifft2(fft2(x)), x));
    const Tensor y = random_tensor(rng, {3, 64, 64}, DType::f64);
    e64 = std::max(e64, max_abs_diff(ifft2(fft2(y)), y));
  }
  const double t = seconds_since(t0);
  return {e32 < 1e-5 && e64 < 1e-10 && t < 5.0,
          fmt("max err f32 %.2e (< 1e-5), f64 %.2e (< 1e-10), %.2f s (< 5 s)", e32, e64, t)};
}

Verdict mask_analytics() {
  bool ok = true;
  std::string d;
  for (double tau : {0.1, 0.25, 0.5}) {
    const FrequencyMask m = make_hfc_mask(256, 256, tau);
    // brute-force count straight from the definition
    std::size_t zeros = 0;
    for (long i = 0; i < 256; ++i)
      for (long j = 0; j < 256; ++j) zeros += 4.0L * std::abs(i - 128) * std::abs(j - 128) <= (long double)tau * 65536;
    const double frac = double(zeros) / 65536.0, gap = std::abs(frac - analytic_zero_fraction(tau));
    ok = ok && m.zero_fraction() == frac && gap <= 0.02;
    d += fmt("τ=%.2f zero %.4f vs %.4f; ", tau, frac, analytic_zero_fraction(tau));
  }
  const bool all_zero = make_hfc_mask(256, 256, 1.0).zero_fraction() == 1.0;
  bool monotone = true;
  FrequencyMask prev = make_hfc_mask(256, 256, 0.0);
  for (int k = 1; k <= 50; ++k) {
    const FrequencyMask next = make_hfc_mask(256, 256, k / 50.0);
    for (std::size_t i = 0; i < next.bits.size(); ++i) monotone = monotone && next.bits[i] <= prev.bits[i];
    prev = next;
  }
  return {ok && all_zero && monotone,
          d + fmt("M(1) all zero: %s; monotone in τ: %s", all_zero ? "yes" : "no", monotone ? "yes" : "no")};
}

Verdict spectrum_partition() {
  Rng rng(303);
  double err = 0;
  for (int i = 0; i < 5; ++i) {
    const Tensor img = random_tensor(rng, {3, 64, 64}, DType::f32);
    const FrequencyDecomposition d = extract_hfc(img, 0.25);
    err = std::max(err, max_abs_diff(add(d.hfc, d.lfc), img));
  }
  const FrequencyDecomposition c = extract_hfc(Tensor::full({3, 64, 64}, 0.37f), 0.25);
  double hmax = 0;
  for (double v : c.hfc.to_doubles()) hmax = std::max(hmax, std::abs(v));
  return {err <= 1e-5 && hmax <= 1e-6,
          fmt("reconstruction err %.2e (≤ 1e-5); constant image max |hfc| %.2e (≤ 1e-6)", err, hmax)};
}

Verdict gradient_suite_check() {
  const auto t0 = Clock::now();
  double worst = 0;
  std::string worst_name, failures;
  for (const auto& c : gradient_suite()) {
    try {
      const GradCheckResult r = c.run();
      if (r.max_rel_error > worst) worst = r.max_rel_error, worst_name = c.name;
      if (!(r.max_rel_error < 1e-6)) failures += " " + c.name;
    } catch (const std::exception& e) {
      failures += " " + c.name + "(" + e.what() + ")";
    }
  }
  const double t = seconds_since(t0);
  return {failures.empty() && t < 120,
          fmt("%zu cases, worst %.2e in %s (< 1e-6), %.1f s (< 120 s)", gradient_suite().size(), worst,
              worst_name.c_str(), t) +
              (failures.empty() ? "" : "; failing:" + failures)};
}

RunConfig desk_config() { return load_run_config(fs::path(EVP_CONFIG_DIR) / "desk_plain.json"); }

Verdict freeze_contract() {
  const RunConfig rc = desk_config();
  const Dataset ds = synth_dataset(Task::texture, {64, 8, 0}, 64, 17);
  PretrainConfig pc;
  pc.steps = 20;
  const NamedTensors pre = pretrain(rc.model.backbone, ds.split("train"), pc).backbone;
  const std::uint64_t want = checksum(pre);
  bool ok = true;
  std::string d;
  for (Strategy s : {Strategy::decoder, Strategy::vpt, Strategy::evp1, Strategy::evp2}) {
    TrainConfig tc = rc.train;
    tc.strategy = s;
    tc.steps = 100;
    Segmenter m(model_for(rc.model, tc), 1);
    m.store().load(pre, "backbone.");
    train(m, ds.split("train"), ds.split("val"), tc);
    const std::uint64_t got = checksum(m.store().snapshot("backbone."));
    ok = ok && got == want;
    d += strategy_name(s) + (got == want ? " identical; " : " CHANGED; ");
  }
  return {ok, d + "checkpoint " + hex64(want)};
}

Verdict safe_init() {
  bool ok = true;
  std::string d;
  const Dataset ds = synth_dataset(Task::texture, {4, 0, 0}, 64, 23);
  std::vector<const Tensor*> imgs;
  std::vector<Tensor> hfcs;
  for (const auto& s : ds.samples) imgs.push_back(&s.image);
  for (const char* preset : {"plain", "hierarchical"}) {
    for (Strategy s : {Strategy::evp1, Strategy::evp2}) {
      RunConfig rc = parse_run_config(std::string(R"({"backbone": ")") + preset + "\"}");
      TrainConfig tc = rc.train;
      tc.strategy = s;
      const Segmenter m(model_for(rc.model, tc), 3);
      const Tensor images = stack_images(imgs);
      Tensor hfc;
      if (m.needs_hfc()) {
        hfcs.clear();
        for (const auto& x : ds.samples) hfcs.push_back(high_frequency(x.image, m.config().prompt.tau));
        std::vector<const Tensor*> hp;
        for (const auto& h : hfcs) hp.push_back(&h);
        hfc = stack_images(hp);
      }
      const bool same = checksum(m.forward(images, hfc)) == checksum(m.forward_frozen_baseline(images));
      ok = ok && same;
      d += std::string(preset) + "/" + strategy_name(s) + (same ? " bit-identical; " : " DIFFERS; ");
    }
  }
  return {ok, d};
}

Verdict parameter_accounting() {
  ModelConfig mc;
  mc.backbone = BackboneConfig::b4();
  mc.prompt.variant = PromptVariant::v1;
  mc.prompt.r = 4;
  const double v1 = double(count_prefix(Segmenter::specs(mc), "prompt."));
  mc.prompt.variant = PromptVariant::v2;
  mc.prompt.r = 16;
  mc.prompt.fourier_mode = FourierMode::reduced;
  const double v2 = double(count_prefix(Segmenter::specs(mc), "prompt."));
  const double d1 = v1 / 0.55e6 - 1, d2 = v2 / 0.53e6 - 1;
  return {std::abs(d1) <= 0.10 && std::abs(d2) <= 0.20,
          fmt("EVPv1 r=4: %.0f (%+.1f%% of 0.55M, ±10%%); EVPv2 r=16 reduced-dim: %.0f (%+.1f%% of 0.53M, ±20%%)", v1,
              100 * d1, v2, 100 * d2)};
}

Verdict metric_oracles() {
  Rng rng(808);
  double worst = 0;
  for (int n = 0; n < 50; ++n) {
    Map gt{8, 8, std::vector<double>(64)}, pred{8, 8, std::vector<double>(64)};
    for (std::size_t k = 0; k < 64; ++k) {
      gt.v[k] = rng.coin(0.35) ? 1.0 : 0.0;
      pred.v[k] = rng.coin(0.3) ? std::round(rng.uniform() * 255) / 255 : rng.uniform();
    }
    const auto P = oracle::to_grid(pred.v, 8, 8), G = oracle::to_grid(gt.v, 8, 8);
    const MetricsReport r = evaluate(pred, gt);
    for (double e : {r.mae - oracle::mae(P, G), r.f_beta_max - oracle::max_f(P, G),
                     r.f_beta_weighted - oracle::weighted_f(P, G), r.f1 - oracle::f1(P, G), r.auc - oracle::auc(P, G),
                     r.ber - oracle::ber(P, G), r.s_measure - oracle::s_measure(P, G),
                     r.e_measure - oracle::e_measure(P, G), r.iou - oracle::iou(P, G)})
      worst = std::max(worst, std::abs(e));
  }
  Map gt{8, 8, std::vector<double>(64)};
  for (std::size_t k = 0; k < 64; ++k) gt.v[k] = (k % 8 > 2 && k / 8 > 2 && k % 8 < 6 && k / 8 < 6) ? 1.0 : 0.0;
  Map inv = gt;
  for (double& v : inv.v) v = 1 - v;
  const bool forced = f1_score(gt, gt) == 1.0 && ber(gt, gt) == 0.0 && ber(inv, gt) == 100.0;
  return {worst <= 1e-9 && forced,
          fmt("max |metric − oracle| %.2e over 50 pairs (≤ 1e-9); identity F1=%g BER=%g, inversion BER=%g", worst,
              f1_score(gt, gt), ber(gt, gt), ber(inv, gt))};
}

// ---------------------------------------------------------------------------
// Desk-scale A/B

struct AbSetup {
  RunConfig rc;
  Dataset texture;
  Dataset pretext;
  PretrainConfig pretrain;
  std::vector<std::uint64_t> seeds{1, 2, 3};
};

AbSetup ab_setup() {
  AbSetup s;
  s.rc = desk_config();
  s.texture = synth_dataset(Task::texture, {500, 50, 100}, 64, 7);
  // The backbone is pretrained on a different task, unlabeled.
  s.pretext = synth_dataset(Task::shade, {400, 0, 0}, 64, 99);
  s.pretrain.steps = 300;
  s.pretrain.batch_size = 8;
  s.pretrain.lr = 1e-3;
  s.pretrain.noise = 0.2;
  s.pretrain.seed = 1;
  return s;
}

CompareConfig ab_compare(const AbSetup& s, std::vector<RowSpec> rows, std::vector<std::uint64_t> seeds) {
  CompareConfig cc;
  cc.model = s.rc.model;
  cc.train = s.rc.train;
  cc.rows = std::move(rows);
  cc.seeds = std::move(seeds);
  cc.threads = threads_from_env();
  return cc;
}

const CompareRow* find_row(const CompareReport& r, const std::string& label) {
  for (const auto& row : r.rows)
    if (row.spec.label == label) return &row;
  return nullptr;
}

// Same report restricted to one seed.
CompareReport only_seed(CompareReport r, std::uint64_t seed) {
  for (auto& row : r.rows) {
    std::vector<SeedRun> keep;
    for (const auto& run : row.runs)
      if (run.seed == seed) keep.push_back(run);
    row.runs = keep;
  }
  return r;
}

struct AbOutcome {
  std::map<int, Verdict> verdicts;
};

AbOutcome desk_ab(const std::set<int>& wanted, const fs::path& work) {
  AbOutcome out;
  const AbSetup s = ab_setup();
  fs::create_directories(work);
  const auto t0 = Clock::now();
  const NamedTensors pre = pretrain(s.rc.model.backbone, s.pretext.split("train"), s.pretrain).backbone;

  // Every trained model is kept so the repeat can be compared byte for byte.
  auto saver = [&](const std::string& tag) {
    return [&work, tag](const RowSpec& row, const SeedRun& run, const Segmenter& model) {
      save_checkpoint(work / (tag + "-" + row.label + "-seed" + std::to_string(run.seed) + ".evpc"),
                      model.store().snapshot());
    };
  };
  const std::vector<RowSpec> ab_rows =
      strategy_rows({Strategy::decoder, Strategy::evp1, Strategy::evp2, Strategy::full});
  const CompareReport ab = compare(ab_compare(s, ab_rows, s.seeds), pre, s.texture, saver("first"));
  const double ab_seconds = seconds_since(t0);
  write_text(work / "ab_report.json", report_json(ab));
  write_text(work / "ab_timing.json", timing_json(ab));
  write_text(work / "ab_table.txt", format_table(ab));
  std::printf("%s", format_table(ab).c_str());

  {
    const CompareRow *dec = find_row(ab, "decoder"), *e1 = find_row(ab, "evp1"), *e2 = find_row(ab, "evp2"),
                     *full = find_row(ab, "full");
    const bool rows_ok = dec->ok() && e1->ok() && e2->ok();
    const double d = dec->median().iou, m1 = e1->median().iou, m2 = e2->median().iou;
    std::string per_seed;
    for (std::size_t i = 0; i < s.seeds.size(); ++i)
      per_seed += fmt(" seed %llu: dec %.3f evp1 %.3f evp2 %.3f;", (unsigned long long)s.seeds[i], dec->runs[i].test.iou,
                      e1->runs[i].test.iou, e2->runs[i].test.iou);
    out.verdicts[9] = {rows_ok && m2 >= d + 0.03 && m1 >= d + 0.02 && ab_seconds < 45 * 60,
                       fmt("median IoU decoder %.4f, evp2 %.4f (%+.4f, need ≥ +0.03), evp1 %.4f (%+.4f, need ≥ +0.02), "
                           "full %.4f (reference); %.1f min incl. pretraining (< 45 min, %zu thread(s));",
                           d, m2, m2 - d, m1, m1 - d, full->ok() ? full->median().iou : 0.0, ab_seconds / 60,
                           threads_from_env()) +
                           per_seed};
  }

  if (wanted.count(10)) {
    // τ = 0.25 equals the desk config's τ, so those runs are the A/B's evp1 runs.
    const CompareReport rest = compare(ab_compare(s, tau_rows({0.1, 0.5, 0.9}), s.seeds), pre, s.texture);
    CompareReport sweep = rest;
    sweep.rows.clear();
    CompareRow quarter = *find_row(ab, "evp1");
    quarter.spec = tau_rows({0.25})[0];
    sweep.rows = {rest.rows[0], quarter, rest.rows[1], rest.rows[2]};
    write_text(work / "tau_sweep_report.json", report_json(sweep));
    write_text(work / "tau_sweep_table.txt", format_table(sweep));
    std::printf("%s", format_table(sweep).c_str());
    const CompareRow& q = sweep.rows[1];
    const CompareRow& hi = sweep.rows[3];
    int wins = 0;
    std::string per_seed;
    for (std::size_t i = 0; i < s.seeds.size(); ++i) {
      const bool win = q.runs[i].ok && hi.runs[i].ok && q.runs[i].test.iou >= hi.runs[i].test.iou;
      wins += win;
      per_seed += fmt(" seed %llu: %.3f vs %.3f;", (unsigned long long)s.seeds[i], q.runs[i].test.iou, hi.runs[i].test.iou);
    }
    bool all_ok = true;
    for (const auto& row : sweep.rows) all_ok = all_ok && row.ok();
    out.verdicts[10] = {all_ok && wins >= 2,
                        fmt("τ sweep {0.1, 0.25, 0.5, 0.9} median IoU %.4f %.4f %.4f %.4f; τ=0.25 ≥ τ=0.9 in %d of 3 "
                            "seeds (need ≥ 2);",
                            sweep.rows[0].median().iou, sweep.rows[1].median().iou, sweep.rows[2].median().iou,
                            sweep.rows[3].median().iou, wins) +
                            per_seed};
  }

  if (wanted.count(11)) {
    const NamedTensors pre2 = pretrain(s.rc.model.backbone, s.pretext.split("train"), s.pretrain).backbone;
    const CompareReport again = compare(ab_compare(s, ab_rows, {1}), pre2, s.texture, saver("second"));
    bool same_ckpt = checksum(pre2) == checksum(pre);
    std::string d = fmt("pretrained %s vs %s; ", hex64(checksum(pre)).c_str(), hex64(checksum(pre2)).c_str());
    for (const auto& row : ab_rows) {
      const std::string a = read_text(work / ("first-" + row.label + "-seed1.evpc"));
      const std::string b = read_text(work / ("second-" + row.label + "-seed1.evpc"));
      const bool same = !a.empty() && a == b;
      same_ckpt = same_ckpt && same;
      d += row.label + (same ? " identical; " : " DIFFERS; ");
    }
    const bool same_report = report_json(only_seed(ab, 1)) == report_json(again);
    write_text(work / "repeat_seed1_report.json", report_json(again));
    out.verdicts[11] = {same_ckpt && same_report, d + (same_report ? "reports identical" : "reports DIFFER")};
  }
  return out;
}

std::set<int> parse_list(const std::string& text) {
  std::set<int> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) out.insert(std::stoi(item));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string criteria = "1,2,3,4,5,6,7,8,9,10,11";
  std::string work = "acceptance-work";
  app.add_option("--criteria", criteria, "comma-separated criterion numbers");
  app.add_option("--work", work, "directory for reports and checkpoints");
  CLI11_PARSE(app, argc, argv);

  const std::set<int> wanted = parse_list(criteria);
  const std::map<int, std::pair<std::string, std::function<Verdict()>>> fast{
      {1, {"FFT round trip", fft_round_trip}},
      {2, {"mask analytics", mask_analytics}},
      {3, {"spectrum partition", spectrum_partition}},
      {4, {"gradient suite", gradient_suite_check}},
      {5, {"freeze contract", freeze_contract}},
      {6, {"safe init", safe_init}},
      {7, {"parameter accounting", parameter_accounting}},
      {8, {"metric oracles", metric_oracles}},
  };
  const std::map<int, std::string> slow_names{{9, "desk-scale A/B"}, {10, "tau sweep"}, {11, "determinism"}};

  int failed = 0;
  auto report = [&](int id, const std::string& name, const Verdict& v) {
    std::printf("%s criterion %d (%s): %s\n", v.pass ? "PASS" : "FAIL", id, name.c_str(), v.detail.c_str());
    std::fflush(stdout);
    failed += !v.pass;
  };
  for (const auto& [id, entry] : fast) {
    if (!wanted.count(id)) continue;
    try {
      report(id, entry.first, entry.second());
    } catch (const std::exception& e) {
      report(id, entry.first, {false, std::string("error: ") + e.what()});
    }
  }
  if (wanted.count(9) || wanted.count(10) || wanted.count(11)) {
    try {
      const AbOutcome ab = desk_ab(wanted, work);
      for (const auto& [id, name] : slow_names)
        if (wanted.count(id)) report(id, name, ab.verdicts.at(id));
    } catch (const std::exception& e) {
      for (const auto& [id, name] : slow_names)
        if (wanted.count(id)) report(id, name, {false, std::string("error: ") + e.what()});
    }
  }
  return failed == 0 ? 0 : 1;
}
