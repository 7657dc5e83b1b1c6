#include "evp/compare.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <mutex>
#include <stdexcept>
#include <thread>

#include <json.hpp>

namespace evp {

namespace {

using ojson = nlohmann::ordered_json;

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

ojson metrics_json(const MetricsReport& m) {
  ojson j;
  j["mae"] = m.mae;
  j["f_beta_max"] = m.f_beta_max;
  j["f_beta_weighted"] = m.f_beta_weighted;
  j["f1"] = m.f1;
  j["auc"] = m.auc;
  j["ber"] = m.ber;
  j["s_measure"] = m.s_measure;
  j["e_measure"] = m.e_measure;
  j["iou"] = m.iou;
  return j;
}

SeedRun run_one(const CompareConfig& config, const RowSpec& row, std::uint64_t seed, const NamedTensors& pretrained,
                const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                const std::vector<Sample>& test_set, const RunHook& on_run, std::mutex& hook_mutex) {
  SeedRun run;
  run.seed = seed;
  const auto start = std::chrono::steady_clock::now();
  try {
    TrainConfig tc = config.train;
    tc.strategy = row.strategy;
    tc.seed = seed;
    ModelConfig mc = config.model;
    if (row.tau) mc.prompt.tau = *row.tau;
    mc = model_for(mc, tc);
    Segmenter model(mc, seed);
    model.store().load(pretrained, "backbone.");
    const TrainResult tr = train(model, train_set, val_set, tc);
    run.final_loss = tr.history.empty() ? 0.0 : tr.history.back().loss;

    const auto probs = predict(model, test_set);
    std::vector<MetricsReport> per;
    for (std::size_t i = 0; i < test_set.size(); ++i) {
      per.push_back(evaluate(Map::from_tensor(probs[i]), Map::from_tensor(test_set[i].mask)));
    }
    run.test = mean_report(per);
    run.model_checksum = model.store().checksum();
    run.ok = true;
    if (on_run) {
      std::lock_guard lock(hook_mutex);
      run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      on_run(row, run, model);
    }
  } catch (const std::exception& e) {
    run.ok = false;
    run.error = e.what();
  }
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return run;
}

}  // namespace

bool CompareRow::ok() const {
  return !runs.empty() && std::all_of(runs.begin(), runs.end(), [](const SeedRun& r) { return r.ok; });
}

MetricsReport CompareRow::median() const {
  auto pick = [&](double MetricsReport::*field) {
    std::vector<double> v;
    for (const auto& r : runs)
      if (r.ok) v.push_back(r.test.*field);
    return median_of(v);
  };
  MetricsReport m;
  m.mae = pick(&MetricsReport::mae);
  m.f_beta_max = pick(&MetricsReport::f_beta_max);
  m.f_beta_weighted = pick(&MetricsReport::f_beta_weighted);
  m.f1 = pick(&MetricsReport::f1);
  m.auc = pick(&MetricsReport::auc);
  m.ber = pick(&MetricsReport::ber);
  m.s_measure = pick(&MetricsReport::s_measure);
  m.e_measure = pick(&MetricsReport::e_measure);
  m.iou = pick(&MetricsReport::iou);
  return m;
}

std::vector<RowSpec> strategy_rows(const std::vector<Strategy>& strategies) {
  std::vector<RowSpec> rows;
  for (Strategy s : strategies) rows.push_back({strategy_name(s), s, std::nullopt});
  return rows;
}

std::vector<RowSpec> tau_rows(const std::vector<double>& taus) {
  std::vector<RowSpec> rows;
  for (double t : taus) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "tau=%g", t);
    rows.push_back({buf, Strategy::evp1, t});
  }
  return rows;
}

std::size_t threads_from_env() {
  if (const char* v = std::getenv("EVP_THREADS")) {
    const long n = std::strtol(v, nullptr, 10);
    if (n > 0) return std::size_t(n);
  }
  return 1;
}

CompareReport compare(const CompareConfig& config, const NamedTensors& pretrained, const Dataset& data,
                      const RunHook& on_run) {
  if (config.seeds.empty()) throw std::invalid_argument("compare: at least one seed is required");
  if (config.rows.empty()) throw std::invalid_argument("compare: no rows");
  const auto train_set = data.split("train");
  const auto val_set = data.split("val");
  const auto test_set = data.split("test");
  if (train_set.empty() || test_set.empty()) throw std::invalid_argument("compare: dataset needs train and test samples");

  CompareReport report;
  report.task = data.task;
  report.pretrained_checksum = checksum(pretrained);
  report.train_samples = train_set.size();
  report.test_samples = test_set.size();
  report.train = config.train;

  for (const RowSpec& spec : config.rows) {
    CompareRow row;
    row.spec = spec;
    TrainConfig tc = config.train;
    tc.strategy = spec.strategy;
    // A row whose config cannot even be described is left with zero counts;
    // its runs fail on their own below.
    try {
      const ParamSpecs specs = Segmenter::specs(model_for(config.model, tc));
      row.params = count_params(specs, partition(spec.strategy, specs));
    } catch (const std::exception&) {
    }
    row.runs.resize(config.seeds.size());
    report.rows.push_back(std::move(row));
  }

  const std::size_t jobs = report.rows.size() * config.seeds.size();
  std::atomic<std::size_t> next{0};
  std::mutex hook_mutex;
  auto worker = [&] {
    for (std::size_t j; (j = next.fetch_add(1)) < jobs;) {
      const std::size_t r = j / config.seeds.size(), s = j % config.seeds.size();
      report.rows[r].runs[s] = run_one(config, report.rows[r].spec, config.seeds[s], pretrained, train_set, val_set,
                                       test_set, on_run, hook_mutex);
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(config.threads, 1, jobs);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return report;
}

std::string report_json(const CompareReport& report) {
  ojson j;
  j["task"] = report.task;
  j["pretrained_checksum"] = hex64(report.pretrained_checksum);
  j["train_samples"] = report.train_samples;
  j["test_samples"] = report.test_samples;
  j["budget"] = {{"steps", report.train.steps},
                 {"epochs", report.train.epochs},
                 {"batch_size", report.train.batch_size},
                 {"lr", report.train.lr},
                 {"loss", loss_name(report.train.loss)}};
  ojson rows = ojson::array();
  for (const auto& row : report.rows) {
    ojson r;
    r["label"] = row.spec.label;
    r["strategy"] = strategy_name(row.spec.strategy);
    if (row.spec.tau) r["tau"] = *row.spec.tau;
    r["params"] = {{"total", row.params.total},
                   {"tunable", row.params.tunable},
                   {"tunable_fraction", row.params.tunable_fraction}};
    r["ok"] = row.ok();
    r["median"] = metrics_json(row.median());
    ojson runs = ojson::array();
    for (const auto& run : row.runs) {
      ojson x;
      x["seed"] = run.seed;
      x["ok"] = run.ok;
      if (run.ok) {
        x["final_loss"] = run.final_loss;
        x["model_checksum"] = hex64(run.model_checksum);
        x["test"] = metrics_json(run.test);
      } else {
        x["error"] = run.error;
      }
      runs.push_back(std::move(x));
    }
    r["runs"] = std::move(runs);
    rows.push_back(std::move(r));
  }
  j["rows"] = std::move(rows);
  return j.dump(2) + "\n";
}

std::string timing_json(const CompareReport& report) {
  ojson j = ojson::array();
  for (const auto& row : report.rows) {
    for (const auto& run : row.runs) j.push_back({{"label", row.spec.label}, {"seed", run.seed}, {"seconds", run.seconds}});
  }
  return j.dump(2) + "\n";
}

std::string format_table(const CompareReport& report) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-12s %10s %8s %7s %7s %7s %7s %7s %7s %7s %7s %7s\n", "row", "tunable", "share",
                "IoU", "F1", "maxF", "wF", "AUC", "BER", "S", "E", "MAE");
  out += line;
  for (const auto& row : report.rows) {
    if (!row.ok()) {
      std::string err;
      for (const auto& r : row.runs)
        if (!r.ok) err = r.error;
      std::snprintf(line, sizeof line, "%-12s FAILED: %s\n", row.spec.label.c_str(), err.c_str());
      out += line;
      continue;
    }
    const MetricsReport m = row.median();
    std::snprintf(line, sizeof line, "%-12s %10zu %7.2f%% %7.4f %7.4f %7.4f %7.4f %7.4f %7.2f %7.4f %7.4f %7.4f\n",
                  row.spec.label.c_str(), row.params.tunable, 100.0 * row.params.tunable_fraction, m.iou, m.f1,
                  m.f_beta_max, m.f_beta_weighted, m.auc, m.ber, m.s_measure, m.e_measure, m.mae);
    out += line;
  }
  return out;
}

}  // namespace evp
