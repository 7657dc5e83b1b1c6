#pragma once

// Strategy comparison: every strategy starts from the same pretrained
// backbone, trains on the same dataset with the same budget for each seed,
// and is scored on the test split. Rows report per-seed results and medians.
//
// The report JSON is a pure function of the inputs (no timings, no paths);
// wall times go to a separate timing document.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "evp/dataset.hpp"
#include "evp/io.hpp"
#include "evp/metrics.hpp"
#include "evp/model.hpp"
#include "evp/training.hpp"

namespace evp {

struct RowSpec {
  std::string label;
  Strategy strategy = Strategy::decoder;
  std::optional<double> tau;  // overrides the base prompt τ
};

struct CompareConfig {
  ModelConfig model;  // shared backbone / decoder / prompt settings
  TrainConfig train;  // shared budget; the strategy field is ignored
  std::vector<RowSpec> rows;
  std::vector<std::uint64_t> seeds;
  std::size_t threads = 1;
};

struct SeedRun {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  MetricsReport test;  // mean over the test split
  double final_loss = 0;
  std::uint64_t model_checksum = 0;  // every tensor of the trained model
  double seconds = 0;
};

struct CompareRow {
  RowSpec spec;
  ParamCount params;
  std::vector<SeedRun> runs;  // in seed order
  bool ok() const;
  MetricsReport median() const;  // per-metric median over successful runs
};

struct CompareReport {
  std::string task;
  std::uint64_t pretrained_checksum = 0;
  std::size_t train_samples = 0, test_samples = 0;
  TrainConfig train;
  std::vector<CompareRow> rows;
};

/// One row per strategy, labelled by the strategy name.
std::vector<RowSpec> strategy_rows(const std::vector<Strategy>& strategies);
/// evp1 rows at each τ, labelled "tau=<value>".
std::vector<RowSpec> tau_rows(const std::vector<double>& taus);

using RunHook = std::function<void(const RowSpec&, const SeedRun&, const Segmenter&)>;

/// Trains every (row, seed) pair. A failing run marks its row failed and the
/// rest continue. Runs are spread over `config.threads` workers; results do
/// not depend on the thread count. `on_run` is called under a lock.
CompareReport compare(const CompareConfig& config, const NamedTensors& pretrained, const Dataset& data,
                      const RunHook& on_run = {});

std::string report_json(const CompareReport& report);
std::string timing_json(const CompareReport& report);
/// Aligned text table: one line per row with parameter share and medians.
std::string format_table(const CompareReport& report);

/// EVP_THREADS if set and positive, else 1.
std::size_t threads_from_env();

}  // namespace evp
