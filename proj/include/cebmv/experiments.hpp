// Copyright 2026 The cebmv Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "cebmv/config.hpp"
#include "cebmv/evaluation.hpp"
#include "cebmv/training.hpp"

namespace cebmv {

struct RunOutcome {
  TrainResult train;
  ProbeResult probe;
  LinearProbe probe_model;
  /// False when the features were non-finite and no probe could be fit.
  bool probed = false;
};

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

/// Trains under cfg.train, then probes h at cfg.eval.label_fraction.
inline RunOutcome train_and_probe(const RunConfig& cfg, const SplitDataset& data,
                                  const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
  RunOutcome out{train(cfg.train, cfg.data, data.train, on_epoch), {}, {}, false};
  const Matrix train_f = extract_features(out.train.stack, data.train);
  const Matrix test_f = extract_features(out.train.stack, data.test);
  if (all_finite(train_f) && all_finite(test_f)) {
    auto p = linear_probe(train_f, data.train.labels, test_f, data.test.labels, cfg.data.n_classes,
                          cfg.eval.label_fraction, cfg.eval.seed, cfg.eval.probe);
    out.probe = p.result;
    out.probe_model = std::move(p.probe);
    out.probed = true;
  } else {
    out.probe.top1 = out.probe.brier = std::numeric_limits<double>::quiet_NaN();
    out.probe.label_fraction = cfg.eval.label_fraction;
  }
  return out;
}

/// `base` with one axis set to `value`.
inline RunConfig with_axis(RunConfig base, SweepAxis axis, double value) {
  switch (axis) {
    case SweepAxis::kBeta: base.train.loss.beta = value; break;
    case SweepAxis::kAreaLowerBound: base.train.augment.area_lower_bound = value; break;
    case SweepAxis::kKappaE: base.train.loss.kappa_e = value; break;
    case SweepAxis::kKappaB: base.train.loss.kappa_b = value; break;
  }
  base.validate();
  return base;
}

struct SweepRow {
  double axis_value = 0.0;
  std::uint64_t seed = 0;
  double top1 = 0.0;
  double brier = 0.0;
  bool collapsed = false;
};

struct SweepSummary {
  double value = 0.0;
  double top1_mean = 0.0;
  double top1_std = 0.0;
  double brier_mean = 0.0;
  double brier_std = 0.0;
  int runs = 0;
  int collapsed = 0;
};

/// Mean and sample standard deviation of the finite entries.
inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  double m = 0.0;
  int n = 0;
  for (double x : v)
    if (std::isfinite(x)) m += x, ++n;
  if (n == 0) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  m /= n;
  double s = 0.0;
  for (double x : v)
    if (std::isfinite(x)) s += (x - m) * (x - m);
  return {m, n > 1 ? std::sqrt(s / (n - 1)) : 0.0};
}

inline std::vector<SweepSummary> summarize_sweep(const std::vector<SweepRow>& rows) {
  std::vector<double> order;
  std::map<double, std::vector<const SweepRow*>> by_value;
  for (const auto& r : rows) {
    if (!by_value.count(r.axis_value)) order.push_back(r.axis_value);
    by_value[r.axis_value].push_back(&r);
  }
  std::vector<SweepSummary> out;
  for (double v : order) {
    std::vector<double> top1, brier;
    SweepSummary s;
    s.value = v;
    for (const SweepRow* r : by_value[v]) {
      top1.push_back(r->top1);
      brier.push_back(r->brier);
      s.collapsed += r->collapsed ? 1 : 0;
    }
    s.runs = static_cast<int>(top1.size());
    std::tie(s.top1_mean, s.top1_std) = mean_std(top1);
    std::tie(s.brier_mean, s.brier_std) = mean_std(brier);
    out.push_back(s);
  }
  return out;
}

inline std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string sweep_csv(const std::string& axis, const std::vector<SweepRow>& rows) {
  std::string out = "axis,axis_value,seed,top1,brier,collapsed\n";
  for (const auto& r : rows) {
    out += axis + "," + fmt_g(r.axis_value) + "," + std::to_string(r.seed) + "," + fmt_g(r.top1) + "," +
           fmt_g(r.brier) + "," + (r.collapsed ? "1" : "0") + "\n";
  }
  return out;
}

inline std::string sweep_markdown(const std::string& axis, const std::vector<SweepSummary>& summary) {
  std::string out = "| " + axis + " | top1 mean | top1 std | brier mean | brier std | runs | collapsed |\n";
  out += "|---|---|---|---|---|---|---|\n";
  char buf[256];
  for (const auto& s : summary) {
    std::snprintf(buf, sizeof buf, "| %g | %.4f | %.4f | %.4f | %.4f | %d | %d |\n", s.value, s.top1_mean, s.top1_std,
                  s.brier_mean, s.brier_std, s.runs, s.collapsed);
    out += buf;
  }
  return out;
}

/// Trains and probes every (value, seed) cell. Seeds train.seed + k are shared
/// across values, so comparisons between values are paired. Each finished
/// cell is persisted immediately (its resolved config and result under
/// rows/, plus the CSV so far), so a failure keeps completed rows.
inline std::vector<SweepRow> run_sweep(const RunConfig& base, const SplitDataset& data,
                                       const std::filesystem::path& out_dir, bool force,
                                       const std::function<void(const SweepRow&)>& on_row = {}) {
  base.validate();
  const std::string axis = to_string(base.sweep.axis);
  const auto csv_path = out_dir / "sweep.csv";
  const auto md_path = out_dir / "sweep_summary.md";
  check_writable(csv_path, force);
  check_writable(md_path, force);
  std::vector<SweepRow> rows;
  for (double value : base.sweep.values) {
    for (int k = 0; k < base.sweep.n_seeds; ++k) {
      RunConfig cfg = with_axis(base, base.sweep.axis, value);
      cfg.train.seed = base.train.seed + static_cast<std::uint64_t>(k);
      const RunOutcome o = train_and_probe(cfg, data);
      SweepRow row{value, cfg.train.seed, o.probe.top1, o.probe.brier, o.train.collapse.has_value()};
      rows.push_back(row);

      // out_dir is a location, not part of the run; omitting it keeps rows
      // byte-identical when a sweep is reproduced elsewhere.
      Json cell = to_json(cfg);
      cell.erase("out_dir");
      Json record{{"config", std::move(cell)},
                  {"result",
                   {{"axis", axis},
                    {"axis_value", value},
                    {"seed", cfg.train.seed},
                    {"top1", std::isfinite(row.top1) ? Json(row.top1) : Json(nullptr)},
                    {"brier", std::isfinite(row.brier) ? Json(row.brier) : Json(nullptr)},
                    {"collapse", o.train.collapse ? collapse_to_json(*o.train.collapse) : Json(nullptr)}}}};
      const auto row_path = out_dir / "rows" / (axis + "_" + fmt_g(value) + "_seed" + std::to_string(cfg.train.seed) + ".json");
      check_writable(row_path, force);
      write_text_file(row_path, dump_pretty(record));
      write_text_file(csv_path, sweep_csv(axis, rows));
      if (on_row) on_row(row);
    }
  }
  write_text_file(md_path, sweep_markdown(axis, summarize_sweep(rows)));
  return rows;
}

}  // namespace cebmv
