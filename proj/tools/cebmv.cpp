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

// cebmv command-line driver.
//
// Precedence: built-in defaults < --config file < flags. Every command writes
// resolved_config.json next to its outputs; re-running with that file alone
// reproduces the outputs byte for byte.
//
// Exit codes: 0 success, 1 I/O or other failure, 2 configuration error,
// 3 training collapse, 4 numeric failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "CLI11.hpp"

#include "cebmv/checkpoint.hpp"
#include "cebmv/config.hpp"
#include "cebmv/evaluation.hpp"
#include "cebmv/experiments.hpp"
#include "cebmv/lipschitz.hpp"
#include "cebmv/training.hpp"

namespace fs = std::filesystem;
using namespace cebmv;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kCollapse = 3, kNumeric = 4 };

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  bool force = false;
  std::optional<std::string> variant;
  std::optional<double> beta;
  std::optional<double> label_fraction;
  std::optional<std::string> data_dir;
  std::vector<std::string> checkpoints;
};

/// Config document with flags applied. `seed_key` names the seed --seed sets
/// for this command.
RunConfig resolve(const Options& o, const std::vector<std::string>& seed_key) {
  Json doc = o.config_path.empty() ? Json::object() : load_json_file(o.config_path);
  if (!doc.is_object()) throw ConfigError(o.config_path + ": top level must be a JSON object");
  auto section = [&](const std::string& name) -> Json& {
    Json& s = doc[name];
    if (s.is_null()) s = Json::object();
    if (!s.is_object()) throw ConfigError("'" + name + "' must be a JSON object");
    return s;
  };
  if (o.seed) {
    Json* node = &doc;
    for (std::size_t i = 0; i + 1 < seed_key.size(); ++i) node = &section(seed_key[i]);
    (*node)[seed_key.back()] = *o.seed;
  }
  if (o.variant || o.beta) {
    Json& train = section("train");
    Json& loss = train["loss"];
    if (loss.is_null()) loss = Json::object();
    if (!loss.is_object()) throw ConfigError("'train.loss' must be a JSON object");
    if (o.variant) loss["variant"] = *o.variant;
    if (o.beta) loss["beta"] = *o.beta;
  }
  if (o.label_fraction) section("eval")["label_fraction"] = *o.label_fraction;
  if (o.out) doc["out_dir"] = *o.out;
  if (o.data_dir) doc["data_dir"] = *o.data_dir;
  return parse_run_config(doc);
}

void write_resolved(const RunConfig& cfg, bool force) {
  const fs::path p = fs::path(cfg.out_dir) / "resolved_config.json";
  check_writable(p, force);
  write_text_file(p, dump_pretty(to_json(cfg)));
}

int cmd_gen_data(const Options& o) {
  RunConfig cfg = resolve(o, {"data", "seed"});
  if (cfg.data_dir) throw ConfigError("gen-data generates data; data_dir must not be set");
  const fs::path out(cfg.out_dir);
  for (const char* f : {"train.jsonl", "test.jsonl", "dataset.meta.json", "resolved_config.json"}) {
    check_writable(out / f, o.force);
  }
  const SplitDataset d = generate_dataset(cfg.data);
  write_text_file(out / "train.jsonl", dataset_to_jsonl(d.train));
  write_text_file(out / "test.jsonl", dataset_to_jsonl(d.test));
  write_text_file(out / "dataset.meta.json", dump_pretty(dataset_meta(cfg.data)));
  write_resolved(cfg, o.force);
  std::printf("wrote %d train and %d test records to %s\n", cfg.data.n_train, cfg.data.n_test, cfg.out_dir.c_str());
  return kOk;
}

int cmd_train(const Options& o) {
  RunConfig cfg = resolve(o, {"train", "seed"});
  const SplitDataset data = resolve_dataset(cfg);
  cfg.validate();
  const fs::path out(cfg.out_dir);
  for (const char* f : {"checkpoint.bin", "metrics.jsonl", "resolved_config.json"}) check_writable(out / f, o.force);

  std::string metrics;
  TrainResult r = train(cfg.train, cfg.data, data.train, [&](const EpochMetrics& m) {
    metrics += metrics_to_json(m, cfg.train.loss.variant).dump() + "\n";
    std::fprintf(stderr, "epoch %d loss %.6f\n", m.epoch, m.loss);
  });
  if (r.collapse) metrics += collapse_to_json(*r.collapse).dump() + "\n";
  write_text_file(out / "metrics.jsonl", metrics);
  // The output location is not part of the model; leaving it out keeps the
  // checkpoint identical wherever the run is written.
  Json embedded = to_json(cfg);
  embedded.erase("out_dir");
  save_checkpoint({std::move(r.stack), std::move(embedded)}, (out / "checkpoint.bin").string());
  write_resolved(cfg, o.force);
  if (r.collapse) {
    std::fprintf(stderr, "training collapsed at epoch %d step %lld: %s\n", r.collapse->epoch,
                 static_cast<long long>(r.collapse->step), r.collapse->reason.c_str());
    return kCollapse;
  }
  return kOk;
}

Checkpoint load_single(const Options& o) {
  if (o.checkpoints.size() != 1) throw ConfigError("exactly one --checkpoint is required");
  return load_checkpoint(o.checkpoints.front());
}

struct Probed {
  ProbeOutcome outcome;
  std::vector<double> train_std;
};

Probed fit_probe(EncoderStack& stack, const RunConfig& cfg, const SplitDataset& data) {
  if (stack.dims().input_dim != static_cast<std::size_t>(cfg.data.input_dim())) {
    throw ConfigError("checkpoint input dimension does not match the dataset");
  }
  const Matrix train_f = extract_features(stack, data.train);
  const Matrix test_f = extract_features(stack, data.test);
  if (!train_f.allFinite() || !test_f.allFinite()) throw NumericError("checkpoint produces non-finite features");
  return {linear_probe(train_f, data.train.labels, test_f, data.test.labels, cfg.data.n_classes,
                       cfg.eval.label_fraction, cfg.eval.seed, cfg.eval.probe),
          feature_std(data.train)};
}

int cmd_probe(const Options& o) {
  RunConfig cfg = resolve(o, {"eval", "seed"});
  Checkpoint ckpt = load_single(o);
  const SplitDataset data = resolve_dataset(cfg);
  const fs::path out(cfg.out_dir);
  for (const char* f : {"probe.json", "resolved_config.json"}) check_writable(out / f, o.force);
  const Probed p = fit_probe(ckpt.stack, cfg, data);
  Json result = probe_to_json(p.outcome.result);
  result["checkpoint_config_hash"] = ckpt.config_hash();
  write_text_file(out / "probe.json", dump_pretty(result));
  write_resolved(cfg, o.force);
  std::printf("top1 %.4f brier %.4f (label fraction %g)\n", p.outcome.result.top1, p.outcome.result.brier,
              cfg.eval.label_fraction);
  return kOk;
}

int cmd_robustness(const Options& o) {
  RunConfig cfg = resolve(o, {"eval", "seed"});
  Checkpoint ckpt = load_single(o);
  const SplitDataset data = resolve_dataset(cfg);
  const fs::path out(cfg.out_dir);
  for (const char* f : {"robustness.csv", "probe.json", "resolved_config.json"}) check_writable(out / f, o.force);
  const Probed p = fit_probe(ckpt.stack, cfg, data);
  std::vector<ShiftSuite> suites;
  for (ShiftFamily f : cfg.eval.families)
    for (int s : cfg.eval.severities) suites.push_back({f, s});
  const auto rows = robustness_eval(ckpt.stack, p.outcome.probe, data.test, cfg.data, p.train_std, suites, cfg.eval.seed);
  write_text_file(out / "robustness.csv", robustness_csv(rows));
  Json result = probe_to_json(p.outcome.result);
  result["checkpoint_config_hash"] = ckpt.config_hash();
  write_text_file(out / "probe.json", dump_pretty(result));
  write_resolved(cfg, o.force);
  return kOk;
}

int cmd_lipschitz(const Options& o) {
  RunConfig cfg = resolve(o, {"lipschitz", "seed"});
  if (o.checkpoints.empty() || o.checkpoints.size() > 2) throw ConfigError("lipschitz takes one or two --checkpoint");
  const SplitDataset data = resolve_dataset(cfg);
  const std::vector<double> train_std = feature_std(data.train);
  const fs::path out(cfg.out_dir);
  const bool paired = o.checkpoints.size() == 2;
  const std::vector<std::string> tags = paired ? std::vector<std::string>{"a", "b"} : std::vector<std::string>{""};
  std::vector<fs::path> files{out / "resolved_config.json"};
  for (const auto& t : tags) {
    const std::string suffix = t.empty() ? "" : "_" + t;
    files.push_back(out / ("smoothness" + suffix + ".csv"));
    files.push_back(out / ("smoothness_summary" + suffix + ".json"));
  }
  if (paired) files.push_back(out / "comparison.json");
  for (const auto& f : files) check_writable(f, o.force);

  std::vector<SmoothnessReport> reports;
  for (std::size_t i = 0; i < o.checkpoints.size(); ++i) {
    Checkpoint ckpt = load_checkpoint(o.checkpoints[i]);
    if (ckpt.stack.dims().input_dim != static_cast<std::size_t>(cfg.data.input_dim())) {
      throw ConfigError(o.checkpoints[i] + ": input dimension does not match the dataset");
    }
    reports.push_back(smoothness_report(ckpt.stack, data.test, cfg.data, train_std, cfg.lipschitz, cfg.lipschitz_seed));
    const std::string suffix = tags[i].empty() ? "" : "_" + tags[i];
    std::ostringstream csv;
    write_smoothness_csv(reports.back(), csv);
    write_text_file(out / ("smoothness" + suffix + ".csv"), csv.str());
    Json summary = smoothness_summary(reports.back());
    write_text_file(out / ("smoothness_summary" + suffix + ".json"), dump_pretty(summary));
  }
  if (paired) {
    Json cmp = comparison_summary(compare_reports(reports[0], reports[1]), "a", "b");
    cmp["checkpoint_a"] = o.checkpoints[0];
    cmp["checkpoint_b"] = o.checkpoints[1];
    write_text_file(out / "comparison.json", dump_pretty(cmp));
    std::printf("a <= b in %.0f%% of families\n", 100.0 * cmp["fraction_a_le_b"].get<double>());
  }
  write_resolved(cfg, o.force);
  return kOk;
}

int cmd_sweep(const Options& o) {
  RunConfig cfg = resolve(o, {"train", "seed"});
  const SplitDataset data = resolve_dataset(cfg);
  cfg.validate();
  write_resolved(cfg, o.force);
  run_sweep(cfg, data, fs::path(cfg.out_dir), o.force, [](const SweepRow& r) {
    std::fprintf(stderr, "value %g seed %llu top1 %.4f%s\n", r.axis_value, static_cast<unsigned long long>(r.seed),
                 r.top1, r.collapsed ? " (collapsed)" : "");
  });
  return kOk;
}

void apply_thread_cap() {
  const char* v = std::getenv("CEBMV_THREADS");
  if (!v) return;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (end == v || *end != '\0' || n < 1) throw ConfigError("CEBMV_THREADS must be a positive integer");
  Eigen::setNbThreads(static_cast<int>(n));
}

}  // namespace

int main(int argc, char** argv) {
  cebmv::tune_allocator();
  CLI::App app{"cebmv: compressed multiview self-supervised learning at desk scale"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "seed for this command's stage");
    sub->add_option("--out", o.out, "output directory (overrides out_dir)");
    sub->add_flag("--force", o.force, "overwrite existing outputs");
    sub->add_option("--data-dir", o.data_dir, "read datasets written by gen-data from this directory");
  };
  auto training = [&](CLI::App* sub) {
    sub->add_option("--variant", o.variant, "simclr | c_simclr | byol | c_byol");
    sub->add_option("--beta", o.beta, "compression strength");
  };

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic train/test datasets");
  common(gen);
  auto* trn = app.add_subcommand("train", "train an encoder stack");
  common(trn);
  training(trn);
  auto* prb = app.add_subcommand("probe", "linear probe on frozen features");
  common(prb);
  prb->add_option("--checkpoint", o.checkpoints, "checkpoint file")->required()->check(CLI::ExistingFile);
  prb->add_option("--label-fraction", o.label_fraction, "fraction of training labels for the probe");
  auto* rob = app.add_subcommand("robustness", "frozen probe under distribution-shift suites");
  common(rob);
  rob->add_option("--checkpoint", o.checkpoints, "checkpoint file")->required()->check(CLI::ExistingFile);
  rob->add_option("--label-fraction", o.label_fraction, "fraction of training labels for the probe");
  auto* lip = app.add_subcommand("lipschitz", "local smoothness report; two checkpoints are compared");
  common(lip);
  lip->add_option("--checkpoint", o.checkpoints, "checkpoint file (repeat for a paired comparison)")
      ->required()
      ->check(CLI::ExistingFile);
  auto* swp = app.add_subcommand("sweep", "train and probe over one hyperparameter axis");
  common(swp);
  training(swp);
  swp->add_option("--label-fraction", o.label_fraction, "fraction of training labels for the probe");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    apply_thread_cap();
    if (gen->parsed()) return cmd_gen_data(o);
    if (trn->parsed()) return cmd_train(o);
    if (prb->parsed()) return cmd_probe(o);
    if (rob->parsed()) return cmd_robustness(o);
    if (lip->parsed()) return cmd_lipschitz(o);
    if (swp->parsed()) return cmd_sweep(o);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const CollapseError& e) {
    std::fprintf(stderr, "collapse: %s\n", e.what());
    return kCollapse;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
  return kFailure;
}
