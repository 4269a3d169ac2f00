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

// Run configuration and file formats.
//
// A run configuration is one JSON document:
//
//   {"data": {...}, "train": {..., "loss": {...}, "dims": {...},
//    "augment": {...}}, "eval": {...}, "lipschitz": {...},
//    "sweep": {...}, "data_dir": "...", "out_dir": "..."}
//
// Every section and key is optional; unknown keys are errors. Resolution
// fills defaults, so the resolved document is complete and re-parses to the
// same configuration.

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "json.hpp"

#include "cebmv/checkpoint.hpp"
#include "cebmv/common.hpp"
#include "cebmv/data.hpp"
#include "cebmv/evaluation.hpp"
#include "cebmv/lipschitz.hpp"
#include "cebmv/training.hpp"

namespace cebmv {

struct EvalConfig {
  double label_fraction = 1.0;
  ProbeRecipe probe;
  std::vector<int> severities{1, 2, 3, 4, 5};
  std::vector<ShiftFamily> families = all_shift_families();
  std::uint64_t seed = 0;

  void validate() const {
    if (!(label_fraction > 0.0 && label_fraction <= 1.0)) throw ConfigError("eval.label_fraction must lie in (0, 1]");
    if (probe.iterations < 1) throw ConfigError("eval.probe.iterations must be >= 1");
    if (!(probe.lr > 0.0)) throw ConfigError("eval.probe.lr must be positive");
    if (probe.l2_grid.empty()) throw ConfigError("eval.probe.l2_grid must be non-empty");
    for (double l2 : probe.l2_grid)
      if (l2 < 0.0) throw ConfigError("eval.probe.l2_grid entries must be >= 0");
    if (!(probe.validation_fraction >= 0.0 && probe.validation_fraction < 1.0)) {
      throw ConfigError("eval.probe.validation_fraction must lie in [0, 1)");
    }
    for (int s : severities)
      if (s < 1 || s > 5) throw ConfigError("eval.severities entries must lie in 1..5");
  }
};

enum class SweepAxis { kBeta, kAreaLowerBound, kKappaE, kKappaB };

inline std::string to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::kBeta: return "beta";
    case SweepAxis::kAreaLowerBound: return "area_lower_bound";
    case SweepAxis::kKappaE: return "kappa_e";
    case SweepAxis::kKappaB: return "kappa_b";
  }
  return "?";
}

inline SweepAxis parse_sweep_axis(const std::string& s) {
  for (SweepAxis a : {SweepAxis::kBeta, SweepAxis::kAreaLowerBound, SweepAxis::kKappaE, SweepAxis::kKappaB})
    if (to_string(a) == s) return a;
  throw ConfigError("unknown sweep axis '" + s + "'");
}

/// Published grids for each axis.
inline std::vector<double> default_sweep_values(SweepAxis a) {
  switch (a) {
    case SweepAxis::kBeta: return {0.0, 0.01, 0.1, 1.0, 1.5, 2.0};
    case SweepAxis::kAreaLowerBound: return {0.08, 0.16, 0.25, 0.50};
    case SweepAxis::kKappaE: return {256, 512, 1024, 2048, 4096, 8192};
    case SweepAxis::kKappaB: return {1, 3, 10, 15, 20};
  }
  return {};
}

struct SweepConfig {
  SweepAxis axis = SweepAxis::kBeta;
  std::vector<double> values = default_sweep_values(SweepAxis::kBeta);
  int n_seeds = 3;

  void validate() const {
    if (values.empty()) throw ConfigError("sweep.values must be non-empty");
    if (n_seeds < 3) throw ConfigError("sweep.n_seeds must be >= 3");
  }
};

struct RunConfig {
  GeneratorConfig data;
  TrainConfig train;
  EvalConfig eval;
  LipschitzOptions lipschitz;
  std::uint64_t lipschitz_seed = 0;
  SweepConfig sweep;
  /// When set, datasets are read from this directory instead of generated.
  std::optional<std::string> data_dir;
  std::string out_dir = "out";

  void validate() const {
    data.validate();
    train.validate();
    if (static_cast<int>(train.dims.input_dim) != data.input_dim()) {
      throw ConfigError("train.dims.input_dim (" + std::to_string(train.dims.input_dim) +
                        ") must equal the data input dimension (" + std::to_string(data.input_dim()) + ")");
    }
    eval.validate();
    lipschitz.validate();
    sweep.validate();
  }
};

// ---------------------------------------------------------------------------
// JSON <-> configuration

namespace detail {

/// Consumes the keys of one JSON object; anything left over is an error.
class Section {
 public:
  Section(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.push_back(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    if (!type_matches<T>(*it)) throw ConfigError(where(key) + " has the wrong type");
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(where(key) + " has the wrong type");
    }
  }

  /// Integers must be written as integers, counts and seeds without a sign.
  template <typename T>
  static bool type_matches(const Json& v) {
    if constexpr (std::is_same_v<T, bool>) {
      return v.is_boolean();
    } else if constexpr (std::is_unsigned_v<T>) {
      return v.is_number_unsigned();
    } else if constexpr (std::is_integral_v<T>) {
      return v.is_number_integer();
    } else if constexpr (std::is_floating_point_v<T>) {
      return v.is_number();
    } else if constexpr (std::is_same_v<T, std::string>) {
      return v.is_string();
    } else {
      if (!v.is_array()) return false;
      for (const Json& e : v)
        if (!type_matches<typename T::value_type>(e)) return false;
      return true;
    }
  }

  const Json* child(const char* key) {
    seen_.push_back(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string where(const std::string& key = "") const {
    std::string p = path_.empty() ? key : (key.empty() ? path_ : path_ + "." + key);
    return p.empty() ? "config" : "'" + p + "'";
  }
  std::string path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end()) {
        throw ConfigError("unknown key " + where(it.key()));
      }
    }
  }

 private:
  const Json& j_;
  std::string path_;
  std::vector<std::string> seen_;
};

inline void parse_generator(const Json& j, GeneratorConfig& g, const std::string& path) {
  Section s(j, path);
  s.get("n_classes", g.n_classes);
  s.get("content_dim", g.content_dim);
  s.get("nuisance_dim", g.nuisance_dim);
  s.get("spurious_dim", g.spurious_dim);
  s.get("class_separation", g.class_separation);
  s.get("within_class_jitter", g.within_class_jitter);
  s.get("nuisance_scale", g.nuisance_scale);
  s.get("spurious_scale", g.spurious_scale);
  s.get("spurious_correlation", g.spurious_correlation);
  s.get("n_train", g.n_train);
  s.get("n_test", g.n_test);
  s.get("seed", g.seed);
  s.finish();
}

inline void parse_loss(const Json& j, LossConfig& l) {
  Section s(j, "train.loss");
  std::string variant = to_string(l.variant);
  s.get("variant", variant);
  try {
    l = LossConfig::defaults(parse_variant(variant));
  } catch (const Error& e) {
    throw ConfigError(std::string("'train.loss.variant': ") + e.what());
  }
  s.get("beta", l.beta);
  s.get("kappa_e", l.kappa_e);
  s.get("kappa_b", l.kappa_b);
  s.get("kappa_d", l.kappa_d);
  s.get("deterministic", l.deterministic);
  s.finish();
}

inline void parse_dims(const Json& j, StackDims& d) {
  Section s(j, "train.dims");
  s.get("input_dim", d.input_dim);
  s.get("trunk_hidden", d.trunk_hidden);
  s.get("repr_dim", d.repr_dim);
  s.get("proj_hidden", d.proj_hidden);
  s.get("proj_dim", d.proj_dim);
  s.finish();
}

inline void parse_augment(const Json& j, AugmentConfig& a) {
  Section s(j, "train.augment");
  s.get("content_noise", a.content_noise);
  s.get("area_lower_bound", a.area_lower_bound);
  s.get("gain_strength", a.gain_strength);
  s.get("noise_std", a.noise_std);
  s.finish();
}

inline void parse_train(const Json& j, TrainConfig& t, bool& input_dim_given) {
  Section s(j, "train");
  s.get("epochs", t.epochs);
  s.get("batch_size", t.batch_size);
  s.get("base_lr", t.base_lr);
  s.get("warmup_epochs", t.warmup_epochs);
  s.get("momentum", t.momentum);
  s.get("weight_decay", t.weight_decay);
  s.get("alpha_base", t.alpha_base);
  s.get("seed", t.seed);
  if (const Json* c = s.child("loss")) parse_loss(*c, t.loss);
  if (const Json* c = s.child("dims")) {
    input_dim_given = c->is_object() && c->contains("input_dim");
    parse_dims(*c, t.dims);
  }
  if (const Json* c = s.child("augment")) parse_augment(*c, t.augment);
  s.finish();
}

inline void parse_eval(const Json& j, EvalConfig& e) {
  Section s(j, "eval");
  s.get("label_fraction", e.label_fraction);
  s.get("severities", e.severities);
  s.get("seed", e.seed);
  if (const Json* c = s.child("families")) {
    if (!c->is_array()) throw ConfigError("'eval.families' must be an array of names");
    e.families.clear();
    for (const Json& f : *c) {
      if (!f.is_string()) throw ConfigError("'eval.families' must be an array of names");
      try {
        e.families.push_back(parse_shift_family(f.get<std::string>()));
      } catch (const Error& err) {
        throw ConfigError(std::string("'eval.families': ") + err.what());
      }
    }
  }
  if (const Json* c = s.child("probe")) {
    Section p(*c, "eval.probe");
    p.get("iterations", e.probe.iterations);
    p.get("lr", e.probe.lr);
    p.get("l2_grid", e.probe.l2_grid);
    p.get("validation_fraction", e.probe.validation_fraction);
    p.finish();
  }
  s.finish();
}

inline void parse_lipschitz(const Json& j, LipschitzOptions& o, std::uint64_t& seed) {
  Section s(j, "lipschitz");
  s.get("n_pairs", o.n_pairs);
  s.get("bins", o.bins);
  s.get("kappa", o.kappa);
  s.get("seed", seed);
  if (const Json* c = s.child("kappa_cross")) {
    if (c->is_null()) {
      o.kappa_cross.reset();
    } else if (c->is_number()) {
      o.kappa_cross = c->get<double>();
    } else {
      throw ConfigError("'lipschitz.kappa_cross' must be a number or null");
    }
  }
  if (const Json* c = s.child("families")) {
    if (!c->is_array()) throw ConfigError("'lipschitz.families' must be an array of names");
    o.families.clear();
    for (const Json& f : *c) {
      if (!f.is_string()) throw ConfigError("'lipschitz.families' must be an array of names");
      try {
        o.families.push_back(parse_perturbation(f.get<std::string>()));
      } catch (const Error& err) {
        throw ConfigError(std::string("'lipschitz.families': ") + err.what());
      }
    }
  }
  s.finish();
}

inline void parse_sweep(const Json& j, SweepConfig& w) {
  Section s(j, "sweep");
  std::string axis = to_string(w.axis);
  s.get("axis", axis);
  w.axis = parse_sweep_axis(axis);
  w.values = default_sweep_values(w.axis);
  s.get("values", w.values);
  s.get("n_seeds", w.n_seeds);
  s.finish();
}

}  // namespace detail

/// Typed configuration from a JSON document; validates the result.
inline RunConfig parse_run_config(const Json& j) {
  RunConfig c;
  detail::Section s(j, "");
  bool input_dim_given = false;
  if (const Json* d = s.child("data")) detail::parse_generator(*d, c.data, "data");
  if (const Json* t = s.child("train")) detail::parse_train(*t, c.train, input_dim_given);
  if (const Json* e = s.child("eval")) detail::parse_eval(*e, c.eval);
  if (const Json* l = s.child("lipschitz")) detail::parse_lipschitz(*l, c.lipschitz, c.lipschitz_seed);
  if (const Json* w = s.child("sweep")) detail::parse_sweep(*w, c.sweep);
  if (const Json* p = s.child("data_dir")) {
    if (!p->is_string()) throw ConfigError("'data_dir' must be a string");
    c.data_dir = p->get<std::string>();
  }
  s.get("out_dir", c.out_dir);
  s.finish();
  // The trunk input follows the data unless pinned explicitly.
  if (!input_dim_given) c.train.dims.input_dim = static_cast<std::size_t>(c.data.input_dim());
  c.validate();
  return c;
}

inline Json generator_to_json(const GeneratorConfig& g) {
  return Json{{"n_classes", g.n_classes},
              {"content_dim", g.content_dim},
              {"nuisance_dim", g.nuisance_dim},
              {"spurious_dim", g.spurious_dim},
              {"class_separation", g.class_separation},
              {"within_class_jitter", g.within_class_jitter},
              {"nuisance_scale", g.nuisance_scale},
              {"spurious_scale", g.spurious_scale},
              {"spurious_correlation", g.spurious_correlation},
              {"n_train", g.n_train},
              {"n_test", g.n_test},
              {"seed", g.seed}};
}

inline GeneratorConfig generator_from_json(const Json& j) {
  GeneratorConfig g;
  detail::parse_generator(j, g, "generator");
  g.validate();
  return g;
}

inline Json loss_to_json(const LossConfig& l) {
  return Json{{"variant", to_string(l.variant)}, {"beta", l.beta},       {"kappa_e", l.kappa_e},
              {"kappa_b", l.kappa_b},            {"kappa_d", l.kappa_d}, {"deterministic", l.deterministic}};
}

inline Json train_to_json(const TrainConfig& t) {
  return Json{{"epochs", t.epochs},
              {"batch_size", t.batch_size},
              {"base_lr", t.base_lr},
              {"warmup_epochs", t.warmup_epochs},
              {"momentum", t.momentum},
              {"weight_decay", t.weight_decay},
              {"alpha_base", t.alpha_base},
              {"seed", t.seed},
              {"loss", loss_to_json(t.loss)},
              {"dims", dims_to_json(t.dims)},
              {"augment",
               {{"content_noise", t.augment.content_noise},
                {"area_lower_bound", t.augment.area_lower_bound},
                {"gain_strength", t.augment.gain_strength},
                {"noise_std", t.augment.noise_std}}}};
}

/// The fully resolved document; parse_run_config(to_json(c)) == c.
inline Json to_json(const RunConfig& c) {
  Json families = Json::array();
  for (ShiftFamily f : c.eval.families) families.push_back(to_string(f));
  Json perturbations = Json::array();
  for (Perturbation p : c.lipschitz.families) perturbations.push_back(to_string(p));
  Json j{{"data", generator_to_json(c.data)},
         {"train", train_to_json(c.train)},
         {"eval",
          {{"label_fraction", c.eval.label_fraction},
           {"severities", c.eval.severities},
           {"families", families},
           {"seed", c.eval.seed},
           {"probe",
            {{"iterations", c.eval.probe.iterations},
             {"lr", c.eval.probe.lr},
             {"l2_grid", c.eval.probe.l2_grid},
             {"validation_fraction", c.eval.probe.validation_fraction}}}}},
         {"lipschitz",
          {{"n_pairs", c.lipschitz.n_pairs},
           {"bins", c.lipschitz.bins},
           {"kappa", c.lipschitz.kappa},
           {"kappa_cross", c.lipschitz.kappa_cross ? Json(*c.lipschitz.kappa_cross) : Json(nullptr)},
           {"families", perturbations},
           {"seed", c.lipschitz_seed}}},
         {"sweep", {{"axis", to_string(c.sweep.axis)}, {"values", c.sweep.values}, {"n_seeds", c.sweep.n_seeds}}},
         {"out_dir", c.out_dir}};
  if (c.data_dir) j["data_dir"] = *c.data_dir;
  return j;
}

/// 1-based line and column of a byte offset.
inline std::pair<std::size_t, std::size_t> line_column(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

/// Parses JSON text; syntax errors become ConfigError "<name>:<line>:<col>: ...".
inline Json parse_json_text(const std::string& text, const std::string& name) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    // e.byte points one past the offending character.
    const auto [line, col] = line_column(text, e.byte > 0 ? e.byte - 1 : 0);
    std::string msg = e.what();
    const auto pos = msg.find("syntax error");
    if (pos != std::string::npos) msg = msg.substr(pos);
    throw ConfigError(name + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + msg);
  }
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot read " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline Json load_json_file(const std::string& path) { return parse_json_text(read_text_file(path), path); }

// ---------------------------------------------------------------------------
// Files

/// Refuses to replace an existing file unless `force`.
inline void check_writable(const std::filesystem::path& p, bool force) {
  if (!force && std::filesystem::exists(p)) {
    throw ConfigError(p.string() + " already exists (use --force to overwrite)");
  }
}

inline void write_text_file(const std::filesystem::path& p, const std::string& text) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw Error("cannot write " + p.string());
  f << text;
  if (!f) throw Error("write failed for " + p.string());
}

inline std::string dump_pretty(const Json& j) { return j.dump(2) + "\n"; }

/// One {"x": [...], "label": k} object per line.
inline std::string dataset_to_jsonl(const Dataset& d) {
  std::string out;
  for (std::size_t i = 0; i < d.size(); ++i) {
    nlohmann::ordered_json line;
    const auto row = d.row(i);
    line["x"] = std::vector<double>(row.begin(), row.end());
    line["label"] = d.labels[i];
    out += line.dump();
    out += '\n';
  }
  return out;
}

inline Dataset dataset_from_jsonl(const std::string& text, const std::string& name) {
  Dataset d;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = name + ":" + std::to_string(line_no);
    Json j;
    try {
      j = Json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(where + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("x") || !j.contains("label") || j.size() != 2) {
      throw ConfigError(where + ": expected {\"x\": [...], \"label\": int}");
    }
    std::vector<double> x;
    int label = 0;
    try {
      x = j.at("x").get<std::vector<double>>();
      label = j.at("label").get<int>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(where + ": expected {\"x\": [...], \"label\": int}");
    }
    if (d.dim == 0) d.dim = x.size();
    if (x.size() != d.dim || x.empty()) throw ConfigError(where + ": inconsistent record dimension");
    d.x.insert(d.x.end(), x.begin(), x.end());
    d.labels.push_back(label);
  }
  return d;
}

inline Json dataset_meta(const GeneratorConfig& g) {
  return Json{{"format", "cebmv-dataset"},
              {"version", 1},
              {"generator", generator_to_json(g)},
              {"input_dim", g.input_dim()},
              {"files", {{"train", "train.jsonl"}, {"test", "test.jsonl"}}}};
}

/// Reads train.jsonl, test.jsonl and dataset.meta.json from `dir`.
inline std::pair<GeneratorConfig, SplitDataset> load_dataset_dir(const std::string& dir) {
  const std::filesystem::path base(dir);
  const Json meta = load_json_file((base / "dataset.meta.json").string());
  if (!meta.contains("generator")) throw ConfigError("dataset.meta.json has no generator section");
  GeneratorConfig g = generator_from_json(meta.at("generator"));
  SplitDataset s{dataset_from_jsonl(read_text_file((base / "train.jsonl").string()), "train.jsonl"),
                 dataset_from_jsonl(read_text_file((base / "test.jsonl").string()), "test.jsonl")};
  for (const Dataset* d : {&s.train, &s.test}) {
    if (d->size() > 0 && static_cast<int>(d->dim) != g.input_dim()) {
      throw ConfigError("dataset dimension does not match dataset.meta.json");
    }
  }
  s.train.dim = s.test.dim = static_cast<std::size_t>(g.input_dim());
  for (const Dataset* d : {&s.train, &s.test})
    for (int l : d->labels)
      if (l < 0 || l >= g.n_classes) throw ConfigError("dataset label out of range");
  return {g, std::move(s)};
}

/// The run's datasets: loaded from data_dir (its generator config replaces
/// cfg.data) or generated from cfg.data.
inline SplitDataset resolve_dataset(RunConfig& cfg) {
  if (cfg.data_dir) {
    auto [g, s] = load_dataset_dir(*cfg.data_dir);
    cfg.data = g;
    cfg.train.dims.input_dim = static_cast<std::size_t>(g.input_dim());
    return std::move(s);
  }
  return generate_dataset(cfg.data);
}

inline Json metrics_to_json(const EpochMetrics& m, Variant v) {
  Json j{{"epoch", m.epoch}, {"loss", m.loss}, {"i_xzy_mean", m.i_xzy_mean}, {"lr", m.lr}};
  j[is_byol_family(v) ? "byol_term" : "i_yz_mean"] = m.second_term;
  j["alpha"] = m.alpha ? Json(*m.alpha) : Json(nullptr);
  return j;
}

inline Json collapse_to_json(const CollapseRecord& c) {
  return Json{{"collapse", true}, {"epoch", c.epoch}, {"step", c.step}, {"reason", c.reason}};
}

inline Json probe_to_json(const ProbeResult& r) {
  return Json{{"top1", r.top1}, {"brier", r.brier}, {"label_fraction", r.label_fraction},
              {"n_eval", r.n_eval}, {"l2", r.l2}};
}

inline std::string robustness_csv(const std::vector<RobustnessRow>& rows) {
  std::string out = "family,severity,top1,n\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%d,%.17g,%zu\n", r.family.c_str(), r.severity, r.top1, r.n);
    out += buf;
  }
  return out;
}

}  // namespace cebmv
