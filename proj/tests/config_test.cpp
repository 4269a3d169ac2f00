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


#include <filesystem>
#include <string>

#include <gtest/gtest.h>

#include "cebmv/config.hpp"

namespace cebmv {
namespace {

RunConfig parse(const std::string& text) { return parse_run_config(parse_json_text(text, "test.json")); }

std::string error_of(const std::string& text) {
  try {
    parse(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

TEST(Config, EmptyDocumentGivesDefaults) {
  const RunConfig c = parse("{}");
  EXPECT_EQ(c.data.n_train, 20000);
  EXPECT_EQ(c.train.loss.variant, Variant::kCSimclr);
  EXPECT_EQ(c.train.dims.input_dim, 32u);
  EXPECT_EQ(c.eval.severities.size(), 5u);
  EXPECT_EQ(c.lipschitz.families.size(), 8u);
  EXPECT_FALSE(c.data_dir);
}

TEST(Config, VariantSelectsItsDefaults) {
  const RunConfig c = parse(R"({"train": {"loss": {"variant": "c_byol"}}})");
  EXPECT_EQ(c.train.loss.kappa_e, 16384.0);
  EXPECT_EQ(c.train.loss.kappa_b, 10.0);
  const RunConfig d = parse(R"({"train": {"loss": {"variant": "c_byol", "kappa_e": 512}}})");
  EXPECT_EQ(d.train.loss.kappa_e, 512.0);
}

TEST(Config, UnknownKeysAreRejectedWithTheirPath) {
  EXPECT_NE(error_of(R"({"trian": {}})").find("'trian'"), std::string::npos);
  EXPECT_NE(error_of(R"({"train": {"loss": {"kapa_e": 1}}})").find("'train.loss.kapa_e'"), std::string::npos);
  EXPECT_NE(error_of(R"({"eval": {"probe": {"iters": 3}}})").find("'eval.probe.iters'"), std::string::npos);
}

TEST(Config, TypesAreStrict) {
  EXPECT_NE(error_of(R"({"train": {"epochs": 1.5}})").find("wrong type"), std::string::npos);
  EXPECT_NE(error_of(R"({"train": {"seed": -1}})").find("wrong type"), std::string::npos);
  EXPECT_NE(error_of(R"({"train": {"base_lr": "0.1"}})").find("wrong type"), std::string::npos);
  EXPECT_NE(error_of(R"({"train": {"loss": {"deterministic": 1}}})").find("wrong type"), std::string::npos);
  EXPECT_NE(error_of(R"({"eval": {"severities": [1, "2"]}})").find("wrong type"), std::string::npos);
  // Integers are accepted where reals are expected.
  EXPECT_EQ(parse(R"({"train": {"base_lr": 1}})").train.base_lr, 1.0);
}

TEST(Config, ValuesAreValidated) {
  EXPECT_FALSE(error_of(R"({"train": {"batch_size": 1}})").empty());
  EXPECT_FALSE(error_of(R"({"train": {"loss": {"variant": "simsiam"}}})").empty());
  EXPECT_FALSE(error_of(R"({"eval": {"label_fraction": 0}})").empty());
  EXPECT_FALSE(error_of(R"({"eval": {"severities": [6]}})").empty());
  EXPECT_FALSE(error_of(R"({"eval": {"families": ["blur"]}})").empty());
  EXPECT_FALSE(error_of(R"({"sweep": {"n_seeds": 2}})").empty());
  EXPECT_FALSE(error_of(R"({"sweep": {"axis": "gamma"}})").empty());
  EXPECT_FALSE(error_of(R"({"lipschitz": {"kappa_cross": "big"}})").empty());
  EXPECT_FALSE(error_of(R"({"train": {"dims": {"input_dim": 7}}})").empty());
  EXPECT_FALSE(error_of(R"({"data": {"spurious_correlation": 1.5}})").empty());
}

TEST(Config, InputDimFollowsData) {
  const RunConfig c = parse(R"({"data": {"nuisance_dim": 4}})");
  EXPECT_EQ(c.train.dims.input_dim, 20u);
}

TEST(Config, SyntaxErrorsReportLineAndColumn) {
  try {
    parse_json_text("{\n  \"a\": 1,\n  \"b\": ]\n}", "cfg.json");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(std::string(e.what()).rfind("cfg.json:3:8:", 0), 0u) << e.what();
  }
  EXPECT_EQ(line_column("ab\ncd", 4), (std::pair<std::size_t, std::size_t>{2, 2}));
}

TEST(Config, RoundTripIsExact) {
  const RunConfig c = parse(R"({
    "data": {"n_train": 123, "seed": 7},
    "train": {"epochs": 3, "base_lr": 0.123456789, "loss": {"variant": "c_simclr", "beta": 0.3},
              "dims": {"trunk_hidden": [64, 32]}, "augment": {"area_lower_bound": 0.5}},
    "eval": {"label_fraction": 0.1, "families": ["feature_mask"], "probe": {"l2_grid": [0.5]}},
    "lipschitz": {"kappa_cross": 10, "families": ["gain+"]},
    "sweep": {"axis": "kappa_b", "values": [1, 2]},
    "data_dir": "somewhere",
    "out_dir": "o"})");
  const Json j = to_json(c);
  EXPECT_EQ(to_json(parse_run_config(j)), j);
  EXPECT_EQ(c.train.dims.trunk_hidden, (std::vector<std::size_t>{64, 32}));
  EXPECT_EQ(*c.lipschitz.kappa_cross, 10.0);
  EXPECT_EQ(*c.data_dir, "somewhere");
  EXPECT_EQ(c.sweep.axis, SweepAxis::kKappaB);
}

TEST(Config, DatasetJsonlRoundTrip) {
  GeneratorConfig g;
  g.n_train = 20;
  g.n_test = 5;
  const auto d = generate_dataset(g);
  const Dataset back = dataset_from_jsonl(dataset_to_jsonl(d.train), "train.jsonl");
  EXPECT_EQ(back.dim, d.train.dim);
  EXPECT_EQ(back.x, d.train.x);
  EXPECT_EQ(back.labels, d.train.labels);
  EXPECT_THROW(dataset_from_jsonl("{\"x\": [1, 2], \"label\": 0}\n{\"x\": [1], \"label\": 0}\n", "t"), ConfigError);
  EXPECT_THROW(dataset_from_jsonl("{\"x\": [1, 2]}\n", "t"), ConfigError);
  EXPECT_THROW(dataset_from_jsonl("not json\n", "t"), ConfigError);
}

TEST(Config, DatasetDirectory) {
  const auto dir = std::filesystem::temp_directory_path() / ("cebmv_config_test_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  GeneratorConfig g;
  g.n_train = 30;
  g.n_test = 10;
  g.seed = 4;
  const auto d = generate_dataset(g);
  write_text_file(dir / "train.jsonl", dataset_to_jsonl(d.train));
  write_text_file(dir / "test.jsonl", dataset_to_jsonl(d.test));
  write_text_file(dir / "dataset.meta.json", dump_pretty(dataset_meta(g)));
  RunConfig cfg = parse("{}");
  cfg.data_dir = dir.string();
  const SplitDataset loaded = resolve_dataset(cfg);
  EXPECT_EQ(cfg.data.seed, 4u);
  EXPECT_EQ(cfg.data.n_train, 30);
  EXPECT_EQ(loaded.test.x, d.test.x);
  EXPECT_THROW(check_writable(dir / "train.jsonl", false), ConfigError);
  EXPECT_NO_THROW(check_writable(dir / "train.jsonl", true));
  std::filesystem::remove_all(dir);
  EXPECT_THROW(resolve_dataset(cfg), ConfigError);
}

TEST(Config, Outputs) {
  EpochMetrics m;
  m.epoch = 2;
  m.second_term = 1.5;
  EXPECT_EQ(metrics_to_json(m, Variant::kCSimclr)["i_yz_mean"], 1.5);
  EXPECT_TRUE(metrics_to_json(m, Variant::kByol)["alpha"].is_null());
  EXPECT_EQ(metrics_to_json(m, Variant::kByol)["byol_term"], 1.5);
  EXPECT_EQ(robustness_csv({{"clean", 0, 0.5, 10}}), "family,severity,top1,n\nclean,0,0.5,10\n");
}

}  // namespace
}  // namespace cebmv
