// Copyright 2026 The Pacmac Authors
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
#include <fstream>

#include <gtest/gtest.h>

#include "pacmac/config.hpp"
#include "pacmac/error.hpp"

namespace pacmac::config {
namespace {

namespace fs = std::filesystem;

fs::path write_file(const std::string& name, const std::string& text) {
  const fs::path dir = fs::temp_directory_path() / "pacmac_config_test";
  fs::create_directories(dir);
  const fs::path p = dir / name;
  std::ofstream(p, std::ios::trunc) << text;
  return p;
}

ErrorCode parse_error(const fs::path& file, const std::vector<std::string>& overrides) {
  try {
    parse_config(file, overrides);
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kIoError;
}

TEST(Parse, EmptyFileGivesDefaults) {
  const RunConfig c = parse_config(write_file("empty.json", ""), {});
  EXPECT_EQ(c.adapt.select.committee, 2u);
  EXPECT_DOUBLE_EQ(c.adapt.select.ratio, 0.75);
  EXPECT_DOUBLE_EQ(c.adapt.select.threshold, 0.5);
  EXPECT_DOUBLE_EQ(c.adapt.alpha, 0.1);
  EXPECT_EQ(c.adapt.select.strategy, reliability::Strategy::kConsistentOrConfident);
  EXPECT_EQ(c.adapt.select.voting, reliability::Voting::kUnanimous);
  EXPECT_EQ(c.eval.knn_k, 7u);
  EXPECT_EQ(to_json(c), default_json());
}

TEST(Parse, FileThenOverrides) {
  const auto f = write_file("some.json", R"({"seed": 4, "select": {"voting": "majority"},
                                            "adapt": {"alpha": 0.5}})");
  const RunConfig c = parse_config(f, {"adapt.alpha=0.25", "model.depth=3"});
  EXPECT_EQ(c.seed, 4u);
  EXPECT_EQ(c.adapt.select.voting, reliability::Voting::kMajority);
  EXPECT_DOUBLE_EQ(c.adapt.alpha, 0.25);
  EXPECT_EQ(c.model.depth, 3);
  EXPECT_EQ(c.adapt.seed, 4u);
}

TEST(Parse, StringOverrideWithoutQuotes) {
  const RunConfig c = parse_config(write_file("e.json", "{}"), {"select.strategy=oracle"});
  EXPECT_EQ(c.adapt.select.strategy, reliability::Strategy::kOracle);
}

TEST(Parse, UnknownKeyNamesTheKey) {
  try {
    parse_config(write_file("unknown.json", R"({"foo": 1})"), {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnknownKey);
    EXPECT_NE(std::string(e.what()).find("foo"), std::string::npos);
  }
  EXPECT_EQ(parse_error(write_file("e.json", "{}"), {"adapt.bogus=1"}), ErrorCode::kUnknownKey);
}

TEST(Parse, TypeErrors) {
  EXPECT_EQ(parse_error(write_file("t1.json", R"({"seed": "three"})"), {}), ErrorCode::kTypeError);
  EXPECT_EQ(parse_error(write_file("t2.json", R"({"model": {"depth": 1.5}})"), {}),
            ErrorCode::kTypeError);
  EXPECT_EQ(parse_error(write_file("t3.json", R"({"seed": -1})"), {}), ErrorCode::kTypeError);
  EXPECT_EQ(parse_error(write_file("t4.json", "{oops"), {}), ErrorCode::kTypeError);
  EXPECT_EQ(parse_error(write_file("e.json", "{}"), {"no_equals_sign"}), ErrorCode::kInvalidConfig);
}

TEST(Parse, FloatFieldsAcceptIntegers) {
  const RunConfig c = parse_config(write_file("e.json", "{}"), {"adapt.alpha=1"});
  EXPECT_DOUBLE_EQ(c.adapt.alpha, 1.0);
}

TEST(Parse, MissingFile) {
  EXPECT_EQ(parse_error("/nonexistent/pacmac.json", {}), ErrorCode::kFileNotFound);
}

TEST(Parse, InvalidValuesAreRejected) {
  EXPECT_THROW(parse_config(write_file("e.json", "{}"), {"select.strategy=sometimes"}), Error);
}

TEST(Parse, AblateGridIsChecked) {
  const RunConfig ok =
      parse_config(write_file("g.json", R"({"ablate": {"grid": {"select.strategy": ["all", "oracle"]}}})"), {});
  EXPECT_EQ(ok.ablate_grid.at("select.strategy").size(), 2u);
  EXPECT_EQ(parse_error(write_file("g2.json", R"({"ablate": {"grid": {"select.nope": [1]}}})"), {}),
            ErrorCode::kUnknownKey);
  EXPECT_EQ(parse_error(write_file("g3.json", R"({"ablate": {"grid": {"adapt.alpha": []}}})"), {}),
            ErrorCode::kTypeError);
}

TEST(Resolved, RoundTripsThroughJson) {
  const RunConfig c = parse_config(write_file("e.json", "{}"),
                                   {"seed=9", "select.voting=majority", "data.per_class=20",
                                    "pretrain.normalize_targets=true"});
  const auto j = to_json(c);
  const auto f = write_file("resolved.json", j.dump(2));
  EXPECT_EQ(to_json(parse_config(f, {})), j);
}

TEST(Merge, ArraysReplaceWholesale) {
  nlohmann::json base = default_json();
  merge_checked(base, nlohmann::json::parse(R"({"data": {"target_style": {"palette": [[0.1, 0.2, 0.3]]}}})"));
  EXPECT_EQ(base["data"]["target_style"]["palette"].size(), 1u);
}

}  // namespace
}  // namespace pacmac::config
