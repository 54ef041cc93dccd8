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

#include "pacmac/data.hpp"
#include "pacmac/error.hpp"

namespace pacmac::data {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "pacmac_data_test" / name;
  fs::remove_all(dir);
  return dir;
}

ErrorCode load_error(const fs::path& dir) {
  try {
    load_dataset(dir);
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kIoError;
}

TEST(Generate, ClassMajorLabelsAndRange) {
  const Dataset d = generate_synthetic(4, 3, source_spec(), 5, 16);
  EXPECT_EQ(d.count, 12u);
  EXPECT_EQ(d.image_size(), 3u * 16u * 16u);
  ASSERT_TRUE(d.has_labels);
  for (std::size_t i = 0; i < d.count; ++i) EXPECT_EQ(d.labels[i], static_cast<int>(i % 4));
  for (float v : d.images) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  EXPECT_EQ(d.class_names.size(), 4u);
}

TEST(Generate, DeterministicInSeed) {
  const Dataset a = generate_synthetic(3, 4, target_spec(), 9, 16);
  const Dataset b = generate_synthetic(3, 4, target_spec(), 9, 16);
  const Dataset c = generate_synthetic(3, 4, target_spec(), 10, 16);
  EXPECT_EQ(a.images, b.images);
  EXPECT_NE(a.images, c.images);
}

TEST(Generate, StylesDifferButPosesMatch) {
  const Dataset s = generate_synthetic(2, 2, source_spec(), 3, 16);
  const Dataset t = generate_synthetic(2, 2, target_spec(), 3, 16);
  EXPECT_EQ(s.labels, t.labels);
  EXPECT_NE(s.images, t.images);
}

TEST(Generate, RejectsBadArguments) {
  EXPECT_THROW(generate_synthetic(kMaxShapeClasses + 1, 2, source_spec(), 0), Error);
  EXPECT_THROW(generate_synthetic(2, 0, source_spec(), 0), Error);
  DomainSpec empty = source_spec();
  empty.palette.clear();
  EXPECT_THROW(generate_synthetic(2, 2, empty, 0), Error);
}

TEST(Render, InteriorSpreadVariesPerInstance) {
  DomainSpec spec = target_spec();
  spec.noise = 0.0;
  ShapePose pose = draw_pose(1);
  pose.shade = 0.0;
  const auto full = render_shape(0, pose, spec, 16, 0);
  spec.interior_spread = 1.0;
  pose.shade = 0.0;
  EXPECT_EQ(render_shape(0, pose, spec, 16, 0), full);
  pose.shade = 0.9;
  EXPECT_NE(render_shape(0, pose, spec, 16, 0), full);
}

TEST(DomainSpec, JsonRoundTrip) {
  DomainSpec s = target_spec();
  s.interior_spread = 0.25;
  const DomainSpec r = DomainSpec::from_json(s.to_json());
  EXPECT_EQ(r.to_json(), s.to_json());
}

TEST(Dataset, SubsetAndUnlabeled) {
  const Dataset d = generate_synthetic(3, 2, source_spec(), 1, 8);
  const std::vector<std::size_t> idx{4, 1};
  const Dataset s = d.subset(idx);
  EXPECT_EQ(s.count, 2u);
  EXPECT_EQ(s.labels, (std::vector<int>{1, 1}));
  EXPECT_TRUE(std::equal(s.image(0).begin(), s.image(0).end(), d.image(4).begin()));
  const Dataset u = d.unlabeled();
  EXPECT_FALSE(u.has_labels);
  EXPECT_TRUE(u.labels.empty());
  EXPECT_EQ(u.images, d.images);
}

TEST(Persistence, RoundTrip) {
  const Dataset d = generate_synthetic(3, 2, target_spec(), 4, 8);
  const fs::path dir = scratch("roundtrip");
  save_dataset(d, dir);
  EXPECT_TRUE(fs::exists(dir / "manifest.json"));
  EXPECT_TRUE(fs::exists(dir / "images.bin"));
  EXPECT_TRUE(fs::exists(dir / "labels.csv"));
  const Dataset r = load_dataset(dir);
  EXPECT_EQ(r.images, d.images);
  EXPECT_EQ(r.labels, d.labels);
  EXPECT_EQ(r.domain, d.domain);
  EXPECT_EQ(r.class_names, d.class_names);

  const fs::path udir = scratch("unlabeled");
  save_dataset(d.unlabeled(), udir);
  EXPECT_FALSE(fs::exists(udir / "labels.csv"));
  EXPECT_FALSE(load_dataset(udir).has_labels);
}

TEST(Persistence, CorruptFiles) {
  const Dataset d = generate_synthetic(2, 2, source_spec(), 4, 8);
  EXPECT_EQ(load_error(scratch("nothing")), ErrorCode::kFileNotFound);

  const fs::path dir = scratch("corrupt");
  save_dataset(d, dir);
  std::string bytes;
  {
    std::ifstream is(dir / "images.bin", std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(is), {});
  }
  auto write = [](const fs::path& p, const std::string& b) {
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    os.write(b.data(), static_cast<std::streamsize>(b.size()));
  };
  write(dir / "images.bin", "XXXX" + bytes.substr(4));
  EXPECT_EQ(load_error(dir), ErrorCode::kMagicMismatch);
  write(dir / "images.bin", bytes.substr(0, bytes.size() - 8));
  EXPECT_EQ(load_error(dir), ErrorCode::kTruncatedPayload);
  write(dir / "images.bin", bytes);
  write(dir / "manifest.json", "{not json");
  EXPECT_EQ(load_error(dir), ErrorCode::kCorruptManifest);
}

TEST(Persistence, BadLabels) {
  const Dataset d = generate_synthetic(2, 2, source_spec(), 4, 8);
  const fs::path dir = scratch("labels");
  save_dataset(d, dir);
  std::ofstream(dir / "labels.csv", std::ios::trunc) << "index,label\n0,7\n";
  EXPECT_EQ(load_error(dir), ErrorCode::kCorruptManifest);
}

TEST(Augment, NeutralDrawIsIdentity) {
  const Dataset d = generate_synthetic(2, 1, source_spec(), 2, 16);
  std::vector<double> img(d.image(0).begin(), d.image(0).end());
  const std::vector<double> before = img;
  apply_augment(img, 3, 16, AugmentDraw{});
  EXPECT_EQ(img, before);
}

TEST(Augment, FlipTwiceRestores) {
  const Dataset d = generate_synthetic(2, 1, source_spec(), 2, 16);
  std::vector<double> img(d.image(0).begin(), d.image(0).end());
  const std::vector<double> before = img;
  AugmentDraw flip;
  flip.flip = true;
  apply_augment(img, 3, 16, flip);
  EXPECT_NE(img, before);
  apply_augment(img, 3, 16, flip);
  EXPECT_EQ(img, before);
}

TEST(Augment, StaysInRangeAndIsSeeded) {
  const Dataset d = generate_synthetic(2, 2, target_spec(), 2, 16);
  for (std::size_t i = 0; i < d.count; ++i) {
    const std::vector<double> img(d.image(i).begin(), d.image(i).end());
    for (std::uint64_t s = 0; s < 20; ++s) {
      const auto a = augment(img, 3, 16, s);
      EXPECT_EQ(a, augment(img, 3, 16, s));
      for (double v : a) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
    }
  }
}

}  // namespace
}  // namespace pacmac::data
