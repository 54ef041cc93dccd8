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

#include "pacmac/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "pacmac/error.hpp"
#include "pacmac/random.hpp"

namespace pacmac::data {

namespace {

constexpr char kImageMagic[4] = {'P', 'M', 'D', '1'};
constexpr int kFormatVersion = 1;
constexpr std::uint64_t kPoseTag = 0x70d5e;
constexpr std::uint64_t kNoiseTag = 0x401ce;

constexpr const char* kShapeNames[kMaxShapeClasses] = {"disk", "square", "triangle", "cross",
                                                       "ring", "bar",    "ell",      "dots"};

struct V2 {
  double x, y;
};

double length(V2 p) { return std::hypot(p.x, p.y); }

double sd_box(V2 p, double bx, double by) {
  const double dx = std::abs(p.x) - bx;
  const double dy = std::abs(p.y) - by;
  return length({std::max(dx, 0.0), std::max(dy, 0.0)}) + std::min(std::max(dx, dy), 0.0);
}

// Equilateral triangle of circumradius-like size r, apex up.
double sd_triangle(V2 p, double r) {
  const double k = std::sqrt(3.0);
  p.x = std::abs(p.x) - r;
  p.y = p.y + r / k;
  if (p.x + k * p.y > 0.0) p = {(p.x - k * p.y) / 2.0, (-k * p.x - p.y) / 2.0};
  p.x -= std::clamp(p.x, -2.0 * r, 0.0);
  return -length(p) * (p.y < 0.0 ? -1.0 : 1.0);
}

// Signed distance in shape units (radius 1); negative inside.
double shape_distance(int class_id, V2 p) {
  switch (class_id) {
    case 0: return length(p) - 0.9;
    case 1: return sd_box(p, 0.72, 0.72);
    case 2: return sd_triangle({p.x, p.y + 0.15}, 0.95);
    case 3: return std::min(sd_box(p, 0.95, 0.28), sd_box(p, 0.28, 0.95));
    case 4: return std::abs(length(p) - 0.68) - 0.26;
    case 5: return sd_box(p, 0.95, 0.3);
    case 6:
      return std::min(sd_box({p.x + 0.55, p.y}, 0.25, 0.95),
                      sd_box({p.x, p.y - 0.7}, 0.8, 0.25));
    case 7: {
      double d = 1e9;
      for (double sx : {-0.5, 0.5})
        for (double sy : {-0.5, 0.5}) d = std::min(d, length({p.x - sx, p.y - sy}) - 0.3);
      return d;
    }
    default: fail(ErrorCode::kInvalidSpec, "unknown shape class " + std::to_string(class_id));
  }
}

void put_f32_le(std::string& out, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

float get_f32_le(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 3; i >= 0; --i) bits = (bits << 8) | p[i];
  return std::bit_cast<float>(bits);
}

std::string read_all(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::kFileNotFound, "cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

}  // namespace

nlohmann::json DomainSpec::to_json() const {
  nlohmann::json pal = nlohmann::json::array();
  for (const Rgb& c : palette) pal.push_back({c[0], c[1], c[2]});
  return {{"domain", domain},         {"filled", filled},   {"outline_width", outline_width},
          {"interior", interior},     {"interior_spread", interior_spread},
          {"background", background}, {"palette", pal},
          {"noise", noise}};
}

DomainSpec DomainSpec::from_json(const nlohmann::json& j) {
  DomainSpec s;
  s.domain = j.at("domain").get<std::string>();
  s.filled = j.at("filled").get<bool>();
  s.outline_width = j.at("outline_width").get<double>();
  s.interior = j.value("interior", 0.0);
  s.interior_spread = j.value("interior_spread", 0.0);
  s.background = j.at("background").get<double>();
  s.noise = j.at("noise").get<double>();
  for (const auto& c : j.at("palette")) s.palette.push_back(c.get<Rgb>());
  return s;
}

DomainSpec source_spec() {
  DomainSpec s;
  s.domain = "source";
  s.filled = true;
  s.background = 0.85;
  s.palette = {{0.85, 0.15, 0.15}, {0.15, 0.55, 0.2}, {0.15, 0.25, 0.8},
               {0.8, 0.5, 0.1},    {0.55, 0.2, 0.65}, {0.1, 0.55, 0.6}};
  s.noise = 0.0;
  return s;
}

DomainSpec target_spec() {
  DomainSpec s;
  s.domain = "target";
  s.filled = false;
  s.outline_width = 0.35;
  s.interior = 1.0;
  s.background = 0.6;
  s.palette = {{0.1, 0.1, 0.35}, {0.35, 0.05, 0.1}, {0.05, 0.3, 0.1},
               {0.3, 0.2, 0.05}, {0.1, 0.1, 0.1},   {0.25, 0.05, 0.3}};
  s.noise = 0.05;
  return s;
}

const char* shape_name(int class_id) {
  if (class_id < 0 || class_id >= kMaxShapeClasses)
    fail(ErrorCode::kInvalidSpec, "unknown shape class " + std::to_string(class_id));
  return kShapeNames[class_id];
}

ShapePose draw_pose(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ShapePose p;
  p.cx = -0.2 + 0.4 * u(rng);
  p.cy = -0.2 + 0.4 * u(rng);
  p.radius = 0.55 + 0.2 * u(rng);
  p.angle = (u(rng) - 0.5) * std::numbers::pi / 3.0;
  p.color = static_cast<int>(rng() % 64);
  p.shade = u(rng);
  return p;
}

std::vector<float> render_shape(int class_id, const ShapePose& pose, const DomainSpec& spec,
                                int side, std::uint64_t noise_seed) {
  if (spec.palette.empty()) fail(ErrorCode::kInvalidSpec, "domain spec has an empty palette");
  if (side <= 0) fail(ErrorCode::kInvalidSpec, "image side must be positive");
  const Rgb& color = spec.palette[static_cast<std::size_t>(pose.color) % spec.palette.size()];
  const auto n = static_cast<std::size_t>(side);
  std::vector<float> out(3 * n * n);
  const double ca = std::cos(pose.angle), sa = std::sin(pose.angle);
  // One pixel measured in shape units; used for a linear anti-aliasing ramp.
  const double pixel = 2.0 / side / pose.radius;
  std::mt19937_64 rng(noise_seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double interior = std::clamp(spec.interior - spec.interior_spread * pose.shade, 0.0, 1.0);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const double u = (static_cast<double>(x) + 0.5) / side * 2.0 - 1.0;
      const double v = (static_cast<double>(y) + 0.5) / side * 2.0 - 1.0;
      const double dx = (u - pose.cx) / pose.radius, dy = (v - pose.cy) / pose.radius;
      const V2 local{ca * dx + sa * dy, -sa * dx + ca * dy};
      const double d = shape_distance(class_id, local);
      double cover = std::clamp(0.5 - d / pixel, 0.0, 1.0);
      if (!spec.filled) {
        const double stroke = std::clamp(0.5 - (std::abs(d) - spec.outline_width / 2.0) / pixel, 0.0, 1.0);
        cover = std::max(stroke, interior * cover);
      }
      for (std::size_t c = 0; c < 3; ++c) {
        double val = spec.background * (1.0 - cover) + color[c] * cover;
        if (spec.noise > 0.0) val += spec.noise * gauss(rng);
        out[(c * n + y) * n + x] = static_cast<float>(std::clamp(val, 0.0, 1.0));
      }
    }
  }
  return out;
}

vit::ImageBatch Dataset::batch(std::span<const std::size_t> indices) const {
  vit::ImageBatch b;
  b.count = indices.size();
  b.channels = channels;
  b.height = height;
  b.width = width;
  b.pixels.reserve(indices.size() * image_size());
  for (std::size_t i : indices) {
    if (i >= count) fail(ErrorCode::kOutOfRange, "dataset index " + std::to_string(i));
    const auto img = image(i);
    b.pixels.insert(b.pixels.end(), img.begin(), img.end());
  }
  return b;
}

vit::ImageBatch Dataset::all() const {
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = i;
  return batch(idx);
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out = *this;
  out.count = indices.size();
  out.images.clear();
  out.labels.clear();
  out.images.reserve(indices.size() * image_size());
  for (std::size_t i : indices) {
    if (i >= count) fail(ErrorCode::kOutOfRange, "dataset index " + std::to_string(i));
    const auto img = image(i);
    out.images.insert(out.images.end(), img.begin(), img.end());
    if (has_labels) out.labels.push_back(labels[i]);
  }
  return out;
}

Dataset Dataset::unlabeled() const {
  Dataset out = *this;
  out.has_labels = false;
  out.labels.clear();
  return out;
}

Dataset generate_synthetic(int classes, int per_class, const DomainSpec& spec, std::uint64_t seed,
                           int side) {
  if (classes < 2 || classes > kMaxShapeClasses)
    fail(ErrorCode::kInvalidSpec,
         "classes must lie in [2, " + std::to_string(kMaxShapeClasses) + "]");
  if (per_class < 1) fail(ErrorCode::kInvalidSpec, "per_class must be >= 1");
  if (side < 4) fail(ErrorCode::kInvalidSpec, "image side must be >= 4");
  Dataset ds;
  ds.count = static_cast<std::size_t>(classes) * static_cast<std::size_t>(per_class);
  ds.channels = 3;
  ds.height = ds.width = static_cast<std::size_t>(side);
  ds.num_classes = classes;
  ds.has_labels = true;
  ds.domain = spec.domain;
  for (int c = 0; c < classes; ++c) ds.class_names.emplace_back(kShapeNames[c]);
  ds.images.reserve(ds.count * ds.image_size());
  std::uint64_t domain_tag = 0;
  for (char ch : spec.domain) domain_tag = mix_seed(domain_tag ^ static_cast<unsigned char>(ch));
  for (int i = 0; i < per_class; ++i) {
    for (int c = 0; c < classes; ++c) {
      const auto ui = static_cast<std::uint64_t>(i), uc = static_cast<std::uint64_t>(c);
      const ShapePose pose = draw_pose(derive_seed(seed, {kPoseTag, uc, ui}));
      const auto img =
          render_shape(c, pose, spec, side, derive_seed(seed, {kNoiseTag, domain_tag, uc, ui}));
      ds.images.insert(ds.images.end(), img.begin(), img.end());
      ds.labels.push_back(c);
    }
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::kIoError, "cannot create " + dir.string() + ": " + ec.message());
  const nlohmann::json manifest = {{"version", kFormatVersion},
                                   {"count", ds.count},
                                   {"channels", ds.channels},
                                   {"height", ds.height},
                                   {"width", ds.width},
                                   {"classes", ds.num_classes},
                                   {"has_labels", ds.has_labels},
                                   {"domain", ds.domain},
                                   {"class_names", ds.class_names}};
  {
    std::ofstream os(dir / "manifest.json", std::ios::trunc);
    if (!os) fail(ErrorCode::kIoError, "cannot write manifest in " + dir.string());
    os << manifest.dump(2) << "\n";
  }
  {
    std::string payload(kImageMagic, 4);
    payload.reserve(4 + 4 * ds.images.size());
    for (float v : ds.images) put_f32_le(payload, v);
    std::ofstream os(dir / "images.bin", std::ios::binary | std::ios::trunc);
    os.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!os) fail(ErrorCode::kIoError, "cannot write images.bin in " + dir.string());
  }
  const auto labels_path = dir / "labels.csv";
  if (ds.has_labels) {
    std::ofstream os(labels_path, std::ios::trunc);
    os << "index,label\n";
    for (std::size_t i = 0; i < ds.labels.size(); ++i) os << i << "," << ds.labels[i] << "\n";
    if (!os) fail(ErrorCode::kIoError, "cannot write labels.csv in " + dir.string());
  } else {
    std::filesystem::remove(labels_path, ec);
  }
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path))
    fail(ErrorCode::kFileNotFound, "no manifest.json in " + dir.string());
  Dataset ds;
  try {
    const auto m = nlohmann::json::parse(read_all(manifest_path));
    if (m.at("version").get<int>() != kFormatVersion)
      fail(ErrorCode::kCorruptManifest, "unsupported dataset version");
    ds.count = m.at("count").get<std::size_t>();
    ds.channels = m.at("channels").get<std::size_t>();
    ds.height = m.at("height").get<std::size_t>();
    ds.width = m.at("width").get<std::size_t>();
    ds.num_classes = m.at("classes").get<int>();
    ds.has_labels = m.at("has_labels").get<bool>();
    ds.domain = m.value("domain", std::string());
    ds.class_names = m.value("class_names", std::vector<std::string>());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kCorruptManifest, std::string("dataset manifest: ") + e.what());
  }
  if (ds.channels == 0 || ds.height == 0 || ds.width == 0 || ds.num_classes < 1)
    fail(ErrorCode::kCorruptManifest, "dataset manifest has empty geometry");

  const std::string bytes = read_all(dir / "images.bin");
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kImageMagic, 4) != 0)
    fail(ErrorCode::kMagicMismatch, "images.bin lacks PMD1 magic in " + dir.string());
  const std::size_t expected = ds.count * ds.image_size();
  if (bytes.size() != 4 + 4 * expected)
    fail(ErrorCode::kTruncatedPayload, "images.bin holds " + std::to_string((bytes.size() - 4) / 4) +
                                           " floats, manifest implies " + std::to_string(expected));
  ds.images.resize(expected);
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data()) + 4;
  for (std::size_t i = 0; i < expected; ++i) ds.images[i] = get_f32_le(raw + 4 * i);

  if (ds.has_labels) {
    std::istringstream is(read_all(dir / "labels.csv"));
    std::string line;
    std::getline(is, line);  // header
    ds.labels.assign(ds.count, -1);
    std::size_t seen = 0;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const auto comma = line.find(',');
      if (comma == std::string::npos) fail(ErrorCode::kCorruptManifest, "bad labels.csv row");
      std::size_t index = 0;
      int label = 0;
      try {
        index = std::stoul(line.substr(0, comma));
        label = std::stoi(line.substr(comma + 1));
      } catch (const std::exception&) {
        fail(ErrorCode::kCorruptManifest, "bad labels.csv row '" + line + "'");
      }
      if (index >= ds.count || label < 0 || label >= ds.num_classes)
        fail(ErrorCode::kCorruptManifest, "labels.csv entry out of range: '" + line + "'");
      ds.labels[index] = label;
      ++seen;
    }
    if (seen != ds.count || std::count(ds.labels.begin(), ds.labels.end(), -1) != 0)
      fail(ErrorCode::kCorruptManifest, "labels.csv does not cover every image");
  }
  return ds;
}

AugmentDraw draw_augment(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  AugmentDraw d;
  d.flip = u(rng) < 0.5;
  d.crop_scale = 0.8 + 0.2 * u(rng);
  d.crop_x = u(rng);
  d.crop_y = u(rng);
  d.brightness = -0.2 + 0.4 * u(rng);
  return d;
}

void apply_augment(std::span<double> image, std::size_t channels, std::size_t side,
                   const AugmentDraw& draw) {
  if (draw.neutral()) return;
  const double n = static_cast<double>(side);
  const double window = draw.crop_scale * n;
  const double ox = draw.crop_x * (n - window);
  const double oy = draw.crop_y * (n - window);
  std::vector<double> src(image.begin(), image.end());
  const auto sample = [&](std::size_t c, double sy, double sx) {
    sx = std::clamp(sx, 0.0, n - 1.0);
    sy = std::clamp(sy, 0.0, n - 1.0);
    const auto x0 = static_cast<std::size_t>(sx), y0 = static_cast<std::size_t>(sy);
    const std::size_t x1 = std::min(x0 + 1, side - 1), y1 = std::min(y0 + 1, side - 1);
    const double fx = sx - static_cast<double>(x0), fy = sy - static_cast<double>(y0);
    const double* plane = src.data() + c * side * side;
    const double top = plane[y0 * side + x0] * (1 - fx) + plane[y0 * side + x1] * fx;
    const double bot = plane[y1 * side + x0] * (1 - fx) + plane[y1 * side + x1] * fx;
    return top * (1 - fy) + bot * fy;
  };
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t y = 0; y < side; ++y) {
      for (std::size_t x = 0; x < side; ++x) {
        const std::size_t read_x = draw.flip ? side - 1 - x : x;
        const double sx = ox + (static_cast<double>(read_x) + 0.5) * draw.crop_scale - 0.5;
        const double sy = oy + (static_cast<double>(y) + 0.5) * draw.crop_scale - 0.5;
        const double v = sample(c, sy, sx) + draw.brightness;
        image[(c * side + y) * side + x] = std::clamp(v, 0.0, 1.0);
      }
    }
  }
}

std::vector<double> augment(std::span<const double> image, std::size_t channels, std::size_t side,
                            std::uint64_t seed) {
  std::vector<double> out(image.begin(), image.end());
  apply_augment(out, channels, side, draw_augment(seed));
  return out;
}

}  // namespace pacmac::data
