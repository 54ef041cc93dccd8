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

#include "pacmac/vit.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "json.hpp"
#include "pacmac/error.hpp"

namespace pacmac::vit {

using ad::Tensor;

void ViTConfig::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorCode::kInvalidConfig, what); };
  if (image_size <= 0 || patch_size <= 0 || channels <= 0) bad("image geometry must be positive");
  if (image_size % patch_size != 0) bad("image_size must be divisible by patch_size");
  if (depth <= 0) bad("depth must be positive");
  if (heads <= 0 || embed_dim <= 0) bad("heads and embed_dim must be positive");
  if (embed_dim % heads != 0) bad("embed_dim must be divisible by heads");
  if (mlp_ratio <= 0) bad("mlp_ratio must be positive");
  if (num_classes < 2) bad("num_classes must be at least 2");
  if (attention_layer < -1 || attention_layer >= depth) bad("attention_layer out of range");
}

void ImageBatch::push_back(std::span<const double> img) {
  if (img.size() != image_size()) fail(ErrorCode::kShapeMismatch, "ImageBatch: image size");
  pixels.insert(pixels.end(), img.begin(), img.end());
  ++count;
}

int ForwardResult::prediction() const {
  return static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

double ForwardResult::confidence() const { return *std::max_element(probs.begin(), probs.end()); }

namespace {

class ParamInit {
 public:
  explicit ParamInit(std::uint64_t seed) : rng_(seed) {}

  Tensor trunc_normal(ad::Shape shape) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> v(ad::shape_size(shape));
    for (double& x : v) {
      double z;
      do {
        z = normal(rng_);
      } while (std::abs(z) > 2.0);
      x = 0.02 * z;
    }
    return Tensor::parameter(std::move(shape), std::move(v));
  }

  static Tensor filled(ad::Shape shape, double value) {
    std::vector<double> v(ad::shape_size(shape), value);
    return Tensor::parameter(std::move(shape), std::move(v));
  }

  BlockParams block(std::size_t d, std::size_t hidden) {
    BlockParams b;
    b.ln1_gain = filled({d}, 1.0);
    b.ln1_bias = filled({d}, 0.0);
    b.qkv_weight = trunc_normal({d, 3 * d});
    b.qkv_bias = filled({3 * d}, 0.0);
    b.proj_weight = trunc_normal({d, d});
    b.proj_bias = filled({d}, 0.0);
    b.ln2_gain = filled({d}, 1.0);
    b.ln2_bias = filled({d}, 0.0);
    b.fc1_weight = trunc_normal({d, hidden});
    b.fc1_bias = filled({hidden}, 0.0);
    b.fc2_weight = trunc_normal({hidden, d});
    b.fc2_bias = filled({d}, 0.0);
    return b;
  }

 private:
  std::mt19937_64 rng_;
};

void append_block(std::vector<NamedParameter>& out, const std::string& prefix,
                  const BlockParams& b, int layer) {
  auto add = [&](const char* name, const Tensor& t, bool decay) {
    out.push_back({prefix + name, t, layer, decay});
  };
  add("norm1.weight", b.ln1_gain, false);
  add("norm1.bias", b.ln1_bias, false);
  add("attn.qkv.weight", b.qkv_weight, true);
  add("attn.qkv.bias", b.qkv_bias, false);
  add("attn.proj.weight", b.proj_weight, true);
  add("attn.proj.bias", b.proj_bias, false);
  add("norm2.weight", b.ln2_gain, false);
  add("norm2.bias", b.ln2_bias, false);
  add("mlp.fc1.weight", b.fc1_weight, true);
  add("mlp.fc1.bias", b.fc1_bias, false);
  add("mlp.fc2.weight", b.fc2_weight, true);
  add("mlp.fc2.bias", b.fc2_bias, false);
}

BlockParams clone_block(const BlockParams& b) {
  return {b.ln1_gain.clone_leaf(),    b.ln1_bias.clone_leaf(),  b.qkv_weight.clone_leaf(),
          b.qkv_bias.clone_leaf(),    b.proj_weight.clone_leaf(), b.proj_bias.clone_leaf(),
          b.ln2_gain.clone_leaf(),    b.ln2_bias.clone_leaf(),  b.fc1_weight.clone_leaf(),
          b.fc1_bias.clone_leaf(),    b.fc2_weight.clone_leaf(), b.fc2_bias.clone_leaf()};
}

}  // namespace

std::vector<NamedParameter> ViTParams::named_parameters() const {
  std::vector<NamedParameter> out;
  out.push_back({"patch_embed.weight", patch_weight, 0, true});
  out.push_back({"patch_embed.bias", patch_bias, 0, false});
  out.push_back({"cls_token", cls_token, 0, false});
  out.push_back({"pos_embed", pos_embed, 0, false});
  for (std::size_t i = 0; i < blocks.size(); ++i)
    append_block(out, "blocks." + std::to_string(i) + ".", blocks[i], static_cast<int>(i) + 1);
  const int top = static_cast<int>(blocks.size()) + 1;
  out.push_back({"norm.weight", norm_gain, top, false});
  out.push_back({"norm.bias", norm_bias, top, false});
  out.push_back({"head.weight", head_weight, top, true});
  out.push_back({"head.bias", head_bias, top, false});
  if (decoder) {
    const DecoderParams& d = *decoder;
    out.push_back({"decoder/embed.weight", d.embed_weight, -1, true});
    out.push_back({"decoder/embed.bias", d.embed_bias, -1, false});
    out.push_back({"decoder/mask_token", d.mask_token, -1, false});
    out.push_back({"decoder/pos_embed", d.pos_embed, -1, false});
    append_block(out, "decoder/block.", d.block, -1);
    out.push_back({"decoder/norm.weight", d.norm_gain, -1, false});
    out.push_back({"decoder/norm.bias", d.norm_bias, -1, false});
    out.push_back({"decoder/pred.weight", d.pred_weight, -1, true});
    out.push_back({"decoder/pred.bias", d.pred_bias, -1, false});
  }
  return out;
}

ViTParams ViTParams::clone() const {
  ViTParams p;
  p.config = config;
  p.patch_weight = patch_weight.clone_leaf();
  p.patch_bias = patch_bias.clone_leaf();
  p.cls_token = cls_token.clone_leaf();
  p.pos_embed = pos_embed.clone_leaf();
  for (const auto& b : blocks) p.blocks.push_back(clone_block(b));
  p.norm_gain = norm_gain.clone_leaf();
  p.norm_bias = norm_bias.clone_leaf();
  p.head_weight = head_weight.clone_leaf();
  p.head_bias = head_bias.clone_leaf();
  if (decoder) {
    const DecoderParams& d = *decoder;
    p.decoder = DecoderParams{d.embed_weight.clone_leaf(), d.embed_bias.clone_leaf(),
                              d.mask_token.clone_leaf(),   d.pos_embed.clone_leaf(),
                              clone_block(d.block),        d.norm_gain.clone_leaf(),
                              d.norm_bias.clone_leaf(),    d.pred_weight.clone_leaf(),
                              d.pred_bias.clone_leaf()};
  }
  return p;
}

void ViTParams::zero_grad() const {
  for (auto& np : named_parameters()) {
    ad::Tensor t = np.tensor;
    t.zero_grad();
  }
}

ViTParams init_params(const ViTConfig& config, std::uint64_t seed) {
  config.validate();
  ParamInit init(seed);
  const auto d = static_cast<std::size_t>(config.embed_dim);
  const std::size_t hidden = d * static_cast<std::size_t>(config.mlp_ratio);
  ViTParams p;
  p.config = config;
  p.patch_weight = init.trunc_normal({config.patch_dim(), d});
  p.patch_bias = ParamInit::filled({d}, 0.0);
  p.cls_token = init.trunc_normal({d});
  p.pos_embed = init.trunc_normal({config.tokens(), d});
  for (int i = 0; i < config.depth; ++i) p.blocks.push_back(init.block(d, hidden));
  p.norm_gain = ParamInit::filled({d}, 1.0);
  p.norm_bias = ParamInit::filled({d}, 0.0);
  p.head_weight = init.trunc_normal({d, static_cast<std::size_t>(config.num_classes)});
  p.head_bias = ParamInit::filled({static_cast<std::size_t>(config.num_classes)}, 0.0);
  return p;
}

void attach_decoder(ViTParams& params, std::uint64_t seed) {
  const ViTConfig& config = params.config;
  // Independent stream so attaching a decoder never perturbs encoder init.
  ParamInit init(seed ^ 0x9e3779b97f4a7c15ULL);
  const auto d = static_cast<std::size_t>(config.embed_dim);
  const std::size_t hidden = d * static_cast<std::size_t>(config.mlp_ratio);
  DecoderParams dec;
  dec.embed_weight = init.trunc_normal({d, d});
  dec.embed_bias = ParamInit::filled({d}, 0.0);
  dec.mask_token = init.trunc_normal({d});
  dec.pos_embed = init.trunc_normal({config.tokens(), d});
  dec.block = init.block(d, hidden);
  dec.norm_gain = ParamInit::filled({d}, 1.0);
  dec.norm_bias = ParamInit::filled({d}, 0.0);
  dec.pred_weight = init.trunc_normal({d, config.patch_dim()});
  dec.pred_bias = ParamInit::filled({config.patch_dim()}, 0.0);
  params.decoder = std::move(dec);
}

Tensor patchify(const ViTConfig& config, const ImageBatch& images) {
  const auto side = static_cast<std::size_t>(config.image_size);
  const auto ch = static_cast<std::size_t>(config.channels);
  if (images.channels != ch || images.height != side || images.width != side)
    fail(ErrorCode::kShapeMismatch, "forward: images are " + std::to_string(images.channels) +
                                        "x" + std::to_string(images.height) + "x" +
                                        std::to_string(images.width) + ", model expects " +
                                        std::to_string(ch) + "x" + std::to_string(side) + "x" +
                                        std::to_string(side));
  if (images.count == 0 || images.pixels.size() != images.count * images.image_size())
    fail(ErrorCode::kShapeMismatch, "forward: empty or inconsistent image batch");
  const auto p = static_cast<std::size_t>(config.patch_size);
  const std::size_t grid = config.grid();
  const std::size_t n = config.num_patches();
  const std::size_t pd = config.patch_dim();
  std::vector<double> out(images.count * n * pd);
  for (std::size_t b = 0; b < images.count; ++b) {
    const auto img = images.image(b);
    for (std::size_t gy = 0; gy < grid; ++gy) {
      for (std::size_t gx = 0; gx < grid; ++gx) {
        double* dst = out.data() + (b * n + gy * grid + gx) * pd;
        for (std::size_t c = 0; c < ch; ++c)
          for (std::size_t y = 0; y < p; ++y)
            for (std::size_t x = 0; x < p; ++x)
              *dst++ = img[(c * side + gy * p + y) * side + gx * p + x];
      }
    }
  }
  return Tensor::constant({images.count, n, pd}, std::move(out));
}

Tensor transformer_block(const BlockParams& blk, const Tensor& x, std::size_t heads,
                         std::vector<double>* attention_out) {
  const std::size_t batch = x.dim(0);
  const std::size_t t = x.dim(1);
  const std::size_t d = x.dim(2);
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor h = ad::layer_norm(x, blk.ln1_gain, blk.ln1_bias);
  Tensor qkv = ad::add(ad::matmul(h, blk.qkv_weight), blk.qkv_bias);
  std::vector<Tensor> outs;
  outs.reserve(heads);
  if (attention_out) attention_out->assign(batch * (t - 1), 0.0);
  for (std::size_t i = 0; i < heads; ++i) {
    Tensor q = ad::slice(qkv, 2, i * dh, dh);
    Tensor k = ad::slice(qkv, 2, d + i * dh, dh);
    Tensor v = ad::slice(qkv, 2, 2 * d + i * dh, dh);
    Tensor att = ad::softmax_rows(ad::scale(ad::matmul(q, ad::transpose(k)), inv_sqrt));
    if (attention_out) {
      const auto av = att.values();
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t j = 1; j < t; ++j)
          (*attention_out)[b * (t - 1) + j - 1] += av[b * t * t + j];
    }
    outs.push_back(ad::matmul(att, v));
  }
  if (attention_out) {
    for (double& a : *attention_out) a /= static_cast<double>(heads);
  }
  Tensor merged = heads == 1 ? outs[0] : ad::concat(outs, 2);
  Tensor y = ad::add(x, ad::add(ad::matmul(merged, blk.proj_weight), blk.proj_bias));
  Tensor h2 = ad::layer_norm(y, blk.ln2_gain, blk.ln2_bias);
  Tensor m = ad::gelu(ad::add(ad::matmul(h2, blk.fc1_weight), blk.fc1_bias));
  m = ad::add(ad::matmul(m, blk.fc2_weight), blk.fc2_bias);
  return ad::add(y, m);
}

EncoderOutput forward_graph(const ViTParams& params, const ImageBatch& images) {
  const ViTConfig& cfg = params.config;
  const Tensor patches = patchify(cfg, images);
  const std::size_t batch = images.count;
  const auto d = static_cast<std::size_t>(cfg.embed_dim);

  Tensor emb = ad::add(ad::matmul(patches, params.patch_weight), params.patch_bias);
  Tensor cls = ad::add(Tensor::zeros({batch, 1, d}), params.cls_token);
  const Tensor parts[] = {cls, emb};
  Tensor x = ad::add(ad::concat(parts, 1), params.pos_embed);

  EncoderOutput out;
  const std::size_t probe_layer = cfg.resolved_attention_layer();
  for (std::size_t i = 0; i < params.blocks.size(); ++i) {
    x = transformer_block(params.blocks[i], x, static_cast<std::size_t>(cfg.heads),
                          i == probe_layer ? &out.attention : nullptr);
  }
  out.tokens = ad::layer_norm(x, params.norm_gain, params.norm_bias);
  out.cls = ad::reshape(ad::slice(out.tokens, 1, 0, 1), {batch, d});
  out.logits = ad::add(ad::matmul(out.cls, params.head_weight), params.head_bias);
  return out;
}

std::vector<ForwardResult> forward(const ViTParams& params, const ImageBatch& images) {
  ad::NoGradGuard no_grad;
  const EncoderOutput enc = forward_graph(params, images);
  const Tensor probs = ad::softmax_rows(enc.logits);
  const std::size_t c = static_cast<std::size_t>(params.config.num_classes);
  const std::size_t d = static_cast<std::size_t>(params.config.embed_dim);
  const std::size_t n = params.config.num_patches();
  std::vector<ForwardResult> out(images.count);
  for (std::size_t b = 0; b < images.count; ++b) {
    auto take = [b](std::span<const double> v, std::size_t w) {
      return std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(b * w),
                                 v.begin() + static_cast<std::ptrdiff_t>((b + 1) * w));
    };
    out[b].logits = take(enc.logits.values(), c);
    out[b].probs = take(probs.values(), c);
    out[b].cls_embedding = take(enc.cls.values(), d);
    out[b].attention.scores = take(enc.attention, n);
  }
  return out;
}

std::vector<std::vector<double>> encode_cls(const ViTParams& params, const ImageBatch& images) {
  ad::NoGradGuard no_grad;
  const EncoderOutput enc = forward_graph(params, images);
  const std::size_t d = static_cast<std::size_t>(params.config.embed_dim);
  std::vector<std::vector<double>> out(images.count);
  const auto v = enc.cls.values();
  for (std::size_t b = 0; b < images.count; ++b)
    out[b].assign(v.begin() + static_cast<std::ptrdiff_t>(b * d),
                  v.begin() + static_cast<std::ptrdiff_t>((b + 1) * d));
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kCheckpointMagic[4] = {'P', 'M', 'C', '1'};

nlohmann::json config_to_json(const ViTConfig& c) {
  return {{"image_size", c.image_size}, {"patch_size", c.patch_size},
          {"channels", c.channels},     {"depth", c.depth},
          {"heads", c.heads},           {"embed_dim", c.embed_dim},
          {"mlp_ratio", c.mlp_ratio},   {"num_classes", c.num_classes},
          {"attention_layer", c.attention_layer}};
}

ViTConfig config_from_json(const nlohmann::json& j) {
  ViTConfig c;
  c.image_size = j.at("image_size").get<int>();
  c.patch_size = j.at("patch_size").get<int>();
  c.channels = j.at("channels").get<int>();
  c.depth = j.at("depth").get<int>();
  c.heads = j.at("heads").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.mlp_ratio = j.at("mlp_ratio").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  c.attention_layer = j.value("attention_layer", -1);
  return c;
}

void put_u64_le(std::ostream& os, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
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

}  // namespace

namespace {
void fill_from_manifest(ViTParams& params, const nlohmann::json& manifest,
                        const std::string& bytes, std::size_t payload_start);
}  // namespace

void save_checkpoint(const ViTParams& params, const std::filesystem::path& path) {
  nlohmann::json manifest = nlohmann::json::array();
  std::string payload;
  for (const auto& np : params.named_parameters()) {
    manifest.push_back({{"name", np.name},
                        {"shape", np.tensor.shape()},
                        {"offset", payload.size()}});
    for (double v : np.tensor.values()) put_f32_le(payload, static_cast<float>(v));
  }
  const nlohmann::json header = {{"format", "PMC1"},
                                 {"config", config_to_json(params.config)},
                                 {"has_decoder", params.decoder.has_value()},
                                 {"parameters", manifest}};
  const std::string text = header.dump();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(ErrorCode::kIoError, "cannot write checkpoint " + path.string());
  os.write(kCheckpointMagic, 4);
  put_u64_le(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  os.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!os) fail(ErrorCode::kIoError, "short write on checkpoint " + path.string());
}

ViTParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::kFileNotFound, "checkpoint not found: " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    fail(ErrorCode::kMagicMismatch, "not a PMC1 checkpoint: " + path.string());
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint64_t header_len = get_u64_le(raw + 4);
  if (12 + header_len > bytes.size())
    fail(ErrorCode::kTruncatedPayload, "checkpoint header truncated: " + path.string());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(12, header_len));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kCorruptManifest, std::string("checkpoint header: ") + e.what());
  }
  ViTParams params;
  try {
    params = init_params(config_from_json(header.at("config")), 0);
    if (header.value("has_decoder", false)) attach_decoder(params, 0);
    fill_from_manifest(params, header.at("parameters"), bytes, 12 + header_len);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kCorruptManifest, std::string("checkpoint header: ") + e.what());
  }
  return params;
}

namespace {

void fill_from_manifest(ViTParams& params, const nlohmann::json& manifest,
                        const std::string& bytes, std::size_t payload_start) {
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  auto named = params.named_parameters();
  if (manifest.size() != named.size())
    fail(ErrorCode::kCorruptManifest, "checkpoint parameter count mismatch");
  for (std::size_t i = 0; i < named.size(); ++i) {
    const auto& entry = manifest[i];
    if (entry.at("name").get<std::string>() != named[i].name ||
        entry.at("shape").get<ad::Shape>() != named[i].tensor.shape())
      fail(ErrorCode::kCorruptManifest, "checkpoint entry mismatch at " + named[i].name);
    const std::size_t offset = payload_start + entry.at("offset").get<std::size_t>();
    const std::size_t count = named[i].tensor.size();
    if (offset + 4 * count > bytes.size())
      fail(ErrorCode::kTruncatedPayload, "checkpoint payload truncated at " + named[i].name);
    auto dst = named[i].tensor.mutable_values();
    for (std::size_t k = 0; k < count; ++k) dst[k] = get_f32_le(raw + offset + 4 * k);
  }
}

}  // namespace

void quantize_to_storage(ViTParams& params) {
  for (auto& np : params.named_parameters()) {
    for (double& v : np.tensor.mutable_values()) v = static_cast<double>(static_cast<float>(v));
  }
}

}  // namespace pacmac::vit
