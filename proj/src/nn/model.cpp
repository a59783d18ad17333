// SPDX-License-Identifier: Apache-2.0
#include "wetseg/nn/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

#include "wetseg/error.hpp"
#include "wetseg/hash.hpp"
#include "wetseg/rng.hpp"
#include "wetseg/tensor/ops.hpp"

namespace wetseg::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

const char* kind_name(ModelKind k) {
  return k == ModelKind::Autoencoder ? "autoencoder" : "unet";
}

ModelSpec ModelSpec::autoencoder(int in_channels) {
  ModelSpec s;
  s.in_channels = in_channels;
  return s;
}

ModelSpec ModelSpec::unet(int in_channels, int num_classes) {
  ModelSpec s;
  s.kind = ModelKind::UNet;
  s.in_channels = in_channels;
  s.num_classes = num_classes;
  return s;
}

void ModelSpec::validate() const {
  if (in_channels <= 0) throw ConfigError("model: in_channels must be > 0");
  if (base_channels <= 0) throw ConfigError("model: base_channels must be > 0");
  if (depth <= 0 || depth > 10) throw ConfigError("model: depth must be in 1..10");
  if (bridge_channels <= 0) throw ConfigError("model: bridge_channels must be > 0");
  if (!(dropout_p >= 0.0f && dropout_p < 1.0f)) throw ConfigError("model: dropout_p must be in [0,1)");
  if (kind == ModelKind::UNet && num_classes <= 0) throw ConfigError("model: num_classes must be > 0");
}

bool ModelSpec::same_encoder(const ModelSpec& o) const {
  return in_channels == o.in_channels && base_channels == o.base_channels && depth == o.depth &&
         bridge_channels == o.bridge_channels;
}

void to_json(nlohmann::json& j, const ModelSpec& s) {
  j = {{"kind", kind_name(s.kind)},
       {"in_channels", s.in_channels},
       {"base_channels", s.base_channels},
       {"depth", s.depth},
       {"bridge_channels", s.bridge_channels},
       {"dropout_p", float_for_json(s.dropout_p)},
       {"upsample", "nearest"}};
  if (s.kind == ModelKind::UNet) j["num_classes"] = s.num_classes;
}

void from_json(const nlohmann::json& j, ModelSpec& s) {
  try {
    const auto kind = j.value("kind", std::string(kind_name(s.kind)));
    if (kind == "autoencoder") s.kind = ModelKind::Autoencoder;
    else if (kind == "unet") s.kind = ModelKind::UNet;
    else throw ConfigError("model.kind: expected 'autoencoder' or 'unet', got '" + kind + "'");
    s.in_channels = j.value("in_channels", s.in_channels);
    s.base_channels = j.value("base_channels", s.base_channels);
    s.depth = j.value("depth", s.depth);
    s.bridge_channels = j.value("bridge_channels", s.bridge_channels);
    s.dropout_p = j.value("dropout_p", s.dropout_p);
    s.num_classes = j.value("num_classes", s.num_classes);
    if (j.value("upsample", std::string("nearest")) != "nearest")
      throw ConfigError("model.upsample: only 'nearest' is supported");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model spec: ") + e.what());
  }
}

namespace {

std::size_t conv_params(std::size_t in, std::size_t out, std::size_t k) {
  return out * in * k * k + out;
}

std::size_t block_params(std::size_t in, std::size_t out) {
  return conv_params(in, out, 3) + conv_params(out, out, 3);
}

std::string enc_block(int i) { return "encoder.block" + std::to_string(i); }
std::string dec_block(int i) { return "decoder.block" + std::to_string(i); }
const std::string kBridge = "encoder.bridge";

}  // namespace

std::size_t expected_parameter_count(const ModelSpec& s) {
  std::size_t total = 0;
  std::size_t prev = s.in_channels;
  for (int i = 0; i < s.depth; ++i) {
    total += block_params(prev, s.block_channels(i));
    prev = s.block_channels(i);
  }
  total += block_params(prev, s.bridge_channels);
  prev = s.bridge_channels;
  for (int i = s.depth - 1; i >= 0; --i) {
    const std::size_t c = s.block_channels(i);
    total += block_params(s.kind == ModelKind::UNet ? prev + c : prev, c);
    prev = c;
  }
  return total + conv_params(prev, s.out_channels(), 1);
}

std::vector<std::string> encoder_parameter_names(const ModelSpec& s) {
  std::vector<std::string> names;
  auto add_block = [&](const std::string& prefix) {
    for (const char* conv : {".conv1", ".conv2"})
      for (const char* p : {".weight", ".bias"}) names.push_back(prefix + conv + p);
  };
  for (int i = 0; i < s.depth; ++i) add_block(enc_block(i));
  add_block(kBridge);
  return names;
}

Model::Model(const ModelSpec& spec, std::uint64_t seed) : spec_(spec) {
  spec_.validate();
  std::uint64_t counter = 0;
  auto conv = [&](const std::string& prefix, int in, int out, int k) {
    // He-uniform: U(-b, b) with b = sqrt(6 / fan_in).
    auto rng = keyed_rng(seed, rng_stream::kInit, counter++);
    const float bound = std::sqrt(6.0f / static_cast<float>(in * k * k));
    std::uniform_real_distribution<float> u(-bound, bound);
    Tensor w({out, in, k, k});
    for (auto& v : w.data) v = u(rng);
    params_.add(prefix + ".weight", std::move(w));
    params_.add(prefix + ".bias", Tensor({1, out, 1, 1}, 0.0f));
  };
  auto block = [&](const std::string& prefix, int in, int out) {
    conv(prefix + ".conv1", in, out, 3);
    conv(prefix + ".conv2", out, out, 3);
  };

  int prev = spec_.in_channels;
  for (int i = 0; i < spec_.depth; ++i) {
    block(enc_block(i), prev, spec_.block_channels(i));
    prev = spec_.block_channels(i);
  }
  block(kBridge, prev, spec_.bridge_channels);
  prev = spec_.bridge_channels;
  for (int i = spec_.depth - 1; i >= 0; --i) {
    const int c = spec_.block_channels(i);
    block(dec_block(i), spec_.kind == ModelKind::UNet ? prev + c : prev, c);
    prev = c;
  }
  conv("head", prev, spec_.out_channels(), 1);
}

Var Model::block(const std::string& prefix, const Var& x, bool training,
                 std::mt19937_64* rng) const {
  auto p = [&](const char* s) -> const Var& { return params_.get(prefix + s); };
  auto y = relu(conv2d(x, p(".conv1.weight"), p(".conv1.bias"), 1, 1));
  y = relu(conv2d(y, p(".conv2.weight"), p(".conv2.bias"), 1, 1));
  if (training && spec_.dropout_p > 0.0f) {
    if (!rng) throw ConfigError("training forward needs a dropout RNG");
    y = dropout(y, spec_.dropout_p, true, *rng);
  }
  return y;
}

ForwardTrace Model::encode(const Var& x, bool training, std::mt19937_64* rng) const {
  const auto& s = x.shape();
  if (s.c != spec_.in_channels)
    throw DataError("model expects " + std::to_string(spec_.in_channels) + " input channels, got " +
                    std::to_string(s.c));
  const int factor = 1 << spec_.depth;
  if (s.h % factor != 0 || s.w % factor != 0)
    throw DataError("input " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                    " is not divisible by 2^" + std::to_string(spec_.depth));
  ForwardTrace t;
  Var h = x;
  for (int i = 0; i < spec_.depth; ++i) {
    h = block(enc_block(i), h, training, rng);
    t.skips.push_back(h);
    h = maxpool2(h);
  }
  t.bridge = block(kBridge, h, training, rng);
  return t;
}

Var Model::forward(const Var& x, bool training, std::mt19937_64* rng, ForwardTrace* trace) const {
  auto t = encode(x, training, rng);
  Var h = t.bridge;
  for (int i = spec_.depth - 1; i >= 0; --i) {
    h = upsample2(h);
    if (spec_.kind == ModelKind::UNet) h = concat_channels(h, t.skips[i]);
    h = block(dec_block(i), h, training, rng);
  }
  h = conv2d(h, params_.get("head.weight"), params_.get("head.bias"));
  if (spec_.kind == ModelKind::Autoencoder) h = sigmoid(h);
  if (trace) *trace = std::move(t);
  return h;
}

Model build_autoencoder(const ModelSpec& spec, std::uint64_t seed) {
  if (spec.kind != ModelKind::Autoencoder) throw ConfigError("build_autoencoder: spec is a U-Net");
  return Model(spec, seed);
}

Model build_unet(const ModelSpec& spec, std::uint64_t seed) {
  if (spec.kind != ModelKind::UNet) throw ConfigError("build_unet: spec is an autoencoder");
  return Model(spec, seed);
}

// ---- checkpoints ----

const Tensor& ModelCheckpoint::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw DataError("checkpoint has no tensor '" + name + "'");
}

ModelCheckpoint make_checkpoint(const Model& model, nlohmann::json provenance) {
  ModelCheckpoint c;
  c.spec = model.spec();
  if (!provenance.is_null()) c.provenance = std::move(provenance);
  for (const auto& name : model.params().names())
    c.tensors.emplace_back(name, model.params().get(name).value());
  return c;
}

void load_weights(Model& model, const ModelCheckpoint& ckpt) {
  if (!(ckpt.spec == model.spec()))
    throw ConfigError("checkpoint spec " + nlohmann::json(ckpt.spec).dump() +
                      " does not match model spec " + nlohmann::json(model.spec()).dump());
  std::set<std::string> seen;
  for (const auto& [name, t] : ckpt.tensors) {
    if (!seen.insert(name).second) throw DataError("checkpoint repeats tensor '" + name + "'");
    if (!model.params().contains(name)) throw DataError("checkpoint has unknown tensor '" + name + "'");
  }
  for (const auto& name : model.params().names()) {
    if (!seen.count(name)) throw DataError("checkpoint is missing tensor '" + name + "'");
    const auto& src = ckpt.tensor(name);
    auto dst = model.params().get(name);
    if (!(src.shape == dst.shape()))
      throw DataError("checkpoint tensor '" + name + "' has shape " + src.shape.str() +
                      ", model expects " + dst.shape().str());
    dst.mutable_value().data = src.data;
  }
}

namespace {

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}
  template <typename T>
  T get() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  const std::uint8_t* take(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw DataError("checkpoint truncated");
    const auto* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ModelCheckpoint& c) {
  std::vector<std::uint8_t> out{'W', 'S', 'C', 'K'};
  put<std::uint16_t>(out, c.version);
  const std::string header = nlohmann::json{{"spec", c.spec}, {"provenance", c.provenance}}.dump();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(header.size()));
  out.insert(out.end(), header.begin(), header.end());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& [name, t] : c.tensors) {
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put<std::uint8_t>(out, 4);
    for (int d : {t.shape.n, t.shape.c, t.shape.h, t.shape.w}) put<std::uint32_t>(out, d);
    const auto* p = reinterpret_cast<const std::uint8_t*>(t.data.data());
    out.insert(out.end(), p, p + t.data.size() * sizeof(float));
  }
  return out;
}

ModelCheckpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (bytes.size() < 4 || std::memcmp(r.take(4), "WSCK", 4) != 0)
    throw DataError("not a checkpoint (bad magic)");
  ModelCheckpoint c;
  c.version = r.get<std::uint16_t>();
  if (c.version != ModelCheckpoint::kVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(c.version));
  const auto hlen = r.get<std::uint32_t>();
  const auto* h = reinterpret_cast<const char*>(r.take(hlen));
  try {
    const auto header = nlohmann::json::parse(h, h + hlen);
    c.spec = header.at("spec").get<ModelSpec>();
    c.provenance = header.value("provenance", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint header: ") + e.what());
  }
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto nlen = r.get<std::uint16_t>();
    const auto* n = reinterpret_cast<const char*>(r.take(nlen));
    std::string name(n, n + nlen);
    const auto rank = r.get<std::uint8_t>();
    if (rank < 1 || rank > 4) throw DataError("checkpoint tensor '" + name + "' has rank " + std::to_string(rank));
    int dims[4] = {1, 1, 1, 1};
    for (int d = 0; d < rank; ++d) dims[4 - rank + d] = static_cast<int>(r.get<std::uint32_t>());
    Tensor t({dims[0], dims[1], dims[2], dims[3]});
    std::memcpy(t.data.data(), r.take(t.numel() * sizeof(float)), t.numel() * sizeof(float));
    c.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (!r.done()) throw DataError("checkpoint has trailing bytes");
  return c;
}

void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream f(path, std::ios::binary);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("cannot write checkpoint " + path.string());
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
  try {
    return decode_checkpoint(bytes);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path, ModelKind kind) {
  auto c = load_checkpoint(path);
  if (c.spec.kind != kind)
    throw ConfigError(path.string() + ": checkpoint holds a " + kind_name(c.spec.kind) +
                      ", expected a " + kind_name(kind));
  return c;
}

void transfer_encoder(const ModelCheckpoint& ae, Model& unet, bool freeze) {
  if (ae.spec.kind != ModelKind::Autoencoder)
    throw ConfigError("transfer_encoder: source checkpoint is not an autoencoder");
  if (unet.spec().kind != ModelKind::UNet)
    throw ConfigError("transfer_encoder: target model is not a U-Net");

  auto is_encoder = [](const std::string& n) { return n.rfind("encoder.", 0) == 0; };
  std::set<std::string> src, dst;
  for (const auto& [n, t] : ae.tensors)
    if (is_encoder(n)) src.insert(n);
  for (const auto& n : unet.params().names())
    if (is_encoder(n)) dst.insert(n);
  if (src != dst) {
    std::string diff;
    for (const auto& n : src)
      if (!dst.count(n)) diff += " -" + n;
    for (const auto& n : dst)
      if (!src.count(n)) diff += " +" + n;
    throw DataError("encoder parameter names differ (- autoencoder only, + U-Net only):" + diff);
  }
  // Check every shape before touching the model.
  for (const auto& name : unet.params().names()) {
    if (!is_encoder(name)) continue;
    const auto& s = ae.tensor(name).shape;
    const auto& d = unet.params().get(name).shape();
    if (!(s == d))
      throw DataError("shape mismatch for '" + name + "': autoencoder " + s.str() + ", U-Net " +
                      d.str());
  }
  for (const auto& name : unet.params().names()) {
    if (!is_encoder(name)) continue;
    auto p = unet.params().get(name);
    p.mutable_value().data = ae.tensor(name).data;
    unet.params().set_frozen(name, freeze);
  }
}

}  // namespace wetseg::nn
