// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "doctest.h"
#include "support/gradcheck.hpp"
#include "support/temp_dir.hpp"
#include "wetseg/error.hpp"
#include "wetseg/nn/model.hpp"
#include "wetseg/tensor/ops.hpp"

using namespace wetseg;
using namespace wetseg::nn;
using wetseg::testing::random_tensor;
using wetseg::testing::TempDir;

namespace {

ModelSpec small(ModelKind kind, int in = 3) {
  ModelSpec s = kind == ModelKind::UNet ? ModelSpec::unet(in, 5) : ModelSpec::autoencoder(in);
  s.base_channels = 4;
  s.bridge_channels = 16;
  s.depth = 3;
  return s;
}

// Parameter count by summing every layer of the block diagram written out by hand.
std::size_t full_width_count(bool unet, std::size_t in, std::size_t out) {
  auto conv = [](std::size_t a, std::size_t b, std::size_t k) { return b * a * k * k + b; };
  auto block = [&](std::size_t a, std::size_t b) { return conv(a, b, 3) + conv(b, b, 3); };
  std::size_t n = block(in, 64) + block(64, 128) + block(128, 256) + block(256, 512);
  n += block(512, 512);  // bridge
  if (unet)
    n += block(512 + 512, 512) + block(512 + 256, 256) + block(256 + 128, 128) + block(128 + 64, 64);
  else
    n += block(512, 512) + block(512, 256) + block(256, 128) + block(128, 64);
  return n + conv(64, out, 1);
}

}  // namespace

TEST_CASE("autoencoder on a 256x256x9 patch") {
  const auto ae = build_autoencoder(ModelSpec::autoencoder(9), 1);
  std::mt19937 rng(1);
  NoGradGuard g;
  ForwardTrace trace;
  const auto y = ae.forward(Var(random_tensor({1, 9, 256, 256}, rng, 0, 1)), false, nullptr, &trace);
  CHECK(y.shape() == Shape{1, 9, 256, 256});
  CHECK(trace.bridge.shape() == Shape{1, 512, 16, 16});
  REQUIRE(trace.skips.size() == 4);
  CHECK(trace.skips[0].shape() == Shape{1, 64, 256, 256});
  CHECK(trace.skips[3].shape() == Shape{1, 512, 32, 32});
  for (float v : y.value().data) REQUIRE((v >= 0.0f && v <= 1.0f));
}

TEST_CASE("autoencoder encoder on a 1024x1024x4 high-resolution patch") {
  const auto ae = build_autoencoder(ModelSpec::autoencoder(4), 1);
  NoGradGuard g;
  const auto t = ae.encode(Var(Tensor({1, 4, 1024, 1024}, 0.5f)));
  CHECK(t.bridge.shape() == Shape{1, 512, 64, 64});
}

TEST_CASE("high-resolution output shape with reduced width") {
  auto s = ModelSpec::autoencoder(4);
  s.base_channels = 2;
  s.bridge_channels = 16;
  const auto ae = build_autoencoder(s, 1);
  NoGradGuard g;
  ForwardTrace t;
  const auto y = ae.forward(Var(Tensor({1, 4, 1024, 1024}, 0.5f)), false, nullptr, &t);
  CHECK(y.shape() == Shape{1, 4, 1024, 1024});
  CHECK(t.bridge.shape() == Shape{1, 16, 64, 64});
}

TEST_CASE("16x16 input reaches a 1x1 bridge; indivisible inputs are rejected") {
  const auto ae = build_autoencoder(ModelSpec::autoencoder(9), 1);
  NoGradGuard g;
  ForwardTrace t;
  const auto y = ae.forward(Var(Tensor({2, 9, 16, 16}, 0.5f)), false, nullptr, &t);
  CHECK(y.shape() == Shape{2, 9, 16, 16});
  CHECK(t.bridge.shape() == Shape{2, 512, 1, 1});
  CHECK_THROWS_AS(ae.forward(Var(Tensor({1, 9, 24, 16}, 0.5f))), DataError);
  CHECK_THROWS_AS(ae.forward(Var(Tensor({1, 4, 16, 16}, 0.5f))), DataError);
}

TEST_CASE("U-Net on a 256x256x9 patch gives nine class logits") {
  const auto unet = build_unet(ModelSpec::unet(9, 9), 2);
  std::mt19937 rng(2);
  NoGradGuard g;
  const auto y = unet.forward(Var(random_tensor({1, 9, 256, 256}, rng, 0, 1)));
  CHECK(y.shape() == Shape{1, 9, 256, 256});
}

TEST_CASE("U-Net with all-zero weights predicts a uniform distribution") {
  auto unet = build_unet(small(ModelKind::UNet), 3);
  for (const auto& name : unet.params().names()) {
    auto p = unet.params().get(name);
    std::fill(p.mutable_value().data.begin(), p.mutable_value().data.end(), 0.0f);
  }
  std::mt19937 rng(3);
  NoGradGuard g;
  const auto p = softmax_channels(unet.forward(Var(random_tensor({1, 3, 16, 16}, rng)))).value();
  for (float v : p.data) CHECK(v == doctest::Approx(1.0 / 5.0).epsilon(1e-6));
}

TEST_CASE("parameter count matches the closed form") {
  CHECK(build_autoencoder(ModelSpec::autoencoder(9)).params().parameter_count() ==
        full_width_count(false, 9, 9));
  CHECK(build_unet(ModelSpec::unet(9, 9)).params().parameter_count() ==
        full_width_count(true, 9, 9));
  CHECK(expected_parameter_count(ModelSpec::autoencoder(4)) == full_width_count(false, 4, 4));
  CHECK(expected_parameter_count(ModelSpec::unet(4, 5)) == full_width_count(true, 4, 5));
  for (auto kind : {ModelKind::Autoencoder, ModelKind::UNet}) {
    const auto s = small(kind);
    CHECK(Model(s, 0).params().parameter_count() == expected_parameter_count(s));
  }
}

TEST_CASE("encoder names agree between the two models") {
  const auto ae = build_autoencoder(small(ModelKind::Autoencoder), 0);
  const auto unet = build_unet(small(ModelKind::UNet), 0);
  const auto names = encoder_parameter_names(ae.spec());
  CHECK(names == encoder_parameter_names(unet.spec()));
  CHECK(names.front() == "encoder.block0.conv1.weight");
  CHECK(names.back() == "encoder.bridge.conv2.bias");
  for (const auto& n : names) {
    CHECK(ae.params().contains(n));
    CHECK(unet.params().contains(n));
  }
}

TEST_CASE("initialization is deterministic per seed") {
  const auto a = make_checkpoint(Model(small(ModelKind::Autoencoder), 5));
  const auto b = make_checkpoint(Model(small(ModelKind::Autoencoder), 5));
  const auto c = make_checkpoint(Model(small(ModelKind::Autoencoder), 6));
  CHECK(encode_checkpoint(a) == encode_checkpoint(b));
  CHECK(encode_checkpoint(a) != encode_checkpoint(c));
  // He-uniform bound sqrt(6 / fan_in).
  const auto& w = a.tensor("encoder.block0.conv1.weight");
  const float bound = std::sqrt(6.0f / 27.0f);
  for (float v : w.data) CHECK(std::abs(v) <= bound);
  for (float v : a.tensor("encoder.block0.conv1.bias").data) CHECK(v == 0.0f);
}

TEST_CASE("U-Net argmax equals the probability-cube argmax") {
  const auto unet = build_unet(small(ModelKind::UNet), 7);
  std::mt19937 rng(7);
  NoGradGuard g;
  const auto logits = unet.forward(Var(random_tensor({1, 3, 16, 16}, rng)));
  const auto p = softmax_channels(logits).value();
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      int best_p = 0, best_l = 0;
      for (int c = 1; c < 5; ++c) {
        if (p.at(0, c, y, x) > p.at(0, best_p, y, x)) best_p = c;
        if (logits.value().at(0, c, y, x) > logits.value().at(0, best_l, y, x)) best_l = c;
      }
      CHECK(best_p == best_l);
    }
}

TEST_CASE("eval-mode forwards are bitwise repeatable; training mode applies dropout") {
  const auto ae = build_autoencoder(small(ModelKind::Autoencoder), 8);
  std::mt19937 rng(8);
  const Var x(random_tensor({2, 3, 16, 16}, rng, 0, 1));
  NoGradGuard g;
  CHECK(ae.forward(x).value().data == ae.forward(x).value().data);
  std::mt19937_64 d1(1), d2(1);
  const auto t1 = ae.forward(x, true, &d1).value().data;
  CHECK(t1 == ae.forward(x, true, &d2).value().data);
  CHECK(t1 != ae.forward(x).value().data);
  CHECK_THROWS_AS(ae.forward(x, true, nullptr), ConfigError);
}

TEST_CASE("model gradients match finite differences") {
  // Perturbing a deep ReLU/maxpool stack occasionally crosses a kink, so the
  // bound is on the median with a looser cap on the worst sample.
  auto s = small(ModelKind::UNet);
  s.dropout_p = 0.0f;
  const auto unet = build_unet(s, 9);
  std::mt19937 rng(9);
  const auto x = random_tensor({1, 3, 8, 8}, rng);
  const auto r = random_tensor({1, 5, 8, 8}, rng);
  backward(sum(mul(unet.forward(Var(x)), Var(r))));
  const auto& names = unet.params().names();
  std::vector<double> errors;
  for (int k = 0; k < 40; ++k) {
    const auto& name = names[rng() % names.size()];
    const auto p = unet.params().get(name);
    const std::size_t i = rng() % p.value().numel();
    auto eval = [&](float d) {
      NoGradGuard g;
      auto probe = p;
      probe.mutable_value().data[i] += d;
      const auto out = unet.forward(Var(x)).value();
      probe.mutable_value().data[i] -= d;
      double t = 0.0;
      for (std::size_t j = 0; j < out.numel(); ++j) t += double{out.data[j]} * r.data[j];
      return t;
    };
    const double numeric = (eval(1e-3f) - eval(-1e-3f)) / 2e-3;
    const double err = testing::relative_error(p.grad().data[i], numeric, 1e-2);
    INFO(name, "[", i, "] analytic ", p.grad().data[i], " numeric ", numeric);
    CHECK(err < 1e-1);
    errors.push_back(err);
  }
  std::nth_element(errors.begin(), errors.begin() + 20, errors.end());
  CHECK(errors[20] < 1e-2);
}

TEST_CASE("transfer_encoder copies encoder weights bit for bit") {
  const auto ae = build_autoencoder(small(ModelKind::Autoencoder), 10);
  auto unet = build_unet(small(ModelKind::UNet), 11);
  const auto decoder_before = unet.params().get("decoder.block0.conv1.weight").value().data;
  transfer_encoder(make_checkpoint(ae), unet);
  for (const auto& n : encoder_parameter_names(ae.spec()))
    CHECK(unet.params().get(n).value().data == ae.params().get(n).value().data);
  CHECK(unet.params().get("decoder.block0.conv1.weight").value().data == decoder_before);

  std::mt19937 rng(10);
  for (int trial = 0; trial < 3; ++trial) {
    const Var x(random_tensor({1, 3, 16, 16}, rng, 0, 1));
    NoGradGuard g;
    const auto a = ae.encode(x);
    const auto b = unet.encode(x);
    CHECK(a.bridge.value().data == b.bridge.value().data);
    for (std::size_t i = 0; i < a.skips.size(); ++i)
      CHECK(a.skips[i].value().data == b.skips[i].value().data);
  }
}

TEST_CASE("transfer_encoder rejects mismatched encoders") {
  const auto ae9 = make_checkpoint(build_autoencoder(ModelSpec::autoencoder(9)));
  auto unet4 = build_unet(ModelSpec::unet(4, 9));
  CHECK_THROWS_WITH_AS(transfer_encoder(ae9, unet4),
                       doctest::Contains("encoder.block0.conv1.weight"), DataError);

  auto deeper = small(ModelKind::UNet);
  deeper.depth = 4;
  auto unet = build_unet(deeper);
  CHECK_THROWS_WITH_AS(transfer_encoder(make_checkpoint(build_autoencoder(small(ModelKind::Autoencoder))), unet),
                       doctest::Contains("+encoder.block3"), DataError);
}

TEST_CASE("frozen encoder is unchanged by a training step, decoder moves") {
  const auto ae = build_autoencoder(small(ModelKind::Autoencoder), 12);
  auto unet = build_unet(small(ModelKind::UNet), 13);
  transfer_encoder(make_checkpoint(ae), unet, true);
  const auto before = make_checkpoint(unet);
  std::mt19937 rng(12);
  std::mt19937_64 drng(1);
  const auto logits = unet.forward(Var(random_tensor({2, 3, 16, 16}, rng)), true, &drng);
  backward(mean(mul(logits, logits)));
  unet.params().adam_step(1e-3f);
  for (const auto& [name, t] : before.tensors) {
    const bool encoder = name.rfind("encoder.", 0) == 0;
    const bool same = unet.params().get(name).value().data == t.data;
    INFO(name);
    CHECK(same == encoder);
  }
}

TEST_CASE("checkpoint round trip and failure modes") {
  TempDir dir("ckpt");
  const auto ae = build_autoencoder(small(ModelKind::Autoencoder), 14);
  const auto ck = make_checkpoint(ae, {{"epochs", 3}, {"seed", 14}});
  save_checkpoint(ck, dir / "ae.wsck");
  const auto back = load_checkpoint(dir / "ae.wsck");
  CHECK(back.spec == ae.spec());
  CHECK(back.provenance["epochs"] == 3);
  REQUIRE(back.tensors.size() == ck.tensors.size());
  for (std::size_t i = 0; i < ck.tensors.size(); ++i) {
    CHECK(back.tensors[i].first == ck.tensors[i].first);
    CHECK(back.tensors[i].second.data == ck.tensors[i].second.data);
  }
  CHECK(encode_checkpoint(back) == encode_checkpoint(ck));

  auto other = build_autoencoder(small(ModelKind::Autoencoder), 99);
  load_weights(other, back);
  CHECK(make_checkpoint(other, ck.provenance).tensors.size() == ck.tensors.size());
  CHECK(encode_checkpoint(make_checkpoint(other, ck.provenance)) == encode_checkpoint(ck));

  CHECK_THROWS_WITH_AS(load_checkpoint(dir / "ae.wsck", ModelKind::UNet), doctest::Contains("autoencoder"),
                       ConfigError);
  auto unet = build_unet(small(ModelKind::UNet));
  CHECK_THROWS_AS(load_weights(unet, back), ConfigError);

  auto bytes = encode_checkpoint(ck);
  bytes[0] = 'X';
  CHECK_THROWS_WITH_AS(decode_checkpoint(bytes), doctest::Contains("magic"), DataError);
  bytes[0] = 'W';
  bytes[4] = 9;
  CHECK_THROWS_WITH_AS(decode_checkpoint(bytes), doctest::Contains("version"), DataError);
  bytes[4] = 1;
  bytes.pop_back();
  CHECK_THROWS_WITH_AS(decode_checkpoint(bytes), doctest::Contains("truncated"), DataError);

  auto missing = ck;
  missing.tensors.pop_back();
  CHECK_THROWS_WITH_AS(load_weights(other, missing), doctest::Contains("missing"), DataError);
  auto repeated = ck;
  repeated.tensors.push_back(ck.tensors.front());
  CHECK_THROWS_WITH_AS(load_weights(other, repeated), doctest::Contains("repeats"), DataError);
}
