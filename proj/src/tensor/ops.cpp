// SPDX-License-Identifier: Apache-2.0
#include "wetseg/tensor/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <thread>

#include "wetseg/error.hpp"

namespace wetseg::nn {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

// Columns of the unfolded input per GEMM; bounds the scratch buffer to
// about 16 MB regardless of image size.
constexpr std::size_t kColBudget = std::size_t{1} << 22;

struct ConvGeometry {
  int cin, h, w, k, stride, pad, ho, wo;
  int kdim() const { return cin * k * k; }
  int positions() const { return ho * wo; }
};

// Unfolds output positions [p0, p0+count) of one image into col (kdim x count).
void im2col(const float* img, const ConvGeometry& g, int p0, int count, float* col) {
  for (int ci = 0; ci < g.cin; ++ci)
    for (int ky = 0; ky < g.k; ++ky)
      for (int kx = 0; kx < g.k; ++kx) {
        float* dst = col + static_cast<std::size_t>((ci * g.k + ky) * g.k + kx) * count;
        const float* plane = img + static_cast<std::size_t>(ci) * g.h * g.w;
        for (int j = 0; j < count; ++j) {
          const int p = p0 + j;
          const int iy = (p / g.wo) * g.stride - g.pad + ky;
          const int ix = (p % g.wo) * g.stride - g.pad + kx;
          dst[j] = (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w) ? plane[iy * g.w + ix] : 0.0f;
        }
      }
}

void col2im(const float* col, const ConvGeometry& g, int p0, int count, float* img) {
  for (int ci = 0; ci < g.cin; ++ci)
    for (int ky = 0; ky < g.k; ++ky)
      for (int kx = 0; kx < g.k; ++kx) {
        const float* src = col + static_cast<std::size_t>((ci * g.k + ky) * g.k + kx) * count;
        float* plane = img + static_cast<std::size_t>(ci) * g.h * g.w;
        for (int j = 0; j < count; ++j) {
          const int p = p0 + j;
          const int iy = (p / g.wo) * g.stride - g.pad + ky;
          const int ix = (p % g.wo) * g.stride - g.pad + kx;
          if (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w) plane[iy * g.w + ix] += src[j];
        }
      }
}

int chunk_for(const ConvGeometry& g) {
  const auto per = static_cast<std::size_t>(g.kdim());
  return static_cast<int>(std::clamp<std::size_t>(kColBudget / per, 1, g.positions()));
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    throw DataError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                    b.shape().str());
}

}  // namespace

Var conv2d(const Var& input, const Var& weight, const Var& bias, int stride, int padding) {
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  if (ws.h != ws.w) throw DataError("conv2d: non-square kernel " + ws.str());
  if (xs.c != ws.c)
    throw DataError("conv2d: input has " + std::to_string(xs.c) + " channels, weight expects " +
                    std::to_string(ws.c) + " (weight " + ws.str() + ")");
  if (bias.defined() && bias.value().numel() != static_cast<std::size_t>(ws.n))
    throw DataError("conv2d: bias size " + std::to_string(bias.value().numel()) + " != " +
                    std::to_string(ws.n) + " output channels");
  if (stride < 1 || padding < 0) throw DataError("conv2d: invalid stride or padding");
  ConvGeometry g{xs.c, xs.h, xs.w, ws.h, stride, padding, 0, 0};
  g.ho = (xs.h + 2 * padding - ws.h) / stride + 1;
  g.wo = (xs.w + 2 * padding - ws.w) / stride + 1;
  if (xs.h + 2 * padding < ws.h || xs.w + 2 * padding < ws.w || g.ho < 1 || g.wo < 1)
    throw DataError("conv2d: kernel " + ws.str() + " larger than padded input " + xs.str());

  const int cout = ws.n;
  Tensor out(Shape{xs.n, cout, g.ho, g.wo});
  const int chunk = chunk_for(g);
  std::vector<float> col(static_cast<std::size_t>(g.kdim()) * chunk);
  ConstMatMap wmat(weight.value().data.data(), cout, g.kdim());
  const std::size_t in_img = static_cast<std::size_t>(xs.c) * xs.h * xs.w;
  const std::size_t out_img = static_cast<std::size_t>(cout) * g.positions();

  for (int n = 0; n < xs.n; ++n) {
    const float* img = input.value().data.data() + n * in_img;
    float* dst = out.data.data() + n * out_img;
    for (int p0 = 0; p0 < g.positions(); p0 += chunk) {
      const int count = std::min(chunk, g.positions() - p0);
      im2col(img, g, p0, count, col.data());
      ConstMatMap cmat(col.data(), g.kdim(), count);
      StridedMap omat(dst + p0, cout, count, Eigen::OuterStride<>(g.positions()));
      omat.noalias() = wmat * cmat;
    }
    if (bias.defined())
      for (int c = 0; c < cout; ++c) {
        const float b = bias.value().data[c];
        float* plane = dst + static_cast<std::size_t>(c) * g.positions();
        for (int p = 0; p < g.positions(); ++p) plane[p] += b;
      }
  }

  return make_op("conv2d", std::move(out), {input, weight, bias}, [g, chunk, in_img, out_img,
                                                                   cout](Node& self) {
    const auto& dy = self.grad_buffer();
    Node* x = self.inputs[0].get();
    Node* w = self.inputs[1].get();
    Node* b = self.inputs[2].get();
    const int nbatch = self.value.shape.n;
    std::vector<float> col(static_cast<std::size_t>(g.kdim()) * chunk);
    ConstMatMap wmat(w->value.data.data(), cout, g.kdim());
    for (int n = 0; n < nbatch; ++n) {
      const float* gy = dy.data.data() + n * out_img;
      if (b && b->requires_grad) {
        auto& gb = b->grad_buffer().data;
        for (int c = 0; c < cout; ++c) {
          const float* plane = gy + static_cast<std::size_t>(c) * g.positions();
          double s = 0;
          for (int p = 0; p < g.positions(); ++p) s += plane[p];
          gb[c] += static_cast<float>(s);
        }
      }
      const float* img = x->value.data.data() + n * in_img;
      for (int p0 = 0; p0 < g.positions(); p0 += chunk) {
        const int count = std::min(chunk, g.positions() - p0);
        ConstStridedMap gmat(gy + p0, cout, count, Eigen::OuterStride<>(g.positions()));
        if (w->requires_grad) {
          im2col(img, g, p0, count, col.data());
          ConstMatMap cmat(col.data(), g.kdim(), count);
          MatMap gw(w->grad_buffer().data.data(), cout, g.kdim());
          gw.noalias() += gmat * cmat.transpose();
        }
        if (x->requires_grad) {
          MatMap cgrad(col.data(), g.kdim(), count);
          cgrad.noalias() = wmat.transpose() * gmat;
          col2im(col.data(), g, p0, count, x->grad_buffer().data.data() + n * in_img);
        }
      }
    }
  });
}

Var relu(const Var& x) {
  Tensor out(x.shape());
  const auto& in = x.value().data;
  for (std::size_t i = 0; i < in.size(); ++i) out.data[i] = in[i] > 0.0f ? in[i] : 0.0f;
  return make_op("relu", std::move(out), {x}, [](Node& self) {
    auto& gx = self.inputs[0]->grad_buffer().data;
    const auto& gy = self.grad_buffer().data;
    const auto& y = self.value.data;
    for (std::size_t i = 0; i < y.size(); ++i)
      if (y[i] > 0.0f) gx[i] += gy[i];
  });
}

Var sigmoid(const Var& x) {
  Tensor out(x.shape());
  const auto& in = x.value().data;
  for (std::size_t i = 0; i < in.size(); ++i) out.data[i] = 1.0f / (1.0f + std::exp(-in[i]));
  return make_op("sigmoid", std::move(out), {x}, [](Node& self) {
    auto& gx = self.inputs[0]->grad_buffer().data;
    const auto& gy = self.grad_buffer().data;
    const auto& y = self.value.data;
    for (std::size_t i = 0; i < y.size(); ++i) gx[i] += gy[i] * y[i] * (1.0f - y[i]);
  });
}

Var maxpool2(const Var& x) {
  const Shape s = x.shape();
  if (s.h % 2 || s.w % 2)
    throw DataError("maxpool2: odd spatial dims " + s.str() + " (inputs must be divisible by 2)");
  Tensor out(Shape{s.n, s.c, s.h / 2, s.w / 2});
  std::vector<std::uint32_t> argmax(out.numel());
  const auto& in = x.value().data;
  std::size_t o = 0;
  for (int nc = 0; nc < s.n * s.c; ++nc) {
    const std::size_t base = static_cast<std::size_t>(nc) * s.plane();
    for (int y = 0; y < s.h; y += 2)
      for (int xx = 0; xx < s.w; xx += 2, ++o) {
        std::size_t best = base + static_cast<std::size_t>(y) * s.w + xx;
        for (std::size_t cand : {best + 1, best + s.w, best + s.w + 1})
          if (in[cand] > in[best]) best = cand;
        out.data[o] = in[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
  }
  return make_op("maxpool2", std::move(out), {x}, [argmax = std::move(argmax)](Node& self) {
    auto& gx = self.inputs[0]->grad_buffer().data;
    const auto& gy = self.grad_buffer().data;
    for (std::size_t i = 0; i < gy.size(); ++i) gx[argmax[i]] += gy[i];
  });
}

Var upsample2(const Var& x) {
  const Shape s = x.shape();
  Tensor out(Shape{s.n, s.c, s.h * 2, s.w * 2});
  const auto& in = x.value().data;
  const int wo = s.w * 2;
  for (int nc = 0; nc < s.n * s.c; ++nc) {
    const float* src = in.data() + static_cast<std::size_t>(nc) * s.plane();
    float* dst = out.data.data() + static_cast<std::size_t>(nc) * s.plane() * 4;
    for (int y = 0; y < s.h * 2; ++y)
      for (int xx = 0; xx < wo; ++xx) dst[y * wo + xx] = src[(y / 2) * s.w + xx / 2];
  }
  return make_op("upsample2", std::move(out), {x}, [](Node& self) {
    const Shape s = self.inputs[0]->value.shape;
    auto& gx = self.inputs[0]->grad_buffer().data;
    const auto& gy = self.grad_buffer().data;
    const int wo = s.w * 2;
    for (int nc = 0; nc < s.n * s.c; ++nc) {
      float* dst = gx.data() + static_cast<std::size_t>(nc) * s.plane();
      const float* src = gy.data() + static_cast<std::size_t>(nc) * s.plane() * 4;
      for (int y = 0; y < s.h * 2; ++y)
        for (int xx = 0; xx < wo; ++xx) dst[(y / 2) * s.w + xx / 2] += src[y * wo + xx];
    }
  });
}

Var dropout(const Var& x, float p, bool training, std::mt19937_64& rng) {
  if (p < 0.0f || p > 1.0f) throw DataError("dropout: p must lie in [0,1]");
  if (!training || p == 0.0f) return x;
  const float keep_scale = p < 1.0f ? 1.0f / (1.0f - p) : 0.0f;
  std::bernoulli_distribution keep(1.0 - p);
  std::vector<float> mask(x.value().numel());
  for (auto& m : mask) m = keep(rng) ? keep_scale : 0.0f;
  Tensor out(x.shape());
  const auto& in = x.value().data;
  for (std::size_t i = 0; i < in.size(); ++i) out.data[i] = in[i] * mask[i];
  return make_op("dropout", std::move(out), {x}, [mask = std::move(mask)](Node& self) {
    auto& gx = self.inputs[0]->grad_buffer().data;
    const auto& gy = self.grad_buffer().data;
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * mask[i];
  });
}

Var concat_channels(const Var& a, const Var& b) {
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w)
    throw DataError("concat_channels: incompatible shapes " + sa.str() + " and " + sb.str());
  Tensor out(Shape{sa.n, sa.c + sb.c, sa.h, sa.w});
  const std::size_t na = static_cast<std::size_t>(sa.c) * sa.plane();
  const std::size_t nb = static_cast<std::size_t>(sb.c) * sb.plane();
  for (int n = 0; n < sa.n; ++n) {
    auto ia = a.value().data.begin() + n * na;
    auto ib = b.value().data.begin() + n * nb;
    auto o = out.data.begin() + n * (na + nb);
    std::copy(ia, ia + na, o);
    std::copy(ib, ib + nb, o + na);
  }
  return make_op("concat_channels", std::move(out), {a, b}, [na, nb](Node& self) {
    const auto& gy = self.grad_buffer().data;
    const int batch = self.value.shape.n;
    Node* in_a = self.inputs[0].get();
    Node* in_b = self.inputs[1].get();
    for (int n = 0; n < batch; ++n) {
      const float* src = gy.data() + n * (na + nb);
      if (in_a->requires_grad) {
        float* ga = in_a->grad_buffer().data.data() + n * na;
        for (std::size_t i = 0; i < na; ++i) ga[i] += src[i];
      }
      if (in_b->requires_grad) {
        float* gb = in_b->grad_buffer().data.data() + n * nb;
        for (std::size_t i = 0; i < nb; ++i) gb[i] += src[na + i];
      }
    }
  });
}

Var softmax_channels(const Var& logits) {
  const Shape s = logits.shape();
  Tensor out(s);
  const auto& in = logits.value().data;
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n) {
    const std::size_t base = static_cast<std::size_t>(n) * s.c * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      float mx = in[base + p];
      for (int c = 1; c < s.c; ++c) mx = std::max(mx, in[base + c * plane + p]);
      double z = 0;
      for (int c = 0; c < s.c; ++c) {
        const float e = std::exp(in[base + c * plane + p] - mx);
        out.data[base + c * plane + p] = e;
        z += e;
      }
      const float inv = static_cast<float>(1.0 / z);
      for (int c = 0; c < s.c; ++c) out.data[base + c * plane + p] *= inv;
    }
  }
  return make_op("softmax_channels", std::move(out), {logits}, [](Node& self) {
    const Shape s = self.value.shape;
    const std::size_t plane = s.plane();
    const auto& y = self.value.data;
    const auto& gy = self.grad_buffer().data;
    auto& gx = self.inputs[0]->grad_buffer().data;
    for (int n = 0; n < s.n; ++n) {
      const std::size_t base = static_cast<std::size_t>(n) * s.c * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        double dot = 0;
        for (int c = 0; c < s.c; ++c) dot += y[base + c * plane + p] * gy[base + c * plane + p];
        for (int c = 0; c < s.c; ++c) {
          const std::size_t i = base + c * plane + p;
          gx[i] += y[i] * (gy[i] - static_cast<float>(dot));
        }
      }
    }
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = a.value().data[i] + b.value().data[i];
  return make_op("add", std::move(out), {a, b}, [](Node& self) {
    const auto& gy = self.grad_buffer().data;
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      auto& g = in->grad_buffer().data;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = a.value().data[i] - b.value().data[i];
  return make_op("sub", std::move(out), {a, b}, [](Node& self) {
    const auto& gy = self.grad_buffer().data;
    const float sign[2] = {1.0f, -1.0f};
    for (int k = 0; k < 2; ++k) {
      auto& in = self.inputs[k];
      if (!in->requires_grad) continue;
      auto& g = in->grad_buffer().data;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign[k] * gy[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = a.value().data[i] * b.value().data[i];
  return make_op("mul", std::move(out), {a, b}, [](Node& self) {
    const auto& gy = self.grad_buffer().data;
    Node* x = self.inputs[0].get();
    Node* y = self.inputs[1].get();
    if (x->requires_grad) {
      auto& g = x->grad_buffer().data;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * y->value.data[i];
    }
    if (y->requires_grad) {
      auto& g = y->grad_buffer().data;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * x->value.data[i];
    }
  });
}

Var scale(const Var& x, float s) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = x.value().data[i] * s;
  return make_op("scale", std::move(out), {x}, [s](Node& self) {
    const auto& gy = self.grad_buffer().data;
    auto& g = self.inputs[0]->grad_buffer().data;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * gy[i];
  });
}

Var sum(const Var& x) {
  double acc = 0;
  for (float v : x.value().data) acc += v;
  return make_op("sum", Tensor(Shape{}, {static_cast<float>(acc)}), {x}, [](Node& self) {
    auto& g = self.inputs[0]->grad_buffer().data;
    const float gy = self.grad_buffer().data[0];
    for (auto& v : g) v += gy;
  });
}

Var mean(const Var& x) { return scale(sum(x), 1.0f / static_cast<float>(x.value().numel())); }

Var weighted_sum(const std::vector<Var>& scalars, const std::vector<float>& weights) {
  if (scalars.size() != weights.size() || scalars.empty())
    throw DataError("weighted_sum: need one weight per scalar");
  double acc = 0;
  for (std::size_t i = 0; i < scalars.size(); ++i) acc += weights[i] * scalars[i].item();
  return make_op("weighted_sum", Tensor(Shape{}, {static_cast<float>(acc)}), scalars,
                 [weights](Node& self) {
                   for (std::size_t i = 0; i < self.inputs.size(); ++i)
                     if (self.inputs[i]->requires_grad)
                       self.inputs[i]->grad_buffer().data[0] += weights[i] * self.grad_buffer().data[0];
                 });
}

void set_num_threads(int n) {
  if (n <= 0) n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  Eigen::setNbThreads(n);
}

int num_threads() { return Eigen::nbThreads(); }

}  // namespace wetseg::nn
