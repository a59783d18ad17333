// SPDX-License-Identifier: Apache-2.0
#include "wetseg/losses/losses.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "wetseg/error.hpp"
#include "wetseg/hash.hpp"
#include "wetseg/tensor/ops.hpp"

namespace wetseg::losses {

using nn::Node;
using nn::Shape;
using nn::Tensor;

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (!(a.shape() == b.shape()))
    throw DataError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                    b.shape().str());
}

Tensor scalar(double v) { return Tensor({1, 1, 1, 1}, static_cast<float>(v)); }

// ---- SSIM helpers: separable Gaussian filtering on double planes ----

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> g(size);
  const double c = (size - 1) / 2.0;
  double total = 0.0;
  for (int i = 0; i < size; ++i) total += g[i] = std::exp(-(i - c) * (i - c) / (2 * sigma * sigma));
  for (auto& v : g) v /= total;
  return g;
}

// Valid correlation of an h x w plane with g (x) g; output (h-k+1) x (w-k+1).
void filter_valid(const double* in, int h, int w, const std::vector<double>& g, double* out,
                  std::vector<double>& tmp) {
  const int k = static_cast<int>(g.size()), ho = h - k + 1, wo = w - k + 1;
  tmp.assign(static_cast<std::size_t>(h) * wo, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < wo; ++x) {
      double s = 0.0;
      for (int i = 0; i < k; ++i) s += g[i] * in[y * w + x + i];
      tmp[y * wo + x] = s;
    }
  for (int y = 0; y < ho; ++y)
    for (int x = 0; x < wo; ++x) {
      double s = 0.0;
      for (int i = 0; i < k; ++i) s += g[i] * tmp[(y + i) * wo + x];
      out[y * wo + x] = s;
    }
}

// Adjoint of filter_valid: scatters an (h-k+1) x (w-k+1) map back to h x w.
void filter_adjoint(const double* in, int h, int w, const std::vector<double>& g, double* out,
                    std::vector<double>& tmp) {
  const int k = static_cast<int>(g.size()), ho = h - k + 1, wo = w - k + 1;
  tmp.assign(static_cast<std::size_t>(h) * wo, 0.0);
  for (int y = 0; y < ho; ++y)
    for (int x = 0; x < wo; ++x)
      for (int i = 0; i < k; ++i) tmp[(y + i) * wo + x] += g[i] * in[y * wo + x];
  std::fill(out, out + static_cast<std::size_t>(h) * w, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < wo; ++x)
      for (int i = 0; i < k; ++i) out[y * w + x + i] += g[i] * tmp[y * wo + x];
}

// ---- Sobel with replicate padding ----

void sobel(const float* in, int h, int w, std::vector<double>& gx, std::vector<double>& gy) {
  gx.assign(static_cast<std::size_t>(h) * w, 0.0);
  gy.assign(gx.size(), 0.0);
  auto at = [&](int y, int x) -> double {
    y = std::clamp(y, 0, h - 1);
    x = std::clamp(x, 0, w - 1);
    return in[y * w + x];
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      gx[y * w + x] = (at(y - 1, x + 1) + 2 * at(y, x + 1) + at(y + 1, x + 1)) -
                      (at(y - 1, x - 1) + 2 * at(y, x - 1) + at(y + 1, x - 1));
      gy[y * w + x] = (at(y + 1, x - 1) + 2 * at(y + 1, x) + at(y + 1, x + 1)) -
                      (at(y - 1, x - 1) + 2 * at(y - 1, x) + at(y - 1, x + 1));
    }
}

// Adjoint of sobel(): accumulates d(loss)/d(in) given d/dgx and d/dgy.
void sobel_adjoint(const std::vector<double>& dgx, const std::vector<double>& dgy, int h, int w,
                   float* grad_in) {
  auto add = [&](int y, int x, double v) {
    y = std::clamp(y, 0, h - 1);
    x = std::clamp(x, 0, w - 1);
    grad_in[y * w + x] += static_cast<float>(v);
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double a = dgx[y * w + x], b = dgy[y * w + x];
      if (a != 0.0) {
        add(y - 1, x + 1, a);
        add(y, x + 1, 2 * a);
        add(y + 1, x + 1, a);
        add(y - 1, x - 1, -a);
        add(y, x - 1, -2 * a);
        add(y + 1, x - 1, -a);
      }
      if (b != 0.0) {
        add(y + 1, x - 1, b);
        add(y + 1, x, 2 * b);
        add(y + 1, x + 1, b);
        add(y - 1, x - 1, -b);
        add(y - 1, x, -2 * b);
        add(y - 1, x + 1, -b);
      }
    }
}

constexpr double kMagEps = 1e-12;

}  // namespace

Var huber_loss(const Var& pred, const Var& target, float delta) {
  require_same_shape(pred, target, "huber_loss");
  if (!(delta > 0.0f)) throw ConfigError("huber_loss: delta must be > 0");
  const auto& p = pred.value().data;
  const auto& t = target.value().data;
  const double d = delta;
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double e = double{p[i]} - t[i];
    total += std::abs(e) <= d ? 0.5 * e * e : d * (std::abs(e) - 0.5 * d);
  }
  const double n = static_cast<double>(p.size());
  return nn::make_op("huber_loss", scalar(total / n), {pred, target}, [d, n](Node& self) {
    const float g = self.grad.data[0];
    Node* a = self.inputs[0].get();
    Node* b = self.inputs[1].get();
    const auto& pv = self.inputs[0]->value.data;
    const auto& tv = self.inputs[1]->value.data;
    float* ga = a->requires_grad ? a->grad_buffer().data.data() : nullptr;
    float* gb = b->requires_grad ? b->grad_buffer().data.data() : nullptr;
    for (std::size_t i = 0; i < pv.size(); ++i) {
      const double e = double{pv[i]} - tv[i];
      const double de = (std::abs(e) <= d ? e : d * (e > 0 ? 1.0 : -1.0)) / n * g;
      if (ga) ga[i] += static_cast<float>(de);
      if (gb) gb[i] -= static_cast<float>(de);
    }
  });
}

Var ssim(const Var& pred, const Var& target, const SsimOptions& opt) {
  require_same_shape(pred, target, "ssim");
  const auto s = pred.shape();
  const int k = opt.window;
  if (k < 1 || k % 2 == 0) throw ConfigError("ssim: window must be a positive odd size");
  if (s.h < k || s.w < k)
    throw DataError("ssim: image " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                    " is smaller than the " + std::to_string(k) + "x" + std::to_string(k) +
                    " window");
  const auto g = gaussian_window(k, opt.sigma);
  const int ho = s.h - k + 1, wo = s.w - k + 1;
  const std::size_t plane = s.plane(), oplane = static_cast<std::size_t>(ho) * wo;
  const int planes = s.n * s.c;
  const double c1 = opt.c1, c2 = opt.c2;
  const double count = static_cast<double>(planes) * oplane;

  // Per plane: filtered moments mx, my, exx, eyy, exy.
  auto moments = std::make_shared<std::vector<double>>(5 * oplane * planes);
  std::vector<double> x(plane), y(plane), buf(plane), tmp;
  double total = 0.0;
  for (int pidx = 0; pidx < planes; ++pidx) {
    const float* xp = pred.value().data.data() + pidx * plane;
    const float* yp = target.value().data.data() + pidx * plane;
    double* m = moments->data() + 5 * oplane * pidx;
    for (std::size_t i = 0; i < plane; ++i) x[i] = xp[i];
    for (std::size_t i = 0; i < plane; ++i) y[i] = yp[i];
    filter_valid(x.data(), s.h, s.w, g, m, tmp);
    filter_valid(y.data(), s.h, s.w, g, m + oplane, tmp);
    for (std::size_t i = 0; i < plane; ++i) buf[i] = x[i] * x[i];
    filter_valid(buf.data(), s.h, s.w, g, m + 2 * oplane, tmp);
    for (std::size_t i = 0; i < plane; ++i) buf[i] = y[i] * y[i];
    filter_valid(buf.data(), s.h, s.w, g, m + 3 * oplane, tmp);
    for (std::size_t i = 0; i < plane; ++i) buf[i] = x[i] * y[i];
    filter_valid(buf.data(), s.h, s.w, g, m + 4 * oplane, tmp);
    for (std::size_t i = 0; i < oplane; ++i) {
      const double mx = m[i], my = m[oplane + i];
      const double sxx = m[2 * oplane + i] - mx * mx, syy = m[3 * oplane + i] - my * my;
      const double sxy = m[4 * oplane + i] - mx * my;
      total += (2 * mx * my + c1) * (2 * sxy + c2) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
    }
  }

  return nn::make_op(
      "ssim", scalar(total / count), {pred, target},
      [=, g = std::move(g)](Node& self) {
        const double up = self.grad.data[0] / count;
        const auto& xv = self.inputs[0]->value.data;
        const auto& yv = self.inputs[1]->value.data;
        // Coefficient maps: dS/dmx, dS/dexx, dS/dexy and the mirrored ones for y.
        std::vector<double> a(oplane), b(oplane), c(oplane), ay(oplane), by(oplane);
        std::vector<double> fa(plane), fb(plane), fc(plane), tmp;
        for (int pidx = 0; pidx < planes; ++pidx) {
          const double* m = moments->data() + 5 * oplane * pidx;
          for (std::size_t i = 0; i < oplane; ++i) {
            const double mx = m[i], my = m[oplane + i];
            const double sxx = m[2 * oplane + i] - mx * mx, syy = m[3 * oplane + i] - my * my;
            const double sxy = m[4 * oplane + i] - mx * my;
            const double a1 = 2 * mx * my + c1, a2 = 2 * sxy + c2;
            const double b1 = mx * mx + my * my + c1, b2 = sxx + syy + c2;
            const double sv = a1 * a2 / (b1 * b2);
            const double d_exy = 2 * a1 / (b1 * b2);
            const double d_ex2 = -sv / b2;
            a[i] = up * (2 * my * a2 / (b1 * b2) - 2 * mx * sv / b1 + 2 * mx * sv / b2 - my * d_exy);
            ay[i] = up * (2 * mx * a2 / (b1 * b2) - 2 * my * sv / b1 + 2 * my * sv / b2 - mx * d_exy);
            b[i] = up * d_ex2;
            by[i] = up * d_ex2;
            c[i] = up * d_exy;
          }
          filter_adjoint(c.data(), s.h, s.w, g, fc.data(), tmp);
          for (int side = 0; side < 2; ++side) {
            Node* in = self.inputs[side].get();
            if (!in || !in->requires_grad) continue;
            filter_adjoint(side == 0 ? a.data() : ay.data(), s.h, s.w, g, fa.data(), tmp);
            filter_adjoint(side == 0 ? b.data() : by.data(), s.h, s.w, g, fb.data(), tmp);
            const float* self_v = (side == 0 ? xv : yv).data() + pidx * plane;
            const float* other_v = (side == 0 ? yv : xv).data() + pidx * plane;
            float* gd = in->grad_buffer().data.data() + pidx * plane;
            for (std::size_t i = 0; i < plane; ++i)
              gd[i] += static_cast<float>(fa[i] + 2 * self_v[i] * fb[i] + other_v[i] * fc[i]);
          }
        }
      });
}

Var ssim_loss(const Var& pred, const Var& target, const SsimOptions& opt) {
  return nn::sub(Var(scalar(1.0)), ssim(pred, target, opt));
}

Var edge_loss(const Var& pred, const Var& target) {
  require_same_shape(pred, target, "edge_loss");
  const auto s = pred.shape();
  const std::size_t plane = s.plane();
  const int planes = s.n * s.c;
  const double count = static_cast<double>(pred.value().numel());
  double total = 0.0;
  std::vector<double> px, py, tx, ty;
  for (int p = 0; p < planes; ++p) {
    sobel(pred.value().data.data() + p * plane, s.h, s.w, px, py);
    sobel(target.value().data.data() + p * plane, s.h, s.w, tx, ty);
    for (std::size_t i = 0; i < plane; ++i)
      total += std::abs(std::sqrt(px[i] * px[i] + py[i] * py[i] + kMagEps) -
                        std::sqrt(tx[i] * tx[i] + ty[i] * ty[i] + kMagEps));
  }
  return nn::make_op("edge_loss", scalar(total / count), {pred, target}, [=](Node& self) {
    const double up = self.grad.data[0] / count;
    std::vector<double> px, py, tx, ty, dx(plane), dy(plane);
    for (int p = 0; p < planes; ++p) {
      sobel(self.inputs[0]->value.data.data() + p * plane, s.h, s.w, px, py);
      sobel(self.inputs[1]->value.data.data() + p * plane, s.h, s.w, tx, ty);
      for (int side = 0; side < 2; ++side) {
        Node* in = self.inputs[side].get();
        if (!in || !in->requires_grad) continue;
        const auto& ax = side == 0 ? px : tx;
        const auto& ay = side == 0 ? py : ty;
        for (std::size_t i = 0; i < plane; ++i) {
          const double mp = std::sqrt(px[i] * px[i] + py[i] * py[i] + kMagEps);
          const double mt = std::sqrt(tx[i] * tx[i] + ty[i] * ty[i] + kMagEps);
          const double diff = mp - mt;
          double sign = diff > 0 ? 1.0 : diff < 0 ? -1.0 : 0.0;
          if (side == 1) sign = -sign;
          const double mag = side == 0 ? mp : mt;
          dx[i] = up * sign * ax[i] / mag;
          dy[i] = up * sign * ay[i] / mag;
        }
        sobel_adjoint(dx, dy, s.h, s.w, in->grad_buffer().data.data() + p * plane);
      }
    }
  });
}

void MixedLossWeights::validate() const {
  if (alpha < 0 || beta < 0 || gamma < 0 || !(alpha + beta + gamma > 0))
    throw ConfigError("mixed loss weights must be nonnegative with a positive sum");
}

void to_json(nlohmann::json& j, const MixedLossWeights& w) {
  j = {{"alpha", float_for_json(w.alpha)},
       {"beta", float_for_json(w.beta)},
       {"gamma", float_for_json(w.gamma)}};
}

void from_json(const nlohmann::json& j, MixedLossWeights& w) {
  w.alpha = j.value("alpha", w.alpha);
  w.beta = j.value("beta", w.beta);
  w.gamma = j.value("gamma", w.gamma);
}

Var mixed_loss(const Var& pred, const Var& target, const MixedLossWeights& w,
               const SsimOptions& opt) {
  w.validate();
  std::vector<Var> terms;
  std::vector<float> weights;
  if (w.alpha > 0) {
    terms.push_back(huber_loss(pred, target));
    weights.push_back(w.alpha);
  }
  if (w.beta > 0) {
    terms.push_back(ssim_loss(pred, target, opt));
    weights.push_back(w.beta);
  }
  if (w.gamma > 0) {
    terms.push_back(edge_loss(pred, target));
    weights.push_back(w.gamma);
  }
  return nn::weighted_sum(terms, weights);
}

namespace {

std::vector<float> channel_softmax(const Tensor& logits) {
  const auto& s = logits.shape;
  std::vector<float> p(logits.numel());
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n)
    for (std::size_t i = 0; i < plane; ++i) {
      const std::size_t base = static_cast<std::size_t>(n) * s.c * plane + i;
      float mx = logits.data[base];
      for (int c = 1; c < s.c; ++c) mx = std::max(mx, logits.data[base + c * plane]);
      double total = 0.0;
      for (int c = 0; c < s.c; ++c) total += p[base + c * plane] = std::exp(logits.data[base + c * plane] - mx);
      for (int c = 0; c < s.c; ++c) p[base + c * plane] = static_cast<float>(p[base + c * plane] / total);
    }
  return p;
}

void check_mask(const Shape& s, std::span<const std::uint8_t> mask, const char* op) {
  if (mask.size() != static_cast<std::size_t>(s.n) * s.plane())
    throw DataError(std::string(op) + ": mask has " + std::to_string(mask.size()) +
                    " values for logits " + s.str());
  for (auto v : mask)
    if (v != kIgnoreLabel && v >= s.c)
      throw DataError(std::string(op) + ": class id " + std::to_string(v) + " not below " +
                      std::to_string(s.c));
}

// Softmax backward: dz_k = p_k (dp_k - sum_j p_j dp_j), accumulated into grad.
void softmax_backward(const Shape& s, const std::vector<float>& p, const std::vector<double>& dp,
                      float* grad) {
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n)
    for (std::size_t i = 0; i < plane; ++i) {
      const std::size_t base = static_cast<std::size_t>(n) * s.c * plane + i;
      double dot = 0.0;
      for (int c = 0; c < s.c; ++c) dot += p[base + c * plane] * dp[base + c * plane];
      for (int c = 0; c < s.c; ++c)
        grad[base + c * plane] += static_cast<float>(p[base + c * plane] * (dp[base + c * plane] - dot));
    }
}

}  // namespace

Var dice_loss(const Var& logits, std::span<const std::uint8_t> mask, float eps) {
  const auto s = logits.shape();
  check_mask(s, mask, "dice_loss");
  const std::size_t plane = s.plane();
  auto p = std::make_shared<std::vector<float>>(channel_softmax(logits.value()));
  const int classes = s.c;

  std::vector<double> inter(classes, 0.0), psum(classes, 0.0), gsum(classes, 0.0);
  std::vector<bool> present(classes, false);
  for (int n = 0; n < s.n; ++n)
    for (std::size_t i = 0; i < plane; ++i) {
      const auto label = mask[n * plane + i];
      if (label == kIgnoreLabel) continue;
      const std::size_t base = static_cast<std::size_t>(n) * classes * plane + i;
      int best = 0;
      for (int c = 0; c < classes; ++c) {
        const double pc = (*p)[base + c * plane];
        psum[c] += pc;
        if (pc > (*p)[base + best * plane]) best = c;
      }
      inter[label] += (*p)[base + label * plane];
      gsum[label] += 1.0;
      present[label] = true;
      present[best] = true;
    }
  std::vector<int> active;
  for (int c = 0; c < classes; ++c)
    if (present[c]) active.push_back(c);
  double dice_total = 0.0;
  for (int c : active) dice_total += (2 * inter[c] + eps) / (psum[c] + gsum[c] + eps);
  const double loss = active.empty() ? 0.0 : 1.0 - dice_total / active.size();

  std::vector<std::uint8_t> labels(mask.begin(), mask.end());
  return nn::make_op("dice_loss", scalar(loss), {logits},
                     [=, labels = std::move(labels)](Node& self) {
                       if (active.empty()) return;
                       const double up = self.grad.data[0] / active.size();
                       std::vector<double> dp(p->size(), 0.0);
                       for (int c : active) {
                         const double den = psum[c] + gsum[c] + eps;
                         const double num = 2 * inter[c] + eps;
                         for (int n = 0; n < s.n; ++n)
                           for (std::size_t i = 0; i < plane; ++i) {
                             const auto label = labels[n * plane + i];
                             if (label == kIgnoreLabel) continue;
                             const double g = label == c ? 1.0 : 0.0;
                             dp[(static_cast<std::size_t>(n) * classes + c) * plane + i] =
                                 -up * (2 * g * den - num) / (den * den);
                           }
                       }
                       softmax_backward(s, *p, dp, self.inputs[0]->grad_buffer().data.data());
                     });
}

Var cross_entropy(const Var& logits, std::span<const std::uint8_t> mask) {
  const auto s = logits.shape();
  check_mask(s, mask, "cross_entropy");
  const std::size_t plane = s.plane();
  auto p = std::make_shared<std::vector<float>>(channel_softmax(logits.value()));
  double total = 0.0;
  std::size_t labeled = 0;
  for (int n = 0; n < s.n; ++n)
    for (std::size_t i = 0; i < plane; ++i) {
      const auto label = mask[n * plane + i];
      if (label == kIgnoreLabel) continue;
      const double pl = (*p)[(static_cast<std::size_t>(n) * s.c + label) * plane + i];
      total -= std::log(std::max(pl, 1e-30));
      ++labeled;
    }
  const double loss = labeled ? total / labeled : 0.0;
  std::vector<std::uint8_t> labels(mask.begin(), mask.end());
  return nn::make_op("cross_entropy", scalar(loss), {logits},
                     [=, labels = std::move(labels)](Node& self) {
                       if (!labeled) return;
                       const double up = self.grad.data[0] / labeled;
                       float* g = self.inputs[0]->grad_buffer().data.data();
                       for (int n = 0; n < s.n; ++n)
                         for (std::size_t i = 0; i < plane; ++i) {
                           const auto label = labels[n * plane + i];
                           if (label == kIgnoreLabel) continue;
                           for (int c = 0; c < s.c; ++c) {
                             const std::size_t idx = (static_cast<std::size_t>(n) * s.c + c) * plane + i;
                             g[idx] += static_cast<float>(up * ((*p)[idx] - (c == label ? 1.0 : 0.0)));
                           }
                         }
                     });
}

}  // namespace wetseg::losses
