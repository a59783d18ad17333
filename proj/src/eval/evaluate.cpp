// SPDX-License-Identifier: Apache-2.0
#include "wetseg/eval/evaluate.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "wetseg/error.hpp"
#include "wetseg/eval/render.hpp"
#include "wetseg/hash.hpp"
#include "wetseg/rascore/labels.hpp"
#include "wetseg/tensor/ops.hpp"

namespace wetseg::eval {

namespace {

std::string render_stem(const std::string& id) {
  std::string s = id;
  if (s.size() > 4 && s.ends_with(".ras")) s.resize(s.size() - 4);
  std::replace_if(s.begin(), s.end(), [](char c) { return c == '/' || c == '\\' || c == ' '; }, '_');
  return s;
}

// Split-level soft Dice: per-class sums over every labeled pixel, classes
// active when present in the truth or the argmax prediction.
struct SoftDiceTotals {
  explicit SoftDiceTotals(int k) : inter(k, 0.0), psum(k, 0.0), gsum(k, 0.0), active(k, false) {}

  void add(const nn::Tensor& probs, std::span<const std::uint8_t> labels) {
    const int k = probs.shape.c;
    const std::size_t plane = probs.shape.plane();
    for (int n = 0; n < probs.shape.n; ++n)
      for (std::size_t i = 0; i < plane; ++i) {
        const std::uint8_t g = labels[n * plane + i];
        if (g == kUnlabeled) continue;
        int best = 0;
        for (int c = 0; c < k; ++c) {
          const double p = probs.data[(std::size_t{static_cast<std::size_t>(n)} * k + c) * plane + i];
          psum[c] += p;
          if (c == g) inter[c] += p;
          if (p > probs.data[(std::size_t{static_cast<std::size_t>(n)} * k + best) * plane + i])
            best = c;
        }
        gsum[g] += 1.0;
        active[g] = true;
        active[best] = true;
      }
  }

  double loss(double eps) const {
    double s = 0;
    int m = 0;
    for (std::size_t c = 0; c < inter.size(); ++c) {
      if (!active[c]) continue;
      s += (2 * inter[c] + eps) / (psum[c] + gsum[c] + eps);
      ++m;
    }
    return m ? 1.0 - s / m : 0.0;
  }

  std::vector<double> inter, psum, gsum;
  std::vector<bool> active;
};

}  // namespace

std::string checkpoint_id(const nn::ModelCheckpoint& ckpt) {
  return hex64(fnv1a(nn::encode_checkpoint(ckpt)));
}

MetricsReport evaluate(const nn::Model& model, const data::PatchDataset& data,
                       const EvalOptions& options) {
  if (data.empty()) throw DataError("empty split: nothing to evaluate");
  if (options.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  const auto& spec = model.spec();
  if (data.channels() != spec.in_channels)
    throw DataError("dataset has " + std::to_string(data.channels()) + " bands, model expects " +
                    std::to_string(spec.in_channels));
  const bool seg = spec.kind == nn::ModelKind::UNet;
  if (seg && !data.labeled()) throw DataError("segmentation evaluation needs labeled patches");
  if (seg && static_cast<int>(options.scheme.size()) != spec.num_classes)
    throw ConfigError("scheme '" + options.scheme.name + "' has " +
                      std::to_string(options.scheme.size()) + " classes, model predicts " +
                      std::to_string(spec.num_classes));
  if (options.render_dir) std::filesystem::create_directories(*options.render_dir);

  MetricsReport report;
  report.task = seg ? "segmentation" : "reconstruction";
  report.dataset_id = options.dataset_id;
  report.images = data.size();
  if (seg) report.scheme = options.scheme;

  nn::NoGradGuard no_grad;
  ConfusionMatrix confusion(spec.num_classes);
  SoftDiceTotals dice(spec.num_classes);
  ReconstructionAccumulator recon(options.tolerance, options.weights, options.ssim);
  std::size_t rendered = 0;

  for (std::size_t start = 0; start < data.size(); start += options.batch_size) {
    std::vector<std::size_t> idx(std::min<std::size_t>(options.batch_size, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const data::Batch batch = data.batch(idx);
    const nn::Var out = model.forward(nn::Var(batch.images));
    const int h = batch.images.shape.h, w = batch.images.shape.w;
    const std::size_t plane = batch.images.shape.plane();

    if (!seg) {
      recon.add(out.value(), batch.images);
      for (std::size_t b = 0; b < idx.size() && options.render_dir && rendered < options.max_renders;
           ++b, ++rendered) {
        const auto img = render_reconstruction_error(out.value().image(b), batch.images.image(b),
                                                     spec.in_channels, w, h);
        const std::string name = render_stem(data.get(idx[b]).id) + "_error.png";
        write_png(img, *options.render_dir / name);
        report.renders.push_back(name);
      }
      continue;
    }

    const nn::Tensor probs = nn::softmax_channels(out).value();
    std::vector<std::uint8_t> pred(batch.labels.size());
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const ProbabilityCube cube{static_cast<std::uint32_t>(spec.num_classes),
                                 static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(w),
                                 probs.image(b)};
      const LabelMask m = labels_from_probabilities(cube, options.scheme);
      std::copy(m.values.begin(), m.values.end(), pred.begin() + b * plane);
      if (options.render_dir && rendered < options.max_renders) {
        const std::span<const std::uint8_t> truth(batch.labels.data() + b * plane, plane);
        const auto legend = class_probability_legend(cube, options.scheme);
        const std::string stem = render_stem(data.get(idx[b]).id);
        write_png(append_legend(render_segmentation(m.values, w, h, options.scheme), legend),
                  *options.render_dir / (stem + "_pred.png"));
        write_png(render_segmentation(truth, w, h, options.scheme),
                  *options.render_dir / (stem + "_truth.png"));
        write_png(render_error_map(cube, truth, options.scheme),
                  *options.render_dir / (stem + "_error.png"));
        for (const char* suffix : {"_pred.png", "_truth.png", "_error.png"})
          report.renders.push_back(stem + suffix);
        ++rendered;
      }
    }
    confusion.add(batch.labels, pred);
    dice.add(probs, batch.labels);
  }

  if (seg) {
    report.segmentation = segmentation_metrics(confusion, options.scheme);
    report.segmentation->dice_loss = dice.loss(1e-6);
  } else {
    report.reconstruction = recon.result();
  }
  return report;
}

MetricsReport evaluate(const nn::ModelCheckpoint& ckpt, const data::PatchDataset& data,
                       const EvalOptions& options, std::optional<nn::ModelKind> expected) {
  if (expected && ckpt.spec.kind != *expected)
    throw ConfigError(std::string("checkpoint holds a ") + nn::kind_name(ckpt.spec.kind) +
                      ", expected a " + nn::kind_name(*expected));
  nn::Model model(ckpt.spec, 0);
  nn::load_weights(model, ckpt);
  MetricsReport r = evaluate(model, data, options);
  r.checkpoint_id = checkpoint_id(ckpt);
  return r;
}

void to_json(nlohmann::json& j, const MetricsReport& r) {
  j = {{"task", r.task},
       {"dataset", r.dataset_id},
       {"checkpoint", r.checkpoint_id},
       {"images", r.images},
       {"renders", r.renders}};
  if (r.reconstruction) j["reconstruction"] = *r.reconstruction;
  if (r.segmentation) {
    j["segmentation"] = *r.segmentation;
    j["scheme"] = r.scheme;
  }
}

void write_report(const MetricsReport& r, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f << nlohmann::json(r).dump(2) << '\n';
  if (!f) throw DataError("failed writing " + path.string());
}

}  // namespace wetseg::eval
