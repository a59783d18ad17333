// SPDX-License-Identifier: Apache-2.0
#include "wetseg/tensor/param_store.hpp"

#include <cmath>

#include "wetseg/error.hpp"

namespace wetseg::nn {

Var ParamStore::add(const std::string& name, Tensor init) {
  if (contains(name)) throw DataError("duplicate parameter name '" + name + "'");
  const std::size_t n = init.numel();
  index_[name] = slots_.size();
  names_.push_back(name);
  slots_.push_back({Var(std::move(init), true), std::vector<float>(n, 0.0f),
                    std::vector<float>(n, 0.0f), false});
  return slots_.back().param;
}

const Var& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw DataError("unknown parameter '" + name + "'");
  return slots_[it->second].param;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& s : slots_) n += s.param.value().numel();
  return n;
}

void ParamStore::set_frozen(const std::string& name, bool frozen) {
  get(name);
  slots_[index_.at(name)].frozen = frozen;
}

bool ParamStore::frozen(const std::string& name) const {
  get(name);
  return slots_[index_.at(name)].frozen;
}

void ParamStore::zero_grad() {
  for (auto& s : slots_) s.param.node().grad = Tensor{};
}

void ParamStore::adam_step(float lr, const AdamOptions& opt) {
  ++step_;
  const double c1 = 1.0 - std::pow(static_cast<double>(opt.beta1), static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(static_cast<double>(opt.beta2), static_cast<double>(step_));
  for (auto& s : slots_) {
    if (s.frozen) continue;
    Node& node = s.param.node();
    if (node.grad.numel() == 0) continue;  // no gradient reached this parameter
    auto& w = node.value.data;
    const auto& g = node.grad.data;
    for (std::size_t i = 0; i < w.size(); ++i) {
      s.m[i] = opt.beta1 * s.m[i] + (1.0f - opt.beta1) * g[i];
      s.v[i] = opt.beta2 * s.v[i] + (1.0f - opt.beta2) * g[i] * g[i];
      const double mhat = s.m[i] / c1;
      const double vhat = s.v[i] / c2;
      w[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + opt.eps));
    }
  }
}

}  // namespace wetseg::nn
