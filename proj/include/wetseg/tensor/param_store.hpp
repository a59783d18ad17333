// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "wetseg/tensor/tensor.hpp"

namespace wetseg::nn {

struct AdamOptions {
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

/// Named parameters in registration order, with Adam moments per parameter.
class ParamStore {
 public:
  /// Registers a trainable leaf. Throws DataError on a duplicate name.
  Var add(const std::string& name, Tensor init);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Var& get(const std::string& name) const;
  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }
  std::size_t parameter_count() const;

  /// Excludes parameters from optimizer updates; their gradients are still computed.
  void set_frozen(const std::string& name, bool frozen);
  bool frozen(const std::string& name) const;

  void zero_grad();
  /// One Adam update with bias correction. Frozen parameters are skipped.
  void adam_step(float lr, const AdamOptions& opt = {});
  long step_count() const { return step_; }

 private:
  struct Slot {
    Var param;
    std::vector<float> m, v;
    bool frozen = false;
  };
  std::vector<std::string> names_;
  std::map<std::string, std::size_t> index_;
  std::vector<Slot> slots_;
  long step_ = 0;
};

}  // namespace wetseg::nn
