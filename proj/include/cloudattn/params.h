#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "cloudattn/autodiff.h"

namespace cloudattn {

/// Named parameter values in insertion order.
class ParamStore {
 public:
  void add(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }
  std::size_t total_values() const;

  /// Round every value to the nearest float, so f32 checkpoints reproduce it exactly.
  void round_to_f32();

  friend bool operator==(const ParamStore& a, const ParamStore& b);

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

using GradMap = std::map<std::string, Tensor>;

/// Fresh graph leaves for one forward/backward pass over a ParamStore. Independent bindings can
/// run on different threads; each collects its own gradients.
class Binding {
 public:
  explicit Binding(const ParamStore& store, bool trainable = true);

  const ad::Var& operator[](const std::string& name) const;
  bool contains(const std::string& name) const { return leaves_.count(name) != 0; }

  /// Gradient per parameter; zeros for parameters the graph did not reach.
  GradMap gradients() const;

 private:
  std::map<std::string, ad::Var> leaves_;
};

/// Glorot-uniform weight of shape fan_in x fan_out drawn from `rng`, rounded to f32.
Tensor glorot(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

}  // namespace cloudattn
