#include "cloudattn/params.h"

#include <cmath>
#include <stdexcept>

namespace cloudattn {

void ParamStore::add(const std::string& name, Tensor value) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name " + name);
  index_[name] = names_.size();
  names_.push_back(name);
  values_.push_back(std::move(value));
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
  return values_[it->second];
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
  return values_[it->second];
}

std::size_t ParamStore::total_values() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.numel();
  return n;
}

void ParamStore::round_to_f32() {
  for (auto& t : values_)
    for (auto& v : t.values()) v = static_cast<double>(static_cast<float>(v));
}

bool operator==(const ParamStore& a, const ParamStore& b) {
  return a.names_ == b.names_ && a.values_ == b.values_;
}

Binding::Binding(const ParamStore& store, bool trainable) {
  for (const auto& name : store.names()) {
    leaves_[name] = trainable ? ad::parameter(store.get(name)) : ad::constant(store.get(name));
  }
}

const ad::Var& Binding::operator[](const std::string& name) const {
  auto it = leaves_.find(name);
  if (it == leaves_.end()) throw std::out_of_range("unbound parameter " + name);
  return it->second;
}

GradMap Binding::gradients() const {
  GradMap out;
  for (const auto& [name, leaf] : leaves_) {
    out[name] = leaf->grad.empty() ? Tensor(leaf->value.shape(), 0.0) : leaf->grad;
  }
  return out;
}

Tensor glorot(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor t = Tensor::matrix(fan_in, fan_out);
  for (auto& v : t.values()) v = static_cast<double>(static_cast<float>(dist(rng)));
  return t;
}

}  // namespace cloudattn
