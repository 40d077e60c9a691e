#pragma once

#include <cmath>
#include <deque>
#include <map>
#include <string>
#include <vector>

#include "tmeg/dense_array.hpp"

namespace tmeg {

struct Parameter {
  std::string name;
  DenseArray value;
  DenseArray grad;
  // Adam moments, same shape as value.
  DenseArray first_moment;
  DenseArray second_moment;
  // Multiplies the optimizer step size for this tensor.
  Real lr_scale = 1;
};

struct AdamOptions {
  Real learning_rate = Real(5e-5);
  Real beta1 = Real(0.9);
  Real beta2 = Real(0.999);
  Real eps = Real(1e-8);
};

// Named parameters in insertion order. References returned by add() stay valid
// for the lifetime of the store.
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore& o) : params_(o.params_), step_(o.step_) { reindex(); }
  ParamStore& operator=(const ParamStore& o) {
    if (this != &o) {
      params_ = o.params_;
      step_ = o.step_;
      reindex();
    }
    return *this;
  }
  ParamStore(ParamStore&&) = default;
  ParamStore& operator=(ParamStore&&) = default;

  Parameter& add(const std::string& name, DenseArray value) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    Parameter p;
    p.name = name;
    p.grad = DenseArray(value.rows(), value.cols());
    p.first_moment = DenseArray(value.rows(), value.cols());
    p.second_moment = DenseArray(value.rows(), value.cols());
    p.value = std::move(value);
    params_.push_back(std::move(p));
    index_[name] = params_.size() - 1;
    return params_.back();
  }

  Parameter& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return params_[it->second];
  }
  const Parameter& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return params_[it->second];
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::deque<Parameter>& params() { return params_; }
  const std::deque<Parameter>& params() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  std::uint64_t step() const { return step_; }
  void set_step(std::uint64_t s) { step_ = s; }

  void zero_grad() {
    for (auto& p : params_) p.grad.fill(0);
  }

  // Bias-corrected Adam update over every parameter, then zero the gradients.
  void adam_step(const AdamOptions& opt) {
    ++step_;
    const Real t = static_cast<Real>(step_);
    const Real c1 = 1 - std::pow(opt.beta1, t);
    const Real c2 = 1 - std::pow(opt.beta2, t);
    for (auto& p : params_) {
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const Real g = p.grad[i];
        Real& m = p.first_moment[i];
        Real& v = p.second_moment[i];
        m = opt.beta1 * m + (1 - opt.beta1) * g;
        v = opt.beta2 * v + (1 - opt.beta2) * g * g;
        const Real m_hat = m / c1;
        const Real v_hat = v / c2;
        p.value[i] -= opt.learning_rate * p.lr_scale * m_hat / (std::sqrt(v_hat) + opt.eps);
      }
      p.grad.fill(0);
    }
  }

  // Copies parameter values (not optimizer state) from another store with the same layout.
  void copy_values_from(const ParamStore& o) {
    for (auto& p : params_) p.value = o.get(p.name).value;
  }

 private:
  void reindex() {
    index_.clear();
    for (std::size_t i = 0; i < params_.size(); ++i) index_[params_[i].name] = i;
  }

  std::deque<Parameter> params_;
  std::map<std::string, std::size_t> index_;
  std::uint64_t step_ = 0;
};

}  // namespace tmeg
