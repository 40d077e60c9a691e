#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>

#include "tmeg/autodiff.hpp"

namespace tmeg {

using LossFn = std::function<ad::Var(ad::Tape&)>;

// Populates Parameter::grad for every parameter reachable from the loss;
// the rest end up zero. Returns the loss value.
inline Real grad_eval(const LossFn& loss_fn, ParamStore& store) {
  store.zero_grad();
  ad::Tape tape;
  ad::Var loss = loss_fn(tape);
  tape.backward(loss);
  return loss.value()[0];
}

inline Real loss_value(const LossFn& loss_fn) {
  ad::Tape tape(false);
  return loss_fn(tape).value()[0];
}

struct GradCheckReport {
  Real max_relative_error = 0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  Real worst_analytic = 0;
  Real worst_numeric = 0;
  std::size_t coordinates_checked = 0;
};

// Central differences against the taped gradient. Parameters with more than
// `coords_per_param` entries are sub-sampled with a seeded draw. The error
// denominator never drops below kRelativeFloor, so entries whose true
// gradient is zero are judged by their absolute difference.
inline constexpr Real kRelativeFloor = Real(1e-6);

inline GradCheckReport finite_difference_check(const LossFn& loss_fn, ParamStore& store, Real h = Real(1e-5),
                                               std::uint64_t seed = 0, std::size_t coords_per_param = 32) {
  grad_eval(loss_fn, store);
  GradCheckReport report;
  Rng rng = derive_stream(seed, "finite-difference");
  for (Parameter& p : store.params()) {
    std::vector<std::size_t> coords(p.value.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(coords_per_param);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      const Real analytic = p.grad[i];
      const Real saved = p.value[i];
      p.value[i] = saved + h;
      const Real up = loss_value(loss_fn);
      p.value[i] = saved - h;
      const Real down = loss_value(loss_fn);
      p.value[i] = saved;
      const Real numeric = (up - down) / (2 * h);
      const Real rel = std::abs(analytic - numeric) / std::max(kRelativeFloor, std::abs(analytic) + std::abs(numeric));
      ++report.coordinates_checked;
      if (rel > report.max_relative_error || report.worst_parameter.empty()) {
        report.max_relative_error = rel;
        report.worst_parameter = p.name;
        report.worst_index = i;
        report.worst_analytic = analytic;
        report.worst_numeric = numeric;
      }
    }
  }
  store.zero_grad();
  return report;
}

}  // namespace tmeg
