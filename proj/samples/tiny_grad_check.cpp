// Finite-difference check of the combined loss on the two-document fixture.

#include <cstdio>

#include "tmeg/fixtures.hpp"

int main() {
  tmeg::fixtures::GradCheckOptions o;
  o.coords_per_param = 64;
  const auto r = tmeg::fixtures::tiny_grad_check(o);
  std::printf("checked %zu coordinates\n", r.coordinates_checked);
  std::printf("max relative error %.3e at %s[%zu] (analytic %.6e, numeric %.6e)\n", r.max_relative_error,
              r.worst_parameter.c_str(), r.worst_index, r.worst_analytic, r.worst_numeric);
  return r.max_relative_error < 1e-4 ? 0 : 1;
}
