#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pcrl/tensor.hpp"

namespace pcrl::nn {

// Central-difference numerical gradient of a scalar function of one matrix
// argument; f must recompute from scratch on every call.
Mat numeric_gradient(const std::function<double(const Mat&)>& f, const Mat& x,
                     double step = 1e-5);

// max over entries of |analytic - numeric| / max(|analytic|, |numeric|, floor).
double max_relative_error(const Mat& analytic, const Mat& numeric,
                          double floor = 1e-2);

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  bool pass = false;
};

// Differentiates every trainable stage of the network (initial embedding,
// grouped embedding block, attention heads, pooling, the distributional
// head, spectral rescaling) plus an end-to-end value-distribution loss, and
// compares against central differences.  Deterministic for a given seed.
std::vector<GradCheckResult> run_gradient_checks(std::uint64_t seed, double tolerance);

// Negative control: reports a deliberately wrong analytic gradient against
// the numeric one, so the comparison machinery itself is exercised.  The
// result must come back pass == false for any sane tolerance.
GradCheckResult corrupted_gradient_fixture(double tolerance);

}  // namespace pcrl::nn
