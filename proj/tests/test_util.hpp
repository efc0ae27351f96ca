#pragma once

#include "relgoal/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace test_util {

using relgoal::ad::Tensor;

// Central finite differences of a scalar-valued function against the tape's
// analytic gradients, over every element of every parameter. Returns the
// worst relative error, with |analytic| + |numeric| + floor as denominator.
inline double max_grad_rel_err(std::vector<Tensor>& params,
                               const std::function<double()>& eval_loss,
                               const std::function<Tensor()>& build_loss,
                               double h = 1e-5, double floor_ = 1e-5) {
  for (auto& p : params) p.zero_grad();
  Tensor loss = build_loss();
  relgoal::ad::backward(loss);
  double worst = 0.0;
  for (auto& p : params) {
    relgoal::ad::Matrix analytic = p.grad();
    for (Eigen::Index i = 0; i < p.value().size(); ++i) {
      double saved = p.value().data()[i];
      p.value().data()[i] = saved + h;
      double up = eval_loss();
      p.value().data()[i] = saved - h;
      double down = eval_loss();
      p.value().data()[i] = saved;
      double numeric = (up - down) / (2.0 * h);
      double a = analytic.data()[i];
      double denom = std::abs(a) + std::abs(numeric) + floor_;
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

// One-sample Kolmogorov-Smirnov statistic against a uniform [lo, hi] CDF.
inline double ks_statistic_uniform(std::vector<double> xs, double lo, double hi) {
  std::sort(xs.begin(), xs.end());
  double n = double(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    double cdf = (xs[i] - lo) / (hi - lo);
    cdf = std::clamp(cdf, 0.0, 1.0);
    d = std::max(d, std::abs(cdf - double(i) / n));
    d = std::max(d, std::abs(cdf - double(i + 1) / n));
  }
  return d;
}

}  // namespace test_util
