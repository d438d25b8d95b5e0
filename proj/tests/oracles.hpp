#pragma once

// Independent reference computations shared by the unit and acceptance suites.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "ltrnn/metrics.hpp"
#include "ltrnn/nn.hpp"

namespace ltrnn::testing {

// Double-precision forward of one document. Hidden preactivations are
// appended to `pre` so callers can stay away from the relu6 kinks.
inline double forward_double(const FfnModel& m, std::span<const float> x, std::vector<double>* pre = nullptr) {
  std::vector<double> a(x.begin(), x.end());
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const auto& L = m.layers[l];
    std::vector<double> z(L.out());
    for (std::size_t i = 0; i < L.out(); ++i) {
      double s = L.bias[i];
      for (std::size_t j = 0; j < L.in(); ++j) s += static_cast<double>(L.weights(i, j)) * a[j];
      z[i] = s;
      if (l + 1 < m.layers.size()) {
        if (pre) pre->push_back(s);
        z[i] = std::clamp(s, 0.0, 6.0);
      }
    }
    a = std::move(z);
  }
  return a[0];
}

// Two-sided randomization p-value over all 2^n sign patterns, identity included.
inline double exhaustive_fisher_p(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size();
  double obs = 0.0;
  for (std::size_t i = 0; i < n; ++i) obs += a[i] - b[i];
  obs = std::fabs(obs / static_cast<double>(n));
  std::size_t hit = 0;
  const std::size_t total = std::size_t{1} << n;
  for (std::size_t mask = 0; mask < total; ++mask) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += ((mask >> i) & 1 ? -1.0 : 1.0) * (a[i] - b[i]);
    if (std::fabs(s / static_cast<double>(n)) >= obs - 1e-12) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(total);
}

inline std::vector<PerQueryMetric> as_per_query(const std::vector<double>& v) {
  std::vector<PerQueryMetric> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back({static_cast<std::int64_t>(i), v[i]});
  return out;
}

// Largest relative error between backprop and central differences of the
// double-precision squared error, over every weight and bias, for one document.
inline double max_gradient_error(const FfnModel& m, std::span<const float> x, float target, double h) {
  Matrix batch(1, x.size(), std::vector<float>(x.begin(), x.end()));
  const std::vector<float> t{target};
  const Gradients g = compute_gradients(m, batch, t);
  auto loss = [&](const FfnModel& mm) {
    const double d = forward_double(mm, x) - target;
    return d * d;
  };
  auto param = [](FfnModel& mm, std::size_t l, bool weight, std::size_t i) -> float& {
    return weight ? mm.layers[l].weights.values()[i] : mm.layers[l].bias[i];
  };
  double worst = 0.0;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    for (const bool weight : {true, false}) {
      const std::size_t count = weight ? m.layers[l].weights.size() : m.layers[l].bias.size();
      for (std::size_t i = 0; i < count; ++i) {
        const double analytic = weight ? g.weights[l].values()[i] : g.bias[l][i];
        FfnModel up = m, dn = m;
        const float p = param(up, l, weight, i);
        param(up, l, weight, i) = static_cast<float>(p + h);
        param(dn, l, weight, i) = static_cast<float>(p - h);
        // The step actually taken after rounding to float.
        const double step = static_cast<double>(param(up, l, weight, i)) - param(dn, l, weight, i);
        const double fd = (loss(up) - loss(dn)) / step;
        const double denom = std::max({std::fabs(fd), std::fabs(analytic), 1e-3});
        worst = std::max(worst, std::fabs(fd - analytic) / denom);
      }
    }
  }
  return worst;
}

}  // namespace ltrnn::testing
