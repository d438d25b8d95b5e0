#pragma once

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <string>
#include <vector>

namespace ltrnn {

struct TimingOptions {
  std::size_t reps = 9;
  std::size_t warmups = 2;
  // Each rep loops the call until at least this much wall time has elapsed,
  // then reports the per-call average.
  double min_rep_seconds = 2e-4;
  std::size_t min_calls_per_rep = 1;
};

inline double median(std::vector<double> xs) {
  if (xs.empty()) return 0.0;
  const auto mid = xs.begin() + static_cast<std::ptrdiff_t>(xs.size() / 2);
  std::nth_element(xs.begin(), mid, xs.end());
  if (xs.size() % 2 == 1) return *mid;
  const double hi = *mid;
  return (hi + *std::max_element(xs.begin(), mid)) / 2.0;
}

// Median per-call seconds of `fn` over opts.reps measured reps (steady clock).
template <class Fn>
double time_median(Fn&& fn, const TimingOptions& opts = {}) {
  using clock = std::chrono::steady_clock;
  for (std::size_t w = 0; w < opts.warmups; ++w) fn();
  std::vector<double> samples;
  samples.reserve(opts.reps);
  std::size_t calls = std::max<std::size_t>(1, opts.min_calls_per_rep);
  for (std::size_t r = 0; r < std::max<std::size_t>(1, opts.reps); ++r) {
    for (;;) {
      const auto t0 = clock::now();
      for (std::size_t c = 0; c < calls; ++c) fn();
      const double elapsed = std::chrono::duration<double>(clock::now() - t0).count();
      if (elapsed >= opts.min_rep_seconds || calls >= (std::size_t{1} << 30)) {
        samples.push_back(elapsed / static_cast<double>(calls));
        break;
      }
      calls *= 2;
    }
  }
  return median(std::move(samples));
}

// CPU model, vector ISA the binary was built for, and thread mode. Cost models
// calibrated under one descriptor are refused under another unless forced.
std::string machine_descriptor();

}  // namespace ltrnn
