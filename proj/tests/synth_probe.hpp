#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "memo/attn_store.hpp"
#include "memo/synth.hpp"

namespace memo_test {

/// Mean attention at offsets [lo, hi] below the diagonal over layers [l0, l1] and all heads.
inline double offset_mass(const memo::AttentionRecord& r, std::size_t l0, std::size_t l1, std::size_t lo,
                          std::size_t hi, std::size_t first_row = 0) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t l = l0; l <= l1; ++l) {
    for (std::size_t h = 0; h < r.heads; ++h) {
      for (std::size_t i = first_row; i < r.seq_len; ++i) {
        for (std::size_t off = lo; off <= hi && off <= i; ++off) {
          sum += r.at(l, h, i, i - off);
          ++n;
        }
      }
    }
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

/// (band mass in the recall layers, streak mass in the guess layers) for one record.
inline std::array<double, 2> pattern_features(const memo::AttentionRecord& r, const memo::SynthConfig& c) {
  const auto& band = c.recall_pattern;
  const auto& streak = c.guess_pattern;
  return {offset_mass(r, band.layer_lo, band.layer_hi, band.band_lo, band.band_hi),
          offset_mass(r, streak.layer_lo, streak.layer_hi, streak.offset, streak.offset,
                      r.seq_len - streak.length)};
}

/// Multinomial logistic regression on standardized features by full-batch gradient
/// descent; returns training accuracy.
inline double linear_probe_accuracy(const std::vector<std::array<double, 2>>& x, const std::vector<std::size_t>& y,
                                    std::size_t classes, int iterations = 3000, double lr = 0.5) {
  const std::size_t n = x.size();
  std::array<double, 2> mu{0, 0}, sd{0, 0};
  for (const auto& v : x)
    for (int f = 0; f < 2; ++f) mu[f] += v[f] / static_cast<double>(n);
  for (const auto& v : x)
    for (int f = 0; f < 2; ++f) sd[f] += (v[f] - mu[f]) * (v[f] - mu[f]) / static_cast<double>(n);
  for (auto& s : sd) s = std::sqrt(s) + 1e-12;
  std::vector<std::array<double, 2>> z(n);
  for (std::size_t k = 0; k < n; ++k)
    for (int f = 0; f < 2; ++f) z[k][f] = (x[k][f] - mu[f]) / sd[f];

  std::vector<std::array<double, 3>> w(classes, {0, 0, 0});
  std::vector<double> p(classes);
  auto scores = [&](std::size_t k) {
    double top = -1e300;
    for (std::size_t c = 0; c < classes; ++c) {
      p[c] = w[c][0] * z[k][0] + w[c][1] * z[k][1] + w[c][2];
      top = std::max(top, p[c]);
    }
    return top;
  };
  for (int it = 0; it < iterations; ++it) {
    std::vector<std::array<double, 3>> g(classes, {0, 0, 0});
    for (std::size_t k = 0; k < n; ++k) {
      const double top = scores(k);
      double zsum = 0.0;
      for (auto& v : p) {
        v = std::exp(v - top);
        zsum += v;
      }
      for (std::size_t c = 0; c < classes; ++c) {
        const double d = p[c] / zsum - (c == y[k] ? 1.0 : 0.0);
        g[c][0] += d * z[k][0];
        g[c][1] += d * z[k][1];
        g[c][2] += d;
      }
    }
    for (std::size_t c = 0; c < classes; ++c)
      for (int f = 0; f < 3; ++f) w[c][f] -= lr * g[c][f] / static_cast<double>(n);
  }
  std::size_t correct = 0;
  for (std::size_t k = 0; k < n; ++k) {
    scores(k);
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c)
      if (p[c] > p[best]) best = c;
    correct += best == y[k];
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace memo_test
