#pragma once

// Straight-loop reference network used as an oracle: every layer is written out with
// explicit index arithmetic, and input gradients are gathered per input cell rather
// than scattered per output cell.

#include <cstddef>
#include <vector>

#include "memo/attn_store.hpp"
#include "memo/cnn.hpp"

namespace memo_test {

struct Tensor3 {
  std::size_t c = 0, h = 0, w = 0;
  std::vector<double> v;

  Tensor3() = default;
  Tensor3(std::size_t c_, std::size_t h_, std::size_t w_) : c(c_), h(h_), w(w_), v(c_ * h_ * w_, 0.0) {}
  double& operator()(std::size_t a, std::size_t y, std::size_t x) { return v[(a * h + y) * w + x]; }
  double operator()(std::size_t a, std::size_t y, std::size_t x) const { return v[(a * h + y) * w + x]; }
};

struct RefNet {
  memo::CnnArch arch;
  std::vector<double> conv1_w, conv1_b, conv2_w, conv2_b, fc1_w, fc1_b, fc2_w, fc2_b;

  template <typename Real>
  explicit RefNet(const memo::Cnn<Real>& model) : arch(model.arch()) {
    using memo::ParamTensor;
    auto copy = [&](ParamTensor t) {
      const auto s = model.tensor(t);
      return std::vector<double>(s.begin(), s.end());
    };
    conv1_w = copy(ParamTensor::conv1_weight);
    conv1_b = copy(ParamTensor::conv1_bias);
    conv2_w = copy(ParamTensor::conv2_weight);
    conv2_b = copy(ParamTensor::conv2_bias);
    fc1_w = copy(ParamTensor::fc1_weight);
    fc1_b = copy(ParamTensor::fc1_bias);
    fc2_w = copy(ParamTensor::fc2_weight);
    fc2_b = copy(ParamTensor::fc2_bias);
  }
};

struct RefActs {
  Tensor3 x, c1_pre, c1, p1, c2_pre, c2, p2;
  std::vector<std::size_t> arg1, arg2;  // flat index into the unpooled tensor
  std::vector<double> flat, h_pre, h, logits;
};

inline Tensor3 ref_conv(const Tensor3& in, const std::vector<double>& w, const std::vector<double>& b,
                        std::size_t out_c, std::size_t k) {
  const long pad = static_cast<long>((k - 1) / 2);
  Tensor3 out(out_c, in.h, in.w);
  for (std::size_t o = 0; o < out_c; ++o) {
    for (std::size_t y = 0; y < in.h; ++y) {
      for (std::size_t x = 0; x < in.w; ++x) {
        double s = b[o];
        for (std::size_t c = 0; c < in.c; ++c) {
          for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long yy = static_cast<long>(y + ky) - pad;
              const long xx = static_cast<long>(x + kx) - pad;
              if (yy < 0 || xx < 0 || yy >= static_cast<long>(in.h) || xx >= static_cast<long>(in.w)) {
                continue;
              }
              s += w[((o * in.c + c) * k + ky) * k + kx] * in(c, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
            }
          }
        }
        out(o, y, x) = s;
      }
    }
  }
  return out;
}

// d(input) of ref_conv, one input cell at a time.
inline Tensor3 ref_conv_input_grad(const Tensor3& dout, const std::vector<double>& w, std::size_t in_c,
                                   std::size_t k) {
  const long pad = static_cast<long>((k - 1) / 2);
  Tensor3 din(in_c, dout.h, dout.w);
  for (std::size_t c = 0; c < in_c; ++c) {
    for (std::size_t yy = 0; yy < dout.h; ++yy) {
      for (std::size_t xx = 0; xx < dout.w; ++xx) {
        double s = 0.0;
        for (std::size_t o = 0; o < dout.c; ++o) {
          for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long y = static_cast<long>(yy) + pad - static_cast<long>(ky);
              const long x = static_cast<long>(xx) + pad - static_cast<long>(kx);
              if (y < 0 || x < 0 || y >= static_cast<long>(dout.h) || x >= static_cast<long>(dout.w)) {
                continue;
              }
              s += w[((o * in_c + c) * k + ky) * k + kx] * dout(o, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
            }
          }
        }
        din(c, yy, xx) = s;
      }
    }
  }
  return din;
}

inline Tensor3 ref_pool(const Tensor3& in, std::size_t p, std::vector<std::size_t>& arg) {
  Tensor3 out(in.c, in.h / p, in.w / p);
  arg.assign(out.v.size(), 0);
  for (std::size_t c = 0; c < in.c; ++c) {
    for (std::size_t y = 0; y < out.h; ++y) {
      for (std::size_t x = 0; x < out.w; ++x) {
        double best = 0.0;
        std::size_t best_at = 0;
        bool first = true;
        for (std::size_t dy = 0; dy < p; ++dy) {
          for (std::size_t dx = 0; dx < p; ++dx) {
            const std::size_t yy = y * p + dy, xx = x * p + dx;
            if (first || in(c, yy, xx) > best) {
              best = in(c, yy, xx);
              best_at = (c * in.h + yy) * in.w + xx;
              first = false;
            }
          }
        }
        out(c, y, x) = best;
        arg[(c * out.h + y) * out.w + x] = best_at;
      }
    }
  }
  return out;
}

inline double ref_relu(double v, bool relu) { return relu ? (v > 0.0 ? v : 0.0) : v; }

/// Inference-mode forward.
inline RefActs ref_forward(const RefNet& net, const std::vector<double>& input) {
  const auto& a = net.arch;
  RefActs r;
  r.x = Tensor3(a.in_channels, a.input_size, a.input_size);
  r.x.v = input;
  r.c1_pre = ref_conv(r.x, net.conv1_w, net.conv1_b, a.conv_features, a.kernel);
  r.c1 = r.c1_pre;
  for (auto& v : r.c1.v) {
    v = ref_relu(v, a.relu);
  }
  r.p1 = ref_pool(r.c1, a.pool_size, r.arg1);
  r.c2_pre = ref_conv(r.p1, net.conv2_w, net.conv2_b, a.conv_features, a.kernel);
  r.c2 = r.c2_pre;
  for (auto& v : r.c2.v) {
    v = ref_relu(v, a.relu);
  }
  r.p2 = ref_pool(r.c2, a.pool_size, r.arg2);
  r.flat = r.p2.v;
  r.h_pre.assign(a.fc_features, 0.0);
  for (std::size_t o = 0; o < a.fc_features; ++o) {
    double s = net.fc1_b[o];
    for (std::size_t k = 0; k < r.flat.size(); ++k) {
      s += r.flat[k] * net.fc1_w[k * a.fc_features + o];
    }
    r.h_pre[o] = s;
  }
  r.h.resize(a.fc_features);
  for (std::size_t o = 0; o < a.fc_features; ++o) {
    r.h[o] = ref_relu(r.h_pre[o], a.relu);
  }
  r.logits.assign(a.num_classes, 0.0);
  for (std::size_t o = 0; o < a.num_classes; ++o) {
    double s = net.fc2_b[o];
    for (std::size_t k = 0; k < a.fc_features; ++k) {
      s += r.h[k] * net.fc2_w[k * a.num_classes + o];
    }
    r.logits[o] = s;
  }
  return r;
}

// Guided gate: passes upstream gradient g only where the forward input was positive and g > 0.
inline double ref_gate(double pre, double g, bool relu, bool guided) {
  if (!relu) {
    return g;
  }
  if (pre <= 0.0) {
    return 0.0;
  }
  return (!guided || g > 0.0) ? g : 0.0;
}

/// Gradient of logit `target` with respect to the network input, layer by layer.
inline std::vector<double> ref_input_grad(const RefNet& net, const RefActs& r, std::size_t target, bool guided) {
  const auto& a = net.arch;
  const bool relu = a.relu;
  // logits -> h
  std::vector<double> g_h(a.fc_features);
  for (std::size_t k = 0; k < a.fc_features; ++k) {
    g_h[k] = ref_gate(r.h_pre[k], net.fc2_w[k * a.num_classes + target], relu, guided);
  }
  // h -> flat
  Tensor3 g_p2(r.p2.c, r.p2.h, r.p2.w);
  for (std::size_t k = 0; k < r.flat.size(); ++k) {
    double s = 0.0;
    for (std::size_t o = 0; o < a.fc_features; ++o) {
      s += net.fc1_w[k * a.fc_features + o] * g_h[o];
    }
    g_p2.v[k] = s;
  }
  // pool2 -> c2 -> c2_pre
  Tensor3 g_c2(r.c2.c, r.c2.h, r.c2.w);
  for (std::size_t q = 0; q < g_c2.v.size(); ++q) {
    double s = 0.0;
    for (std::size_t k = 0; k < r.arg2.size(); ++k) {
      if (r.arg2[k] == q) {
        s += g_p2.v[k];
      }
    }
    g_c2.v[q] = ref_gate(r.c2_pre.v[q], s, relu, guided);
  }
  Tensor3 g_p1 = ref_conv_input_grad(g_c2, net.conv2_w, a.conv_features, a.kernel);
  Tensor3 g_c1(r.c1.c, r.c1.h, r.c1.w);
  for (std::size_t q = 0; q < g_c1.v.size(); ++q) {
    double s = 0.0;
    for (std::size_t k = 0; k < r.arg1.size(); ++k) {
      if (r.arg1[k] == q) {
        s += g_p1.v[k];
      }
    }
    g_c1.v[q] = ref_gate(r.c1_pre.v[q], s, relu, guided);
  }
  return ref_conv_input_grad(g_c1, net.conv1_w, a.in_channels, a.kernel).v;
}

/// Reference guided map over the heads of a record.
inline std::vector<double> ref_guided_backprop(const RefNet& net, const memo::AttentionRecord& rec,
                                               memo::Pooling pooling, std::size_t target) {
  const std::size_t t = rec.seq_len;
  std::vector<double> pooled(rec.layers * t * t, 0.0);
  std::vector<std::size_t> chosen(pooled.size(), 0);
  for (std::size_t l = 0; l < rec.layers; ++l) {
    for (std::size_t i = 0; i < t; ++i) {
      for (std::size_t j = 0; j < t; ++j) {
        const std::size_t o = (l * t + i) * t + j;
        if (pooling == memo::Pooling::max) {
          double best = rec.at(l, 0, i, j);
          for (std::size_t h = 1; h < rec.heads; ++h) {
            if (rec.at(l, h, i, j) > best) {
              best = rec.at(l, h, i, j);
              chosen[o] = h;
            }
          }
          pooled[o] = best;
        } else {
          double s = 0.0;
          for (std::size_t h = 0; h < rec.heads; ++h) {
            s += rec.at(l, h, i, j);
          }
          pooled[o] = s / static_cast<double>(rec.heads);
        }
      }
    }
  }
  const auto acts = ref_forward(net, pooled);
  const auto g = ref_input_grad(net, acts, target, true);
  std::vector<double> out(rec.data.size(), 0.0);
  for (std::size_t l = 0; l < rec.layers; ++l) {
    for (std::size_t h = 0; h < rec.heads; ++h) {
      for (std::size_t i = 0; i < t; ++i) {
        for (std::size_t j = 0; j < t; ++j) {
          const std::size_t o = (l * t + i) * t + j;
          double v;
          if (pooling == memo::Pooling::max) {
            v = chosen[o] == h ? g[o] : 0.0;
          } else {
            v = g[o] / static_cast<double>(rec.heads);
          }
          out[rec.index(l, h, i, j)] = v;
        }
      }
    }
  }
  return out;
}

}  // namespace memo_test
