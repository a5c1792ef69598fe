#include "memo/cnn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "memo/errors.hpp"
#include "memo/parallel.hpp"
#include "memo/random.hpp"

namespace memo {

namespace {

template <typename Real>
void check_finite(std::span<const Real> values, const char* layer) {
  for (Real v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(layer, "non-finite activation");
    }
  }
}

// out[o] (S x S) += same-padded correlation of in (C x S x S) with w (O x C x K x K).
template <typename Real>
void conv_forward(std::span<const Real> in, std::size_t channels, std::size_t size,
                  std::span<const Real> w, std::span<const Real> b, std::size_t out_channels,
                  std::size_t k, std::span<Real> out) {
  const std::size_t plane = size * size;
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>((k - 1) / 2);
  const auto s = static_cast<std::ptrdiff_t>(size);
  for (std::size_t o = 0; o < out_channels; ++o) {
    Real* dst_plane = out.data() + o * plane;
    std::fill(dst_plane, dst_plane + plane, b[o]);
    for (std::size_t c = 0; c < channels; ++c) {
      const Real* src_plane = in.data() + c * plane;
      const Real* wk = w.data() + (o * channels + c) * k * k;
      for (std::size_t ky = 0; ky < k; ++ky) {
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
        const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, -dy);
        const std::ptrdiff_t y1 = std::min<std::ptrdiff_t>(s, s - dy);
        for (std::size_t kx = 0; kx < k; ++kx) {
          const Real weight = wk[ky * k + kx];
          const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
          const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx);
          const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(s, s - dx);
          for (std::ptrdiff_t y = y0; y < y1; ++y) {
            Real* dst = dst_plane + y * s;
            const Real* src = src_plane + (y + dy) * s + dx;
            for (std::ptrdiff_t x = x0; x < x1; ++x) {
              dst[x] += weight * src[x];
            }
          }
        }
      }
    }
  }
}

// Gradients of conv_forward given dout; dw/db accumulate, din accumulates.
template <typename Real>
void conv_backward(std::span<const Real> in, std::size_t channels, std::size_t size,
                   std::span<const Real> w, std::size_t out_channels, std::size_t k,
                   std::span<const Real> dout, std::span<Real> dw, std::span<Real> db,
                   std::span<Real> din) {
  const std::size_t plane = size * size;
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>((k - 1) / 2);
  const auto s = static_cast<std::ptrdiff_t>(size);
  const bool want_params = !dw.empty();
  const bool want_input = !din.empty();
  for (std::size_t o = 0; o < out_channels; ++o) {
    const Real* g_plane = dout.data() + o * plane;
    if (want_params) {
      Real acc = 0;
      for (std::size_t p = 0; p < plane; ++p) {
        acc += g_plane[p];
      }
      db[o] += acc;
    }
    for (std::size_t c = 0; c < channels; ++c) {
      const Real* src_plane = in.data() + c * plane;
      Real* din_plane = want_input ? din.data() + c * plane : nullptr;
      const std::size_t wbase = (o * channels + c) * k * k;
      for (std::size_t ky = 0; ky < k; ++ky) {
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
        const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, -dy);
        const std::ptrdiff_t y1 = std::min<std::ptrdiff_t>(s, s - dy);
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
          const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx);
          const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(s, s - dx);
          const Real weight = w[wbase + ky * k + kx];
          Real acc = 0;
          for (std::ptrdiff_t y = y0; y < y1; ++y) {
            const Real* g = g_plane + y * s;
            const Real* src = src_plane + (y + dy) * s + dx;
            if (want_params) {
              for (std::ptrdiff_t x = x0; x < x1; ++x) {
                acc += g[x] * src[x];
              }
            }
            if (want_input) {
              Real* dst = din_plane + (y + dy) * s + dx;
              for (std::ptrdiff_t x = x0; x < x1; ++x) {
                dst[x] += weight * g[x];
              }
            }
          }
          if (want_params) {
            dw[wbase + ky * k + kx] += acc;
          }
        }
      }
    }
  }
}

// Non-overlapping max pool; arg holds the flat in-plane index of the first maximum.
template <typename Real>
void maxpool_forward(std::span<const Real> in, std::size_t channels, std::size_t size,
                     std::size_t pool, std::span<Real> out, std::span<std::uint32_t> arg) {
  const std::size_t osize = size / pool;
  for (std::size_t c = 0; c < channels; ++c) {
    const Real* src = in.data() + c * size * size;
    for (std::size_t oy = 0; oy < osize; ++oy) {
      for (std::size_t ox = 0; ox < osize; ++ox) {
        std::size_t best = (oy * pool) * size + ox * pool;
        for (std::size_t py = 0; py < pool; ++py) {
          for (std::size_t px = 0; px < pool; ++px) {
            const std::size_t idx = (oy * pool + py) * size + ox * pool + px;
            if (src[idx] > src[best]) {
              best = idx;
            }
          }
        }
        const std::size_t o = (c * osize + oy) * osize + ox;
        out[o] = src[best];
        arg[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
}

// Activation (optional ReLU) followed by dropout multiplier.
template <typename Real>
void activate(std::span<const Real> pre, bool relu, const std::vector<Real>* mask, std::span<Real> out) {
  for (std::size_t k = 0; k < pre.size(); ++k) {
    Real v = relu ? std::max(pre[k], Real(0)) : pre[k];
    out[k] = mask ? v * (*mask)[k] : v;
  }
}

// d(pre) from d(out) through dropout and the (optional, possibly guided) ReLU.
template <typename Real>
void activate_backward(std::span<const Real> pre, bool relu, const std::vector<Real>* mask,
                       ReluGate gate, std::span<Real> grad) {
  for (std::size_t k = 0; k < pre.size(); ++k) {
    Real g = mask ? grad[k] * (*mask)[k] : grad[k];
    if (relu) {
      const bool open = pre[k] > Real(0) && (gate == ReluGate::standard || g > Real(0));
      g = open ? g : Real(0);
    }
    grad[k] = g;
  }
}

template <typename Real>
std::vector<Real> make_mask(std::size_t n, double p, std::mt19937_64& rng) {
  std::vector<Real> mask(n, Real(1));
  if (p <= 0.0) {
    return mask;
  }
  const Real keep = static_cast<Real>(1.0 / (1.0 - p));
  std::bernoulli_distribution drop(p);
  for (auto& m : mask) {
    m = drop(rng) ? Real(0) : keep;
  }
  return mask;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configs

std::string CnnConfig::id() const {
  return std::string(to_string(pooling)) + "-f" + std::to_string(conv_features) + "-k" +
         std::to_string(kernel);
}

std::vector<CnnConfig> config_grid(std::size_t in_channels, std::size_t num_classes,
                                   std::uint64_t seed) {
  std::vector<CnnConfig> grid;
  for (Pooling pooling : {Pooling::max, Pooling::mean}) {
    for (std::size_t features : {10, 16}) {
      for (std::size_t kernel : {6, 8}) {
        CnnConfig c;
        c.pooling = pooling;
        c.conv_features = features;
        c.kernel = kernel;
        c.in_channels = in_channels;
        c.num_classes = num_classes;
        c.seed = seed;
        grid.push_back(c);
      }
    }
  }
  return grid;
}

CnnArch CnnArch::from_config(const CnnConfig& config, std::size_t input_size) {
  CnnArch a;
  a.in_channels = config.in_channels;
  a.input_size = input_size;
  a.conv_features = config.conv_features;
  a.kernel = config.kernel;
  a.pool_size = config.pool_size;
  a.fc_features = config.fc_features;
  a.num_classes = config.num_classes;
  a.dropout = config.dropout;
  return a;
}

void CnnArch::check() const {
  if (in_channels == 0 || conv_features == 0 || kernel == 0 || fc_features == 0 ||
      num_classes == 0 || pool_size == 0) {
    throw ConfigError("every CNN dimension must be positive");
  }
  if (pool2_size() == 0) {
    throw ConfigError("input size " + std::to_string(input_size) +
                      " leaves no spatial extent after two pools of " + std::to_string(pool_size));
  }
  if (input_size % (pool_size * pool_size) != 0) {
    throw ConfigError("input size must be divisible by pool_size^2");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw ConfigError("dropout must lie in [0,1)");
  }
}

std::size_t CnnArch::param_count() const {
  check();
  const std::size_t k2 = kernel * kernel;
  return conv_features * (in_channels * k2 + 1) + conv_features * (conv_features * k2 + 1) +
         (flatten_dim() * fc_features + fc_features) + (fc_features * num_classes + num_classes);
}

std::size_t param_count(const CnnConfig& config, std::size_t input_size) {
  return CnnArch::from_config(config, input_size).param_count();
}

// ---------------------------------------------------------------------------
// Model

template <typename Real>
Cnn<Real>::Cnn(const CnnArch& arch, std::uint64_t seed) : arch_(arch), rng_(splitmix64(seed ^ 0xd5a61266f0c9392cULL)) {
  arch_.check();
  const std::size_t f = arch_.conv_features;
  const std::size_t k2 = arch_.kernel * arch_.kernel;
  sizes_ = {f * arch_.in_channels * k2, f, f * f * k2, f,
            arch_.flatten_dim() * arch_.fc_features, arch_.fc_features,
            arch_.fc_features * arch_.num_classes, arch_.num_classes};
  std::size_t total = 0;
  for (std::size_t t = 0; t < kParamTensorCount; ++t) {
    offsets_[t] = total;
    total += sizes_[t];
  }
  params_.assign(total, Real(0));

  std::mt19937_64 init(splitmix64(seed));
  auto fill = [&](ParamTensor t, std::size_t fan_in) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& w : tensor(t)) {
      w = static_cast<Real>(dist(init));
    }
  };
  fill(ParamTensor::conv1_weight, arch_.in_channels * k2);
  fill(ParamTensor::conv2_weight, f * k2);
  fill(ParamTensor::fc1_weight, arch_.flatten_dim());
  fill(ParamTensor::fc2_weight, arch_.fc_features);
}

template <typename Real>
std::span<Real> Cnn<Real>::tensor(ParamTensor t) noexcept {
  const auto i = static_cast<std::size_t>(t);
  return std::span<Real>(params_).subspan(offsets_[i], sizes_[i]);
}

template <typename Real>
std::span<const Real> Cnn<Real>::tensor(ParamTensor t) const noexcept {
  const auto i = static_cast<std::size_t>(t);
  return std::span<const Real>(params_).subspan(offsets_[i], sizes_[i]);
}

template <typename Real>
std::span<Real> Cnn<Real>::tensor_of(std::span<Real> flat, ParamTensor t) const noexcept {
  const auto i = static_cast<std::size_t>(t);
  return flat.subspan(offsets_[i], sizes_[i]);
}

template <typename Real>
typename Cnn<Real>::DropoutMasks Cnn<Real>::sample_masks(std::uint64_t seed) const {
  std::mt19937_64 gen(splitmix64(seed));
  const std::size_t s1 = arch_.input_size;
  const std::size_t s2 = arch_.pool1_size();
  DropoutMasks m;
  m.conv1 = make_mask<Real>(arch_.conv_features * s1 * s1, arch_.dropout, gen);
  m.conv2 = make_mask<Real>(arch_.conv_features * s2 * s2, arch_.dropout, gen);
  m.fc1 = make_mask<Real>(arch_.fc_features, arch_.dropout, gen);
  return m;
}

template <typename Real>
void Cnn<Real>::forward(std::span<const Real> input, const DropoutMasks* masks, Cache& c) const {
  const CnnArch& a = arch_;
  if (input.size() != a.input_count()) {
    throw ArgumentError("input has " + std::to_string(input.size()) + " values, model expects " +
                        std::to_string(a.input_count()));
  }
  const std::size_t f = a.conv_features;
  const std::size_t s1 = a.input_size;
  const std::size_t s2 = a.pool1_size();
  const std::size_t s3 = a.pool2_size();
  c.training = masks != nullptr;
  if (masks) {
    c.masks = *masks;
  } else {
    c.masks = {};
  }
  c.input.assign(input.begin(), input.end());
  check_finite<Real>(c.input, "input");

  c.conv1_pre.assign(f * s1 * s1, Real(0));
  c.conv1_out.resize(c.conv1_pre.size());
  conv_forward<Real>(c.input, a.in_channels, s1, tensor(ParamTensor::conv1_weight),
                     tensor(ParamTensor::conv1_bias), f, a.kernel, c.conv1_pre);
  check_finite<Real>(c.conv1_pre, "conv1");
  activate<Real>(c.conv1_pre, a.relu, masks ? &c.masks.conv1 : nullptr, c.conv1_out);
  c.pool1.resize(f * s2 * s2);
  c.pool1_arg.resize(c.pool1.size());
  maxpool_forward<Real>(c.conv1_out, f, s1, a.pool_size, c.pool1, c.pool1_arg);

  c.conv2_pre.assign(f * s2 * s2, Real(0));
  c.conv2_out.resize(c.conv2_pre.size());
  conv_forward<Real>(c.pool1, f, s2, tensor(ParamTensor::conv2_weight),
                     tensor(ParamTensor::conv2_bias), f, a.kernel, c.conv2_pre);
  check_finite<Real>(c.conv2_pre, "conv2");
  activate<Real>(c.conv2_pre, a.relu, masks ? &c.masks.conv2 : nullptr, c.conv2_out);
  c.pool2.resize(f * s3 * s3);
  c.pool2_arg.resize(c.pool2.size());
  maxpool_forward<Real>(c.conv2_out, f, s2, a.pool_size, c.pool2, c.pool2_arg);

  const std::size_t flat = a.flatten_dim();
  const std::size_t hid = a.fc_features;
  const auto w1 = tensor(ParamTensor::fc1_weight);
  const auto b1 = tensor(ParamTensor::fc1_bias);
  c.fc1_pre.assign(b1.begin(), b1.end());
  for (std::size_t k = 0; k < flat; ++k) {
    const Real x = c.pool2[k];
    const Real* row = w1.data() + k * hid;
    for (std::size_t o = 0; o < hid; ++o) {
      c.fc1_pre[o] += x * row[o];
    }
  }
  check_finite<Real>(c.fc1_pre, "fc1");
  c.fc1_out.resize(hid);
  activate<Real>(c.fc1_pre, a.relu, masks ? &c.masks.fc1 : nullptr, c.fc1_out);

  const std::size_t n = a.num_classes;
  const auto w2 = tensor(ParamTensor::fc2_weight);
  const auto b2 = tensor(ParamTensor::fc2_bias);
  c.logits.assign(b2.begin(), b2.end());
  for (std::size_t k = 0; k < hid; ++k) {
    const Real x = c.fc1_out[k];
    const Real* row = w2.data() + k * n;
    for (std::size_t o = 0; o < n; ++o) {
      c.logits[o] += x * row[o];
    }
  }
  check_finite<Real>(c.logits, "fc2");
}

template <typename Real>
std::vector<Real> Cnn<Real>::logits(std::span<const Real> input) const {
  Cache cache;
  forward(input, nullptr, cache);
  return cache.logits;
}

template <typename Real>
void Cnn<Real>::backward(const Cache& c, std::span<const Real> dlogits, std::span<Real> param_grad,
                         std::span<Real> input_grad, ReluGate gate) const {
  const CnnArch& a = arch_;
  if (dlogits.size() != a.num_classes) {
    throw ArgumentError("dlogits length does not match the number of classes");
  }
  if (!param_grad.empty() && param_grad.size() != params_.size()) {
    throw ArgumentError("parameter gradient buffer has the wrong size");
  }
  if (!input_grad.empty() && input_grad.size() != a.input_count()) {
    throw ArgumentError("input gradient buffer has the wrong size");
  }
  const bool want_params = !param_grad.empty();
  auto grad_of = [&](ParamTensor t) {
    return want_params ? tensor_of(param_grad, t) : std::span<Real>{};
  };
  const std::size_t f = a.conv_features;
  const std::size_t s1 = a.input_size;
  const std::size_t s2 = a.pool1_size();
  const std::size_t hid = a.fc_features;
  const std::size_t n = a.num_classes;
  const std::size_t flat = a.flatten_dim();

  // fc2
  std::vector<Real> g_hidden(hid, Real(0));
  {
    const auto w2 = tensor(ParamTensor::fc2_weight);
    auto dw2 = grad_of(ParamTensor::fc2_weight);
    auto db2 = grad_of(ParamTensor::fc2_bias);
    for (std::size_t k = 0; k < hid; ++k) {
      Real acc = 0;
      for (std::size_t o = 0; o < n; ++o) {
        acc += w2[k * n + o] * dlogits[o];
        if (want_params) {
          dw2[k * n + o] += c.fc1_out[k] * dlogits[o];
        }
      }
      g_hidden[k] = acc;
    }
    if (want_params) {
      for (std::size_t o = 0; o < n; ++o) {
        db2[o] += dlogits[o];
      }
    }
  }
  activate_backward<Real>(c.fc1_pre, a.relu, c.training ? &c.masks.fc1 : nullptr, gate, g_hidden);

  // fc1
  std::vector<Real> g_pool2(flat, Real(0));
  {
    const auto w1 = tensor(ParamTensor::fc1_weight);
    auto dw1 = grad_of(ParamTensor::fc1_weight);
    auto db1 = grad_of(ParamTensor::fc1_bias);
    for (std::size_t k = 0; k < flat; ++k) {
      const Real* row = w1.data() + k * hid;
      Real acc = 0;
      for (std::size_t o = 0; o < hid; ++o) {
        acc += row[o] * g_hidden[o];
      }
      g_pool2[k] = acc;
      if (want_params) {
        const Real x = c.pool2[k];
        Real* drow = dw1.data() + k * hid;
        for (std::size_t o = 0; o < hid; ++o) {
          drow[o] += x * g_hidden[o];
        }
      }
    }
    if (want_params) {
      for (std::size_t o = 0; o < hid; ++o) {
        db1[o] += g_hidden[o];
      }
    }
  }

  // pool2 -> conv2
  std::vector<Real> g_conv2(f * s2 * s2, Real(0));
  {
    const std::size_t plane_in = s2 * s2;
    const std::size_t plane_out = a.pool2_size() * a.pool2_size();
    for (std::size_t ch = 0; ch < f; ++ch) {
      for (std::size_t p = 0; p < plane_out; ++p) {
        const std::size_t o = ch * plane_out + p;
        g_conv2[ch * plane_in + c.pool2_arg[o]] += g_pool2[o];
      }
    }
  }
  activate_backward<Real>(c.conv2_pre, a.relu, c.training ? &c.masks.conv2 : nullptr, gate, g_conv2);

  std::vector<Real> g_pool1(f * s2 * s2, Real(0));
  conv_backward<Real>(c.pool1, f, s2, tensor(ParamTensor::conv2_weight), f, a.kernel, g_conv2,
                      grad_of(ParamTensor::conv2_weight), grad_of(ParamTensor::conv2_bias), g_pool1);

  // pool1 -> conv1
  std::vector<Real> g_conv1(f * s1 * s1, Real(0));
  {
    const std::size_t plane_in = s1 * s1;
    const std::size_t plane_out = s2 * s2;
    for (std::size_t ch = 0; ch < f; ++ch) {
      for (std::size_t p = 0; p < plane_out; ++p) {
        const std::size_t o = ch * plane_out + p;
        g_conv1[ch * plane_in + c.pool1_arg[o]] += g_pool1[o];
      }
    }
  }
  activate_backward<Real>(c.conv1_pre, a.relu, c.training ? &c.masks.conv1 : nullptr, gate, g_conv1);

  if (!input_grad.empty()) {
    std::fill(input_grad.begin(), input_grad.end(), Real(0));
  }
  conv_backward<Real>(c.input, a.in_channels, s1, tensor(ParamTensor::conv1_weight), f, a.kernel,
                      g_conv1, grad_of(ParamTensor::conv1_weight), grad_of(ParamTensor::conv1_bias),
                      input_grad);
}

template class Cnn<float>;
template class Cnn<double>;

// ---------------------------------------------------------------------------
// Batch operations

template <typename Real>
std::vector<double> softmax(std::span<const Real> logits) {
  std::vector<double> p(logits.size());
  if (logits.empty()) {
    return p;
  }
  const double top = static_cast<double>(*std::max_element(logits.begin(), logits.end()));
  double z = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    p[k] = std::exp(static_cast<double>(logits[k]) - top);
    z += p[k];
  }
  for (auto& v : p) {
    v /= z;
  }
  return p;
}

template <typename Real>
double cross_entropy(std::span<const Real> logits, std::size_t label) {
  const double top = static_cast<double>(*std::max_element(logits.begin(), logits.end()));
  double z = 0.0;
  for (Real v : logits) {
    z += std::exp(static_cast<double>(v) - top);
  }
  return std::log(z) + top - static_cast<double>(logits[label]);
}

template <typename Real>
std::size_t argmax(std::span<const Real> values) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < values.size(); ++k) {
    if (values[k] > values[best]) {
      best = k;
    }
  }
  return best;
}

template <typename Real>
std::vector<std::vector<Real>> forward(Cnn<Real>& model, const Batch<Real>& batch, bool training,
                                       unsigned threads) {
  std::vector<std::uint64_t> seeds(batch.size());
  if (training) {
    for (auto& s : seeds) {
      s = model.rng()();
    }
  }
  std::vector<std::vector<Real>> out(batch.size());
  const Cnn<Real>& frozen = model;
  parallel_for(batch.size(), threads, [&](std::size_t i) {
    typename Cnn<Real>::Cache cache;
    if (training) {
      const auto masks = frozen.sample_masks(seeds[i]);
      frozen.forward(batch[i], &masks, cache);
    } else {
      frozen.forward(batch[i], nullptr, cache);
    }
    out[i] = std::move(cache.logits);
  });
  return out;
}

template <typename Real>
LossAndGrad<Real> loss_and_backward(const Cnn<Real>& model, const Batch<Real>& batch,
                                    std::span<const std::size_t> labels,
                                    const std::vector<typename Cnn<Real>::DropoutMasks>& masks,
                                    unsigned threads) {
  if (batch.empty()) {
    throw ArgumentError("empty batch");
  }
  if (labels.size() != batch.size()) {
    throw ArgumentError("labels and batch differ in length");
  }
  if (!masks.empty() && masks.size() != batch.size()) {
    throw ArgumentError("need one dropout mask set per sample");
  }
  const std::size_t n = model.arch().num_classes;
  for (auto y : labels) {
    if (y >= n) {
      throw ArgumentError("label " + std::to_string(y) + " out of range");
    }
  }
  const std::size_t b = batch.size();
  std::vector<std::vector<Real>> per_sample(b);
  std::vector<double> losses(b, 0.0);
  parallel_for(b, threads, [&](std::size_t i) {
    typename Cnn<Real>::Cache cache;
    model.forward(batch[i], masks.empty() ? nullptr : &masks[i], cache);
    losses[i] = cross_entropy<Real>(cache.logits, labels[i]);
    const auto p = softmax<Real>(cache.logits);
    std::vector<Real> dlogits(n);
    for (std::size_t k = 0; k < n; ++k) {
      dlogits[k] = static_cast<Real>((p[k] - (k == labels[i] ? 1.0 : 0.0)) / static_cast<double>(b));
    }
    per_sample[i].assign(model.param_count(), Real(0));
    model.backward(cache, dlogits, per_sample[i], {}, ReluGate::standard);
  });

  LossAndGrad<Real> result;
  result.grad.assign(model.param_count(), Real(0));
  for (std::size_t i = 0; i < b; ++i) {
    result.loss += losses[i];
    for (std::size_t k = 0; k < result.grad.size(); ++k) {
      result.grad[k] += per_sample[i][k];
    }
  }
  result.loss /= static_cast<double>(b);
  return result;
}

template <typename Real>
void AdamW::step(std::span<Real> params, std::span<const Real> grads) {
  if (params.size() != grads.size()) {
    throw ArgumentError("parameter and gradient sizes differ");
  }
  if (m_.empty()) {
    m_.assign(params.size(), 0.0);
    v_.assign(params.size(), 0.0);
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const double shrink = 1.0 - lr_ * wd_;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double g = static_cast<double>(grads[k]);
    m_[k] = beta1_ * m_[k] + (1.0 - beta1_) * g;
    v_[k] = beta2_ * v_[k] + (1.0 - beta2_) * g * g;
    const double update = lr_ * (m_[k] / c1) / (std::sqrt(v_[k] / c2) + eps_);
    params[k] = static_cast<Real>(static_cast<double>(params[k]) * shrink - update);
  }
}

template <typename Real>
std::vector<EpochSnapshot> train(Cnn<Real>& model, std::span<const TrainExample<Real>> data,
                                 const CnnConfig& config, const TrainOptions& options) {
  if (data.empty()) {
    throw ArgumentError("cannot train on an empty dataset");
  }
  if (config.batch_size == 0) {
    throw ConfigError("batch size must be positive");
  }
  const std::size_t epochs = options.epochs ? options.epochs : config.epochs;
  AdamW optimizer(config.learning_rate, config.weight_decay);
  std::mt19937_64 order_rng(splitmix64(config.seed ^ 0x2545f4914f6cdd1dULL));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::vector<EpochSnapshot> snapshots;
  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      Batch<Real> batch;
      std::vector<std::size_t> labels;
      std::vector<typename Cnn<Real>::DropoutMasks> masks;
      for (std::size_t k = start; k < end; ++k) {
        batch.push_back(data[order[k]].input);
        labels.push_back(data[order[k]].label);
        masks.push_back(model.sample_masks(model.rng()()));
      }
      auto lg = loss_and_backward<Real>(model, batch, labels, masks, options.threads);
      optimizer.step<Real>(model.params(), lg.grad);
      loss_sum += lg.loss;
      ++batches;
    }
    EpochSnapshot snap;
    snap.epoch = epoch;
    snap.mean_train_loss = loss_sum / static_cast<double>(batches);
    if (options.keep_snapshots) {
      snap.params.assign(model.params().begin(), model.params().end());
    }
    if (options.on_epoch) {
      options.on_epoch(epoch, snap.mean_train_loss);
    }
    snapshots.push_back(std::move(snap));
  }
  return snapshots;
}

#define MEMO_INSTANTIATE(Real)                                                                  \
  template std::vector<double> softmax<Real>(std::span<const Real>);                            \
  template double cross_entropy<Real>(std::span<const Real>, std::size_t);                      \
  template std::size_t argmax<Real>(std::span<const Real>);                                     \
  template std::vector<std::vector<Real>> forward<Real>(Cnn<Real>&, const Batch<Real>&, bool,   \
                                                        unsigned);                              \
  template LossAndGrad<Real> loss_and_backward<Real>(                                           \
      const Cnn<Real>&, const Batch<Real>&, std::span<const std::size_t>,                       \
      const std::vector<typename Cnn<Real>::DropoutMasks>&, unsigned);                          \
  template void AdamW::step<Real>(std::span<Real>, std::span<const Real>);                      \
  template std::vector<EpochSnapshot> train<Real>(Cnn<Real>&, std::span<const TrainExample<Real>>, \
                                                  const CnnConfig&, const TrainOptions&);

MEMO_INSTANTIATE(float)
MEMO_INSTANTIATE(double)

#undef MEMO_INSTANTIATE

}  // namespace memo
