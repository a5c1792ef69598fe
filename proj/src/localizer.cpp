#include "memo/localizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "memo/errors.hpp"
#include "memo/parallel.hpp"

namespace memo {

namespace {

template <typename Real>
void check_record(const Cnn<Real>& model, const AttentionRecord& record) {
  const CnnArch& a = model.arch();
  if (record.layers != a.in_channels || record.seq_len != a.input_size) {
    throw ArgumentError("record " + record.id + " has " + std::to_string(record.layers) + "x" +
                        std::to_string(record.seq_len) + " layers/positions, model expects " +
                        std::to_string(a.in_channels) + "x" + std::to_string(a.input_size));
  }
  if (record.heads == 0 || record.data.size() != record.layers * record.heads * record.seq_len * record.seq_len) {
    throw ArgumentError("record " + record.id + " is malformed");
  }
}

// Pooled input plus, for max pooling, the chosen head per (l,i,j).
template <typename Real>
std::vector<Real> pool_heads(const AttentionRecord& r, Pooling pooling, std::vector<std::uint32_t>& chosen) {
  const std::size_t plane = r.seq_len * r.seq_len;
  std::vector<Real> out(r.layers * plane);
  if (pooling == Pooling::max) {
    chosen.assign(out.size(), 0);
  }
  for (std::size_t l = 0; l < r.layers; ++l) {
    for (std::size_t p = 0; p < plane; ++p) {
      const std::size_t o = l * plane + p;
      if (pooling == Pooling::max) {
        std::size_t best = 0;
        float v = r.data[(l * r.heads) * plane + p];
        for (std::size_t h = 1; h < r.heads; ++h) {
          const float x = r.data[(l * r.heads + h) * plane + p];
          if (x > v) {
            v = x;
            best = h;
          }
        }
        out[o] = static_cast<Real>(v);
        chosen[o] = static_cast<std::uint32_t>(best);
      } else {
        Real sum = 0;
        for (std::size_t h = 0; h < r.heads; ++h) {
          sum += static_cast<Real>(r.data[(l * r.heads + h) * plane + p]);
        }
        out[o] = sum / static_cast<Real>(r.heads);
      }
    }
  }
  return out;
}

template <typename Real>
std::vector<Real> unpool_heads(const AttentionRecord& r, Pooling pooling,
                               const std::vector<std::uint32_t>& chosen, std::span<const Real> grad) {
  const std::size_t plane = r.seq_len * r.seq_len;
  std::vector<Real> out(r.data.size(), Real(0));
  const Real share = Real(1) / static_cast<Real>(r.heads);
  for (std::size_t l = 0; l < r.layers; ++l) {
    for (std::size_t p = 0; p < plane; ++p) {
      const std::size_t o = l * plane + p;
      if (pooling == Pooling::max) {
        out[(l * r.heads + chosen[o]) * plane + p] = grad[o];
      } else {
        for (std::size_t h = 0; h < r.heads; ++h) {
          out[(l * r.heads + h) * plane + p] = grad[o] * share;
        }
      }
    }
  }
  return out;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()))) {
    throw StorageError("cannot write " + path.string());
  }
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

template <typename Real>
std::vector<std::vector<Real>> guided_backprop_all(const Cnn<Real>& model,
                                                   const AttentionRecord& record, Pooling pooling) {
  check_record(model, record);
  std::vector<std::uint32_t> chosen;
  const auto input = pool_heads<Real>(record, pooling, chosen);
  typename Cnn<Real>::Cache cache;
  model.forward(input, nullptr, cache);
  const std::size_t n = model.arch().num_classes;
  std::vector<std::vector<Real>> out;
  out.reserve(n);
  std::vector<Real> grad(input.size());
  for (std::size_t t = 0; t < n; ++t) {
    std::vector<Real> onehot(n, Real(0));
    onehot[t] = Real(1);
    model.backward(cache, onehot, {}, grad, ReluGate::guided);
    out.push_back(unpool_heads<Real>(record, pooling, chosen, grad));
  }
  return out;
}

template <typename Real>
std::vector<Real> guided_backprop(const Cnn<Real>& model, const AttentionRecord& record,
                                  Pooling pooling, std::size_t target) {
  if (target >= model.arch().num_classes) {
    throw ArgumentError("target class " + std::to_string(target) + " out of range");
  }
  check_record(model, record);
  std::vector<std::uint32_t> chosen;
  const auto input = pool_heads<Real>(record, pooling, chosen);
  typename Cnn<Real>::Cache cache;
  model.forward(input, nullptr, cache);
  std::vector<Real> onehot(model.arch().num_classes, Real(0));
  onehot[target] = Real(1);
  std::vector<Real> grad(input.size());
  model.backward(cache, onehot, {}, grad, ReluGate::guided);
  return unpool_heads<Real>(record, pooling, chosen, grad);
}

template <typename Real>
std::vector<Real> discriminative_map(const std::vector<std::vector<Real>>& guided, std::size_t true_class) {
  const std::size_t n = guided.size();
  if (n < 2) {
    throw ArgumentError("a discriminative map needs at least two classes");
  }
  if (true_class >= n) {
    throw ArgumentError("true class " + std::to_string(true_class) + " out of range");
  }
  const std::size_t size = guided[true_class].size();
  std::vector<Real> others(size, Real(0));
  for (std::size_t t = 0; t < n; ++t) {
    if (guided[t].size() != size) {
      throw ArgumentError("guided maps differ in size");
    }
    if (t == true_class) {
      continue;
    }
    for (std::size_t k = 0; k < size; ++k) {
      others[k] += guided[t][k];
    }
  }
  const Real scale = Real(1) / static_cast<Real>(n - 1);
  std::vector<Real> c(size);
  for (std::size_t k = 0; k < size; ++k) {
    c[k] = guided[true_class][k] - others[k] * scale;
  }
  return c;
}

template <typename Real>
std::vector<Real> clip_normalize(std::span<const Real> c) {
  std::vector<Real> d(c.size(), Real(0));
  if (c.empty()) {
    return d;
  }
  const Real top = *std::max_element(c.begin(), c.end());
  if (!(top > Real(0))) {
    return d;
  }
  for (std::size_t k = 0; k < c.size(); ++k) {
    d[k] = c[k] > Real(0) ? c[k] / top : Real(0);
  }
  return d;
}

template <typename Real>
SaliencyStack<Real> saliency(const Cnn<Real>& model, const AttentionRecord& record,
                             Pooling pooling, std::size_t true_class) {
  SaliencyStack<Real> s;
  s.guided = guided_backprop_all(model, record, pooling);
  s.discriminative = discriminative_map(s.guided, true_class);
  s.clipped = clip_normalize<Real>(s.discriminative);
  return s;
}

#define MEMO_INSTANTIATE(Real)                                                                    \
  template std::vector<Real> guided_backprop<Real>(const Cnn<Real>&, const AttentionRecord&,      \
                                                   Pooling, std::size_t);                         \
  template std::vector<std::vector<Real>> guided_backprop_all<Real>(                              \
      const Cnn<Real>&, const AttentionRecord&, Pooling);                                         \
  template std::vector<Real> discriminative_map<Real>(const std::vector<std::vector<Real>>&,      \
                                                      std::size_t);                               \
  template std::vector<Real> clip_normalize<Real>(std::span<const Real>);                         \
  template SaliencyStack<Real> saliency<Real>(const Cnn<Real>&, const AttentionRecord&, Pooling,  \
                                              std::size_t);

MEMO_INSTANTIATE(float)
MEMO_INSTANTIATE(double)

#undef MEMO_INSTANTIATE

LocalizationMap aggregate_delta(std::size_t sample_count, const RecordLoader& load,
                                const std::vector<LocalizerModel>& models, std::size_t true_class,
                                const std::string& label, const AggregateOptions& options) {
  if (sample_count == 0) {
    throw ArgumentError("class '" + label + "' has no samples to localize");
  }
  if (models.empty()) {
    throw ArgumentError("localization needs at least one model");
  }
  const CnnArch& arch = models.front().model->arch();
  for (const auto& m : models) {
    if (m.model->arch().in_channels != arch.in_channels || m.model->arch().input_size != arch.input_size) {
      throw ArgumentError("models disagree on input geometry");
    }
  }

  LocalizationMap map;
  map.label = label;
  map.class_index = true_class;
  map.layers = arch.in_channels;
  map.seq_len = arch.input_size;
  map.sample_count = sample_count;
  map.delta.assign(map.layers * map.seq_len * map.seq_len, 0.0);
  const std::size_t plane = map.seq_len * map.seq_len;
  const std::size_t cells = map.delta.size();

  // Per model: running sum over samples and count of contributing samples.
  std::vector<std::vector<double>> model_sum(models.size(), std::vector<double>(cells, 0.0));
  std::vector<std::size_t> model_n(models.size(), 0);

  constexpr std::size_t kChunk = 32;
  for (std::size_t begin = 0; begin < sample_count; begin += kChunk) {
    const std::size_t end = std::min(sample_count, begin + kChunk);
    // slot[(s - begin) * models + m] holds E for one (sample, model) pair, empty when skipped.
    std::vector<std::vector<float>> slot((end - begin) * models.size());
    parallel_for(end - begin, options.threads, [&](std::size_t local) {
      const AttentionRecord record = load(begin + local);
      for (std::size_t m = 0; m < models.size(); ++m) {
        const Cnn<float>& model = *models[m].model;
        if (options.correct_only) {
          std::vector<std::uint32_t> chosen;
          const auto logits = model.logits(pool_heads<float>(record, models[m].pooling, chosen));
          if (argmax<float>(logits) != true_class) {
            continue;
          }
        }
        const auto stack = saliency<float>(model, record, models[m].pooling, true_class);
        std::vector<float> e(cells, 0.0f);
        for (std::size_t l = 0; l < record.layers; ++l) {
          for (std::size_t h = 0; h < record.heads; ++h) {
            const std::size_t base = (l * record.heads + h) * plane;
            for (std::size_t p = 0; p < plane; ++p) {
              const float v = stack.clipped[base + p] * record.data[base + p];
              float& dst = e[l * plane + p];
              dst = std::max(dst, v);
            }
          }
        }
        slot[local * models.size() + m] = std::move(e);
      }
    });
    for (std::size_t local = 0; local < end - begin; ++local) {
      for (std::size_t m = 0; m < models.size(); ++m) {
        const auto& e = slot[local * models.size() + m];
        if (e.empty()) {
          continue;
        }
        ++model_n[m];
        auto& sum = model_sum[m];
        for (std::size_t k = 0; k < cells; ++k) {
          sum[k] += static_cast<double>(e[k]);
        }
      }
    }
  }

  for (std::size_t m = 0; m < models.size(); ++m) {
    if (model_n[m] == 0) {
      continue;
    }
    ++map.cnn_count;
    const double scale = 1.0 / static_cast<double>(model_n[m]);
    for (std::size_t k = 0; k < cells; ++k) {
      map.delta[k] += model_sum[m][k] * scale;
    }
  }
  if (map.cnn_count > 0) {
    const double scale = 1.0 / static_cast<double>(map.cnn_count);
    for (auto& v : map.delta) {
      v *= scale;
    }
  }
  return map;
}

LocalizationMap aggregate_delta(std::span<const AttentionRecord> records,
                                const std::vector<LocalizerModel>& models, std::size_t true_class,
                                const std::string& label, const AggregateOptions& options) {
  return aggregate_delta(
      records.size(), [&](std::size_t k) { return records[k]; }, models, true_class, label, options);
}

std::vector<double> layer_profile(const LocalizationMap& map) {
  const std::size_t t = map.seq_len;
  const double cells = static_cast<double>(t * (t + 1) / 2);
  std::vector<double> profile(map.layers, 0.0);
  for (std::size_t l = 0; l < map.layers; ++l) {
    double sum = 0.0;
    for (std::size_t i = 0; i < t; ++i) {
      for (std::size_t j = 0; j <= i; ++j) {
        sum += map.at(l, i, j);
      }
    }
    profile[l] = sum / cells;
  }
  return profile;
}

double band_mean(const LocalizationMap& map, std::size_t layer, std::size_t lo, std::size_t hi) {
  if (layer >= map.layers || lo > hi) {
    throw ArgumentError("bad layer or offset range");
  }
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < map.seq_len; ++i) {
    for (std::size_t off = lo; off <= hi && off <= i; ++off) {
      sum += map.at(layer, i, i - off);
      ++count;
    }
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

void write_delta_csv(const LocalizationMap& map, std::size_t layer, const std::filesystem::path& path) {
  std::string text;
  for (std::size_t i = 0; i < map.seq_len; ++i) {
    for (std::size_t j = 0; j < map.seq_len; ++j) {
      if (j) {
        text += ',';
      }
      text += format_double(map.at(layer, i, j));
    }
    text += '\n';
  }
  write_file(path, text);
}

void write_delta_pgm(const LocalizationMap& map, std::size_t layer, const std::filesystem::path& path) {
  const auto values = map.layer(layer);
  const double top = *std::max_element(values.begin(), values.end());
  std::string bytes = "P5\n" + std::to_string(map.seq_len) + " " + std::to_string(map.seq_len) + "\n255\n";
  for (double v : values) {
    const double scaled = top > 0.0 ? std::round(255.0 * v / top) : 0.0;
    bytes += static_cast<char>(static_cast<unsigned char>(std::clamp(scaled, 0.0, 255.0)));
  }
  write_file(path, bytes);
}

void write_profile_csv(const LocalizationMap& map, const std::filesystem::path& path) {
  std::string text = "layer,mean\n";
  const auto profile = layer_profile(map);
  for (std::size_t l = 0; l < profile.size(); ++l) {
    text += std::to_string(l + 1) + "," + format_double(profile[l]) + "\n";
  }
  write_file(path, text);
}

void write_localization(const LocalizationMap& map, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t l = 0; l < map.layers; ++l) {
    const std::string stem = "delta_" + map.label + "_layer" + std::to_string(l + 1);
    write_delta_csv(map, l, dir / (stem + ".csv"));
    write_delta_pgm(map, l, dir / (stem + ".pgm"));
  }
  write_profile_csv(map, dir / ("profile_" + map.label + ".csv"));
}

}  // namespace memo
