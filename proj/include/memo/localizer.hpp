#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "memo/attn_store.hpp"
#include "memo/cnn.hpp"

namespace memo {

/// Guided gradient of the pre-softmax logit `target` with respect to every per-head
/// attention weight, laid out like record.data. Head pooling is differentiated: max
/// routes to the first maximal head, mean spreads 1/H.
template <typename Real>
std::vector<Real> guided_backprop(const Cnn<Real>& model, const AttentionRecord& record,
                                  Pooling pooling, std::size_t target);

/// One guided map per class, sharing a single forward pass.
template <typename Real>
std::vector<std::vector<Real>> guided_backprop_all(const Cnn<Real>& model,
                                                   const AttentionRecord& record, Pooling pooling);

/// C = B[t0] - mean of B over the other classes.
template <typename Real>
std::vector<Real> discriminative_map(const std::vector<std::vector<Real>>& guided, std::size_t true_class);

/// D = max(C, 0) / max(C); all zeros when max(C) <= 0.
template <typename Real>
std::vector<Real> clip_normalize(std::span<const Real> discriminative);

template <typename Real>
struct SaliencyStack {
  std::vector<std::vector<Real>> guided;  // B, one per class
  std::vector<Real> discriminative;       // C
  std::vector<Real> clipped;              // D
};

template <typename Real>
SaliencyStack<Real> saliency(const Cnn<Real>& model, const AttentionRecord& record,
                             Pooling pooling, std::size_t true_class);

struct LocalizationMap {
  std::string label;
  std::size_t class_index = 0;
  std::size_t layers = 0;
  std::size_t seq_len = kSeqLen;
  std::size_t sample_count = 0;
  std::size_t cnn_count = 0;
  std::vector<double> delta;  // [l][i][j]

  double at(std::size_t l, std::size_t i, std::size_t j) const noexcept {
    return delta[(l * seq_len + i) * seq_len + j];
  }
  std::span<const double> layer(std::size_t l) const noexcept {
    return {delta.data() + l * seq_len * seq_len, seq_len * seq_len};
  }
};

struct LocalizerModel {
  const Cnn<float>* model = nullptr;
  Pooling pooling = Pooling::max;
};

struct AggregateOptions {
  unsigned threads = 1;
  /// Only average over samples the model classifies as the true class.
  bool correct_only = false;
};

using RecordLoader = std::function<AttentionRecord(std::size_t)>;

/// E_l = max_h (D . A) per sample and model, averaged over samples, then over models.
/// `load` must be safe to call concurrently.
LocalizationMap aggregate_delta(std::size_t sample_count, const RecordLoader& load,
                                const std::vector<LocalizerModel>& models, std::size_t true_class,
                                const std::string& label, const AggregateOptions& options = {});

LocalizationMap aggregate_delta(std::span<const AttentionRecord> records,
                                const std::vector<LocalizerModel>& models, std::size_t true_class,
                                const std::string& label, const AggregateOptions& options = {});

/// Mean of each layer's lower triangle (diagonal included).
std::vector<double> layer_profile(const LocalizationMap& map);

/// Mean of the cells at offsets i - j in [lo, hi] of one layer.
double band_mean(const LocalizationMap& map, std::size_t layer, std::size_t lo, std::size_t hi);

void write_delta_csv(const LocalizationMap& map, std::size_t layer, const std::filesystem::path& path);
/// 8-bit binary PGM scaled so the layer maximum maps to 255.
void write_delta_pgm(const LocalizationMap& map, std::size_t layer, const std::filesystem::path& path);
/// "layer,mean" with 1-based layers.
void write_profile_csv(const LocalizationMap& map, const std::filesystem::path& path);
/// Every layer as delta_{label}_layer{n}.csv/.pgm plus profile_{label}.csv under dir.
void write_localization(const LocalizationMap& map, const std::filesystem::path& dir);

}  // namespace memo
