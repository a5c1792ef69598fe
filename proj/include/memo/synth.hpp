#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "memo/attn_store.hpp"

namespace memo {

enum class SynthClass { non_memo, guess, recall };
inline constexpr std::array<SynthClass, 3> kSynthClasses{SynthClass::non_memo, SynthClass::guess,
                                                         SynthClass::recall};

const char* to_string(SynthClass c);
SynthClass synth_class_from_string(const std::string& s);
/// Label of the class under "Non-Memo,Guess[0.5-0.5],Others".
const char* oracle_label(SynthClass c);

enum class PatternKind { none, diagonal_streak, subdiagonal_band };

struct PatternSpec {
  PatternKind kind = PatternKind::none;
  /// Inclusive, 0-based.
  std::size_t layer_lo = 0;
  std::size_t layer_hi = 0;
  /// diagonal_streak: attends from row i to i - offset for the last `length` rows.
  std::size_t offset = 8;
  std::size_t length = 48;
  /// subdiagonal_band: offsets band_lo..band_hi below the diagonal.
  std::size_t band_lo = 1;
  std::size_t band_hi = 4;
  double strength = 1.0;
  /// Standard deviation of the per-logit Gaussian noise.
  double noise_temperature = 0.5;

  /// Throws ConfigError for bands outside [0, layers) or offsets past the sequence.
  void check(std::size_t layers) const;
};

struct SynthConfig {
  std::size_t non_memo = 450;
  std::size_t guess = 450;
  std::size_t recall = 900;
  std::size_t layers = 8;
  std::size_t heads = 4;
  std::size_t vocab = 4096;
  /// Duplicate counts handed out in turn to the extractable samples.
  std::vector<std::uint64_t> dup_plants{8, 80};
  std::size_t template_period = 8;
  std::size_t separators = 3;
  std::uint64_t seed = 0;
  PatternSpec guess_pattern{PatternKind::diagonal_streak, 1, 2};
  PatternSpec recall_pattern{PatternKind::subdiagonal_band, 6, 7};
  PatternSpec non_memo_pattern{PatternKind::none, 0, 0};

  std::size_t count(SynthClass c) const;
  const PatternSpec& pattern(SynthClass c) const;
  void check() const;
  /// Moves the guess streak to the lower quarter and the recall band to the top quarter
  /// of `layers`; 8 layers gives the defaults.
  void place_bands();
};

struct SynthCorpus {
  std::vector<SampleMeta> samples;
  std::vector<SynthClass> classes;
  /// Token stream holding every extractable sample exactly dup_count times.
  std::vector<TokenId> corpus;
};

/// Samples in class blocks (non_memo, guess, recall); the class name is also kept in
/// source_tag as "synthetic/<class>".
SynthCorpus gen_corpus(const SynthConfig& config);

/// Softmax-normalized causal attention: self, sink on token 0 and separator bars in
/// every layer, the planted pattern in its band, Gaussian logit noise.
AttentionRecord gen_attention(const SampleMeta& meta, const PatternSpec& pattern, std::size_t layers,
                              std::size_t heads, std::uint64_t seed, std::size_t separators = 3);

/// Attention for sample `index` of a generated corpus, with a per-sample derived seed.
AttentionRecord synth_record(const SynthConfig& config, const SynthCorpus& corpus, std::size_t index);

/// Writes tensors/, samples.jsonl and oracle_labels.csv (label CSV columns, oracle labels).
void write_synth_dataset(const SynthConfig& config, const SynthCorpus& corpus,
                         const std::filesystem::path& root, unsigned threads = 1);

}  // namespace memo
