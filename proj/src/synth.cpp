#include "memo/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "memo/errors.hpp"
#include "memo/parallel.hpp"
#include "memo/random.hpp"
#include "memo/taxonomy.hpp"

namespace memo {

const char* to_string(SynthClass c) {
  switch (c) {
    case SynthClass::non_memo:
      return "non_memo";
    case SynthClass::guess:
      return "guess";
    case SynthClass::recall:
      return "recall";
  }
  return "?";
}

SynthClass synth_class_from_string(const std::string& s) {
  for (SynthClass c : kSynthClasses) {
    if (s == to_string(c)) {
      return c;
    }
  }
  throw ArgumentError("unknown synthetic class '" + s + "'");
}

const char* oracle_label(SynthClass c) {
  switch (c) {
    case SynthClass::non_memo:
      return "Non-Memo";
    case SynthClass::guess:
      return "Guess";
    case SynthClass::recall:
      return "Others";
  }
  return "?";
}

void PatternSpec::check(std::size_t layers) const {
  if (kind == PatternKind::none) {
    return;
  }
  if (layer_lo > layer_hi || layer_hi >= layers) {
    throw ConfigError("pattern layer band [" + std::to_string(layer_lo) + "," + std::to_string(layer_hi) +
                      "] outside the " + std::to_string(layers) + " layers");
  }
  if (!(strength >= 0.0 && strength <= 1.0)) {
    throw ConfigError("pattern strength must lie in [0,1]");
  }
  if (!(noise_temperature > 0.0)) {
    throw ConfigError("noise temperature must be positive");
  }
  if (kind == PatternKind::diagonal_streak && (offset == 0 || offset >= kSeqLen || length > kSeqLen - offset)) {
    throw ConfigError("diagonal streak does not fit in the sequence");
  }
  if (kind == PatternKind::subdiagonal_band && (band_lo > band_hi || band_hi >= kSeqLen)) {
    throw ConfigError("bad subdiagonal band offsets");
  }
}

std::size_t SynthConfig::count(SynthClass c) const {
  switch (c) {
    case SynthClass::non_memo:
      return non_memo;
    case SynthClass::guess:
      return guess;
    case SynthClass::recall:
      return recall;
  }
  return 0;
}

const PatternSpec& SynthConfig::pattern(SynthClass c) const {
  switch (c) {
    case SynthClass::guess:
      return guess_pattern;
    case SynthClass::recall:
      return recall_pattern;
    default:
      return non_memo_pattern;
  }
}

void SynthConfig::check() const {
  if (non_memo == 0 || guess == 0 || recall == 0) {
    throw ConfigError("every synthetic class needs at least one sample");
  }
  if (layers == 0 || heads == 0) {
    throw ConfigError("layers and heads must be positive");
  }
  if (vocab < 64) {
    throw ConfigError("vocab must be at least 64");
  }
  if (dup_plants.empty() ||
      std::any_of(dup_plants.begin(), dup_plants.end(), [](std::uint64_t d) { return d == 0; })) {
    throw ConfigError("dup plants must be non-empty and positive");
  }
  if (template_period < 2 || template_period > 16 || template_period > vocab * 3 / 4) {
    throw ConfigError("template period must lie in [2,16]");
  }
  if (separators >= kSeqLen) {
    throw ConfigError("too many separators");
  }
  guess_pattern.check(layers);
  recall_pattern.check(layers);
  non_memo_pattern.check(layers);
}

void SynthConfig::place_bands() {
  if (layers == 0) {
    throw ConfigError("layers must be positive");
  }
  guess_pattern.layer_lo = layers / 8;
  guess_pattern.layer_hi = std::max(guess_pattern.layer_lo, layers / 4);
  recall_pattern.layer_lo = layers - std::max<std::size_t>(1, layers / 4);
  recall_pattern.layer_hi = layers - 1;
}

SynthCorpus gen_corpus(const SynthConfig& config) {
  config.check();
  const auto alphabet = static_cast<TokenId>(config.vocab * 3 / 4);
  const TokenId half = alphabet / 2;
  const auto spec = parse_taxonomy("Non-Memo,Guess[0.5-0.5],Others");
  std::mt19937_64 rng(derive_seed(config.seed, 0x5e9));
  auto draw = [&rng](TokenId lo, TokenId hi) {
    return std::uniform_int_distribution<TokenId>(lo, hi - 1)(rng);
  };

  SynthCorpus out;
  std::set<std::vector<TokenId>> seen;
  std::size_t plant = 0;
  for (SynthClass cls : kSynthClasses) {
    for (std::size_t k = 0; k < config.count(cls); ++k) {
      SampleMeta meta;
      meta.id = std::string(to_string(cls)) + "-" + std::to_string(k);
      meta.source_tag = std::string("synthetic/") + to_string(cls);
      meta.extractable = cls != SynthClass::non_memo;
      if (cls == SynthClass::non_memo) {
        meta.dup_count = 1;
      } else {
        meta.dup_count = config.dup_plants[plant++ % config.dup_plants.size()];
      }
      for (;;) {
        meta.token_ids.assign(kSeqLen, 0);
        if (cls == SynthClass::guess) {
          std::vector<TokenId> motif;
          while (motif.size() < config.template_period) {
            const TokenId t = draw(0, alphabet);
            if (std::find(motif.begin(), motif.end(), t) == motif.end()) {
              motif.push_back(t);
            }
          }
          for (std::size_t i = 0; i < kSeqLen; ++i) {
            meta.token_ids[i] = motif[i % motif.size()];
          }
        } else if (cls == SynthClass::recall) {
          for (std::size_t i = 0; i < kSeqLen; ++i) {
            meta.token_ids[i] = i < kPrefixLen ? draw(0, half) : draw(half, alphabet);
          }
        } else {
          for (auto& t : meta.token_ids) {
            t = draw(0, alphabet);
          }
        }
        if (!seen.insert(meta.token_ids).second) {
          continue;
        }
        if (label_sample(spec, meta).label == oracle_label(cls)) {
          break;
        }
        seen.erase(meta.token_ids);
      }
      out.samples.push_back(std::move(meta));
      out.classes.push_back(cls);
    }
  }

  // Every plant is followed by a filler token outside the sample alphabet, so no window
  // other than a plant itself can match a sample.
  std::size_t total = 0;
  for (const auto& s : out.samples) {
    total += s.dup_count * (kSeqLen + 1);
  }
  out.corpus.reserve(total);
  for (const auto& s : out.samples) {
    for (std::uint64_t d = 0; d < s.dup_count; ++d) {
      out.corpus.insert(out.corpus.end(), s.token_ids.begin(), s.token_ids.end());
      out.corpus.push_back(draw(alphabet, static_cast<TokenId>(config.vocab)));
    }
  }
  return out;
}

AttentionRecord gen_attention(const SampleMeta& meta, const PatternSpec& pattern, std::size_t layers,
                              std::size_t heads, std::uint64_t seed, std::size_t separators) {
  pattern.check(layers);
  if (layers == 0 || heads == 0) {
    throw ArgumentError("layers and heads must be positive");
  }
  constexpr std::size_t t = kSeqLen;
  std::mt19937_64 rng(seed);
  std::vector<bool> bar(t, false);
  {
    std::uniform_int_distribution<std::size_t> pos(1, t - 1);
    std::size_t placed = 0;
    while (placed < std::min(separators, t - 1)) {
      const std::size_t p = pos(rng);
      if (!bar[p]) {
        bar[p] = true;
        ++placed;
      }
    }
  }
  std::normal_distribution<double> noise(0.0, pattern.noise_temperature);

  AttentionRecord r(meta.id, layers, heads);
  std::vector<double> logit(t);
  for (std::size_t l = 0; l < layers; ++l) {
    const bool planted = pattern.kind != PatternKind::none && l >= pattern.layer_lo && l <= pattern.layer_hi;
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < t; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
          double v = noise(rng);
          if (j == i) {
            v += 3.0;
          }
          if (j == 0) {
            v += 3.0;
          }
          if (bar[j]) {
            v += 2.0;
          }
          if (planted) {
            const std::size_t off = i - j;
            if (pattern.kind == PatternKind::diagonal_streak) {
              if (off == pattern.offset && i >= t - pattern.length) {
                v += 4.0 * pattern.strength;
              }
            } else if (off >= pattern.band_lo && off <= pattern.band_hi) {
              v += 3.0 * pattern.strength;
            }
          }
          logit[j] = v;
        }
        const double top = *std::max_element(logit.begin(), logit.begin() + static_cast<std::ptrdiff_t>(i + 1));
        double z = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          logit[j] = std::exp(logit[j] - top);
          z += logit[j];
        }
        for (std::size_t j = 0; j <= i; ++j) {
          r.at(l, h, i, j) = static_cast<float>(logit[j] / z);
        }
      }
    }
  }
  return r;
}

AttentionRecord synth_record(const SynthConfig& config, const SynthCorpus& corpus, std::size_t index) {
  if (index >= corpus.samples.size()) {
    throw ArgumentError("sample index out of range");
  }
  return gen_attention(corpus.samples[index], config.pattern(corpus.classes[index]), config.layers,
                       config.heads, derive_seed(config.seed, 0x100000 + index), config.separators);
}

void write_synth_dataset(const SynthConfig& config, const SynthCorpus& corpus,
                         const std::filesystem::path& root, unsigned threads) {
  DatasetDir dir(root);
  dir.create();
  dir.write_samples(corpus.samples);
  parallel_for(corpus.samples.size(), threads,
               [&](std::size_t k) { dir.store(synth_record(config, corpus, k)); });
  std::ofstream out(root / "oracle_labels.csv", std::ios::binary | std::ios::trunc);
  if (!out) {
    throw StorageError("cannot write " + (root / "oracle_labels.csv").string());
  }
  out << label_csv_header() << "\n";
  for (std::size_t k = 0; k < corpus.samples.size(); ++k) {
    const auto& meta = corpus.samples[k];
    out << label_csv_row(meta, oracle_label(corpus.classes[k]), compute_features(meta)) << "\n";
  }
  if (!out) {
    throw StorageError("failed writing oracle labels");
  }
}

}  // namespace memo
