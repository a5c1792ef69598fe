#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "memo/dedup.hpp"
#include "memo/errors.hpp"
#include "memo/rouge.hpp"
#include "memo/synth.hpp"
#include "memo/taxonomy.hpp"
#include "synth_probe.hpp"

using namespace memo;

namespace {

SynthConfig small_config() {
  SynthConfig c;
  c.non_memo = 40;
  c.guess = 40;
  c.recall = 80;
  c.seed = 3;
  return c;
}

}  // namespace

TEST(Synth, OracleLabelsReproducedExactly) {
  const auto cfg = small_config();
  const auto corpus = gen_corpus(cfg);
  const auto spec = parse_taxonomy("Non-Memo,Guess[0.5-0.5],Others");
  ASSERT_EQ(corpus.samples.size(), 160u);
  for (std::size_t k = 0; k < corpus.samples.size(); ++k) {
    EXPECT_EQ(label_sample(spec, corpus.samples[k]).label, oracle_label(corpus.classes[k])) << k;
  }
}

TEST(Synth, ClassShapes) {
  const auto corpus = gen_corpus(small_config());
  for (std::size_t k = 0; k < corpus.samples.size(); ++k) {
    const auto& m = corpus.samples[k];
    switch (corpus.classes[k]) {
      case SynthClass::guess:
        EXPECT_TRUE(detect_template(m));
        EXPECT_DOUBLE_EQ(rouge_l_f1(m.prefix(), m.suffix()), 1.0);
        break;
      case SynthClass::recall:
        EXPECT_EQ(rouge_l_f1(m.prefix(), m.suffix()), 0.0);
        EXPECT_TRUE(m.extractable);
        break;
      case SynthClass::non_memo:
        EXPECT_FALSE(m.extractable);
        break;
    }
  }
}

TEST(Synth, PlantedDuplicatesCountExactly) {
  const auto corpus = gen_corpus(small_config());
  const auto counts = count_duplicates(corpus.corpus, corpus.samples);
  std::set<std::uint64_t> seen;
  for (const auto& m : corpus.samples) {
    if (!m.extractable) continue;
    EXPECT_EQ(counts.at(m.id), m.dup_count) << m.id;
    seen.insert(m.dup_count);
  }
  EXPECT_EQ(seen, (std::set<std::uint64_t>{8, 80}));
}

TEST(Synth, RecordsValidateAndAreDeterministic) {
  const auto cfg = small_config();
  const auto corpus = gen_corpus(cfg);
  for (std::size_t k = 0; k < corpus.samples.size(); k += 13) {
    const auto r = synth_record(cfg, corpus, k);
    EXPECT_NO_THROW(validate(r));
    EXPECT_EQ(r, synth_record(cfg, corpus, k));
  }
  EXPECT_EQ(gen_corpus(cfg).corpus, corpus.corpus);
}

TEST(Synth, ZeroStrengthKeepsBaseStructure) {
  const auto corpus = gen_corpus(small_config());
  PatternSpec band{PatternKind::subdiagonal_band, 6, 7};
  band.strength = 0.0;
  const auto plain = gen_attention(corpus.samples[0], band, 8, 2, 5);
  EXPECT_NO_THROW(validate(plain));
  const auto none = gen_attention(corpus.samples[0], PatternSpec{}, 8, 2, 5);
  EXPECT_EQ(plain, none);
}

TEST(Synth, BandStatisticSeparatesLayers) {
  const auto corpus = gen_corpus(small_config());
  const PatternSpec band{PatternKind::subdiagonal_band, 6, 7};
  const auto r = gen_attention(corpus.samples[0], band, 8, 4, 9);
  const double high = memo_test::offset_mass(r, 6, 7, 1, 4);
  const double low = memo_test::offset_mass(r, 0, 5, 1, 4);
  EXPECT_GE(high, 3.0 * low);
}

TEST(Synth, LinearProbeSeparatesClasses) {
  auto cfg = small_config();
  cfg.non_memo = cfg.guess = 60;
  cfg.recall = 120;
  const auto corpus = gen_corpus(cfg);
  std::vector<std::array<double, 2>> x;
  std::vector<std::size_t> y;
  for (std::size_t k = 0; k < corpus.samples.size(); ++k) {
    x.push_back(memo_test::pattern_features(synth_record(cfg, corpus, k), cfg));
    y.push_back(static_cast<std::size_t>(corpus.classes[k]));
  }
  EXPECT_GE(memo_test::linear_probe_accuracy(x, y, 3), 0.99);
}

TEST(Synth, ConfigErrors) {
  auto cfg = small_config();
  cfg.guess = 0;
  EXPECT_THROW(gen_corpus(cfg), ConfigError);
  cfg = small_config();
  cfg.recall_pattern.layer_hi = 8;
  EXPECT_THROW(gen_corpus(cfg), ConfigError);
  cfg = small_config();
  cfg.vocab = 32;
  EXPECT_THROW(gen_corpus(cfg), ConfigError);
  EXPECT_THROW(synth_class_from_string("memo"), ArgumentError);
}

TEST(Synth, WritesDatasetWithOracleCsv) {
  const auto root = std::filesystem::temp_directory_path() / "memo_synth";
  std::filesystem::remove_all(root);
  auto cfg = small_config();
  cfg.non_memo = cfg.guess = cfg.recall = 4;
  const auto corpus = gen_corpus(cfg);
  write_synth_dataset(cfg, corpus, root, 2);
  DatasetDir dir(root);
  const auto samples = dir.read_samples();
  ASSERT_EQ(samples.size(), 12u);
  EXPECT_EQ(dir.load(samples[5].id), synth_record(cfg, corpus, 5));
  std::ifstream in(root / "oracle_labels.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "id,label,dup_count,rouge_l,rouge_3,template,code");
  std::getline(in, line);
  EXPECT_EQ(line.substr(0, line.find(',', line.find(',') + 1)), "non_memo-0,Non-Memo");
}

TEST(Synth, BandPlacementFollowsDepth) {
  SynthConfig cfg;
  const auto before = cfg;
  cfg.place_bands();
  EXPECT_EQ(cfg.guess_pattern.layer_lo, before.guess_pattern.layer_lo);
  EXPECT_EQ(cfg.guess_pattern.layer_hi, before.guess_pattern.layer_hi);
  EXPECT_EQ(cfg.recall_pattern.layer_lo, before.recall_pattern.layer_lo);
  EXPECT_EQ(cfg.recall_pattern.layer_hi, before.recall_pattern.layer_hi);
  cfg.layers = 4;
  cfg.place_bands();
  EXPECT_NO_THROW(cfg.check());
  EXPECT_LT(cfg.guess_pattern.layer_hi, cfg.recall_pattern.layer_lo);
}
