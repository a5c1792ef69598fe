#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "memo/attn_store.hpp"
#include "memo/cnn.hpp"
#include "memo/metrics.hpp"
#include "memo/synth.hpp"
#include "memo/taxonomy.hpp"

namespace memo {

/// Samples plus on-demand attention tensors for one model-size tag.
class DatasetSource {
 public:
  virtual ~DatasetSource() = default;
  virtual const std::string& tag() const = 0;
  virtual const std::vector<SampleMeta>& samples() const = 0;
  /// Must be safe to call concurrently.
  virtual AttentionRecord load(std::size_t index) const = 0;
};

class DirectorySource : public DatasetSource {
 public:
  DirectorySource(std::filesystem::path root, std::string tag);
  const std::string& tag() const override { return tag_; }
  const std::vector<SampleMeta>& samples() const override { return samples_; }
  AttentionRecord load(std::size_t index) const override;

 private:
  DatasetDir dir_;
  std::string tag_;
  std::vector<SampleMeta> samples_;
};

/// Generates tensors lazily from a synthetic corpus instead of reading files.
class SynthSource : public DatasetSource {
 public:
  SynthSource(SynthConfig config, std::string tag);
  const std::string& tag() const override { return tag_; }
  const std::vector<SampleMeta>& samples() const override { return corpus_.samples; }
  AttentionRecord load(std::size_t index) const override;
  const SynthCorpus& corpus() const noexcept { return corpus_; }
  const SynthConfig& config() const noexcept { return config_; }

 private:
  SynthConfig config_;
  SynthCorpus corpus_;
  std::string tag_;
};

struct LabeledIndex {
  std::size_t index = 0;  // into the source's samples
  std::size_t label = 0;
};

struct Split {
  std::vector<LabeledIndex> train;
  std::vector<LabeledIndex> eval;
  std::size_t train_per_class = 0;
  std::size_t eval_per_class = 0;
  std::vector<std::string> warnings;
};

/// pools[c] holds the sample indices of class c. Classes smaller than train_n + eval_n
/// scale every class down to the binding class size; an empty class is infeasible.
Split balanced_split(const std::vector<std::vector<std::size_t>>& pools, std::size_t train_n,
                     std::size_t eval_n, std::uint64_t seed,
                     const std::vector<std::string>& class_labels = {});

/// Per-class index pools of a source under a taxonomy.
std::vector<std::vector<std::size_t>> label_pools(const TaxonomySpec& spec,
                                                  const std::vector<SampleMeta>& samples,
                                                  const PredicateConfig& predicates = {},
                                                  unsigned threads = 1);

struct RunPlan {
  TaxonomySpec taxonomy;
  std::vector<std::shared_ptr<const DatasetSource>> roots;
  std::size_t train_per_class = 4000;
  std::size_t eval_per_class = 2000;
  std::vector<std::size_t> checkpoints{1, 2, 3};
  std::vector<CnnConfig> configs;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  PredicateConfig predicates;
  /// Keep the final-epoch model of every run in the result.
  bool keep_models = false;
  /// Receives one JSON object per line of run log.
  std::function<void(const std::string&)> log;
  /// Called at every checkpoint epoch with the model in its current state.
  std::function<void(const std::string& model_size, const CnnConfig&, std::size_t epoch,
                     const Cnn<float>&)>
      on_checkpoint;
};

struct RunMetrics {
  std::string model_size;
  std::string config_id;
  std::size_t epoch = 0;
  MetricsReport report;
};

struct TrainedModel {
  std::string model_size;
  CnnConfig config;
  std::shared_ptr<Cnn<float>> model;
};

struct RootSplit {
  std::string model_size;
  Split split;
};

struct BenchmarkResult {
  std::string taxonomy;
  std::vector<std::string> class_labels;
  MetricsReport report;
  std::vector<Prediction> predictions;
  std::vector<RunMetrics> runs;
  std::vector<std::string> warnings;
  std::vector<TrainedModel> models;
  std::vector<RootSplit> splits;
};

BenchmarkResult run_benchmark(const RunPlan& plan);

}  // namespace memo
