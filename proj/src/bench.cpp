#include "memo/bench.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "json.hpp"

#include "memo/errors.hpp"
#include "memo/parallel.hpp"
#include "memo/random.hpp"

namespace memo {

DirectorySource::DirectorySource(std::filesystem::path root, std::string tag)
    : dir_(std::move(root)), tag_(std::move(tag)) {
  if (!std::filesystem::is_directory(dir_.root())) {
    throw StorageError("dataset root " + dir_.root().string() + " does not exist");
  }
  samples_ = dir_.read_samples();
}

AttentionRecord DirectorySource::load(std::size_t index) const {
  return dir_.load(samples_.at(index).id);
}

SynthSource::SynthSource(SynthConfig config, std::string tag)
    : config_(std::move(config)), corpus_(gen_corpus(config_)), tag_(std::move(tag)) {}

AttentionRecord SynthSource::load(std::size_t index) const {
  return synth_record(config_, corpus_, index);
}

Split balanced_split(const std::vector<std::vector<std::size_t>>& pools, std::size_t train_n,
                     std::size_t eval_n, std::uint64_t seed,
                     const std::vector<std::string>& class_labels) {
  if (pools.empty()) {
    throw ArgumentError("no classes to split");
  }
  if (train_n == 0 || eval_n == 0) {
    throw ArgumentError("per-class train and eval counts must be positive");
  }
  auto name = [&](std::size_t c) {
    return c < class_labels.size() ? class_labels[c] : "class " + std::to_string(c);
  };
  const std::size_t want = train_n + eval_n;
  std::size_t smallest = pools[0].size();
  std::size_t binding = 0;
  for (std::size_t c = 0; c < pools.size(); ++c) {
    if (pools[c].empty()) {
      throw InfeasibleError("class '" + name(c) + "' has no samples");
    }
    if (pools[c].size() < smallest) {
      smallest = pools[c].size();
      binding = c;
    }
  }

  Split split;
  split.train_per_class = train_n;
  split.eval_per_class = eval_n;
  if (smallest < want) {
    const auto scaled = static_cast<std::size_t>(
        std::llround(static_cast<double>(train_n) * static_cast<double>(smallest) / static_cast<double>(want)));
    split.train_per_class = scaled;
    split.eval_per_class = smallest - scaled;
    if (split.train_per_class == 0 || split.eval_per_class == 0) {
      throw InfeasibleError("class '" + name(binding) + "' has only " + std::to_string(smallest) +
                            " samples, too few for a train/eval split");
    }
    split.warnings.push_back("class '" + name(binding) + "' has " + std::to_string(smallest) + " of " +
                             std::to_string(want) + " requested samples; all classes scaled to " +
                             std::to_string(split.train_per_class) + " train / " +
                             std::to_string(split.eval_per_class) + " eval");
  }

  for (std::size_t c = 0; c < pools.size(); ++c) {
    std::vector<std::size_t> order = pools[c];
    std::mt19937_64 rng(derive_seed(seed, c));
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t k = 0; k < split.train_per_class; ++k) {
      split.train.push_back({order[k], c});
    }
    for (std::size_t k = 0; k < split.eval_per_class; ++k) {
      split.eval.push_back({order[split.train_per_class + k], c});
    }
  }
  return split;
}

std::vector<std::vector<std::size_t>> label_pools(const TaxonomySpec& spec,
                                                  const std::vector<SampleMeta>& samples,
                                                  const PredicateConfig& predicates, unsigned threads) {
  std::vector<std::size_t> labels(samples.size());
  parallel_for(samples.size(), threads,
               [&](std::size_t k) { labels[k] = label_sample(spec, samples[k], predicates).index; });
  std::vector<std::vector<std::size_t>> pools(spec.num_classes());
  for (std::size_t k = 0; k < samples.size(); ++k) {
    pools[labels[k]].push_back(k);
  }
  return pools;
}

namespace {

// Head-pooled tensors of a split, one buffer per pooling mode in use.
struct PooledSet {
  std::map<Pooling, std::vector<std::vector<float>>> data;
  std::vector<std::size_t> labels;
  std::vector<std::string> ids;
};

PooledSet load_pooled(const DatasetSource& source, const std::vector<LabeledIndex>& items,
                      const std::vector<Pooling>& modes, unsigned threads) {
  PooledSet set;
  for (Pooling m : modes) {
    set.data[m].resize(items.size());
  }
  set.labels.resize(items.size());
  set.ids.resize(items.size());
  parallel_for(items.size(), threads, [&](std::size_t k) {
    const AttentionRecord record = source.load(items[k].index);
    for (Pooling m : modes) {
      set.data.at(m)[k] = head_pool(record, m).data;
    }
    set.labels[k] = items[k].label;
    set.ids[k] = source.samples()[items[k].index].id;
  });
  return set;
}

void emit(const RunPlan& plan, const nlohmann::ordered_json& j) {
  if (plan.log) {
    plan.log(j.dump());
  }
}

}  // namespace

BenchmarkResult run_benchmark(const RunPlan& plan) {
  if (plan.roots.empty()) {
    throw ArgumentError("benchmark plan has no dataset roots");
  }
  if (plan.configs.empty()) {
    throw ArgumentError("benchmark plan has no CNN configs");
  }
  if (plan.checkpoints.empty()) {
    throw ArgumentError("benchmark plan has no checkpoints");
  }
  const std::size_t n = plan.taxonomy.num_classes();
  const std::size_t last_epoch = *std::max_element(plan.checkpoints.begin(), plan.checkpoints.end());
  std::vector<Pooling> modes;
  for (const auto& c : plan.configs) {
    if (std::find(modes.begin(), modes.end(), c.pooling) == modes.end()) {
      modes.push_back(c.pooling);
    }
  }

  BenchmarkResult result;
  result.taxonomy = plan.taxonomy.name();
  result.class_labels = plan.taxonomy.class_labels();

  for (std::size_t r = 0; r < plan.roots.size(); ++r) {
    const DatasetSource& source = *plan.roots[r];
    const auto pools = label_pools(plan.taxonomy, source.samples(), plan.predicates, plan.threads);
    Split split;
    try {
      split = balanced_split(pools, plan.train_per_class, plan.eval_per_class, derive_seed(plan.seed, r),
                             result.class_labels);
    } catch (const InfeasibleError& e) {
      throw InfeasibleError(std::string(e.what()) + " (root '" + source.tag() + "', taxonomy " +
                            result.taxonomy + ")");
    }
    for (const auto& w : split.warnings) {
      result.warnings.push_back(source.tag() + ": " + w);
      emit(plan, {{"event", "warning"}, {"root", source.tag()}, {"message", w}});
    }
    emit(plan, {{"event", "split"},
                {"root", source.tag()},
                {"taxonomy", result.taxonomy},
                {"train_per_class", split.train_per_class},
                {"eval_per_class", split.eval_per_class}});

    const PooledSet train_set = load_pooled(source, split.train, modes, plan.threads);
    const PooledSet eval_set = load_pooled(source, split.eval, modes, plan.threads);
    const std::size_t layers = train_set.data.begin()->second.front().size() / (kSeqLen * kSeqLen);

    for (CnnConfig config : plan.configs) {
      config.in_channels = layers;
      config.num_classes = n;
      const std::string config_id = config.id();
      auto model = std::make_shared<Cnn<float>>(CnnArch::from_config(config), config.seed);

      std::vector<TrainExample<float>> examples(split.train.size());
      const auto& train_data = train_set.data.at(config.pooling);
      for (std::size_t k = 0; k < examples.size(); ++k) {
        examples[k] = {train_data[k], train_set.labels[k]};
      }
      const auto& eval_data = eval_set.data.at(config.pooling);
      Batch<float> eval_batch(eval_data.begin(), eval_data.end());

      TrainOptions options;
      options.threads = plan.threads;
      options.epochs = last_epoch;
      options.keep_snapshots = false;
      options.on_epoch = [&](std::size_t epoch, double mean_loss) {
        emit(plan, {{"event", "epoch"},
                    {"root", source.tag()},
                    {"config", config_id},
                    {"epoch", epoch},
                    {"train_loss", mean_loss}});
        if (std::find(plan.checkpoints.begin(), plan.checkpoints.end(), epoch) == plan.checkpoints.end()) {
          return;
        }
        if (plan.on_checkpoint) {
          plan.on_checkpoint(source.tag(), config, epoch, *model);
        }
        auto logits = forward<float>(*model, eval_batch, false, plan.threads);
        std::vector<Prediction> run;
        run.reserve(logits.size());
        for (std::size_t k = 0; k < logits.size(); ++k) {
          run.push_back(make_prediction(eval_set.ids[k], std::move(logits[k]), eval_set.labels[k], epoch,
                                        config_id, source.tag()));
        }
        RunMetrics rm{source.tag(), config_id, epoch, compute_metrics(run, n)};
        emit(plan, {{"event", "checkpoint"},
                    {"root", source.tag()},
                    {"config", config_id},
                    {"epoch", epoch},
                    {"min_f1", rm.report.min_f1},
                    {"eval_loss", rm.report.mean_loss}});
        result.runs.push_back(std::move(rm));
        result.predictions.insert(result.predictions.end(), std::make_move_iterator(run.begin()),
                                  std::make_move_iterator(run.end()));
      };
      try {
        train<float>(*model, examples, config, options);
      } catch (const Error& e) {
        throw Error(std::string(e.what()) + " (root '" + source.tag() + "', config " + config_id + ")");
      }
      if (plan.keep_models) {
        result.models.push_back({source.tag(), config, model});
      }
    }
    result.splits.push_back({source.tag(), std::move(split)});
  }

  result.report = compute_metrics(result.predictions, n);
  return result;
}

}  // namespace memo
