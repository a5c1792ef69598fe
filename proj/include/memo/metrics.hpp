#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace memo {

struct Prediction {
  std::string id;
  std::vector<float> logits;
  std::size_t predicted = 0;
  std::size_t true_label = 0;
  std::size_t epoch = 0;
  std::string config_id;
  std::string model_size;
};

/// Builds a prediction from logits; predicted is the first maximal logit.
Prediction make_prediction(std::string id, std::vector<float> logits, std::size_t true_label,
                           std::size_t epoch, std::string config_id, std::string model_size);

using Confusion = std::vector<std::vector<std::uint64_t>>;  // [true][predicted]

struct MetricsReport {
  std::size_t num_classes = 0;
  std::vector<double> precision, recall, f1;
  /// Classes that were never predicted; their precision is reported as 0.
  std::vector<bool> never_predicted;
  double min_f1 = 0, mean_f1 = 0;
  double min_precision = 0, mean_precision = 0;
  double min_recall = 0, mean_recall = 0;
  /// Mean cross-entropy of the stored logits; NaN when built from a bare confusion matrix.
  double mean_loss = 0;
  Confusion confusion;
  /// Row sums of the confusion matrix.
  std::vector<std::uint64_t> prediction_count;
};

MetricsReport compute_metrics(std::span<const Prediction> predictions, std::size_t num_classes);
MetricsReport compute_metrics(const Confusion& confusion);

/// (f1 - 1/N) / (1 - 1/N).
double normalized_f1(double f1, std::size_t num_classes);

struct RankedTaxonomy {
  std::string taxonomy;
  std::size_t classes = 0;
  MetricsReport report;
};

/// Groups by class count (larger first), min F1 descending within a group, ties by name.
std::vector<RankedTaxonomy> rank_taxonomies(std::vector<RankedTaxonomy> reports);

/// taxonomy,classes,min_f1,mean_f1,min_precision,mean_precision,min_recall,mean_recall,mean_loss
void write_rankings_csv(const std::vector<RankedTaxonomy>& ranked, const std::filesystem::path& path);
/// id,true,pred,logit_0..logit_{N-1},epoch,config,model_size
void write_predictions_csv(std::span<const Prediction> predictions, std::size_t num_classes,
                           const std::filesystem::path& path);
void write_confusion_json(const MetricsReport& report, const std::vector<std::string>& class_labels,
                          const std::filesystem::path& path);

}  // namespace memo
