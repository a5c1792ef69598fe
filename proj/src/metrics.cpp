#include "memo/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "json.hpp"

#include "memo/errors.hpp"

namespace memo {

namespace {

double logit_loss(const std::vector<float>& logits, std::size_t label) {
  const double top = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (float v : logits) {
    z += std::exp(static_cast<double>(v) - top);
  }
  return std::log(z) + top - static_cast<double>(logits[label]);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) {
    return s;
  }
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') {
      out += '"';
    }
    out += c;
  }
  return out + "\"";
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !out.write(text.data(), static_cast<std::streamsize>(text.size()))) {
    throw StorageError("cannot write " + path.string());
  }
}

}  // namespace

Prediction make_prediction(std::string id, std::vector<float> logits, std::size_t true_label,
                           std::size_t epoch, std::string config_id, std::string model_size) {
  if (logits.empty()) {
    throw ArgumentError("prediction without logits");
  }
  Prediction p;
  p.predicted = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  p.id = std::move(id);
  p.logits = std::move(logits);
  p.true_label = true_label;
  p.epoch = epoch;
  p.config_id = std::move(config_id);
  p.model_size = std::move(model_size);
  return p;
}

MetricsReport compute_metrics(const Confusion& confusion) {
  const std::size_t n = confusion.size();
  if (n == 0) {
    throw ArgumentError("empty confusion matrix");
  }
  for (const auto& row : confusion) {
    if (row.size() != n) {
      throw ArgumentError("confusion matrix must be square");
    }
  }
  MetricsReport r;
  r.num_classes = n;
  r.confusion = confusion;
  r.mean_loss = std::numeric_limits<double>::quiet_NaN();
  r.precision.assign(n, 0.0);
  r.recall.assign(n, 0.0);
  r.f1.assign(n, 0.0);
  r.never_predicted.assign(n, false);
  r.prediction_count.assign(n, 0);
  std::uint64_t total = 0;
  for (std::size_t c = 0; c < n; ++c) {
    r.prediction_count[c] = std::accumulate(confusion[c].begin(), confusion[c].end(), std::uint64_t{0});
    total += r.prediction_count[c];
  }
  if (total == 0) {
    throw ArgumentError("confusion matrix holds no predictions");
  }
  for (std::size_t c = 0; c < n; ++c) {
    const double tp = static_cast<double>(confusion[c][c]);
    std::uint64_t predicted = 0;
    for (std::size_t t = 0; t < n; ++t) {
      predicted += confusion[t][c];
    }
    r.never_predicted[c] = predicted == 0;
    const double p = predicted ? tp / static_cast<double>(predicted) : 0.0;
    const double rec = r.prediction_count[c] ? tp / static_cast<double>(r.prediction_count[c]) : 0.0;
    r.precision[c] = p;
    r.recall[c] = rec;
    r.f1[c] = (p + rec) > 0.0 ? 2.0 * p * rec / (p + rec) : 0.0;
  }
  auto summarize = [n](const std::vector<double>& v, double& lo, double& mean) {
    lo = *std::min_element(v.begin(), v.end());
    mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(n);
  };
  summarize(r.f1, r.min_f1, r.mean_f1);
  summarize(r.precision, r.min_precision, r.mean_precision);
  summarize(r.recall, r.min_recall, r.mean_recall);
  return r;
}

MetricsReport compute_metrics(std::span<const Prediction> predictions, std::size_t num_classes) {
  if (predictions.empty()) {
    throw ArgumentError("no predictions to score");
  }
  if (num_classes == 0) {
    throw ArgumentError("num_classes must be positive");
  }
  Confusion confusion(num_classes, std::vector<std::uint64_t>(num_classes, 0));
  double loss = 0.0;
  for (const auto& p : predictions) {
    if (p.true_label >= num_classes || p.predicted >= num_classes) {
      throw ArgumentError("prediction for " + p.id + " has a label outside [0," +
                          std::to_string(num_classes) + ")");
    }
    if (p.logits.size() != num_classes) {
      throw ArgumentError("prediction for " + p.id + " has the wrong number of logits");
    }
    ++confusion[p.true_label][p.predicted];
    loss += logit_loss(p.logits, p.true_label);
  }
  MetricsReport r = compute_metrics(confusion);
  r.mean_loss = loss / static_cast<double>(predictions.size());
  return r;
}

double normalized_f1(double f1, std::size_t num_classes) {
  if (num_classes < 2) {
    throw ArgumentError("normalized F1 needs at least two classes");
  }
  const double r = 1.0 / static_cast<double>(num_classes);
  return (f1 - r) / (1.0 - r);
}

std::vector<RankedTaxonomy> rank_taxonomies(std::vector<RankedTaxonomy> reports) {
  std::stable_sort(reports.begin(), reports.end(), [](const RankedTaxonomy& a, const RankedTaxonomy& b) {
    if (a.classes != b.classes) {
      return a.classes > b.classes;
    }
    if (a.report.min_f1 != b.report.min_f1) {
      return a.report.min_f1 > b.report.min_f1;
    }
    return a.taxonomy < b.taxonomy;
  });
  return reports;
}

void write_rankings_csv(const std::vector<RankedTaxonomy>& ranked, const std::filesystem::path& path) {
  std::string text =
      "taxonomy,classes,min_f1,mean_f1,min_precision,mean_precision,min_recall,mean_recall,mean_loss\n";
  for (const auto& row : ranked) {
    const auto& r = row.report;
    text += csv_field(row.taxonomy) + "," + std::to_string(row.classes) + "," + fmt(r.min_f1) + "," +
            fmt(r.mean_f1) + "," + fmt(r.min_precision) + "," + fmt(r.mean_precision) + "," +
            fmt(r.min_recall) + "," + fmt(r.mean_recall) + "," + fmt(r.mean_loss) + "\n";
  }
  write_text(path, text);
}

void write_predictions_csv(std::span<const Prediction> predictions, std::size_t num_classes,
                           const std::filesystem::path& path) {
  std::string text = "id,true,pred";
  for (std::size_t k = 0; k < num_classes; ++k) {
    text += ",logit_" + std::to_string(k);
  }
  text += ",epoch,config,model_size\n";
  char buf[32];
  for (const auto& p : predictions) {
    text += csv_field(p.id) + "," + std::to_string(p.true_label) + "," + std::to_string(p.predicted);
    for (float v : p.logits) {
      std::snprintf(buf, sizeof buf, ",%.9g", static_cast<double>(v));
      text += buf;
    }
    text += "," + std::to_string(p.epoch) + "," + csv_field(p.config_id) + "," + csv_field(p.model_size) + "\n";
  }
  write_text(path, text);
}

void write_confusion_json(const MetricsReport& report, const std::vector<std::string>& class_labels,
                          const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["classes"] = class_labels;
  j["confusion"] = report.confusion;
  j["precision"] = report.precision;
  j["recall"] = report.recall;
  j["f1"] = report.f1;
  j["never_predicted"] = report.never_predicted;
  j["min_f1"] = report.min_f1;
  j["mean_f1"] = report.mean_f1;
  if (std::isfinite(report.mean_loss)) {
    j["mean_loss"] = report.mean_loss;
  } else {
    j["mean_loss"] = nullptr;
  }
  write_text(path, j.dump(2) + "\n");
}

}  // namespace memo
