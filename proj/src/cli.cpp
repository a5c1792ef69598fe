#include "memo/cli.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "memo/bench.hpp"
#include "memo/checkpoint.hpp"
#include "memo/errors.hpp"
#include "memo/localizer.hpp"
#include "memo/metrics.hpp"
#include "memo/parallel.hpp"
#include "memo/synth.hpp"
#include "memo/taxonomy.hpp"

namespace memo {

namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

struct Common {
  std::string out;
  std::string config;
  unsigned threads = 0;
  std::uint64_t seed = 0;
};

struct SynthArgs {
  std::size_t non_memo = 450, guess = 450, recall = 900;
  std::size_t layers = 8, heads = 4, vocab = 4096;
  std::vector<std::uint64_t> dup_plants{8, 80};
};

struct LabelArgs {
  std::string data;
  std::string taxonomy;
};

struct EnumerateArgs {
  std::vector<std::uint64_t> deltas{5, 50, 1000};
};

struct TrainArgs {
  std::string data;
  std::string taxonomy;
  std::string pooling = "max";
  std::size_t conv_features = 10;
  std::size_t kernel = 6;
  std::size_t epochs = 3;
  std::size_t train_per_class = 300;
  std::size_t eval_per_class = 150;
};

struct BenchmarkArgs {
  std::vector<std::string> data;
  bool synthetic = false;
  std::vector<std::string> taxonomies;
  std::vector<std::uint64_t> deltas{5, 50, 1000};
  std::vector<std::size_t> configs{0, 4};
  bool all_configs = false;
  std::size_t train_per_class = 300;
  std::size_t eval_per_class = 150;
  std::size_t epochs = 3;
};

struct LocalizeArgs {
  std::string data;
  std::string taxonomy;
  std::vector<std::string> models;
  std::vector<std::string> classes;
  std::size_t max_samples = 0;
  bool correct_only = false;
};

struct ReportArgs {
  std::string data;
  std::vector<std::string> taxonomies;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

std::string file_stem_for(const std::string& name) {
  std::string s;
  for (char c : name) {
    s += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.') ? c : '_';
  }
  return s;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !out.write(text.data(), static_cast<std::streamsize>(text.size()))) {
    throw StorageError("cannot write " + path.string());
  }
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_manifest(const fs::path& dir, const CLI::App& sub, const Common& common, unsigned threads) {
  ordered_json j;
  j["tool"] = "memo-taxa";
  j["version"] = kToolVersion;
  j["subcommand"] = sub.get_name();
  j["seed"] = common.seed;
  j["threads"] = threads;
  ordered_json options = ordered_json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt->get_name().empty() || opt->count() == 0 || opt->get_name() == "--help") {
      continue;
    }
    const auto& results = opt->results();
    options[opt->get_name()] = results;
  }
  j["options"] = options;
  j["timestamp"] = utc_timestamp();
  write_text(dir / "manifest.json", j.dump(2) + "\n");
}

fs::path prepare_out(const Common& common) {
  if (common.out.empty()) {
    throw UsageError("--out is required");
  }
  fs::create_directories(common.out);
  return common.out;
}

// ---------------------------------------------------------------------------

void cmd_synth(const SynthArgs& a, const Common& common, unsigned threads, std::ostream& out) {
  const fs::path dir = prepare_out(common);
  SynthConfig config;
  config.non_memo = a.non_memo;
  config.guess = a.guess;
  config.recall = a.recall;
  config.layers = a.layers;
  config.heads = a.heads;
  config.vocab = a.vocab;
  config.dup_plants = a.dup_plants;
  config.seed = common.seed;
  config.place_bands();
  const SynthCorpus corpus = gen_corpus(config);
  write_synth_dataset(config, corpus, dir, threads);
  out << "wrote " << corpus.samples.size() << " samples to " << dir.string() << "\n";
}

void cmd_label(const LabelArgs& a, const Common& common, unsigned threads, std::ostream& out) {
  const TaxonomySpec spec = parse_taxonomy(a.taxonomy);
  const fs::path dir = prepare_out(common);
  const auto samples = DatasetDir(a.data).read_samples();
  std::vector<std::string> rows(samples.size());
  parallel_for(samples.size(), threads, [&](std::size_t k) {
    const auto features = compute_features(samples[k]);
    rows[k] = label_csv_row(samples[k], label_sample(spec, samples[k], features).label, features) + "\n";
  });
  std::string text = label_csv_header() + "\n";
  for (const auto& r : rows) {
    text += r;
  }
  write_text(dir / "labels.csv", text);
  out << "labeled " << samples.size() << " samples under " << spec.name() << "\n";
}

void cmd_enumerate(const EnumerateArgs& a, const Common& common, std::ostream& out) {
  const auto specs = enumerate_taxonomies(std::set<std::uint64_t>(a.deltas.begin(), a.deltas.end()));
  std::string text;
  for (const auto& s : specs) {
    text += s.name() + "\n";
  }
  out << text;
  if (!common.out.empty()) {
    write_text(prepare_out(common) / "taxonomies.txt", text);
  }
}

std::function<void(const std::string&)> log_to(std::shared_ptr<std::ofstream> stream) {
  return [stream](const std::string& line) { *stream << line << "\n" << std::flush; };
}

std::shared_ptr<std::ofstream> open_log(const fs::path& path) {
  auto stream = std::make_shared<std::ofstream>(path, std::ios::trunc);
  if (!*stream) {
    throw StorageError("cannot write " + path.string());
  }
  return stream;
}

void write_benchmark_outputs(const BenchmarkResult& r, const fs::path& dir, const std::string& stem) {
  write_confusion_json(r.report, r.class_labels, dir / ("confusion_" + stem + ".json"));
  write_predictions_csv(r.predictions, r.class_labels.size(), dir / ("predictions_" + stem + ".csv"));
}

void cmd_train(const TrainArgs& a, const Common& common, unsigned threads, std::ostream& out) {
  RunPlan plan;
  plan.taxonomy = parse_taxonomy(a.taxonomy);
  const fs::path dir = prepare_out(common);
  plan.roots.push_back(std::make_shared<DirectorySource>(a.data, fs::path(a.data).filename().string()));
  plan.train_per_class = a.train_per_class;
  plan.eval_per_class = a.eval_per_class;
  plan.checkpoints.clear();
  for (std::size_t e = 1; e <= a.epochs; ++e) {
    plan.checkpoints.push_back(e);
  }
  if (plan.checkpoints.empty()) {
    throw UsageError("--epochs must be positive");
  }
  CnnConfig config;
  config.pooling = pooling_from_string(a.pooling);
  config.conv_features = a.conv_features;
  config.kernel = a.kernel;
  config.epochs = a.epochs;
  config.seed = common.seed;
  plan.configs = {config};
  plan.seed = common.seed;
  plan.threads = threads;
  plan.log = log_to(open_log(dir / "run_log.jsonl"));
  plan.on_checkpoint = [&](const std::string&, const CnnConfig& c, std::size_t epoch, const Cnn<float>& model) {
    Checkpoint cp{c, epoch, std::vector<float>(model.params().begin(), model.params().end())};
    write_checkpoint(cp, dir / ("checkpoint_epoch" + std::to_string(epoch) + ".mtck"));
  };
  const auto result = run_benchmark(plan);
  for (const auto& w : result.warnings) {
    out << "warning: " << w << "\n";
  }
  write_confusion_json(result.report, result.class_labels, dir / "confusion.json");
  write_predictions_csv(result.predictions, result.class_labels.size(), dir / "predictions.csv");
  out << config.id() << ": pooled min F1 " << result.report.min_f1 << "\n";
}

void cmd_benchmark(const BenchmarkArgs& a, const Common& common, unsigned threads, std::ostream& out) {
  std::vector<TaxonomySpec> specs;
  for (const auto& t : a.taxonomies) {
    specs.push_back(parse_taxonomy(t));
  }
  if (specs.empty()) {
    specs = enumerate_taxonomies(std::set<std::uint64_t>(a.deltas.begin(), a.deltas.end()));
  }
  if (!a.synthetic && a.data.empty()) {
    throw UsageError("benchmark needs --data or --synthetic");
  }
  const fs::path dir = prepare_out(common);

  std::vector<std::shared_ptr<const DatasetSource>> roots;
  if (a.synthetic) {
    SynthConfig sc;
    sc.seed = common.seed;
    roots.push_back(std::make_shared<SynthSource>(sc, "synthetic"));
  }
  for (const auto& d : a.data) {
    const auto eq = d.find('=');
    const std::string tag = eq == std::string::npos ? fs::path(d).filename().string() : d.substr(0, eq);
    const std::string path = eq == std::string::npos ? d : d.substr(eq + 1);
    roots.push_back(std::make_shared<DirectorySource>(path, tag));
  }

  const std::size_t layers = roots.front()->load(0).layers;
  std::vector<CnnConfig> configs;
  const auto grid = config_grid(layers, 3, common.seed);
  if (a.all_configs) {
    configs = grid;
  } else {
    for (std::size_t k : a.configs) {
      if (k >= grid.size()) {
        throw UsageError("config index " + std::to_string(k) + " outside the 8-entry grid");
      }
      configs.push_back(grid[k]);
    }
  }
  for (auto& c : configs) {
    c.epochs = a.epochs;
  }

  auto log = open_log(dir / "run_log.jsonl");
  std::vector<RankedTaxonomy> table;
  for (const auto& spec : specs) {
    RunPlan plan;
    plan.taxonomy = spec;
    plan.roots = roots;
    plan.train_per_class = a.train_per_class;
    plan.eval_per_class = a.eval_per_class;
    plan.checkpoints.clear();
    for (std::size_t e = 1; e <= a.epochs; ++e) {
      plan.checkpoints.push_back(e);
    }
    plan.configs = configs;
    plan.seed = common.seed;
    plan.threads = threads;
    plan.log = log_to(log);
    const auto result = run_benchmark(plan);
    for (const auto& w : result.warnings) {
      out << "warning: " << w << "\n";
    }
    write_benchmark_outputs(result, dir, file_stem_for(result.taxonomy));
    out << result.taxonomy << ": min F1 " << result.report.min_f1 << "\n";
    table.push_back({result.taxonomy, spec.num_classes(), result.report});
  }
  write_rankings_csv(rank_taxonomies(std::move(table)), dir / "rankings.csv");
}

void cmd_localize(const LocalizeArgs& a, const Common& common, unsigned threads, std::ostream& out) {
  const TaxonomySpec spec = parse_taxonomy(a.taxonomy);
  const fs::path dir = prepare_out(common);
  const DirectorySource source(a.data, fs::path(a.data).filename().string());

  std::vector<Cnn<float>> models;
  std::vector<Pooling> pooling;
  for (const auto& path : a.models) {
    const Checkpoint cp = read_checkpoint(path);
    if (cp.config.num_classes != spec.num_classes()) {
      throw PreconditionError("checkpoint " + path + " has " + std::to_string(cp.config.num_classes) +
                              " classes, taxonomy has " + std::to_string(spec.num_classes()));
    }
    models.push_back(model_from_checkpoint(cp));
    pooling.push_back(cp.config.pooling);
  }
  std::vector<LocalizerModel> refs;
  for (std::size_t k = 0; k < models.size(); ++k) {
    refs.push_back({&models[k], pooling[k]});
  }

  const auto labels = spec.class_labels();
  std::set<std::string> wanted(a.classes.begin(), a.classes.end());
  for (const auto& w : wanted) {
    if (std::find(labels.begin(), labels.end(), w) == labels.end()) {
      throw UsageError("class '" + w + "' is not in taxonomy " + spec.name());
    }
  }
  const auto pools = label_pools(spec, source.samples(), {}, threads);
  AggregateOptions options;
  options.threads = threads;
  options.correct_only = a.correct_only;
  for (std::size_t c = 0; c < labels.size(); ++c) {
    if (!wanted.empty() && !wanted.count(labels[c])) {
      continue;
    }
    std::vector<std::size_t> members = pools[c];
    if (a.max_samples && members.size() > a.max_samples) {
      members.resize(a.max_samples);
    }
    if (members.empty()) {
      out << "skipping " << labels[c] << ": no samples\n";
      continue;
    }
    auto map = aggregate_delta(
        members.size(), [&](std::size_t k) { return source.load(members[k]); }, refs, c,
        file_stem_for(labels[c]), options);
    write_localization(map, dir);
    const auto profile = layer_profile(map);
    const auto peak = std::max_element(profile.begin(), profile.end()) - profile.begin();
    out << labels[c] << ": " << members.size() << " samples, profile peaks at layer " << (peak + 1) << "\n";
  }
}

void cmd_report(const ReportArgs& a, const Common& common, std::ostream& out) {
  const TaxonomySpec first = parse_taxonomy(a.taxonomies.at(0));
  const TaxonomySpec second = parse_taxonomy(a.taxonomies.at(1));
  const fs::path dir = prepare_out(common);
  const auto samples = DatasetDir(a.data).read_samples();
  std::vector<std::vector<std::size_t>> table(first.num_classes(), std::vector<std::size_t>(second.num_classes()));
  for (const auto& s : samples) {
    const auto features = compute_features(s);
    ++table[label_sample(first, s, features).index][label_sample(second, s, features).index];
  }
  const auto rows = first.class_labels();
  const auto cols = second.class_labels();
  std::string text = "\"" + first.name() + " \\ " + second.name() + "\"";
  for (const auto& c : cols) {
    text += "," + c;
  }
  text += "\n";
  for (std::size_t r = 0; r < rows.size(); ++r) {
    text += rows[r];
    for (std::size_t c = 0; c < cols.size(); ++c) {
      text += "," + std::to_string(table[r][c]);
    }
    text += "\n";
  }
  write_text(dir / "contingency.csv", text);
  out << text;
}

// ---------------------------------------------------------------------------

void add_common(CLI::App* sub, Common& c, bool out_required) {
  auto* out = sub->add_option("--out", c.out, "Output directory");
  if (out_required) {
    out->required();
  }
  sub->add_option("--config", c.config, "JSON file of option defaults (keys are flag names)");
  sub->add_option("--threads", c.threads, "Worker threads (0: MEMO_TAXA_THREADS or core count)");
  sub->add_option("--seed", c.seed, "Random seed")->capture_default_str();
}

std::string json_scalar(const nlohmann::json& v) {
  if (v.is_string()) {
    return v.get<std::string>();
  }
  return v.dump();
}

// Splices values from a JSON config file in front of the command-line flags.
std::vector<std::string> apply_config(CLI::App& app, const std::vector<std::string>& args) {
  auto it = std::find(args.begin(), args.end(), "--config");
  std::string path;
  if (it != args.end() && std::next(it) != args.end()) {
    path = *std::next(it);
  }
  for (const auto& arg : args) {
    if (arg.rfind("--config=", 0) == 0) {
      path = arg.substr(9);
    }
  }
  if (path.empty() || args.empty()) {
    return args;
  }
  CLI::App* sub = nullptr;
  try {
    sub = app.get_subcommand(args.front());
  } catch (const CLI::OptionNotFound&) {
    return args;
  }
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot read config file " + path);
  }
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) {
    throw ConfigError("config file must hold a JSON object");
  }
  std::vector<std::string> extra;
  for (const auto& [key, value] : j.items()) {
    std::string flag = "--" + key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    const CLI::Option* opt = sub->get_option_no_throw(flag);
    if (opt == nullptr || flag == "--config" || flag == "--help") {
      throw ConfigError("unknown config key '" + key + "' for " + sub->get_name());
    }
    const bool given = std::any_of(args.begin(), args.end(), [&](const std::string& a) {
      return a == flag || a.rfind(flag + "=", 0) == 0;
    });
    if (given) {
      continue;
    }
    if (value.is_boolean()) {
      if (value.get<bool>()) {
        extra.push_back(flag);
      }
    } else if (value.is_array()) {
      if (opt->get_items_expected_max() > 1 && opt->get_delimiter() == '\0') {
        for (const auto& v : value) {
          extra.push_back(flag);
          extra.push_back(json_scalar(v));
        }
      } else {
        std::string joined;
        for (const auto& v : value) {
          joined += (joined.empty() ? "" : ",") + json_scalar(v);
        }
        extra.push_back(flag);
        extra.push_back(joined);
      }
    } else {
      extra.push_back(flag);
      extra.push_back(json_scalar(value));
    }
  }
  std::vector<std::string> merged{args.front()};
  merged.insert(merged.end(), extra.begin(), extra.end());
  merged.insert(merged.end(), args.begin() + 1, args.end());
  return merged;
}

}  // namespace

int run_cli(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Memorization taxonomy benchmark and attention localization toolkit", "memo-taxa"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  Common common;
  SynthArgs synth;
  LabelArgs label;
  EnumerateArgs enumerate;
  TrainArgs train;
  BenchmarkArgs bench;
  LocalizeArgs localize;
  ReportArgs report;

  auto* s_synth = app.add_subcommand("synth", "Generate a synthetic dataset with planted attention patterns");
  add_common(s_synth, common, true);
  s_synth->add_option("--non-memo", synth.non_memo, "Non-memorized samples")->capture_default_str();
  s_synth->add_option("--guess", synth.guess, "Guess-class samples")->capture_default_str();
  s_synth->add_option("--recall", synth.recall, "Recall-class samples")->capture_default_str();
  s_synth->add_option("--layers", synth.layers, "Attention layers")->capture_default_str();
  s_synth->add_option("--heads", synth.heads, "Heads per layer")->capture_default_str();
  s_synth->add_option("--vocab", synth.vocab, "Vocabulary size")->capture_default_str();
  s_synth->add_option("--dup-plants", synth.dup_plants, "Duplicate counts handed out in turn")
      ->delimiter(',')
      ->capture_default_str();

  auto* s_label = app.add_subcommand("label", "Label a dataset under a taxonomy (labels.csv)");
  add_common(s_label, common, true);
  s_label->add_option("--data", label.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  s_label->add_option("--taxonomy", label.taxonomy, "Taxonomy, e.g. \"Non-Memo,Guess[0.5-0.5],Others\"")
      ->required();

  auto* s_enum = app.add_subcommand("enumerate", "List every rule-conforming taxonomy");
  add_common(s_enum, common, false);
  s_enum->add_option("--deltas", enumerate.deltas, "Duplication thresholds")->delimiter(',')->capture_default_str();

  auto* s_train = app.add_subcommand("train", "Train one CNN config and save per-epoch checkpoints");
  add_common(s_train, common, true);
  s_train->add_option("--data", train.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  s_train->add_option("--taxonomy", train.taxonomy, "Taxonomy")->required();
  s_train->add_option("--pooling", train.pooling, "Head pooling")
      ->check(CLI::IsMember({"max", "mean"}))
      ->capture_default_str();
  s_train->add_option("--conv-features", train.conv_features, "Convolution features")
      ->check(CLI::IsMember({10, 16}))
      ->capture_default_str();
  s_train->add_option("--kernel", train.kernel, "Kernel size")->check(CLI::IsMember({6, 8}))->capture_default_str();
  s_train->add_option("--epochs", train.epochs, "Epochs (a checkpoint after each)")->capture_default_str();
  s_train->add_option("--train-per-class", train.train_per_class, "Training samples per class")
      ->capture_default_str();
  s_train->add_option("--eval-per-class", train.eval_per_class, "Evaluation samples per class")
      ->capture_default_str();

  auto* s_bench = app.add_subcommand("benchmark", "Train the grid under each taxonomy and rank them");
  add_common(s_bench, common, true);
  auto* data_opt = s_bench->add_option("--data", bench.data, "Dataset directory, optionally TAG=DIR (repeatable)");
  auto* synth_opt = s_bench->add_flag("--synthetic", bench.synthetic, "Use an in-memory synthetic dataset");
  synth_opt->excludes(data_opt);
  auto* tax_opt = s_bench->add_option("--taxonomy", bench.taxonomies, "Taxonomy to score (repeatable)");
  s_bench->add_option("--deltas", bench.deltas, "Thresholds for the full enumeration when no --taxonomy")
      ->delimiter(',')
      ->excludes(tax_opt)
      ->capture_default_str();
  auto* cfg_opt = s_bench->add_option("--configs", bench.configs, "Grid indices to train")
      ->delimiter(',')
      ->capture_default_str();
  s_bench->add_flag("--all-configs", bench.all_configs, "Train all 8 grid configs")->excludes(cfg_opt);
  s_bench->add_option("--train-per-class", bench.train_per_class, "Training samples per class")
      ->capture_default_str();
  s_bench->add_option("--eval-per-class", bench.eval_per_class, "Evaluation samples per class")
      ->capture_default_str();
  s_bench->add_option("--epochs", bench.epochs, "Epochs; every epoch is a checkpoint")->capture_default_str();

  auto* s_loc = app.add_subcommand("localize", "Class-level attention maps from trained checkpoints");
  add_common(s_loc, common, true);
  s_loc->add_option("--data", localize.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  s_loc->add_option("--taxonomy", localize.taxonomy, "Taxonomy the checkpoints were trained under")->required();
  s_loc->add_option("--model", localize.models, "Checkpoint file (repeatable)")->required()->check(CLI::ExistingFile);
  s_loc->add_option("--class", localize.classes, "Restrict to these class labels (repeatable)");
  s_loc->add_option("--max-samples", localize.max_samples, "Cap on samples per class (0: all)")->capture_default_str();
  s_loc->add_flag("--correct-only", localize.correct_only, "Average only over correctly classified samples");

  auto* s_report = app.add_subcommand("report", "Cross-tabulate the labels of two taxonomies");
  add_common(s_report, common, true);
  s_report->add_option("--data", report.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  s_report->add_option("--taxonomy", report.taxonomies, "Two taxonomies (rows, columns)")->required()->expected(2);

  std::vector<std::string> args;
  try {
    args = apply_config(app, raw_args);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << "error: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kExitUsage;
  }

  const CLI::App* sub = app.get_subcommands().front();
  const unsigned threads = resolve_threads(common.threads);
  try {
    const std::string name = sub->get_name();
    if (name == "synth") {
      cmd_synth(synth, common, threads, out);
    } else if (name == "label") {
      cmd_label(label, common, threads, out);
    } else if (name == "enumerate") {
      cmd_enumerate(enumerate, common, out);
    } else if (name == "train") {
      cmd_train(train, common, threads, out);
    } else if (name == "benchmark") {
      cmd_benchmark(bench, common, threads, out);
    } else if (name == "localize") {
      cmd_localize(localize, common, threads, out);
    } else if (name == "report") {
      cmd_report(report, common, out);
    }
    if (!common.out.empty()) {
      write_manifest(common.out, *sub, common, threads);
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << sub->help();
    return kExitUsage;
  } catch (const SyntaxError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const RuleError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitOk;
}

}  // namespace memo
