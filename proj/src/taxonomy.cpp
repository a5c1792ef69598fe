#include "memo/taxonomy.hpp"

#include <algorithm>
#include <cstdio>
#include <cctype>
#include <charconv>
#include <map>
#include <string_view>

#include "memo/errors.hpp"
#include "memo/rouge.hpp"

namespace memo {

namespace {

constexpr std::size_t kMaxCyclePeriod = 32;
constexpr std::size_t kMaxMotifLength = 8;
constexpr std::size_t kRougeOrder = 3;

std::string format_real(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

std::string format_threshold(const std::optional<double>& v) {
  return v ? format_real(*v) : std::string("off");
}

// First position from which a relation with lag `lag` must hold: `lag` positions
// before the boundary, clamped to the available history.
std::size_t support_start(std::size_t lag) {
  return std::max(lag, kPrefixLen > lag ? kPrefixLen - lag : std::size_t{0});
}

}  // namespace

TaxonomyNode TaxonomyNode::recite(std::uint64_t delta) {
  TaxonomyNode n;
  n.kind = NodeKind::recite;
  n.delta = delta;
  return n;
}

TaxonomyNode TaxonomyNode::recollect(std::uint64_t delta) {
  TaxonomyNode n;
  n.kind = NodeKind::recollect;
  n.delta = delta;
  return n;
}

TaxonomyNode TaxonomyNode::reconstruct() {
  TaxonomyNode n;
  n.kind = NodeKind::reconstruct;
  return n;
}

TaxonomyNode TaxonomyNode::guess(std::optional<double> lambda, std::optional<double> gamma) {
  TaxonomyNode n;
  n.kind = NodeKind::guess;
  n.lambda = lambda;
  n.gamma = gamma;
  return n;
}

TaxonomyNode TaxonomyNode::code() {
  TaxonomyNode n;
  n.kind = NodeKind::code;
  return n;
}

TaxonomyNode TaxonomyNode::merged(TaxonomyNode a, TaxonomyNode b) {
  TaxonomyNode n;
  n.kind = NodeKind::merged;
  n.parts = {std::move(a), std::move(b)};
  return n;
}

std::string TaxonomyNode::name() const {
  switch (kind) {
    case NodeKind::recite:
      return "Recite[" + std::to_string(delta.value_or(0)) + "]";
    case NodeKind::recollect:
      return "Recollect[" + std::to_string(delta.value_or(0)) + "]";
    case NodeKind::reconstruct:
      return "Reconstruct";
    case NodeKind::guess:
      return "Guess[" + format_threshold(lambda) + "-" + format_threshold(gamma) + "]";
    case NodeKind::code:
      return "Code";
    case NodeKind::merged:
      return parts.at(0).name() + "-or-" + parts.at(1).name();
  }
  return {};
}

std::string TaxonomyNode::label() const {
  switch (kind) {
    case NodeKind::recite:
      return "Recite";
    case NodeKind::recollect:
      return "Recollect";
    case NodeKind::reconstruct:
      return "Reconstruct";
    case NodeKind::guess:
      return "Guess";
    case NodeKind::code:
      return "Code";
    case NodeKind::merged:
      return parts.at(0).label() + "-or-" + parts.at(1).label();
  }
  return {};
}

std::vector<std::string> TaxonomySpec::class_labels() const {
  std::vector<std::string> labels{"Non-Memo"};
  for (const auto& n : nodes) {
    labels.push_back(n.label());
  }
  labels.emplace_back("Others");
  return labels;
}

std::string TaxonomySpec::name() const {
  std::string out = "Non-Memo";
  for (const auto& n : nodes) {
    out += "," + n.name();
  }
  out += ",Others";
  return out;
}

// ---------------------------------------------------------------------------
// Predicates

bool detect_cycle(std::span<const TokenId> tokens) {
  if (tokens.size() != kSeqLen) {
    return false;
  }
  for (std::size_t p = 1; p <= kMaxCyclePeriod; ++p) {
    bool holds = true;
    for (std::size_t t = support_start(p); t < kSeqLen && holds; ++t) {
      holds = tokens[t] == tokens[t - p];
    }
    if (holds) {
      return true;
    }
  }
  return false;
}

bool detect_progression(std::span<const TokenId> tokens, const NumericDecoder& numeric) {
  if (tokens.size() != kSeqLen) {
    return false;
  }
  for (std::size_t m = 1; m <= kMaxMotifLength; ++m) {
    std::vector<std::optional<std::int64_t>> step(m);
    bool holds = true;
    bool increments = false;
    for (std::size_t t = support_start(m); t < kSeqLen && holds; ++t) {
      const auto now = numeric(tokens[t]);
      const auto before = numeric(tokens[t - m]);
      if (now.has_value() != before.has_value()) {
        holds = false;
      } else if (!now) {
        holds = tokens[t] == tokens[t - m];
      } else {
        const std::int64_t d = *now - *before;
        auto& s = step[t % m];
        if (!s) {
          s = d;
        } else if (*s != d) {
          holds = false;
        }
      }
    }
    if (!holds) {
      continue;
    }
    for (const auto& s : step) {
      increments = increments || (s && *s != 0);
    }
    if (increments) {
      return true;
    }
  }
  return false;
}

bool detect_template(const SampleMeta& meta, const PredicateConfig& config) {
  return detect_cycle(meta.token_ids) || detect_progression(meta.token_ids, config.numeric);
}

bool detect_code(const SampleMeta& meta, const PredicateConfig& config) {
  if (!meta.source_tag.empty()) {
    return config.code_tags.contains(meta.source_tag);
  }
  if (meta.token_ids.empty() || config.code_symbol_tokens.empty()) {
    return false;
  }
  const auto hits = std::count_if(meta.token_ids.begin(), meta.token_ids.end(),
                                  [&](TokenId t) { return config.code_symbol_tokens.contains(t); });
  return static_cast<double>(hits) / static_cast<double>(meta.token_ids.size()) >=
         config.code_symbol_fraction;
}

SampleFeatures compute_features(const SampleMeta& meta, const PredicateConfig& config) {
  if (meta.token_ids.size() != kSeqLen) {
    throw ArgumentError("sample " + meta.id + " does not have 64 tokens");
  }
  SampleFeatures f;
  f.rouge_l = rouge_l_f1(meta.prefix(), meta.suffix());
  f.rouge_3 = rouge_n_f1(meta.prefix(), meta.suffix(), kRougeOrder);
  f.templated = detect_template(meta, config);
  f.code = detect_code(meta, config);
  return f;
}

bool node_accepts(const TaxonomyNode& node, const SampleMeta& meta, const SampleFeatures& f) {
  if (!meta.extractable) {
    throw PreconditionError("node predicates are defined on extractable samples only (" + meta.id +
                            ")");
  }
  switch (node.kind) {
    case NodeKind::recite:
      return meta.dup_count >= node.delta.value();
    case NodeKind::recollect:
      return meta.dup_count < node.delta.value();
    case NodeKind::reconstruct:
      return f.templated;
    case NodeKind::guess:
      return f.templated || (node.lambda && f.rouge_l >= *node.lambda) ||
             (node.gamma && f.rouge_3 >= *node.gamma);
    case NodeKind::code:
      return f.code;
    case NodeKind::merged:
      return node_accepts(node.parts.at(0), meta, f) || node_accepts(node.parts.at(1), meta, f);
  }
  return false;
}

bool node_accepts(const TaxonomyNode& node, const SampleMeta& meta, const PredicateConfig& config) {
  if (!meta.extractable) {
    throw PreconditionError("node predicates are defined on extractable samples only (" + meta.id +
                            ")");
  }
  return node_accepts(node, meta, compute_features(meta, config));
}

ClassLabel label_sample(const TaxonomySpec& spec, const SampleMeta& meta,
                        const SampleFeatures& features) {
  if (!meta.extractable) {
    return {0, "Non-Memo"};
  }
  for (std::size_t k = 0; k < spec.nodes.size(); ++k) {
    if (node_accepts(spec.nodes[k], meta, features)) {
      return {k + 1, spec.nodes[k].label()};
    }
  }
  return {spec.nodes.size() + 1, "Others"};
}

ClassLabel label_sample(const TaxonomySpec& spec, const SampleMeta& meta,
                        const PredicateConfig& config) {
  if (!meta.extractable) {
    return {0, "Non-Memo"};
  }
  return label_sample(spec, meta, compute_features(meta, config));
}

// ---------------------------------------------------------------------------
// Grammar

namespace {

class Parser {
 public:
  explicit Parser(const std::string& text) {
    for (std::size_t k = 0; k < text.size(); ++k) {
      if (!std::isspace(static_cast<unsigned char>(text[k]))) {
        s_.push_back(text[k]);
        origin_.push_back(k);
      }
    }
    origin_.push_back(text.size());
  }

  TaxonomySpec parse() {
    TaxonomySpec spec;
    expect("Non-Memo");
    expect(",");
    spec.nodes.push_back(node());
    expect(",");
    if (!at("Others")) {
      spec.nodes.push_back(node());
      expect(",");
    }
    expect("Others");
    if (pos_ != s_.size()) {
      fail("unexpected trailing text");
    }
    return spec;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw SyntaxError(what, origin_[std::min(pos_, s_.size())]);
  }

  bool at(std::string_view token) const { return std::string_view(s_).substr(pos_).starts_with(token); }

  bool accept(std::string_view token) {
    if (at(token)) {
      pos_ += token.size();
      return true;
    }
    return false;
  }

  void expect(std::string_view token) {
    if (!accept(token)) {
      fail("expected '" + std::string(token) + "'");
    }
  }

  TaxonomyNode node() {
    TaxonomyNode first = base();
    if (accept("-or-")) {
      return TaxonomyNode::merged(std::move(first), base());
    }
    return first;
  }

  TaxonomyNode base() {
    if (accept("Recite[")) {
      auto d = integer();
      expect("]");
      return TaxonomyNode::recite(d);
    }
    if (accept("Recollect[")) {
      auto d = integer();
      expect("]");
      return TaxonomyNode::recollect(d);
    }
    if (accept("Reconstruct")) {
      return TaxonomyNode::reconstruct();
    }
    if (accept("Guess")) {
      if (!accept("[")) {
        return TaxonomyNode::guess(0.5, 0.5);
      }
      auto lambda = threshold();
      expect("-");
      auto gamma = threshold();
      expect("]");
      return TaxonomyNode::guess(lambda, gamma);
    }
    if (accept("Code")) {
      return TaxonomyNode::code();
    }
    fail("expected a node (Recite[d], Recollect[d], Reconstruct, Guess[l-g], Code)");
  }

  std::uint64_t integer() {
    const std::size_t start = pos_;
    std::uint64_t value = 0;
    auto [end, ec] = std::from_chars(s_.data() + pos_, s_.data() + s_.size(), value);
    if (ec != std::errc{}) {
      fail("expected an integer duplication threshold");
    }
    pos_ = static_cast<std::size_t>(end - s_.data());
    if (accept("k")) {
      value *= 1000;
    }
    if (value < 1) {
      pos_ = start;
      fail("duplication threshold must be >= 1");
    }
    return value;
  }

  std::optional<double> threshold() {
    if (accept("off")) {
      return std::nullopt;
    }
    double value = 0.0;
    auto [end, ec] = std::from_chars(s_.data() + pos_, s_.data() + s_.size(), value,
                                     std::chars_format::fixed);
    if (ec != std::errc{}) {
      fail("expected a ROUGE threshold in (0,1] or 'off'");
    }
    if (!(value > 0.0 && value <= 1.0)) {
      fail("ROUGE threshold must lie in (0,1]");
    }
    pos_ = static_cast<std::size_t>(end - s_.data());
    return value;
  }

  std::string s_;
  std::vector<std::size_t> origin_;
  std::size_t pos_ = 0;
};

}  // namespace

void check_rules(const TaxonomySpec& spec) {
  if (spec.nodes.empty() || spec.nodes.size() > 2) {
    throw RuleError(1, "a taxonomy has one or two decision nodes");
  }
  int duplication = 0;
  int completion = 0;
  for (const auto& n : spec.nodes) {
    if (n.kind == NodeKind::merged) {
      if (spec.nodes.size() != 1) {
        throw RuleError(3, "'-or-' nodes are only allowed in three-class taxonomies");
      }
      if (n.parts.size() != 2) {
        throw RuleError(3, "an '-or-' node merges exactly two nodes");
      }
      const auto& a = n.parts[0];
      const auto& b = n.parts[1];
      if (!((a.duplication_based() && b.completion_based()) ||
            (a.completion_based() && b.duplication_based()))) {
        throw RuleError(1, "an '-or-' node pairs one duplication-based and one completion-based node");
      }
      ++duplication;
      ++completion;
    } else if (n.duplication_based()) {
      ++duplication;
    } else {
      ++completion;
    }
    auto check_params = [](const TaxonomyNode& x) {
      if (x.duplication_based() && (!x.delta || *x.delta < 1)) {
        throw RuleError(1, x.label() + " needs a duplication threshold >= 1");
      }
      if (x.kind == NodeKind::guess) {
        for (const auto& t : {x.lambda, x.gamma}) {
          if (t && !(*t > 0.0 && *t <= 1.0)) {
            throw RuleError(1, "Guess thresholds must lie in (0,1]");
          }
        }
      }
    };
    if (n.kind == NodeKind::merged) {
      check_params(n.parts[0]);
      check_params(n.parts[1]);
    } else {
      check_params(n);
    }
  }
  if (duplication > 1) {
    throw RuleError(1, "at most one duplication-based node per tree");
  }
  if (completion > 1) {
    throw RuleError(1, "at most one completion-based node per tree");
  }
}

TaxonomySpec parse_taxonomy(const std::string& text) {
  auto spec = Parser(text).parse();
  check_rules(spec);
  return spec;
}

std::vector<TaxonomySpec> enumerate_taxonomies(const std::set<std::uint64_t>& deltas) {
  if (deltas.empty()) {
    throw ArgumentError("enumerate_taxonomies needs at least one duplication threshold");
  }
  const std::vector<TaxonomyNode> completion{TaxonomyNode::reconstruct(),
                                             TaxonomyNode::guess(0.5, 0.5), TaxonomyNode::code()};
  std::vector<TaxonomySpec> out;
  std::set<std::string> seen;
  auto emit = [&](std::vector<TaxonomyNode> nodes) {
    TaxonomySpec spec{std::move(nodes)};
    if (seen.insert(spec.name()).second) {
      out.push_back(std::move(spec));
    }
  };

  // 4.A duplication then completion; 4.B completion then duplication (Recollect as the
  // second node yields the same classes as Recite, so only Recite is listed).
  for (auto d : deltas) {
    for (const auto& dup : {TaxonomyNode::recite(d), TaxonomyNode::recollect(d)}) {
      for (const auto& c : completion) {
        emit({dup, c});
      }
    }
    for (const auto& c : completion) {
      emit({c, TaxonomyNode::recite(d)});
    }
  }

  // 3.A single node; 3.B merged pairs.
  for (const auto& c : completion) {
    emit({c});
  }
  for (auto d : deltas) {
    emit({TaxonomyNode::recite(d)});
    emit({TaxonomyNode::recollect(d)});
  }
  for (auto d : deltas) {
    for (const auto& c : completion) {
      emit({TaxonomyNode::merged(TaxonomyNode::recite(d), c)});
    }
    for (const auto& c : completion) {
      emit({TaxonomyNode::merged(c, TaxonomyNode::recollect(d))});
    }
  }
  return out;
}

std::string label_csv_header() { return "id,label,dup_count,rouge_l,rouge_3,template,code"; }

std::string label_csv_row(const SampleMeta& meta, const std::string& label, const SampleFeatures& f) {
  char buf[96];
  std::snprintf(buf, sizeof buf, ",%llu,%.6f,%.6f,%d,%d", static_cast<unsigned long long>(meta.dup_count),
                f.rouge_l, f.rouge_3, f.templated ? 1 : 0, f.code ? 1 : 0);
  return meta.id + "," + label + buf;
}

}  // namespace memo
