#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "memo/attn_store.hpp"

namespace memo {

enum class NodeKind { recite, recollect, reconstruct, guess, code, merged };

/// One decision node of a taxonomy tree. A node's "yes" branch is always a leaf.
struct TaxonomyNode {
  NodeKind kind = NodeKind::reconstruct;
  std::optional<std::uint64_t> delta;  // Recite / Recollect
  // Guess thresholds; nullopt on a Guess node means the condition is disabled.
  std::optional<double> lambda;
  std::optional<double> gamma;
  std::vector<TaxonomyNode> parts;  // Merged: exactly two

  static TaxonomyNode recite(std::uint64_t delta);
  static TaxonomyNode recollect(std::uint64_t delta);
  static TaxonomyNode reconstruct();
  static TaxonomyNode guess(std::optional<double> lambda, std::optional<double> gamma);
  static TaxonomyNode code();
  static TaxonomyNode merged(TaxonomyNode a, TaxonomyNode b);

  bool duplication_based() const noexcept {
    return kind == NodeKind::recite || kind == NodeKind::recollect;
  }
  bool completion_based() const noexcept {
    return kind == NodeKind::reconstruct || kind == NodeKind::guess || kind == NodeKind::code;
  }

  /// Canonical text, e.g. "Recite[5]", "Guess[0.5-0.5]", "Recite[5]-or-Reconstruct".
  std::string name() const;
  /// Class label, parameters dropped: "Recite", "Guess", "Recite-or-Reconstruct".
  std::string label() const;

  bool operator==(const TaxonomyNode&) const = default;
};

/// Ordered first-match decision list after the implicit Non-Memo root.
struct TaxonomySpec {
  std::vector<TaxonomyNode> nodes;

  std::size_t num_classes() const noexcept { return nodes.size() + 2; }
  /// ["Non-Memo", node labels..., "Others"]
  std::vector<std::string> class_labels() const;
  /// "Non-Memo,<node>[,<node>],Others"
  std::string name() const;

  bool operator==(const TaxonomySpec&) const = default;
};

struct ClassLabel {
  std::size_t index = 0;
  std::string label;
};

/// Maps a token id to the integer it spells, if it is a number token.
using NumericDecoder = std::function<std::optional<std::int64_t>(TokenId)>;

/// Knobs of the predicates that the node definitions leave open.
struct PredicateConfig {
  std::set<std::string> code_tags{"code", "github"};
  /// Token ids counted as code symbols by the untagged fallback.
  std::set<TokenId> code_symbol_tokens;
  double code_symbol_fraction = 0.15;
  /// Default reads every token id as its own integer value.
  NumericDecoder numeric = [](TokenId t) { return std::optional<std::int64_t>(t); };
};

/// Suffix repeats a cycle established before the prefix/suffix boundary.
bool detect_cycle(std::span<const TokenId> tokens);
/// Suffix continues a motif (length <= 8) whose numeric entries step arithmetically.
bool detect_progression(std::span<const TokenId> tokens, const NumericDecoder& numeric);
/// The Reconstruct predicate: cycle or progression.
bool detect_template(const SampleMeta& meta, const PredicateConfig& config = {});
bool detect_code(const SampleMeta& meta, const PredicateConfig& config = {});

/// Per-sample quantities the predicates read, computed once.
struct SampleFeatures {
  double rouge_l = 0.0;
  double rouge_3 = 0.0;
  bool templated = false;
  bool code = false;
};

SampleFeatures compute_features(const SampleMeta& meta, const PredicateConfig& config = {});

/// Throws PreconditionError for a non-extractable sample.
bool node_accepts(const TaxonomyNode& node, const SampleMeta& meta,
                  const PredicateConfig& config = {});
bool node_accepts(const TaxonomyNode& node, const SampleMeta& meta, const SampleFeatures& features);

ClassLabel label_sample(const TaxonomySpec& spec, const SampleMeta& meta,
                        const PredicateConfig& config = {});
ClassLabel label_sample(const TaxonomySpec& spec, const SampleMeta& meta,
                        const SampleFeatures& features);

/// Label CSV: "id,label,dup_count,rouge_l,rouge_3,template,code" (no trailing newline).
std::string label_csv_header();
std::string label_csv_row(const SampleMeta& meta, const std::string& label, const SampleFeatures& features);

/// Whitespace-insensitive. Throws SyntaxError (with position) or RuleError (with rule number).
TaxonomySpec parse_taxonomy(const std::string& text);

/// Checks the tree-building rules on an already constructed spec.
void check_rules(const TaxonomySpec& spec);

/// Every rule-conforming taxonomy over {Recite, Recollect} x deltas and
/// {Reconstruct, Guess[0.5-0.5], Code}: four-class families first, then three-class.
std::vector<TaxonomySpec> enumerate_taxonomies(const std::set<std::uint64_t>& deltas);

}  // namespace memo
