#include "memo/dedup.hpp"

#include <algorithm>
#include <unordered_map>

#include "memo/errors.hpp"

namespace memo {

namespace {

constexpr std::uint64_t kBase = 0x100000001b3ULL;

std::uint64_t hash_window(std::span<const TokenId> seq) {
  std::uint64_t h = 0;
  for (TokenId t : seq) {
    h = h * kBase + (static_cast<std::uint64_t>(t) + 1);
  }
  return h;
}

}  // namespace

std::vector<std::uint64_t> count_occurrences(std::span<const TokenId> corpus,
                                             const std::vector<std::vector<TokenId>>& queries,
                                             std::size_t window) {
  if (window == 0) {
    throw ArgumentError("window must be positive");
  }
  std::vector<std::uint64_t> counts(queries.size(), 0);
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> index;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    if (queries[q].size() != window) {
      throw ArgumentError("query " + std::to_string(q) + " does not have the window length");
    }
    index[hash_window(queries[q])].push_back(q);
  }
  if (corpus.size() < window || queries.empty()) {
    return counts;
  }

  // kBase^(window-1), the weight of the token leaving the window.
  std::uint64_t lead = 1;
  for (std::size_t k = 1; k < window; ++k) {
    lead *= kBase;
  }

  std::uint64_t h = hash_window(corpus.first(window));
  for (std::size_t start = 0;; ++start) {
    if (auto it = index.find(h); it != index.end()) {
      const auto view = corpus.subspan(start, window);
      for (std::size_t q : it->second) {
        if (std::equal(view.begin(), view.end(), queries[q].begin())) {
          ++counts[q];
        }
      }
    }
    if (start + window >= corpus.size()) {
      break;
    }
    h -= (static_cast<std::uint64_t>(corpus[start]) + 1) * lead;
    h = h * kBase + (static_cast<std::uint64_t>(corpus[start + window]) + 1);
  }
  return counts;
}

std::map<std::string, std::uint64_t> count_duplicates(std::span<const TokenId> corpus,
                                                      const std::vector<SampleMeta>& samples) {
  std::vector<std::vector<TokenId>> queries;
  queries.reserve(samples.size());
  for (const auto& s : samples) {
    queries.push_back(s.token_ids);
  }
  const auto counts = count_occurrences(corpus, queries, kSeqLen);
  std::map<std::string, std::uint64_t> out;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    out[samples[k].id] = counts[k];
  }
  return out;
}

}  // namespace memo
