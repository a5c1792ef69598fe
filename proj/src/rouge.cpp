#include "memo/rouge.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "memo/errors.hpp"

namespace memo {

std::size_t lcs_length(std::span<const TokenId> a, std::span<const TokenId> b) {
  if (a.empty() || b.empty()) {
    return 0;
  }
  const std::size_t words = (a.size() + 63) / 64;
  std::unordered_map<TokenId, std::vector<std::uint64_t>> match;
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto& mask = match[a[i]];
    if (mask.empty()) {
      mask.assign(words, 0);
    }
    mask[i / 64] |= std::uint64_t{1} << (i % 64);
  }

  // Hyyro's formulation: V' = (V + (V & M)) | (V & ~M); zero bits of V count the LCS.
  std::vector<std::uint64_t> v(words, ~std::uint64_t{0});
  for (TokenId symbol : b) {
    auto it = match.find(symbol);
    if (it == match.end()) {
      continue;
    }
    const auto& m = it->second;
    std::uint64_t carry = 0;
    for (std::size_t w = 0; w < words; ++w) {
      const std::uint64_t u = v[w] & m[w];
      const std::uint64_t sum = v[w] + u;
      const std::uint64_t with_carry = sum + carry;
      carry = (sum < v[w] || with_carry < sum) ? 1 : 0;
      v[w] = with_carry | (v[w] & ~m[w]);
    }
  }

  std::size_t zeros = 0;
  for (std::size_t w = 0; w < words; ++w) {
    const std::size_t bits = (w + 1 == words && a.size() % 64 != 0) ? a.size() % 64 : 64;
    const std::uint64_t live = bits == 64 ? ~std::uint64_t{0} : ((std::uint64_t{1} << bits) - 1);
    zeros += static_cast<std::size_t>(std::popcount(~v[w] & live));
  }
  return zeros;
}

std::size_t ngram_overlap(std::span<const TokenId> ref, std::span<const TokenId> cand, std::size_t n) {
  if (n == 0) {
    throw ArgumentError("n-gram order must be >= 1");
  }
  if (ref.size() < n || cand.size() < n) {
    return 0;
  }
  auto grams = [n](std::span<const TokenId> seq) {
    std::vector<std::span<const TokenId>> out;
    out.reserve(seq.size() - n + 1);
    for (std::size_t i = 0; i + n <= seq.size(); ++i) {
      out.push_back(seq.subspan(i, n));
    }
    std::sort(out.begin(), out.end(), [](auto x, auto y) {
      return std::lexicographical_compare(x.begin(), x.end(), y.begin(), y.end());
    });
    return out;
  };
  const auto r = grams(ref);
  const auto c = grams(cand);

  // Merge of two sorted multisets counts min(multiplicity) per distinct n-gram.
  std::size_t overlap = 0;
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < r.size() && j < c.size()) {
    if (std::lexicographical_compare(r[i].begin(), r[i].end(), c[j].begin(), c[j].end())) {
      ++i;
    } else if (std::lexicographical_compare(c[j].begin(), c[j].end(), r[i].begin(), r[i].end())) {
      ++j;
    } else {
      ++overlap;
      ++i;
      ++j;
    }
  }
  return overlap;
}

double overlap_f1(std::size_t overlap, std::size_t ref_total, std::size_t cand_total) {
  if (overlap == 0 || ref_total == 0 || cand_total == 0) {
    return 0.0;
  }
  const double precision = static_cast<double>(overlap) / static_cast<double>(cand_total);
  const double recall = static_cast<double>(overlap) / static_cast<double>(ref_total);
  return 2.0 * precision * recall / (precision + recall);
}

double rouge_l_f1(std::span<const TokenId> ref, std::span<const TokenId> cand) {
  if (ref.empty() || cand.empty()) {
    throw ArgumentError("ROUGE-L needs non-empty sequences");
  }
  return overlap_f1(lcs_length(ref, cand), ref.size(), cand.size());
}

double rouge_n_f1(std::span<const TokenId> ref, std::span<const TokenId> cand, std::size_t n) {
  if (n < 1) {
    throw ArgumentError("ROUGE-N order must be >= 1");
  }
  if (ref.empty() || cand.empty()) {
    throw ArgumentError("ROUGE-N needs non-empty sequences");
  }
  if (ref.size() < n || cand.size() < n) {
    return 0.0;
  }
  return overlap_f1(ngram_overlap(ref, cand, n), ref.size() - n + 1, cand.size() - n + 1);
}

}  // namespace memo
