#pragma once

#include <algorithm>
#include <map>
#include <vector>

#include "memo/attn_store.hpp"

namespace memo_test {

inline std::size_t dp_lcs(const std::vector<memo::TokenId>& a, const std::vector<memo::TokenId>& b) {
  std::vector<std::vector<std::size_t>> t(a.size() + 1, std::vector<std::size_t>(b.size() + 1, 0));
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      t[i][j] = a[i - 1] == b[j - 1] ? t[i - 1][j - 1] + 1 : std::max(t[i - 1][j], t[i][j - 1]);
    }
  }
  return t[a.size()][b.size()];
}

inline double f1_from_counts(double overlap, double ref_total, double cand_total) {
  if (overlap == 0.0) {
    return 0.0;
  }
  const double p = overlap / cand_total;
  const double r = overlap / ref_total;
  return 2.0 * p * r / (p + r);
}

inline double oracle_rouge_l(const std::vector<memo::TokenId>& ref, const std::vector<memo::TokenId>& cand) {
  return f1_from_counts(static_cast<double>(dp_lcs(ref, cand)), static_cast<double>(ref.size()),
                        static_cast<double>(cand.size()));
}

inline double oracle_rouge_n(const std::vector<memo::TokenId>& ref, const std::vector<memo::TokenId>& cand,
                             std::size_t n) {
  if (ref.size() < n || cand.size() < n) {
    return 0.0;
  }
  std::map<std::vector<memo::TokenId>, std::size_t> rc, cc;
  for (std::size_t i = 0; i + n <= ref.size(); ++i) ++rc[std::vector<memo::TokenId>(ref.begin() + i, ref.begin() + i + n)];
  for (std::size_t i = 0; i + n <= cand.size(); ++i) ++cc[std::vector<memo::TokenId>(cand.begin() + i, cand.begin() + i + n)];
  std::size_t overlap = 0;
  for (const auto& [gram, count] : rc) {
    auto it = cc.find(gram);
    if (it != cc.end()) overlap += std::min(count, it->second);
  }
  return f1_from_counts(static_cast<double>(overlap), static_cast<double>(ref.size() - n + 1),
                        static_cast<double>(cand.size() - n + 1));
}

}  // namespace memo_test
