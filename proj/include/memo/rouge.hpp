#pragma once

#include <cstddef>
#include <span>

#include "memo/attn_store.hpp"

namespace memo {

/// Length of the longest common subsequence. Bit-parallel over `a`, O(|a|/64 * |b|).
std::size_t lcs_length(std::span<const TokenId> a, std::span<const TokenId> b);

/// Clipped n-gram overlap: sum over distinct n-grams of min(count in ref, count in cand).
std::size_t ngram_overlap(std::span<const TokenId> ref, std::span<const TokenId> cand, std::size_t n);

/// F1 of precision = overlap/cand_total and recall = overlap/ref_total; 0 when overlap is 0.
double overlap_f1(std::size_t overlap, std::size_t ref_total, std::size_t cand_total);

/// ROUGE-L F1 on token ids. Throws ArgumentError on an empty sequence.
double rouge_l_f1(std::span<const TokenId> ref, std::span<const TokenId> cand);

/// ROUGE-N F1 on token ids; 0 when either side is shorter than n. Throws ArgumentError
/// for n < 1 or an empty sequence.
double rouge_n_f1(std::span<const TokenId> ref, std::span<const TokenId> cand, std::size_t n);

}  // namespace memo
