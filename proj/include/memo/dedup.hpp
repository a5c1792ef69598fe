#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "memo/attn_store.hpp"

namespace memo {

/// Exact occurrence counts of each query sequence (all of length `window`) in `corpus`.
/// Windows are located with a polynomial rolling hash; every hash hit is verified
/// token by token before it is counted.
std::vector<std::uint64_t> count_occurrences(std::span<const TokenId> corpus,
                                             const std::vector<std::vector<TokenId>>& queries,
                                             std::size_t window = kSeqLen);

/// id -> occurrences of the sample's full 64-token sequence.
std::map<std::string, std::uint64_t> count_duplicates(std::span<const TokenId> corpus,
                                                      const std::vector<SampleMeta>& samples);

}  // namespace memo
