#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace memo {

/// Tokens per sample. The first half is the prefix, the second half the suffix.
inline constexpr std::size_t kSeqLen = 64;
inline constexpr std::size_t kPrefixLen = 32;

/// Tolerance on row sums of stored attention probabilities.
inline constexpr double kRowSumTolerance = 1e-3;

using TokenId = std::uint32_t;

/// Post-softmax causal attention of one sample: data[l][h][i][j], zero for j > i.
struct AttentionRecord {
  std::string id;
  std::size_t layers = 0;
  std::size_t heads = 0;
  std::size_t seq_len = kSeqLen;
  std::vector<float> data;

  AttentionRecord() = default;
  AttentionRecord(std::string id, std::size_t layers, std::size_t heads);

  std::size_t index(std::size_t l, std::size_t h, std::size_t i, std::size_t j) const noexcept {
    return ((l * heads + h) * seq_len + i) * seq_len + j;
  }
  float at(std::size_t l, std::size_t h, std::size_t i, std::size_t j) const noexcept {
    return data[index(l, h, i, j)];
  }
  float& at(std::size_t l, std::size_t h, std::size_t i, std::size_t j) noexcept {
    return data[index(l, h, i, j)];
  }
  /// The T x T matrix of one (layer, head).
  std::span<const float> matrix(std::size_t l, std::size_t h) const noexcept {
    return {data.data() + index(l, h, 0, 0), seq_len * seq_len};
  }

  bool operator==(const AttentionRecord&) const = default;
};

/// Everything the taxonomy predicates read about a sample.
struct SampleMeta {
  std::string id;
  std::vector<TokenId> token_ids;
  std::uint64_t dup_count = 0;
  std::string source_tag;
  bool extractable = false;
  std::optional<std::string> model_id;

  std::span<const TokenId> prefix() const { return std::span(token_ids).first(kPrefixLen); }
  std::span<const TokenId> suffix() const { return std::span(token_ids).subspan(kPrefixLen); }

  bool operator==(const SampleMeta&) const = default;
};

enum class Pooling { max, mean };

const char* to_string(Pooling p);
Pooling pooling_from_string(const std::string& s);

/// Head-collapsed stack, data[l][i][j]; the CNN input channels.
struct PooledStack {
  std::string id;
  std::size_t layers = 0;
  std::size_t seq_len = kSeqLen;
  Pooling pooling = Pooling::max;
  std::vector<float> data;

  float at(std::size_t l, std::size_t i, std::size_t j) const noexcept {
    return data[(l * seq_len + i) * seq_len + j];
  }
};

/// Throws ValidationError naming the first offending (l,h,i,j); row-sum failures
/// report j = i.
void validate(const AttentionRecord& record);

void validate(const SampleMeta& meta);

/// ATW1 layout: "ATW1", u32 version, u32 L, u32 H, u32 T, then L*H*T*T f32, all
/// little-endian.
std::vector<std::uint8_t> encode_atw(const AttentionRecord& record);
AttentionRecord decode_atw(std::span<const std::uint8_t> bytes, std::string id = {});

void write_atw(const AttentionRecord& record, const std::filesystem::path& path);
/// The record id is taken from the file stem.
AttentionRecord read_atw(const std::filesystem::path& path);

PooledStack head_pool(const AttentionRecord& record, Pooling mode);

// samples.jsonl sidecar

std::string to_json_line(const SampleMeta& meta);
SampleMeta meta_from_json_line(const std::string& line);
std::vector<SampleMeta> read_samples_jsonl(const std::filesystem::path& path);
void write_samples_jsonl(const std::vector<SampleMeta>& metas, const std::filesystem::path& path);

/// {root}/tensors/{id}.atw + {root}/samples.jsonl
class DatasetDir {
 public:
  explicit DatasetDir(std::filesystem::path root) : root_(std::move(root)) {}

  const std::filesystem::path& root() const noexcept { return root_; }
  std::filesystem::path samples_path() const { return root_ / "samples.jsonl"; }
  std::filesystem::path tensor_path(const std::string& id) const {
    return root_ / "tensors" / (id + ".atw");
  }

  /// Creates the directory skeleton.
  void create() const;
  std::vector<SampleMeta> read_samples() const { return read_samples_jsonl(samples_path()); }
  void write_samples(const std::vector<SampleMeta>& metas) const {
    write_samples_jsonl(metas, samples_path());
  }
  AttentionRecord load(const std::string& id) const;
  void store(const AttentionRecord& record) const { write_atw(record, tensor_path(record.id)); }

 private:
  std::filesystem::path root_;
};

}  // namespace memo
