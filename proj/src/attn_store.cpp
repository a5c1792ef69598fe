#include "memo/attn_store.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "json.hpp"
#include "memo/errors.hpp"

namespace memo {

namespace {

constexpr std::uint8_t kMagic[4] = {0x41, 0x54, 0x57, 0x31};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 20;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) {
    out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
  }
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int b = 0; b < 4; ++b) {
    v |= static_cast<std::uint32_t>(bytes[offset + b]) << (8 * b);
  }
  return v;
}

std::string where_string(std::size_t l, std::size_t h, std::size_t i, std::size_t j) {
  std::ostringstream os;
  os << "(" << l << "," << h << "," << i << "," << j << ")";
  return os.str();
}

}  // namespace

AttentionRecord::AttentionRecord(std::string id_, std::size_t layers_, std::size_t heads_)
    : id(std::move(id_)),
      layers(layers_),
      heads(heads_),
      seq_len(kSeqLen),
      data(layers_ * heads_ * kSeqLen * kSeqLen, 0.0f) {}

const char* to_string(Pooling p) { return p == Pooling::max ? "max" : "mean"; }

Pooling pooling_from_string(const std::string& s) {
  if (s == "max") {
    return Pooling::max;
  }
  if (s == "mean" || s == "avg" || s == "average") {
    return Pooling::mean;
  }
  throw ArgumentError("unknown pooling mode '" + s + "'");
}

void validate(const AttentionRecord& r) {
  if (r.layers == 0 || r.heads == 0) {
    throw ValidationError("record " + r.id + " has zero layers or heads", {0, 0, 0, 0});
  }
  if (r.seq_len != kSeqLen) {
    throw ValidationError("record " + r.id + " has sequence length " +
                              std::to_string(r.seq_len) + ", expected 64",
                          {0, 0, 0, 0});
  }
  if (r.data.size() != r.layers * r.heads * r.seq_len * r.seq_len) {
    throw ValidationError("record " + r.id + " tensor size does not match its shape",
                          {0, 0, 0, 0});
  }
  for (std::size_t l = 0; l < r.layers; ++l) {
    for (std::size_t h = 0; h < r.heads; ++h) {
      for (std::size_t i = 0; i < r.seq_len; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < r.seq_len; ++j) {
          const float v = r.at(l, h, i, j);
          if (!std::isfinite(v) || v < 0.0f || v > 1.0f + kRowSumTolerance) {
            throw ValidationError("attention value out of [0,1] at " + where_string(l, h, i, j),
                                  {l, h, i, j});
          }
          if (j > i && v != 0.0f) {
            throw ValidationError("non-zero attention above the diagonal at " +
                                      where_string(l, h, i, j),
                                  {l, h, i, j});
          }
          row += v;
        }
        if (std::abs(row - 1.0) > kRowSumTolerance) {
          throw ValidationError("row does not sum to 1 (" + std::to_string(row) + ") at " +
                                    where_string(l, h, i, i),
                                {l, h, i, i});
        }
      }
    }
  }
}

void validate(const SampleMeta& m) {
  if (m.token_ids.size() != kSeqLen) {
    throw ValidationError("sample " + m.id + " has " + std::to_string(m.token_ids.size()) +
                              " tokens, expected 64",
                          {0, 0, 0, 0});
  }
  if (m.extractable && m.dup_count < 1) {
    throw ValidationError("sample " + m.id + " is extractable but has dup_count 0", {0, 0, 0, 0});
  }
}

std::vector<std::uint8_t> encode_atw(const AttentionRecord& record) {
  validate(record);
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderBytes + record.data.size() * 4);
  for (std::uint8_t b : kMagic) {
    out.push_back(b);
  }
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(record.layers));
  put_u32(out, static_cast<std::uint32_t>(record.heads));
  put_u32(out, static_cast<std::uint32_t>(record.seq_len));
  for (float v : record.data) {
    put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

AttentionRecord decode_atw(std::span<const std::uint8_t> bytes, std::string id) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("bad magic: not an ATW1 file");
  }
  if (bytes.size() < kHeaderBytes) {
    throw LengthError("truncated ATW1 header (" + std::to_string(bytes.size()) + " bytes)");
  }
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kVersion) {
    throw FormatError("unsupported ATW1 version " + std::to_string(version));
  }
  const std::size_t layers = get_u32(bytes, 8);
  const std::size_t heads = get_u32(bytes, 12);
  const std::size_t seq_len = get_u32(bytes, 16);
  if (layers == 0 || heads == 0) {
    throw FormatError("ATW1 header declares zero layers or heads");
  }
  if (seq_len != kSeqLen) {
    throw FormatError("ATW1 sequence length " + std::to_string(seq_len) +
                      " not supported (only 64)");
  }
  const std::size_t count = layers * heads * seq_len * seq_len;
  const std::size_t expected = kHeaderBytes + count * 4;
  if (bytes.size() != expected) {
    throw LengthError("ATW1 payload has " + std::to_string(bytes.size()) + " bytes, header implies " +
                      std::to_string(expected));
  }
  AttentionRecord record(std::move(id), layers, heads);
  for (std::size_t k = 0; k < count; ++k) {
    record.data[k] = std::bit_cast<float>(get_u32(bytes, kHeaderBytes + 4 * k));
  }
  validate(record);
  return record;
}

void write_atw(const AttentionRecord& record, const std::filesystem::path& path) {
  const auto bytes = encode_atw(record);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw StorageError("cannot open " + path.string() + " for writing");
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw StorageError("write failed for " + path.string());
  }
}

AttentionRecord read_atw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw StorageError("cannot open " + path.string());
  }
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_atw(bytes, path.stem().string());
}

PooledStack head_pool(const AttentionRecord& record, Pooling mode) {
  PooledStack out;
  out.id = record.id;
  out.layers = record.layers;
  out.seq_len = record.seq_len;
  out.pooling = mode;
  const std::size_t plane = record.seq_len * record.seq_len;
  out.data.assign(record.layers * plane, 0.0f);
  const float inv_heads = 1.0f / static_cast<float>(record.heads);
  for (std::size_t l = 0; l < record.layers; ++l) {
    float* dst = out.data.data() + l * plane;
    for (std::size_t h = 0; h < record.heads; ++h) {
      const float* src = record.data.data() + record.index(l, h, 0, 0);
      if (mode == Pooling::max) {
        for (std::size_t k = 0; k < plane; ++k) {
          dst[k] = h == 0 ? src[k] : std::max(dst[k], src[k]);
        }
      } else {
        for (std::size_t k = 0; k < plane; ++k) {
          dst[k] += src[k];
        }
      }
    }
    if (mode == Pooling::mean) {
      for (std::size_t k = 0; k < plane; ++k) {
        dst[k] *= inv_heads;
      }
    }
  }
  return out;
}

std::string to_json_line(const SampleMeta& meta) {
  nlohmann::ordered_json j;
  j["id"] = meta.id;
  j["token_ids"] = meta.token_ids;
  j["dup_count"] = meta.dup_count;
  j["source_tag"] = meta.source_tag;
  j["extractable"] = meta.extractable;
  j["model_id"] = meta.model_id ? nlohmann::ordered_json(*meta.model_id) : nlohmann::ordered_json();
  return j.dump();
}

SampleMeta meta_from_json_line(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed samples.jsonl line: ") + e.what());
  }
  SampleMeta m;
  try {
    m.id = j.at("id").get<std::string>();
    m.token_ids = j.at("token_ids").get<std::vector<TokenId>>();
    m.dup_count = j.at("dup_count").get<std::uint64_t>();
    m.source_tag = j.value("source_tag", std::string{});
    m.extractable = j.at("extractable").get<bool>();
    if (j.contains("model_id") && !j["model_id"].is_null()) {
      m.model_id = j["model_id"].get<std::string>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("samples.jsonl entry: ") + e.what());
  }
  validate(m);
  return m;
}

std::vector<SampleMeta> read_samples_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw StorageError("cannot open " + path.string());
  }
  std::vector<SampleMeta> metas;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    metas.push_back(meta_from_json_line(line));
  }
  return metas;
}

void write_samples_jsonl(const std::vector<SampleMeta>& metas, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw StorageError("cannot open " + path.string() + " for writing");
  }
  for (const auto& m : metas) {
    out << to_json_line(m) << '\n';
  }
  if (!out) {
    throw StorageError("write failed for " + path.string());
  }
}

void DatasetDir::create() const {
  std::error_code ec;
  std::filesystem::create_directories(root_ / "tensors", ec);
  if (ec) {
    throw StorageError("cannot create " + (root_ / "tensors").string() + ": " + ec.message());
  }
}

AttentionRecord DatasetDir::load(const std::string& id) const {
  auto record = read_atw(tensor_path(id));
  record.id = id;
  return record;
}

}  // namespace memo
