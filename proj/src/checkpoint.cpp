#include "memo/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

#include "memo/errors.hpp"

namespace memo {

namespace {

constexpr char kMagic[4] = {'M', 'T', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "little-endian host required");

template <typename T>
void put(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::filesystem::path& path) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw LengthError("checkpoint " + path.string() + " is truncated");
  }
  return value;
}

}  // namespace

std::string config_to_json(const CnnConfig& c) {
  nlohmann::ordered_json j;
  j["pooling"] = to_string(c.pooling);
  j["conv_features"] = c.conv_features;
  j["kernel"] = c.kernel;
  j["pool_size"] = c.pool_size;
  j["fc_features"] = c.fc_features;
  j["dropout"] = c.dropout;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["weight_decay"] = c.weight_decay;
  j["epochs"] = c.epochs;
  j["num_classes"] = c.num_classes;
  j["in_channels"] = c.in_channels;
  j["seed"] = c.seed;
  return j.dump();
}

CnnConfig config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) {
    throw ConfigError("config must be a JSON object");
  }
  CnnConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "pooling") {
        c.pooling = pooling_from_string(value.get<std::string>());
      } else if (key == "conv_features") {
        c.conv_features = value.get<std::size_t>();
      } else if (key == "kernel") {
        c.kernel = value.get<std::size_t>();
      } else if (key == "pool_size") {
        c.pool_size = value.get<std::size_t>();
      } else if (key == "fc_features") {
        c.fc_features = value.get<std::size_t>();
      } else if (key == "dropout") {
        c.dropout = value.get<double>();
      } else if (key == "batch_size") {
        c.batch_size = value.get<std::size_t>();
      } else if (key == "learning_rate") {
        c.learning_rate = value.get<double>();
      } else if (key == "weight_decay") {
        c.weight_decay = value.get<double>();
      } else if (key == "epochs") {
        c.epochs = value.get<std::size_t>();
      } else if (key == "num_classes") {
        c.num_classes = value.get<std::size_t>();
      } else if (key == "in_channels") {
        c.in_channels = value.get<std::size_t>();
      } else if (key == "seed") {
        c.seed = value.get<std::uint64_t>();
      } else {
        throw ConfigError("unknown config key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }
  return c;
}

void write_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw StorageError("cannot open " + path.string() + " for writing");
  }
  nlohmann::ordered_json header = nlohmann::ordered_json::parse(config_to_json(checkpoint.config));
  header["epoch"] = checkpoint.epoch;
  const std::string text = header.dump();
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  put<std::uint64_t>(out, checkpoint.params.size());
  out.write(reinterpret_cast<const char*>(checkpoint.params.data()),
            static_cast<std::streamsize>(checkpoint.params.size() * sizeof(float)));
  if (!out) {
    throw StorageError("failed writing " + path.string());
  }
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw StorageError("cannot open " + path.string());
  }
  char magic[4];
  if (!in.read(magic, 4)) {
    throw LengthError("checkpoint " + path.string() + " is truncated");
  }
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError(path.string() + " is not a checkpoint (bad magic)");
  }
  if (const auto version = get<std::uint32_t>(in, path); version != kVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto length = get<std::uint32_t>(in, path);
  std::string text(length, '\0');
  if (!in.read(text.data(), length)) {
    throw LengthError("checkpoint " + path.string() + " is truncated");
  }
  Checkpoint cp;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
    cp.epoch = header.value("epoch", std::size_t{0});
    header.erase("epoch");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  cp.config = config_from_json(header.dump());
  const auto count = get<std::uint64_t>(in, path);
  cp.params.resize(count);
  if (!in.read(reinterpret_cast<char*>(cp.params.data()),
               static_cast<std::streamsize>(count * sizeof(float)))) {
    throw LengthError("checkpoint " + path.string() + " is truncated");
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw LengthError("checkpoint " + path.string() + " has trailing bytes");
  }
  return cp;
}

Cnn<float> model_from_checkpoint(const Checkpoint& checkpoint) {
  Cnn<float> model(CnnArch::from_config(checkpoint.config), checkpoint.config.seed);
  if (model.param_count() != checkpoint.params.size()) {
    throw FormatError("checkpoint holds " + std::to_string(checkpoint.params.size()) +
                      " parameters, config implies " + std::to_string(model.param_count()));
  }
  std::copy(checkpoint.params.begin(), checkpoint.params.end(), model.params().begin());
  return model;
}

}  // namespace memo
