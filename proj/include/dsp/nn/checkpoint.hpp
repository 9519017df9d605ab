#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include <json.hpp>

#include "dsp/error.hpp"
#include "dsp/nn/model.hpp"

namespace dsp::nn {

// Layout: "DSPCKPT" magic, uint32 version, uint64 header length, JSON header
// (model config, vocabulary, shape table, seed, epoch), then every array as
// column-major little-endian float32 in shape-table order.
inline constexpr char kCheckpointMagic[] = "DSPCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointInfo {
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
};

struct LoadedCheckpoint {
  PointerGenerator<float> model;
  CheckpointInfo info;
};

namespace detail {

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw Error(Errc::IoError, "truncated checkpoint");
  return v;
}

}  // namespace detail

inline void save_checkpoint(const PointerGenerator<float>& model, const std::string& path,
                            const CheckpointInfo& info = {}) {
  nlohmann::json header;
  header["model"] = model.config();
  header["vocab"] = model.vocab().to_json();
  header["seed"] = info.seed;
  header["epoch"] = info.epoch;
  header["arrays"] = nlohmann::json::array();
  for (const auto& p : model.params())
    header["arrays"].push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}});
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::IoError, "cannot write " + path);
  out.write(kCheckpointMagic, sizeof kCheckpointMagic - 1);
  detail::write_pod(out, kCheckpointVersion);
  detail::write_pod(out, static_cast<std::uint64_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : model.params())
    out.write(reinterpret_cast<const char*>(p.value.data()),
              static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(p.value.size())));
  if (!out) throw Error(Errc::IoError, "write failed for " + path);
}

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot read " + path);
  char magic[sizeof kCheckpointMagic - 1];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw Error(Errc::IoError, path + " is not a checkpoint");
  auto version = detail::read_pod<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw Error(Errc::IoError, "unsupported checkpoint version " + std::to_string(version));
  auto length = detail::read_pod<std::uint64_t>(in);
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw Error(Errc::IoError, "truncated checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::IoError, std::string("bad checkpoint header: ") + e.what());
  }

  ParameterSet<float> params;
  for (const auto& a : header.at("arrays")) {
    int i = params.add(a.at("name").get<std::string>(), a.at("rows").get<Eigen::Index>(),
                       a.at("cols").get<Eigen::Index>());
    auto& v = params[static_cast<std::size_t>(i)].value;
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(v.size())));
    if (!in) throw Error(Errc::IoError, "truncated array " + params[static_cast<std::size_t>(i)].name);
  }
  if (!params.all_finite()) throw Error(Errc::IoError, "checkpoint holds non-finite values");
  CheckpointInfo info{header.value("seed", std::uint64_t{0}), header.value("epoch", std::size_t{0})};
  return {PointerGenerator<float>(header.at("model").get<ModelConfig>(), Vocabulary::from_json(header.at("vocab")),
                                  std::move(params)),
          info};
}

}  // namespace dsp::nn
