#include "tiledet/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>

#include "tiledet/error.hpp"

namespace tiledet {

namespace {

constexpr char kMagic[4] = {'T', 'D', 'C', 'K'};

template <class T>
void put_le(std::string& out, T v) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <class T>
T get_le(const unsigned char* p) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(p[i]) << (8 * i);
  return v;
}

nlohmann::json config_json(const ModelConfig& c) {
  return {{"image_size", c.image_size},         {"patch_size", c.patch_size},
          {"embed_dim", c.embed_dim},           {"backbone_depth", c.backbone_depth},
          {"refiner_depth", c.refiner_depth},   {"aggregator_depth", c.aggregator_depth},
          {"heads", c.heads},                   {"mlp_ratio", c.mlp_ratio},
          {"backbone_frozen", c.backbone_frozen}};
}

ModelConfig config_from(const nlohmann::json& j) {
  ModelConfig c;
  c.image_size = j.at("image_size");
  c.patch_size = j.at("patch_size");
  c.embed_dim = j.at("embed_dim");
  c.backbone_depth = j.at("backbone_depth");
  c.refiner_depth = j.at("refiner_depth");
  c.aggregator_depth = j.at("aggregator_depth");
  c.heads = j.at("heads");
  c.mlp_ratio = j.at("mlp_ratio");
  c.backbone_frozen = j.at("backbone_frozen");
  return c;
}

}  // namespace

void round_to_f32(ModelParams& params) {
  params.for_each(ModelParams::Visitor([](const std::string&, ParamGroup, Mat& m) {
    for (double& v : m.v) v = static_cast<double>(static_cast<float>(v));
  }));
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  nlohmann::json tensors = nlohmann::json::array();
  std::string payload;
  ck.params.for_each(ModelParams::ConstVisitor([&](const std::string& name, ParamGroup, const Mat& m) {
    tensors.push_back({{"name", name}, {"shape", {m.rows, m.cols}}, {"offset", payload.size()}});
    for (double v : m.v) {
      const float f = static_cast<float>(v);
      if (!std::isfinite(f)) throw Error(Errc::NonFiniteLoss, "tensor " + name + " is not finite");
      put_le(payload, std::bit_cast<std::uint32_t>(f));
    }
  }));
  const nlohmann::json manifest = {{"version", kCheckpointVersion},
                                   {"seed", ck.seed},
                                   {"config", config_json(ck.config)},
                                   {"tensors", tensors}};
  const std::string text = manifest.dump();

  std::string out(kMagic, 4);
  put_le(out, kCheckpointVersion);
  put_le(out, static_cast<std::uint64_t>(text.size()));
  out += text;
  out += payload;

  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(Errc::IoFailure, "cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error(Errc::IoFailure, "write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(Errc::IoFailure, "cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 16 || std::memcmp(p, kMagic, 4) != 0)
    throw Error(Errc::UnsupportedFormat, path.string() + " is not a checkpoint");
  const auto version = get_le<std::uint32_t>(p + 4);
  if (version != kCheckpointVersion)
    throw Error(Errc::UnsupportedFormat, "checkpoint version " + std::to_string(version) + " not supported");
  const auto mlen = get_le<std::uint64_t>(p + 8);
  if (mlen > bytes.size() - 16) throw Error(Errc::CorruptFile, "truncated checkpoint manifest");

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(16, mlen));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::CorruptFile, std::string("bad checkpoint manifest: ") + e.what());
  }
  const std::size_t base = 16 + mlen;

  Checkpoint ck;
  try {
    if (manifest.at("version").get<std::uint32_t>() != kCheckpointVersion)
      throw Error(Errc::UnsupportedFormat, "manifest version mismatch");
    ck.seed = manifest.at("seed");
    ck.config = config_from(manifest.at("config"));
    ck.config.validate();
    ck.params = init_params(ck.config, 0);
    const auto& tensors = manifest.at("tensors");
    std::size_t i = 0;
    ck.params.for_each(ModelParams::Visitor([&](const std::string& name, ParamGroup, Mat& m) {
      if (i >= tensors.size()) throw Error(Errc::CorruptFile, "checkpoint lacks tensor " + name);
      const auto& t = tensors[i++];
      if (t.at("name") != name) throw Error(Errc::CorruptFile, "unexpected tensor " + t.at("name").get<std::string>());
      if (t.at("shape")[0] != m.rows || t.at("shape")[1] != m.cols)
        throw Error(Errc::CorruptFile, "shape mismatch for " + name);
      const std::size_t off = base + t.at("offset").get<std::size_t>();
      if (off + 4 * m.size() > bytes.size()) throw Error(Errc::CorruptFile, "truncated tensor " + name);
      for (std::size_t k = 0; k < m.size(); ++k)
        m.v[k] = std::bit_cast<float>(get_le<std::uint32_t>(p + off + 4 * k));
    }));
    if (i != tensors.size()) throw Error(Errc::CorruptFile, "checkpoint has extra tensors");
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::CorruptFile, std::string("bad checkpoint manifest: ") + e.what());
  }
  return ck;
}

}  // namespace tiledet
