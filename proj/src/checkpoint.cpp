#include "hybridvc/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <memory>

#include <json.hpp>

#include "hybridvc/bytes.hpp"
#include "hybridvc/image_io.hpp"

namespace hvc::checkpoint {

namespace {

using nlohmann::json;
using restoration::NetworkSpec;
using restoration::Weights;

constexpr char kMagic[4] = {'H', 'V', 'C', 'K'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written in host order");

json spec_json(const NetworkSpec& s) {
  return json{{"channels", s.channels},
              {"encoder_blocks", s.encoder_blocks},
              {"decoder_blocks", s.decoder_blocks},
              {"ref_encoder_blocks", s.ref_encoder_blocks},
              {"offset_layers", s.offset_layers},
              {"refine_blocks", s.refine_blocks},
              {"deform_source", restoration::to_string(s.deform_source)}};
}

NetworkSpec spec_parse(const json& j) {
  NetworkSpec s;
  s.channels = j.at("channels").get<int>();
  s.encoder_blocks = j.at("encoder_blocks").get<int>();
  s.decoder_blocks = j.at("decoder_blocks").get<int>();
  s.ref_encoder_blocks = j.at("ref_encoder_blocks").get<int>();
  s.offset_layers = j.at("offset_layers").get<int>();
  s.refine_blocks = j.at("refine_blocks").get<int>();
  s.deform_source = restoration::deform_source_from_string(j.at("deform_source").get<std::string>());
  s.validate();
  return s;
}

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) {
      throw StateError("sha256 init failed");
    }
  }
  void update(const void* p, std::size_t n) {
    if (EVP_DigestUpdate(ctx_.get(), p, n) != 1) throw StateError("sha256 update failed");
  }
  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_.get(), md, &len) != 1) throw StateError("sha256 final failed");
    static const char* digits = "0123456789abcdef";
    std::string out;
    for (unsigned i = 0; i < len; ++i) {
      out.push_back(digits[md[i] >> 4]);
      out.push_back(digits[md[i] & 15]);
    }
    return out;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

std::string digest_of(const Weights<float>& w, bool step1_only) {
  Sha256 h;
  for (const auto& [name, t] : w.tensors) {
    if (step1_only && !restoration::is_step1(name)) continue;
    h.update(name.data(), name.size() + 1);
    const std::string shape = t.shape().str();
    h.update(shape.data(), shape.size() + 1);
    h.update(t.data(), t.size() * sizeof(float));
  }
  return h.hex();
}

}  // namespace

std::string sha256_hex(const std::uint8_t* data, std::size_t size) {
  Sha256 h;
  h.update(data, size);
  return h.hex();
}

std::string file_digest(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  return sha256_hex(bytes.data(), bytes.size());
}

std::string step1_digest(const Weights<float>& w) { return digest_of(w, true); }
std::string weights_digest(const Weights<float>& w) { return digest_of(w, false); }

std::string spec_to_json(const NetworkSpec& spec) { return spec_json(spec).dump(); }

NetworkSpec spec_from_json(const std::string& text) {
  try {
    return spec_parse(json::parse(text));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("network spec: ") + e.what());
  }
}

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt) {
  json header;
  header["spec"] = spec_json(ckpt.weights.spec);
  header["phase"] = ckpt.phase;
  header["step1_frozen_hash"] = ckpt.step1_frozen_hash;
  header["train_config"] = json::parse(ckpt.train_config_json);
  json tensors = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.weights.tensors) {
    const auto& s = t.shape();
    tensors.push_back({{"name", name},
                       {"shape", {s.n, s.c, s.h, s.w}},
                       {"dtype", "f32"},
                       {"offset", offset}});
    offset += t.size() * sizeof(float);
  }
  header["tensors"] = std::move(tensors);
  const std::string text = header.dump();

  std::vector<std::uint8_t> out;
  out.reserve(16 + text.size() + offset);
  ByteWriter wr(out);
  wr.bytes(reinterpret_cast<const std::uint8_t*>(kMagic), 4);
  wr.u32(kVersion);
  wr.u64(text.size());
  wr.text(text);
  for (const auto& [name, t] : ckpt.weights.tensors) {
    wr.bytes(reinterpret_cast<const std::uint8_t*>(t.data()), t.size() * sizeof(float));
  }
  return out;
}

Checkpoint deserialize(const std::vector<std::uint8_t>& bytes,
                       const std::optional<NetworkSpec>& expected) {
  ByteReader rd(bytes, "checkpoint");
  if (std::memcmp(rd.take(4), kMagic, 4) != 0) throw FormatError("checkpoint: bad magic");
  const std::uint32_t version = rd.u32();
  if (version != kVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  const std::uint64_t header_len = rd.u64();
  if (header_len > rd.remaining()) throw FormatError("checkpoint: truncated input");
  const auto* hp = rd.take(header_len);
  json header;
  try {
    header = json::parse(hp, hp + header_len);
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }

  Checkpoint ckpt;
  NetworkSpec spec;
  try {
    spec = spec_parse(header.at("spec"));
    ckpt.phase = header.at("phase").get<std::string>();
    ckpt.step1_frozen_hash = header.at("step1_frozen_hash").get<std::string>();
    ckpt.train_config_json = header.at("train_config").dump();
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
  if (expected && !(*expected == spec)) {
    throw ValidationError("checkpoint network spec " + spec_to_json(spec) +
                          " does not match expected " + spec_to_json(*expected));
  }
  ckpt.weights.spec = spec;

  const std::uint8_t* payload = bytes.data() + rd.position();
  const std::size_t payload_len = rd.remaining();
  std::size_t payload_used = 0;
  try {
    for (const auto& entry : header.at("tensors")) {
      const auto dims = entry.at("shape").get<std::vector<int>>();
      if (dims.size() != 4 || entry.at("dtype").get<std::string>() != "f32") {
        throw FormatError("checkpoint: unsupported tensor entry");
      }
      Tensor<float> t(Shape{dims[0], dims[1], dims[2], dims[3]});
      const auto off = entry.at("offset").get<std::uint64_t>();
      const std::size_t len = t.size() * sizeof(float);
      if (off > payload_len || len > payload_len - off) {
        throw FormatError("checkpoint: truncated input");
      }
      std::memcpy(t.data(), payload + off, len);
      payload_used += len;
      ckpt.weights.tensors.emplace(entry.at("name").get<std::string>(), std::move(t));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }

  if (payload_used != payload_len) throw FormatError("checkpoint: payload size mismatch");

  // Every tensor the spec needs must be present with the right shape.
  const auto layout = spec.layout();
  if (layout.size() != ckpt.weights.tensors.size()) {
    throw ValidationError("checkpoint tensor set does not match its network spec");
  }
  for (const auto& [name, shape] : layout) {
    require_same_shape(ckpt.weights.at(name).shape(), shape, name.c_str());
  }
  return ckpt;
}

void save(const std::filesystem::path& path, const Checkpoint& ckpt) {
  io::write_file_atomic(path, serialize(ckpt));
}

Checkpoint load(const std::filesystem::path& path, const std::optional<NetworkSpec>& expected) {
  return deserialize(io::read_file(path), expected);
}

}  // namespace hvc::checkpoint
