#include "bedexit/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "bedexit/error.hpp"
#include "bedexit/io.hpp"

namespace bedexit::checkpoint {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

void put_str(std::string& out, std::string_view s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.append(s);
}

class Reader {
public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::uint32_t u32(const std::string& what) {
    need(4, what);
    std::uint32_t v;
    std::memcpy(&v, bytes_.data() + pos_, 4);
    pos_ += 4;
    return v;
  }
  std::string str(const std::string& what) {
    const std::uint32_t n = u32(what);
    need(n, what);
    std::string s(bytes_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  void floats(float* dst, std::size_t n, const std::string& what) {
    need(n * 4, what);
    std::memcpy(dst, bytes_.data() + pos_, n * 4);
    pos_ += n * 4;
  }
  bool done() const { return pos_ == bytes_.size(); }

private:
  void need(std::size_t n, const std::string& what) {
    if (bytes_.size() - pos_ < n) fail(ErrorCode::checkpoint, "checkpoint truncated while reading " + what);
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::string dims_text(const std::vector<int>& dims) {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) s += (i ? "," : "") + std::to_string(dims[i]);
  return s + "]";
}

}  // namespace

std::string serialize(const model::ModelParams<float>& params) {
  std::string out(kMagic, 4);
  put_u32(out, kVersion);
  const auto kv = params.config.to_kv();
  put_u32(out, static_cast<std::uint32_t>(kv.size()));
  for (const auto& [k, v] : kv) {
    put_str(out, k);
    put_str(out, v);
  }
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    put_str(out, params.names[i]);
    put_u32(out, static_cast<std::uint32_t>(params.dims[i].size()));
    for (int d : params.dims[i]) put_u32(out, static_cast<std::uint32_t>(d));
    const auto& t = params.tensors[i];
    out.append(reinterpret_cast<const char*>(t.data()), static_cast<std::size_t>(t.size()) * 4);
  }
  return out;
}

model::ModelParams<float> deserialize(std::string_view bytes) {
  Reader r(bytes);
  require(bytes.size() >= 4 && std::memcmp(bytes.data(), kMagic, 4) == 0, ErrorCode::checkpoint,
          "not a checkpoint file (bad magic)");
  r.u32("magic");
  const std::uint32_t version = r.u32("version");
  require(version == kVersion, ErrorCode::checkpoint,
          "unsupported checkpoint version " + std::to_string(version) + " (expected " + std::to_string(kVersion) + ")");
  const std::uint32_t n_kv = r.u32("config size");
  std::vector<std::pair<std::string, std::string>> kv;
  for (std::uint32_t i = 0; i < n_kv; ++i) {
    std::string k = r.str("config key");
    std::string v = r.str("config value");
    kv.emplace_back(std::move(k), std::move(v));
  }
  model::ModelConfig config;
  try {
    config = model::ModelConfig::from_kv(kv);
  } catch (const Error& e) {
    fail(ErrorCode::checkpoint, std::string("checkpoint config invalid: ") + e.what());
  }
  model::ModelParams<float> params = model::zero_params<float>(config);
  const std::uint32_t n = r.u32("tensor count");
  require(n == params.size(), ErrorCode::checkpoint,
          "checkpoint holds " + std::to_string(n) + " tensors, config implies " + std::to_string(params.size()));
  for (std::size_t i = 0; i < n; ++i) {
    const std::string name = r.str("tensor name");
    require(name == params.names[i], ErrorCode::checkpoint,
            "tensor " + std::to_string(i) + " is '" + name + "', expected '" + params.names[i] + "'");
    const std::uint32_t rank = r.u32(name + " rank");
    std::vector<int> dims;
    for (std::uint32_t k = 0; k < rank && k < 8; ++k) dims.push_back(static_cast<int>(r.u32(name + " dims")));
    require(dims == params.dims[i], ErrorCode::checkpoint,
            "tensor '" + name + "' has shape " + dims_text(dims) + ", expected " + dims_text(params.dims[i]));
    auto& t = params.tensors[i];
    r.floats(t.data(), static_cast<std::size_t>(t.size()), name + " data");
    require(t.allFinite(), ErrorCode::checkpoint, "tensor '" + name + "' holds non-finite values");
  }
  require(r.done(), ErrorCode::checkpoint, "trailing bytes after the last tensor");
  return params;
}

void save(const std::filesystem::path& path, const model::ModelParams<float>& params) {
  io::write_atomic(path, serialize(params));
}

model::ModelParams<float> load(const std::filesystem::path& path) {
  return deserialize(io::read_file(path));
}

void check_compatible(const model::ModelParams<float>& params, const model::ModelConfig& expected) {
  const auto want = model::tensor_specs(expected);
  for (std::size_t i = 0; i < want.size(); ++i) {
    require(i < params.size(), ErrorCode::checkpoint, "checkpoint lacks tensor '" + want[i].name + "'");
    require(params.names[i] == want[i].name, ErrorCode::checkpoint,
            "checkpoint tensor '" + params.names[i] + "' where the config expects '" + want[i].name + "'");
    require(params.dims[i] == want[i].dims, ErrorCode::checkpoint,
            "checkpoint tensor '" + want[i].name + "' has shape " + dims_text(params.dims[i]) +
                ", the config expects " + dims_text(want[i].dims));
  }
  require(params.size() == want.size(), ErrorCode::checkpoint,
          "checkpoint has extra tensor '" + (params.size() > want.size() ? params.names[want.size()] : std::string()) +
              "'");
  model::ModelConfig stored = params.config;
  stored.dropout = expected.dropout;
  require(stored == expected, ErrorCode::checkpoint,
          "checkpoint model config differs from the run config (modality '" + model::modality_name(params.config.modality) +
              "', fusion_mode '" + model::fusion_mode_name(params.config.fusion_mode) + "')");
}

}  // namespace bedexit::checkpoint
