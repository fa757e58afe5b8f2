#include "hyperpersona/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace hyperpersona {

namespace {

constexpr char kMagic[8] = {'H', 'P', 'C', 'K', 'P', 'T', '0', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T get(std::istream& in, const char* what) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw ParseError(std::string("truncated checkpoint while reading ") + what, 0);
  }
  return value;
}

std::string get_string(std::istream& in, const char* what) {
  const auto n = get<std::uint32_t>(in, what);
  if (n > (1u << 20)) throw SchemaError(std::string("checkpoint ") + what + " is implausibly long");
  std::string s(n, '\0');
  if (n > 0 && !in.read(s.data(), n)) throw ParseError(std::string("truncated checkpoint while reading ") + what, 0);
  return s;
}

}  // namespace

const TensorRecord* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

void write_checkpoint(const Checkpoint& ckpt, std::ostream& out) {
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.metadata.size()));
  for (const auto& [key, value] : ckpt.metadata) {
    put_string(out, key);
    put_string(out, value);
  }
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    if (t.values.size() != t.rows * t.cols) throw ContractError("tensor '" + t.name + "' size does not match shape");
    put_string(out, t.name);
    put_string(out, t.group);
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.dtype));
    put<std::uint8_t>(out, t.frozen ? 1 : 0);
    put<std::uint64_t>(out, t.rows);
    put<std::uint64_t>(out, t.cols);
    for (double v : t.values) {
      if (t.dtype == DType::F32) {
        put<float>(out, static_cast<float>(v));
      } else {
        put<double>(out, v);
      }
    }
  }
  if (!out) throw Error("failed to write checkpoint");
}

Checkpoint read_checkpoint(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw SchemaError("not a checkpoint file (bad magic)");
  }
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw SchemaError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const auto n_meta = get<std::uint32_t>(in, "metadata count");
  for (std::uint32_t k = 0; k < n_meta; ++k) {
    std::string key = get_string(in, "metadata key");
    ckpt.metadata[key] = get_string(in, "metadata value");
  }
  const auto n_tensors = get<std::uint32_t>(in, "tensor count");
  for (std::uint32_t k = 0; k < n_tensors; ++k) {
    TensorRecord t;
    t.name = get_string(in, "tensor name");
    t.group = get_string(in, "tensor group");
    const auto dtype = get<std::uint8_t>(in, "dtype");
    if (dtype > 1) throw SchemaError("tensor '" + t.name + "' has unknown dtype " + std::to_string(dtype));
    t.dtype = static_cast<DType>(dtype);
    t.frozen = get<std::uint8_t>(in, "frozen flag") != 0;
    t.rows = get<std::uint64_t>(in, "rows");
    t.cols = get<std::uint64_t>(in, "cols");
    if (t.rows > (1ull << 32) || t.cols > (1ull << 32)) throw SchemaError("tensor '" + t.name + "' shape too large");
    t.values.resize(t.rows * t.cols);
    for (auto& v : t.values) {
      v = t.dtype == DType::F32 ? static_cast<double>(get<float>(in, "tensor data")) : get<double>(in, "tensor data");
    }
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    write_checkpoint(ckpt, out);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return read_checkpoint(in);
}

}  // namespace hyperpersona
