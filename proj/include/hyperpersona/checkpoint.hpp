#pragma once

// Versioned binary tensor container. Layout (all integers little-endian):
//
//   "HPCKPT01"                       8-byte magic
//   u32 version                      currently 1
//   u32 metadata count, then per entry: u32 key length, key, u32 value length, value
//   u32 tensor count, then per tensor:
//     u32 name length, name, u32 group length, group,
//     u8 dtype (0 = f32, 1 = f64), u8 frozen,
//     u64 rows, u64 cols, rows*cols values in row-major order
//
// See docs/checkpoint-format.md.

#include "hyperpersona/nn.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace hyperpersona {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

struct TensorRecord {
  std::string name;
  std::string group;
  DType dtype = DType::F32;
  bool frozen = false;
  std::uint64_t rows = 0;
  std::uint64_t cols = 0;
  std::vector<double> values;  // row-major, widened to double in memory
};

struct Checkpoint {
  std::map<std::string, std::string> metadata;
  std::vector<TensorRecord> tensors;

  const TensorRecord* find(const std::string& name) const;

  template <typename Scalar>
  void add(const std::vector<ParamView<Scalar>>& params) {
    for (const auto& p : params) {
      TensorRecord t{p.name, p.group, sizeof(Scalar) == 4 ? DType::F32 : DType::F64, p.frozen,
                     static_cast<std::uint64_t>(p.rows), static_cast<std::uint64_t>(p.cols), {}};
      t.values.reserve(static_cast<std::size_t>(p.size()));
      const auto m = p.matrix();
      for (Index r = 0; r < m.rows(); ++r) {
        for (Index c = 0; c < m.cols(); ++c) t.values.push_back(static_cast<double>(m(r, c)));
      }
      tensors.push_back(std::move(t));
    }
  }

  // Copies stored values into the given views by name; shapes must match.
  template <typename Scalar>
  void restore(const std::vector<ParamView<Scalar>>& params) const {
    for (const auto& p : params) {
      const TensorRecord* t = find(p.name);
      if (!t) throw SchemaError("checkpoint has no tensor '" + p.name + "'");
      if (t->rows != static_cast<std::uint64_t>(p.rows) || t->cols != static_cast<std::uint64_t>(p.cols)) {
        throw SchemaError("checkpoint tensor '" + p.name + "' has shape " + std::to_string(t->rows) + "x" +
                          std::to_string(t->cols) + ", expected " + std::to_string(p.rows) + "x" +
                          std::to_string(p.cols));
      }
      auto m = p.matrix();
      std::size_t k = 0;
      for (Index r = 0; r < m.rows(); ++r) {
        for (Index c = 0; c < m.cols(); ++c) m(r, c) = static_cast<Scalar>(t->values[k++]);
      }
    }
  }
};

void write_checkpoint(const Checkpoint& ckpt, std::ostream& out);
Checkpoint read_checkpoint(std::istream& in);

// Writes to a sibling temporary file and renames it into place.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace hyperpersona
