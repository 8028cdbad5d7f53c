#pragma once

#include <dsnet/parameters.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace dsnet {

// Checkpoint layout, little-endian throughout:
//
//   "DSN1"                       magic
//   u32 count                    number of records
//   count x record:
//     u32 name_len, name bytes
//     u32 rank, rank x u64 extent
//     u8  dtype                  1 = f32, 2 = f64
//     row-major payload
//   u32 crc32                    over every byte between the magic and the crc

enum class CheckpointErrc : int {
  io = 10,
  magic = 11,
  truncated = 12,
  crc = 13,
  malformed = 14,
  name_mismatch = 15,
  shape_mismatch = 16,
  dtype_mismatch = 17,
};

std::string_view to_string(CheckpointErrc code);

class CheckpointError : public Error {
 public:
  CheckpointError(CheckpointErrc code, const std::string& what) : Error(what), code_(code) {}
  CheckpointErrc code() const { return code_; }

 private:
  CheckpointErrc code_;
};

struct CheckpointRecord {
  std::string name;
  std::variant<Tensor<float>, Tensor<double>> tensor;

  DType dtype() const { return tensor.index() == 0 ? DType::f32 : DType::f64; }
  const Shape& shape() const;
};

using Checkpoint = std::vector<CheckpointRecord>;

template <typename Scalar>
Checkpoint snapshot(const ParameterList<Scalar>& params);

std::string encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::string_view bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Copies record values into `params`, matched by position. Names, shapes and
/// dtypes must agree; nothing is written unless every record matches.
template <typename Scalar>
void restore(const Checkpoint& checkpoint, const ParameterList<Scalar>& params);

}  // namespace dsnet
