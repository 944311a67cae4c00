#pragma once

// Binary checkpoint blob shared by recommender and controller checkpoints.
//
// Layout (all integers little-endian uint32, values little-endian IEEE-754 f64):
//   magic    "LFCK"
//   version  1
//   kind     0 = MF, 1 = MLP, 2 = controller policy
//   count    number of arrays
//   count x { rows, cols, rows*cols values in row-major order }

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "lossforge/errors.hpp"
#include "lossforge/tensor.hpp"

namespace lossforge {

inline constexpr std::array<char, 4> kCheckpointMagic = {'L', 'F', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class BlobKind : std::uint32_t { Mf = 0, Mlp = 1, Policy = 2 };

struct Blob {
  BlobKind kind = BlobKind::Mf;
  std::vector<Tensor> arrays;
};

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw DataError("checkpoint truncated");
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

inline void put_f64(std::ostream& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  unsigned char b[8];
  for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>(bits >> (8 * k));
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline double get_f64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw DataError("checkpoint truncated");
  std::uint64_t bits = 0;
  for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(b[k]) << (8 * k);
  return std::bit_cast<double>(bits);
}

}  // namespace detail

inline void write_blob(std::ostream& out, const Blob& blob) {
  out.write(kCheckpointMagic.data(), 4);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(blob.kind));
  detail::put_u32(out, static_cast<std::uint32_t>(blob.arrays.size()));
  for (const auto& t : blob.arrays) {
    detail::put_u32(out, static_cast<std::uint32_t>(t.rows()));
    detail::put_u32(out, static_cast<std::uint32_t>(t.cols()));
    for (double v : t.values()) detail::put_f64(out, v);
  }
  if (!out) throw DataError("failed to write checkpoint");
}

inline Blob read_blob(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), 4) || magic != kCheckpointMagic) throw DataError("not a checkpoint file");
  if (detail::get_u32(in) != kCheckpointVersion) throw DataError("unsupported checkpoint version");
  Blob blob;
  const std::uint32_t kind = detail::get_u32(in);
  if (kind > 2) throw DataError("unknown checkpoint kind");
  blob.kind = static_cast<BlobKind>(kind);
  const std::uint32_t count = detail::get_u32(in);
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint32_t rows = detail::get_u32(in);
    const std::uint32_t cols = detail::get_u32(in);
    Tensor t(rows, cols);
    for (auto& v : t.values()) v = detail::get_f64(in);
    blob.arrays.push_back(std::move(t));
  }
  return blob;
}

inline void save_blob(const std::string& path, const Blob& blob) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  write_blob(out, blob);
}

inline Blob load_blob(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  return read_blob(in);
}

}  // namespace lossforge
