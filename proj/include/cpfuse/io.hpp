#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tensor.hpp"

// Binary layout: "CT3D", then I, J, K as little-endian uint64, then I*J*K
// little-endian IEEE-754 doubles in linearization order (k fastest).
// CSV layout: one "i,j,k,value" line per entry, 1-based indices, no header.

namespace cpfuse::io {

namespace detail {
inline void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}
inline std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw std::runtime_error("CT3D: truncated stream");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}
}  // namespace detail

inline void write_binary(std::ostream& os, const DenseTensor3& T) {
  os.write("CT3D", 4);
  for (int m = 0; m < 3; ++m) detail::put_u64(os, static_cast<std::uint64_t>(T.dim(m)));
  for (double v : T.data()) detail::put_u64(os, std::bit_cast<std::uint64_t>(v));
  if (!os) throw std::runtime_error("CT3D: write failed");
}

inline DenseTensor3 read_binary(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "CT3D", 4) != 0)
    throw std::runtime_error("CT3D: bad magic");
  std::array<Index, 3> dims{};
  for (auto& d : dims) {
    const auto v = detail::get_u64(is);
    if (v == 0 || v > static_cast<std::uint64_t>(std::numeric_limits<std::int32_t>::max()))
      throw std::runtime_error("CT3D: invalid dimension");
    d = static_cast<Index>(v);
  }
  std::vector<double> data(static_cast<std::size_t>(dims[0] * dims[1] * dims[2]));
  for (auto& v : data) v = std::bit_cast<double>(detail::get_u64(is));
  return DenseTensor3(dims, std::move(data));
}

inline void write_csv(std::ostream& os, const DenseTensor3& T) {
  os << std::setprecision(17);
  for (Index i = 0; i < T.dim(0); ++i)
    for (Index j = 0; j < T.dim(1); ++j)
      for (Index k = 0; k < T.dim(2); ++k)
        os << i + 1 << ',' << j + 1 << ',' << k + 1 << ',' << T(i, j, k) << '\n';
}

/// Dimensions are the maximal indices seen; entries not listed are zero.
inline DenseTensor3 read_csv(std::istream& is) {
  struct Entry {
    Index i, j, k;
    double v;
  };
  std::vector<Entry> entries;
  std::array<Index, 3> dims{0, 0, 0};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    Entry e{};
    char c1 = 0, c2 = 0, c3 = 0;
    if (!(ls >> e.i >> c1 >> e.j >> c2 >> e.k >> c3 >> e.v) || c1 != ',' || c2 != ',' ||
        c3 != ',' || e.i < 1 || e.j < 1 || e.k < 1)
      throw std::runtime_error("tensor CSV: malformed line " + std::to_string(lineno));
    dims[0] = std::max(dims[0], e.i);
    dims[1] = std::max(dims[1], e.j);
    dims[2] = std::max(dims[2], e.k);
    entries.push_back(e);
  }
  if (entries.empty()) throw std::runtime_error("tensor CSV: no entries");
  DenseTensor3 T(dims[0], dims[1], dims[2]);
  for (const auto& e : entries) T(e.i - 1, e.j - 1, e.k - 1) = e.v;
  return T;
}

/// Reads either format, chosen by the file's first bytes.
inline DenseTensor3 load_tensor(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  char magic[4] = {};
  f.read(magic, 4);
  f.clear();
  f.seekg(0);
  if (std::memcmp(magic, "CT3D", 4) == 0) return read_binary(f);
  return read_csv(f);
}

inline void save_tensor(const std::string& path, const DenseTensor3& T) {
  const bool csv = path.size() >= 4 && path.substr(path.size() - 4) == ".csv";
  std::ofstream f(path, csv ? std::ios::out : std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  if (csv)
    write_csv(f, T);
  else
    write_binary(f, T);
}

inline void write_matrix_csv(std::ostream& os, const Matrix& M) {
  os << std::setprecision(17);
  for (Index r = 0; r < M.rows(); ++r) {
    for (Index c = 0; c < M.cols(); ++c) os << (c ? "," : "") << M(r, c);
    os << '\n';
  }
}

}  // namespace cpfuse::io
