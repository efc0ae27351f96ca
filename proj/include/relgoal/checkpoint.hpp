#pragma once

#include "relgoal/tensor.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace relgoal::ckpt {

static_assert(std::endian::native == std::endian::little,
              "checkpoint container is defined little-endian");

// Binary container of named f64 tensors plus run metadata.
// Layout (all integers little-endian):
//   magic "RGCK" | u32 version=1 | u64 spec_hash | u64 seed | u64 step
//   u32 count, then per entry:
//     u32 name_len | name bytes | u32 rows | u32 cols | rows*cols f64 row-major
struct Metadata {
  std::uint64_t spec_hash = 0;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
};

namespace detail {

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace detail

inline void save(const std::string& path, const Metadata& meta,
                 const std::vector<std::pair<std::string, ad::Tensor>>& entries) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open for write: " + path);
  os.write("RGCK", 4);
  detail::put<std::uint32_t>(os, 1);
  detail::put<std::uint64_t>(os, meta.spec_hash);
  detail::put<std::uint64_t>(os, meta.seed);
  detail::put<std::uint64_t>(os, meta.step);
  detail::put<std::uint32_t>(os, std::uint32_t(entries.size()));
  for (const auto& [name, t] : entries) {
    detail::put<std::uint32_t>(os, std::uint32_t(name.size()));
    os.write(name.data(), std::streamsize(name.size()));
    detail::put<std::uint32_t>(os, std::uint32_t(t.rows()));
    detail::put<std::uint32_t>(os, std::uint32_t(t.cols()));
    const auto& m = t.value();
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) detail::put<double>(os, m(r, c));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

struct Loaded {
  Metadata meta;
  std::map<std::string, ad::Matrix> tensors;
};

inline Loaded load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "RGCK", 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  auto version = detail::get<std::uint32_t>(is);
  if (version != 1)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  Loaded out;
  out.meta.spec_hash = detail::get<std::uint64_t>(is);
  out.meta.seed = detail::get<std::uint64_t>(is);
  out.meta.step = detail::get<std::uint64_t>(is);
  auto count = detail::get<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name_len = detail::get<std::uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    auto rows = detail::get<std::uint32_t>(is);
    auto cols = detail::get<std::uint32_t>(is);
    ad::Matrix m(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r)
      for (std::uint32_t c = 0; c < cols; ++c) m(r, c) = detail::get<double>(is);
    out.tensors.emplace(std::move(name), std::move(m));
  }
  return out;
}

// Copies loaded values into an existing parameter set; throws on any
// missing name or shape mismatch.
inline void restore(const Loaded& loaded,
                    const std::vector<std::pair<std::string, ad::Tensor>>& entries) {
  for (const auto& [name, t] : entries) {
    auto it = loaded.tensors.find(name);
    if (it == loaded.tensors.end())
      throw std::runtime_error("checkpoint: missing tensor: " + name);
    if (it->second.rows() != t.rows() || it->second.cols() != t.cols())
      throw std::runtime_error("checkpoint: shape mismatch for " + name);
    const_cast<ad::Tensor&>(t).value() = it->second;
  }
}

}  // namespace relgoal::ckpt
