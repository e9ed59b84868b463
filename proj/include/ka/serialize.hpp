#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "ka/tensor.hpp"

namespace ka {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Raw little-endian tensor blocks: u64 count, then per tensor
// (u64 name length, name bytes, u64 rank, u64 dims..., f64 values...).
void write_tensors(std::ostream& out, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_tensors(std::istream& in);

// Standalone weights file: magic "KAWEIGHT", u32 version, tensor blocks.
void save_weights(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_weights(const std::filesystem::path& path);

// Copies values by name; every destination tensor must be present with an equal shape.
void assign_by_name(std::vector<NamedTensor>& dst, const std::vector<NamedTensor>& src, const std::string& what);

void write_u64(std::ostream& out, std::uint64_t v);
std::uint64_t read_u64(std::istream& in);

// 64-bit FNV-1a, hex encoded.
std::string fnv1a_hex(const std::string& bytes);

}  // namespace ka
