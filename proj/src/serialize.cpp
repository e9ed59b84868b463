#include "ka/serialize.hpp"

#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>

#include "ka/error.hpp"

namespace ka {

namespace {
constexpr char kWeightsMagic[8] = {'K', 'A', 'W', 'E', 'I', 'G', 'H', 'T'};
constexpr std::uint32_t kWeightsVersion = 1;
}  // namespace

void write_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  require(in.good(), "truncated archive");
  return v;
}

void write_tensors(std::ostream& out, const std::vector<NamedTensor>& tensors) {
  write_u64(out, tensors.size());
  for (const auto& [name, t] : tensors) {
    write_u64(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u64(out, t.rank());
    for (auto d : t.shape()) write_u64(out, d);
    out.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
}

std::vector<NamedTensor> read_tensors(std::istream& in) {
  const auto count = read_u64(in);
  require(count < (1u << 24), "archive: implausible tensor count");
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = read_u64(in);
    require(len < 4096, "archive: implausible name length");
    std::string name(len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(len));
    const auto rank = read_u64(in);
    require(rank <= 8, "archive: implausible rank");
    Shape shape(rank);
    for (auto& d : shape) d = read_u64(in);
    std::vector<double> values(numel(shape));
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
    require(in.good() || (in.eof() && values.empty()), "archive: truncated tensor '" + name + "'");
    out.push_back({std::move(name), Tensor::from(std::move(shape), std::move(values))});
  }
  return out;
}

void save_weights(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot write weights file " + path.string());
  out.write(kWeightsMagic, sizeof kWeightsMagic);
  out.write(reinterpret_cast<const char*>(&kWeightsVersion), sizeof kWeightsVersion);
  write_tensors(out, tensors);
  require(out.good(), "failed writing weights file " + path.string());
}

std::vector<NamedTensor> load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "weights file not found: " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  require(in.good() && std::memcmp(magic, kWeightsMagic, sizeof magic) == 0, "not a weights file: " + path.string());
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  require(version == kWeightsVersion, "unsupported weights version " + std::to_string(version));
  return read_tensors(in);
}

void assign_by_name(std::vector<NamedTensor>& dst, const std::vector<NamedTensor>& src, const std::string& what) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& nt : src) by_name[nt.name] = &nt.tensor;
  for (auto& [name, t] : dst) {
    auto it = by_name.find(name);
    require(it != by_name.end(), what + ": missing tensor '" + name + "'");
    require(it->second->shape() == t.shape(), what + ": shape mismatch for '" + name + "' (" +
                                                  to_string(it->second->shape()) + " vs " + to_string(t.shape()) + ")");
    auto d = t.mutable_data();
    auto s = it->second->data();
    std::copy(s.begin(), s.end(), d.begin());
  }
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[h & 0xF];
    h >>= 4;
  }
  return out;
}

}  // namespace ka
