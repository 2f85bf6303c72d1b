#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "binio.hpp"
#include "errors.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace rmn {

// Named trainable tensors. Enumeration follows registration order, so two
// runs that register the same names in the same order get identical
// initialization and identical checkpoint layout.
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0) : seed_(seed), rng_(Rng::derive(seed, 0x9a7a)) {}

  std::uint64_t seed() const { return seed_; }

  // Uniform(-bound, bound) with bound = 1/sqrt(fan_in); the usual small-net
  // default. fan_in = 0 means zero-fill (biases). The returned Tensor is a
  // handle sharing storage with the store's entry.
  Tensor create(const std::string& name, Shape shape, std::size_t fan_in) {
    if (index_.count(name)) throw ValueError("parameter '" + name + "' registered twice");
    Tensor t(std::move(shape), 0.0, true);
    if (fan_in > 0) {
      const real bound = 1.0 / std::sqrt(static_cast<real>(fan_in));
      for (auto& v : t.data()) v = rng_.uniform(-bound, bound);
    }
    index_.emplace(name, entries_.size());
    entries_.emplace_back(name, t);
    return t;
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Tensor get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ValueError("unknown parameter '" + name + "'");
    return entries_[it->second].second;
  }

  std::size_t size() const { return entries_.size(); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.first);
    return out;
  }

  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.second);
    return out;
  }

  std::size_t num_scalars() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.second.zero_grad();
  }

  // ---- checkpoint file ----
  // "RMNC" | version u32 | count u32 | per entry:
  //   name_len u16 | name bytes | rank u8 | dims u32 x rank | f32 payload (LE)
  static constexpr std::uint32_t kVersion = 1;

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    binio::write_bytes(os, "RMNC", 4);
    binio::write_u32(os, kVersion);
    binio::write_u32(os, static_cast<std::uint32_t>(entries_.size()));
    for (const auto& [name, t] : entries_) {
      if (name.size() > 0xFFFF) throw IoError("parameter name too long: " + name);
      binio::write_u16(os, static_cast<std::uint16_t>(name.size()));
      binio::write_bytes(os, name.data(), name.size());
      binio::write_u8(os, static_cast<std::uint8_t>(t.rank()));
      for (std::size_t d : t.shape()) binio::write_u32(os, static_cast<std::uint32_t>(d));
      for (real v : t.data()) binio::write_f32(os, static_cast<float>(v));
    }
    if (!os) throw IoError("write failure on '" + path + "'");
  }

  // Existing entries must match shape and get their values replaced; unknown
  // names are registered fresh (trainable). Values pass through f32, so a
  // save right after a load is byte-identical to the file just read.
  void load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "' for reading");
    binio::expect_magic(is, "RMNC", "parameter checkpoint");
    const std::uint32_t version = binio::read_u32(is, "checkpoint version");
    if (version != kVersion)
      throw IoError("unsupported checkpoint version " + std::to_string(version));
    const std::uint32_t count = binio::read_u32(is, "checkpoint entry count");
    for (std::uint32_t k = 0; k < count; ++k) {
      const std::uint16_t name_len = binio::read_u16(is, "parameter name length");
      std::string name(name_len, '\0');
      binio::read_bytes(is, name.data(), name_len, "parameter name");
      const std::uint8_t rank = binio::read_u8(is, "parameter rank");
      Shape shape(rank);
      for (auto& d : shape) d = binio::read_u32(is, "parameter dim");
      std::vector<real> values(numel(shape));
      for (auto& v : values) v = static_cast<real>(binio::read_f32(is, "parameter payload"));
      auto it = index_.find(name);
      if (it == index_.end()) {
        index_.emplace(name, entries_.size());
        entries_.emplace_back(name, Tensor(std::move(shape), std::move(values), true));
      } else {
        Tensor& t = entries_[it->second].second;
        if (t.shape() != shape)
          throw IoError("checkpoint shape mismatch for '" + name + "': file has " +
                        shape_str(shape) + ", store has " + shape_str(t.shape()));
        t.data() = std::move(values);
      }
    }
  }

 private:
  std::uint64_t seed_;
  Rng rng_;
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace rmn
