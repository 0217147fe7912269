// Checkpoints: named typed arrays serialised as a text manifest (name,
// dtype, shape, byte offset into the blob) plus one flat little-endian
// binary blob. Round-trips are bit-exact in the stored dtype.
#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "vlac/tensor.hpp"

namespace vlac {

struct CheckpointEntry {
  std::string dtype;  // "f32" | "f64" | "u64"
  Shape shape;
  std::vector<double> f64;    // payload for f32/f64 (f32 already quantised)
  std::vector<uint64_t> u64;  // payload for u64
  int64_t count() const { return numel(shape); }
};

class Checkpoint {
 public:
  // stores a as f32 (quantised) or f64 depending on p
  void put_array(const std::string& name, const Array& a, Precision p = Precision::f64);
  void put_u64(const std::string& name, std::vector<uint64_t> v);

  bool has(const std::string& name) const { return entries_.count(name) != 0; }
  const CheckpointEntry& entry(const std::string& name) const;
  Array get_array(const std::string& name) const;          // f32 widens to double
  std::vector<uint64_t> get_u64(const std::string& name) const;
  const std::vector<std::string>& names() const { return order_; }

  // writes prefix + ".manifest" and prefix + ".blob"
  void save(const std::string& prefix) const;
  static Checkpoint load(const std::string& prefix);

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, CheckpointEntry> entries_;
};

}  // namespace vlac
