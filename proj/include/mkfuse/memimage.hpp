#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mkfuse/ast.hpp"

namespace mkfuse {

/// splitmix64 step; the basis for all deterministic data generation.
uint64_t splitmix64(uint64_t& state);

/// One named global array. Payload is stored as raw 32-bit cells typed by
/// elem_type.
struct MemArray {
  ScalarType elem_type = ScalarType::Int32;
  std::vector<int32_t> ints;
  std::vector<float> floats;

  int64_t length() const {
    return elem_type == ScalarType::Int32 ? int64_t(ints.size()) : int64_t(floats.size());
  }
};

struct MemScalar {
  ScalarType type = ScalarType::Int32;
  int32_t i = 0;
  float f = 0.0f;
};

/// Named global arrays plus scalar parameter bindings with deterministic
/// initial contents.
struct MemoryImage {
  std::map<std::string, MemArray> arrays;
  std::map<std::string, MemScalar> scalars;

  /// Text format, one entry per line:
  ///   array NAME (int32|float32) LEN zero
  ///   array NAME (int32|float32) LEN values V...
  ///   array NAME int32   LEN seed S range LO HI
  ///   array NAME float32 LEN seed S uniform LO HI
  ///   scalar NAME (int32|float32) VALUE
  /// seed_override mixes into every seeded entry.
  static MemoryImage load(const std::string& path,
                          std::optional<uint64_t> seed_override = std::nullopt);
  static MemoryImage parse(const std::string& text,
                           std::optional<uint64_t> seed_override = std::nullopt);

  /// Fails on an entry already present.
  void merge(const MemoryImage& other);

  /// Serializes current contents in `values` form.
  std::string serialize() const;

  /// FNV-1a 64 over a canonical byte stream of every array and scalar.
  uint64_t digest() const;
  std::string digest_hex() const;

  // Seeded fills usable directly from tests.
  void add_int_array(const std::string& name, int64_t len, uint64_t seed, int32_t lo,
                     int32_t hi);
  void add_float_array(const std::string& name, int64_t len, uint64_t seed, float lo,
                       float hi);
  void add_zero_array(const std::string& name, ScalarType type, int64_t len);
};

}  // namespace mkfuse
