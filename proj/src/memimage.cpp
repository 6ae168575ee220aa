#include "mkfuse/memimage.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mkfuse {

uint64_t splitmix64(uint64_t& state) {
  state += 0x9E3779B97F4A7C15ULL;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace {

uint64_t mix_seed(uint64_t file_seed, std::optional<uint64_t> override_seed) {
  if (!override_seed) return file_seed;
  uint64_t s = file_seed ^ (*override_seed * 0x9E3779B97F4A7C15ULL);
  return splitmix64(s);
}

float uniform_float(uint64_t bits, float lo, float hi) {
  float unit = float(bits >> 40) * (1.0f / 16777216.0f);  // 24-bit mantissa
  return lo + unit * (hi - lo);
}

std::string float_text(float v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
  return buf;
}

}  // namespace

void MemoryImage::add_int_array(const std::string& name, int64_t len, uint64_t seed,
                                int32_t lo, int32_t hi) {
  if (hi < lo) fail(ErrCode::InvalidArgument, "bad range for array '" + name + "'");
  MemArray arr;
  arr.elem_type = ScalarType::Int32;
  arr.ints.resize(size_t(len));
  uint64_t state = seed;
  uint64_t span = uint64_t(int64_t(hi) - lo) + 1;
  for (auto& v : arr.ints) v = int32_t(lo + int64_t(splitmix64(state) % span));
  if (!arrays.emplace(name, std::move(arr)).second)
    fail(ErrCode::DuplicateName, "array '" + name + "' already present");
}

void MemoryImage::add_float_array(const std::string& name, int64_t len, uint64_t seed,
                                  float lo, float hi) {
  MemArray arr;
  arr.elem_type = ScalarType::Float32;
  arr.floats.resize(size_t(len));
  uint64_t state = seed;
  for (auto& v : arr.floats) v = uniform_float(splitmix64(state), lo, hi);
  if (!arrays.emplace(name, std::move(arr)).second)
    fail(ErrCode::DuplicateName, "array '" + name + "' already present");
}

void MemoryImage::add_zero_array(const std::string& name, ScalarType type, int64_t len) {
  MemArray arr;
  arr.elem_type = type;
  if (type == ScalarType::Int32)
    arr.ints.assign(size_t(len), 0);
  else
    arr.floats.assign(size_t(len), 0.0f);
  if (!arrays.emplace(name, std::move(arr)).second)
    fail(ErrCode::DuplicateName, "array '" + name + "' already present");
}

MemoryImage MemoryImage::parse(const std::string& text, std::optional<uint64_t> seed_override) {
  MemoryImage image;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream row(line);
    std::string kind;
    if (!(row >> kind)) continue;
    SourcePos pos{lineno, 1};
    auto bad = [&](const std::string& msg) { fail(ErrCode::Io, msg, pos); };

    if (kind == "scalar") {
      std::string name, type;
      if (!(row >> name >> type)) bad("scalar needs: name type value");
      MemScalar s;
      if (type == "int32") {
        s.type = ScalarType::Int32;
        long long v;
        if (!(row >> v)) bad("scalar value missing");
        s.i = int32_t(v);
      } else if (type == "float32") {
        s.type = ScalarType::Float32;
        if (!(row >> s.f)) bad("scalar value missing");
      } else {
        bad("scalar type must be int32 or float32");
      }
      if (!image.scalars.emplace(name, s).second) bad("duplicate scalar '" + name + "'");
      continue;
    }
    if (kind != "array") bad("expected 'array' or 'scalar', got '" + kind + "'");

    std::string name, type, mode;
    int64_t len = 0;
    if (!(row >> name >> type >> len >> mode)) bad("array needs: name type length mode");
    if (len <= 0) bad("array length must be positive");
    bool is_int = type == "int32";
    if (!is_int && type != "float32") bad("array type must be int32 or float32");

    if (mode == "zero") {
      image.add_zero_array(name, is_int ? ScalarType::Int32 : ScalarType::Float32, len);
    } else if (mode == "values") {
      MemArray arr;
      arr.elem_type = is_int ? ScalarType::Int32 : ScalarType::Float32;
      for (int64_t i = 0; i < len; ++i) {
        if (is_int) {
          long long v;
          if (!(row >> v)) bad("array '" + name + "' expects " + std::to_string(len) + " values");
          arr.ints.push_back(int32_t(v));
        } else {
          float v;
          if (!(row >> v)) bad("array '" + name + "' expects " + std::to_string(len) + " values");
          arr.floats.push_back(v);
        }
      }
      if (!image.arrays.emplace(name, std::move(arr)).second)
        bad("duplicate array '" + name + "'");
    } else if (mode == "seed") {
      uint64_t seed;
      std::string dist;
      if (!(row >> seed >> dist)) bad("seed entry needs: seed N (range|uniform) LO HI");
      seed = mix_seed(seed, seed_override);
      if (is_int) {
        if (dist != "range") bad("int32 arrays use 'range LO HI'");
        long long lo, hi;
        if (!(row >> lo >> hi)) bad("range bounds missing");
        image.add_int_array(name, len, seed, int32_t(lo), int32_t(hi));
      } else {
        if (dist != "uniform") bad("float32 arrays use 'uniform LO HI'");
        float lo, hi;
        if (!(row >> lo >> hi)) bad("uniform bounds missing");
        image.add_float_array(name, len, seed, lo, hi);
      }
    } else {
      bad("unknown array mode '" + mode + "'");
    }
  }
  return image;
}

MemoryImage MemoryImage::load(const std::string& path, std::optional<uint64_t> seed_override) {
  std::ifstream in(path);
  if (!in) fail(ErrCode::Io, "cannot open memory image '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str(), seed_override);
}

void MemoryImage::merge(const MemoryImage& other) {
  for (const auto& [name, arr] : other.arrays)
    if (!arrays.emplace(name, arr).second)
      fail(ErrCode::DuplicateName, "array '" + name + "' present in both images");
  for (const auto& [name, s] : other.scalars)
    if (!scalars.emplace(name, s).second)
      fail(ErrCode::DuplicateName, "scalar '" + name + "' present in both images");
}

std::string MemoryImage::serialize() const {
  std::string out;
  for (const auto& [name, arr] : arrays) {
    out += "array " + name + " ";
    out += arr.elem_type == ScalarType::Int32 ? "int32 " : "float32 ";
    out += std::to_string(arr.length()) + " values";
    if (arr.elem_type == ScalarType::Int32) {
      for (int32_t v : arr.ints) out += " " + std::to_string(v);
    } else {
      for (float v : arr.floats) out += " " + float_text(v);
    }
    out += "\n";
  }
  for (const auto& [name, s] : scalars) {
    out += "scalar " + name + " ";
    if (s.type == ScalarType::Int32)
      out += "int32 " + std::to_string(s.i);
    else
      out += "float32 " + float_text(s.f);
    out += "\n";
  }
  return out;
}

uint64_t MemoryImage::digest() const {
  uint64_t h = 14695981039346656037ULL;
  auto eat = [&](const void* data, size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  auto eat_u32 = [&](uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    eat(b, 4);
  };
  for (const auto& [name, arr] : arrays) {
    eat(name.data(), name.size());
    eat("\0", 1);
    eat_u32(arr.elem_type == ScalarType::Int32 ? 0u : 1u);
    eat_u32(uint32_t(arr.length()));
    if (arr.elem_type == ScalarType::Int32) {
      for (int32_t v : arr.ints) eat_u32(uint32_t(v));
    } else {
      for (float v : arr.floats) {
        uint32_t bits;
        std::memcpy(&bits, &v, 4);
        eat_u32(bits);
      }
    }
  }
  for (const auto& [name, s] : scalars) {
    eat(name.data(), name.size());
    eat("\0", 1);
    if (s.type == ScalarType::Int32) {
      eat_u32(0u);
      eat_u32(uint32_t(s.i));
    } else {
      eat_u32(1u);
      uint32_t bits;
      std::memcpy(&bits, &s.f, 4);
      eat_u32(bits);
    }
  }
  return h;
}

std::string MemoryImage::digest_hex() const {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(digest()));
  return buf;
}

}  // namespace mkfuse
