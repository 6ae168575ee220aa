#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include "mkfuse/frontend.hpp"
#include "mkfuse/fuser.hpp"
#include "mkfuse/memimage.hpp"
#include "mkfuse/sim.hpp"

#ifndef MKFUSE_CORPUS_DIR
#define MKFUSE_CORPUS_DIR "corpus"
#endif

namespace mkfuse::testing {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline std::string corpus_path(const std::string& name) {
  return std::string(MKFUSE_CORPUS_DIR) + "/" + name;
}

inline Program load_corpus_program(const std::string& stem) {
  return parse_program(read_file(corpus_path(stem + ".mk")));
}

/// First kernel of a corpus file, with calls inlined.
inline Kernel load_corpus_kernel(const std::string& stem) {
  Program p = load_corpus_program(stem);
  return inline_calls(p.kernels.front(), p.functions);
}

/// Fully normalized corpus kernel (inline + lift + rename).
inline Kernel load_normalized(const std::string& stem, const std::string& prefix) {
  Program p = load_corpus_program(stem);
  return normalize_kernel(p.kernels.front(), p.functions, prefix);
}

inline MemoryImage corpus_image(const std::string& stem,
                                std::optional<uint64_t> seed = std::nullopt) {
  return MemoryImage::load(corpus_path("images/" + stem + ".img"), seed);
}

inline MemoryImage pair_image(const std::string& a, const std::string& b,
                              std::optional<uint64_t> seed = std::nullopt) {
  MemoryImage image = corpus_image(a, seed);
  if (a != b) image.merge(corpus_image(b, seed));
  return image;
}

}  // namespace mkfuse::testing
