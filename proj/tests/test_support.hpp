#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "amd/dsl.hpp"

namespace amd::test {

inline std::filesystem::path source_dir() { return AMD_SOURCE_DIR; }

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("amd_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// Random well-formed source text, independent of the symbolic proposer.
/// Covers lets, conditionals, powers, negation, indexing and module aliases.
class SourceGenerator {
 public:
  SourceGenerator(dsl::HeuristicSignature sig, std::uint64_t seed) : sig_(sig), rng_(seed) {}

  std::string program() {
    const std::string param(sig_.default_param());
    std::string out = "def heuristic(" + param + "):\n";
    locals_.clear();
    const int n_lets = static_cast<int>(below(3));
    for (int i = 0; i < n_lets; ++i) {
      const std::string name = "t" + std::to_string(i);
      out += "    " + name + " = " + scalar(3) + "\n";
      locals_.push_back(name);
    }
    out += "    return " + result() + "\n";
    return out;
  }

 private:
  std::size_t below(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }

  std::string number() {
    static const char* pool[] = {"0", "1", "0.5", "2", "0.25", "3.75", "1e-3", "10", "0.001"};
    return pool[below(std::size(pool))];
  }

  std::string input_scalar() {
    const std::string param(sig_.default_param());
    if (!sig_.vector_input()) return param;
    return param + "[" + std::to_string(below(sig_.arity)) + "]";
  }

  std::string leaf() {
    const std::size_t u = below(10);
    if (u < 3) return number();
    if (u < 4 && !locals_.empty()) return locals_[below(locals_.size())];
    if (u < 6 && sig_.vector_input()) {
      static const char* aggs[] = {"min", "np.max", "sum", "numpy.mean", "median", "len"};
      return std::string(aggs[below(std::size(aggs))]) + "(" + std::string(sig_.default_param()) + ")";
    }
    return input_scalar();
  }

  std::string scalar(int depth) {
    if (depth <= 0 || below(4) == 0) return leaf();
    switch (below(9)) {
      case 0: return "(" + scalar(depth - 1) + " + " + scalar(depth - 1) + ")";
      case 1: return "(" + scalar(depth - 1) + " - " + scalar(depth - 1) + ")";
      case 2: return scalar(depth - 1) + " * " + scalar(depth - 1);
      case 3: return "(" + scalar(depth - 1) + ") / (" + scalar(depth - 1) + " + 1)";
      case 4: return "-" + scalar(depth - 1);
      case 5: return "(" + scalar(depth - 1) + ") ** 2";
      case 6: {
        static const char* fns[] = {"abs", "math.exp", "sqrt", "sigmoid", "np.abs", "log"};
        return std::string(fns[below(std::size(fns))]) + "(" + scalar(depth - 1) + ")";
      }
      case 7: {
        static const char* cmp[] = {"<", "<=", ">", ">=", "==", "!="};
        return "(" + scalar(depth - 1) + " if " + scalar(depth - 1) + " " + cmp[below(6)] + " " +
               scalar(depth - 1) + " else " + scalar(depth - 1) + ")";
      }
      default: return "max(" + scalar(depth - 1) + ", " + scalar(depth - 1) + ")";
    }
  }

  std::string result() {
    if (!sig_.vector_output()) return scalar(4);
    std::string out = "[";
    for (std::size_t k = 0; k < sig_.output_length(); ++k) {
      if (k > 0) out += ", ";
      out += scalar(3);
    }
    return out + "]";
  }

  dsl::HeuristicSignature sig_;
  std::mt19937_64 rng_;
  std::vector<std::string> locals_;
};

}  // namespace amd::test
