#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dsurf/autodiff.hpp"

namespace dsurf {

/// Versioned binary container: a JSON metadata header followed by named
/// raw little-endian tensors.
///
///   bytes 0..7   magic "DSURFCK1"
///   u32          format version
///   u64          header length L
///   L bytes      JSON header {"meta": ..., "tensors": [{name, dtype, rows, cols, offset}]}
///   ...          tensor payload, concatenated in header order
class Checkpoint {
 public:
  static constexpr std::uint32_t kVersion = 1;

  nlohmann::json meta = nlohmann::json::object();

  template <typename T>
  void put(const std::string& name, const ad::Matrix<T>& m);
  /// Reads a tensor, converting from the stored precision if needed.
  template <typename T>
  ad::Matrix<T> get(const std::string& name) const;
  bool contains(const std::string& name) const { return tensors_.count(name) > 0; }
  std::vector<std::string> names() const;

  std::string serialize() const;
  static Checkpoint deserialize(const std::string& bytes);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  struct Blob {
    std::string dtype;  // "f32" | "f64"
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    std::string bytes;
  };
  std::map<std::string, Blob> tensors_;
};

}  // namespace dsurf
