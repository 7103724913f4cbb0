#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "mer/tensor.hpp"

namespace mer {

enum class Init { HeNormal, Zeros };

/// Named trainable leaves. Iteration order is lexicographic by name, which is
/// also the order of the on-disk checkpoint.
class ParamStore {
 public:
  /// He-normal uses fan_in = product of all dims but the first unless
  /// `fan_in` is given.
  Tensor add(const std::string& name, Shape shape, Init init, std::mt19937_64& rng, std::size_t fan_in = 0);

  /// Re-creates an existing entry with a new shape and fresh initialisation.
  Tensor replace(const std::string& name, Shape shape, Init init, std::mt19937_64& rng);

  const std::map<std::string, Tensor>& entries() const { return params_; }
  std::map<std::string, Tensor>& mutable_entries() { return params_; }
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  std::size_t scalar_count() const;
  /// Sum of scalar counts over names starting with `prefix`.
  std::size_t scalar_count(const std::string& prefix) const;

  void zero_grad();
  /// Copies values (not gradients) by name; names and shapes must match.
  void copy_values_from(const ParamStore& other);
  bool bit_equal_to(const ParamStore& other) const;

  // Archive: u32 count, then per entry u16 name length, UTF-8 name, TSR payload.
  std::vector<unsigned char> encode() const;
  void save(const std::filesystem::path& path) const;
  /// Loads values into existing entries. Every stored name must exist here
  /// with the same shape and every entry here must be present in the file.
  void load(const std::filesystem::path& path);
  void decode_into(const std::vector<unsigned char>& bytes);

 private:
  std::map<std::string, Tensor> params_;
};

}  // namespace mer
