#include "mer/params.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>

#include "mer/error.hpp"
#include "mer/tsr.hpp"

namespace mer {

Tensor ParamStore::add(const std::string& name, Shape shape, Init init, std::mt19937_64& rng, std::size_t fan_in) {
  if (params_.count(name)) throw ContractError("duplicate parameter name " + name);
  if (name.size() > UINT16_MAX) throw ContractError("parameter name too long");
  Tensor t;
  if (init == Init::Zeros) {
    t = Tensor::zeros(shape, true);
  } else {
    if (fan_in == 0) {
      fan_in = 1;
      for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
    }
    t = Tensor::randn(shape, rng, static_cast<float>(std::sqrt(2.0 / static_cast<double>(fan_in))), true);
  }
  params_.emplace(name, t);
  return t;
}

Tensor ParamStore::replace(const std::string& name, Shape shape, Init init, std::mt19937_64& rng) {
  if (!params_.erase(name)) throw ContractError("cannot replace unknown parameter " + name);
  return add(name, std::move(shape), init, rng);
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter " + name);
  return it->second;
}

std::size_t ParamStore::scalar_count() const { return scalar_count(""); }

std::size_t ParamStore::scalar_count(const std::string& prefix) const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_)
    if (name.compare(0, prefix.size(), prefix) == 0) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

void ParamStore::copy_values_from(const ParamStore& other) {
  if (other.params_.size() != params_.size()) throw ContractError("parameter sets differ in size");
  for (auto& [name, t] : params_) {
    const Tensor& src = other.at(name);
    if (src.shape() != t.shape()) throw DimensionError("parameter " + name + " shape mismatch");
    auto dst = t.mutable_data();
    std::copy(src.data().begin(), src.data().end(), dst.begin());
  }
}

bool ParamStore::bit_equal_to(const ParamStore& other) const {
  if (other.params_.size() != params_.size()) return false;
  for (const auto& [name, t] : params_) {
    if (!other.contains(name) || !bit_equal(t, other.at(name))) return false;
  }
  return true;
}

std::vector<unsigned char> ParamStore::encode() const {
  std::vector<unsigned char> buf(4);
  const auto count = static_cast<std::uint32_t>(params_.size());
  std::memcpy(buf.data(), &count, 4);
  for (const auto& [name, t] : params_) {
    const auto len = static_cast<std::uint16_t>(name.size());
    unsigned char raw[2];
    std::memcpy(raw, &len, 2);
    buf.insert(buf.end(), raw, raw + 2);
    buf.insert(buf.end(), name.begin(), name.end());
    auto payload = encode_tsr(t);
    buf.insert(buf.end(), payload.begin(), payload.end());
  }
  return buf;
}

void ParamStore::save(const std::filesystem::path& path) const { write_file_bytes(path, encode()); }

void ParamStore::decode_into(const std::vector<unsigned char>& bytes) {
  std::size_t offset = 0;
  if (bytes.size() < 4) throw ParseError("checkpoint: truncated entry count", 0);
  std::uint32_t count;
  std::memcpy(&count, bytes.data(), 4);
  offset = 4;
  if (count != params_.size())
    throw ParseError("checkpoint holds " + std::to_string(count) + " entries, model has " +
                         std::to_string(params_.size()),
                     0);
  std::map<std::string, Tensor> loaded;
  for (std::uint32_t i = 0; i < count; ++i) {
    if (bytes.size() - offset < 2) throw ParseError("checkpoint: truncated name length", offset);
    std::uint16_t len;
    std::memcpy(&len, bytes.data() + offset, 2);
    offset += 2;
    if (bytes.size() - offset < len) throw ParseError("checkpoint: truncated name", offset);
    std::string name(reinterpret_cast<const char*>(bytes.data() + offset), len);
    const std::size_t name_at = offset;
    offset += len;
    Tensor t = decode_tsr(bytes, offset);
    auto it = params_.find(name);
    if (it == params_.end()) throw ParseError("checkpoint: unknown parameter " + name, name_at);
    if (it->second.shape() != t.shape()) throw ParseError("checkpoint: shape mismatch for " + name, name_at);
    if (!loaded.emplace(name, std::move(t)).second)
      throw ParseError("checkpoint: duplicate parameter " + name, name_at);
  }
  if (offset != bytes.size()) throw ParseError("checkpoint: trailing bytes", offset);
  for (auto& [name, t] : params_) {
    auto dst = t.mutable_data();
    auto src = loaded.at(name).data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

void ParamStore::load(const std::filesystem::path& path) { decode_into(read_file_bytes(path)); }

}  // namespace mer
