#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "mer/tensor.hpp"

namespace mer {

// TSR layout: "TSR1", u8 rank, rank x u32 LE dims, prod(dims) x f32 LE values.

void write_tsr(std::ostream& out, const Tensor& t);
std::vector<unsigned char> encode_tsr(const Tensor& t);
void save_tsr(const std::filesystem::path& path, const Tensor& t);

/// Decodes one TSR record starting at `offset`, advancing it past the record.
/// Errors report the absolute byte offset within `bytes`.
Tensor decode_tsr(const std::vector<unsigned char>& bytes, std::size_t& offset);
Tensor load_tsr(const std::filesystem::path& path);

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes);

}  // namespace mer
