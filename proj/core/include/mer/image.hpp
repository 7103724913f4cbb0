#pragma once

#include <filesystem>
#include <vector>

#include "mer/tensor.hpp"

namespace mer {

/// Reads a binary P5 PGM with maxval 255 as a [1,H,W] tensor in [0,1].
Tensor load_pgm(const std::filesystem::path& path);
Tensor decode_pgm(const std::vector<unsigned char>& bytes);
/// Writes a [1,H,W] (or [H,W]) tensor as P5, clamping to [0,1] and rounding
/// to the nearest of 256 levels.
void save_pgm(const std::filesystem::path& path, const Tensor& img);
std::vector<unsigned char> encode_pgm(const Tensor& img);

/// Bilinear resampling of [C,H,W] with half-pixel centres
/// (src = (i + 0.5) * in/out - 0.5) and clamped borders.
Tensor resize_bilinear(const Tensor& img, std::size_t out_h, std::size_t out_w);

/// Splits [1,H,W] into n*n tiles, row-major from the top-left, stacked as
/// [n*n, H/n, W/n].
Tensor grid_split(const Tensor& frame, std::size_t n);
/// Inverse of grid_split.
Tensor grid_merge(const Tensor& tiles, std::size_t n);
/// grid_split followed by a bilinear resize of every tile to out_size.
Tensor grid_patches(const Tensor& frame, std::size_t n = 4, std::size_t out_size = 48);

}  // namespace mer
