#pragma once

#include <filesystem>
#include <stdexcept>

#include "cpga/tensor.hpp"

namespace cpga {

class PngError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class UnsupportedBitDepthError : public PngError {
public:
    using PngError::PngError;
};

class RangeError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Decodes an 8- or 16-bit PNG into [1,3,H,W] with values integer/maxval.
/// Alpha is dropped; grayscale is replicated to three channels; palette
/// images are expanded to RGB.
template <typename T> Tensor<T> load_png(const std::filesystem::path& path);

/// Writes [1,3,H,W] (or [3,H,W]) in [0,1] as 8-bit RGB, round(v * 255)
/// with halves rounded up.
template <typename T> void save_png(const Tensor<T>& image, const std::filesystem::path& path);

}  // namespace cpga
