#pragma once

#include <array>

#include "cpga/ops.hpp"

namespace cpga {

inline constexpr double kGammaInputFloor = 1e-6;  // clamp before r^gamma
inline constexpr double kDefaultMu = 5000.0;

/// Luminance weights for R, G, B as printed for the bright-channel prior
/// (G = 0.584, not the BT.601 0.587).
inline constexpr std::array<double, 3> kPaperLuminance{0.299, 0.584, 0.114};
inline constexpr std::array<double, 3> kBt601Luminance{0.299, 0.587, 0.114};

/// Per-pixel (max, min, mean) over channels of an NCHW map -> [N,3,H,W].
template <typename T> Tensor<T> channel_priors(const Tensor<T>& features);

/// Weighted channel sum of an RGB batch -> [N,1,H,W].
template <typename T>
Tensor<T> luminance(const Tensor<T>& rgb, const std::array<double, 3>& coefficients = kPaperLuminance);

/// r^gamma with r clamped to [1e-6, inf). gamma must be positive and
/// broadcastable against r (scalar, per-image, or per-channel).
template <typename T> Tensor<T> gamma_correct(const Tensor<T>& r, const Tensor<T>& gamma);

/// (l - a) / t + a. t must already be bounded away from zero.
template <typename T> Tensor<T> atsm_enhance(const Tensor<T>& l, const Tensor<T>& t, const Tensor<T>& a_tilde);

/// Odd-symmetric mu-law tone curve; maps 0 -> 0 and +-1 -> +-1.
template <typename T> Tensor<T> mu_law(const Tensor<T>& x, T mu = static_cast<T>(kDefaultMu));

}  // namespace cpga
