#pragma once

#include <array>
#include <optional>
#include <string>

#include "cpga/image_priors.hpp"
#include "cpga/ops.hpp"
#include "cpga/rng.hpp"

namespace cpga {

/// How a signed attention map is brought into the positive domain before
/// gamma correction inside a CPGA block.
enum class GammaNormalization { sigmoid, clamp };

/// Hyperparameters shared by the attention blocks.
struct BlockOptions {
    double eps_t = 1e-2;      // lower bound of the transmission map
    double eps_gamma = 0.1;   // lower bound of every predicted gamma
    std::size_t cbam_reduction = 4;
    std::size_t iaaf_hidden = 16;
    bool fuse_rgb = true;     // concatenate the input image to each block's input
    GammaNormalization gamma_normalization = GammaNormalization::sigmoid;
    std::array<double, 3> luminance = kPaperLuminance;
};

template <typename T>
class Conv2dLayer {
public:
    Conv2dLayer() = default;
    /// Weights and bias uniform in +-1/sqrt(fan_in). Padding defaults to k/2.
    Conv2dLayer(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
                Activation act, Rng& rng, std::optional<std::size_t> padding = std::nullopt);

    Tensor<T> forward(const Tensor<T>& x) const;
    void collect(ParameterList<T>& out, const std::string& prefix) const;

    Tensor<T>& weight() { return weight_; }
    Tensor<T>& bias() { return bias_; }
    std::size_t in_channels() const { return weight_.dim(1); }
    std::size_t out_channels() const { return weight_.dim(0); }
    std::size_t stride() const { return stride_; }

private:
    Tensor<T> weight_;
    Tensor<T> bias_;
    std::size_t stride_ = 1;
    std::size_t padding_ = 0;
    Activation act_ = Activation::none;
};

/// x + conv(relu(conv(x))), two 3x3 convs of equal width.
template <typename T>
class ResBlock {
public:
    ResBlock() = default;
    ResBlock(std::size_t channels, Rng& rng);
    Tensor<T> forward(const Tensor<T>& x) const;
    void collect(ParameterList<T>& out, const std::string& prefix) const;

private:
    Conv2dLayer<T> conv1_;
    Conv2dLayer<T> conv2_;
};

/// Residual block followed by channel-then-spatial attention (CBAM).
/// With stride 2 the first conv and a 1x1 projection shortcut downsample.
template <typename T>
class ResCBAM {
public:
    struct Output {
        Tensor<T> out;
        Tensor<T> channel_attention;  // [N,C,1,1]
        Tensor<T> spatial_attention;  // [N,1,H',W']
    };

    ResCBAM() = default;
    ResCBAM(std::size_t channels, std::size_t stride, std::size_t reduction, Rng& rng);
    Output forward_detailed(const Tensor<T>& x) const;
    Tensor<T> forward(const Tensor<T>& x) const { return forward_detailed(x).out; }
    void collect(ParameterList<T>& out, const std::string& prefix) const;

private:
    std::size_t stride_ = 1;
    Conv2dLayer<T> conv1_;
    Conv2dLayer<T> conv2_;
    Conv2dLayer<T> fc1_;
    Conv2dLayer<T> fc2_;
    Conv2dLayer<T> spatial_;
    std::optional<Conv2dLayer<T>> shortcut_;
};

/// Transmission estimator: maps features plus their channel priors to a
/// C-channel map in [eps_t, 1].
template <typename T>
class TEstimator {
public:
    TEstimator() = default;
    TEstimator(std::size_t in_channels, std::size_t width, double eps_t, Rng& rng);
    Tensor<T> forward(const Tensor<T>& x) const;
    void collect(ParameterList<T>& out, const std::string& prefix) const;
    double eps() const { return eps_t_; }

private:
    Conv2dLayer<T> in_;
    ResBlock<T> body_;
    Conv2dLayer<T> out_;
    double eps_t_ = 1e-2;
};

/// Mini encoder-decoder for the atmospheric-light map: one stride-2
/// downsample, a bottleneck conv, nearest upsample, concatenated skip.
template <typename T>
class AEstimator {
public:
    AEstimator() = default;
    AEstimator(std::size_t in_channels, std::size_t width, Rng& rng);
    Tensor<T> forward(const Tensor<T>& x) const;
    void collect(ParameterList<T>& out, const std::string& prefix) const;

private:
    Conv2dLayer<T> enc_;
    Conv2dLayer<T> down_;
    Conv2dLayer<T> mid_;
    Conv2dLayer<T> dec_;
};

/// Channel-Prior block: R = (L'(x) - A(x)) / t(x, priors) + A(x), then a
/// 1x1 fusion conv. Input and output are [N,C,H,W].
template <typename T>
class CPBlock {
public:
    struct Output {
        Tensor<T> out;
        Tensor<T> mapped;        // L'(x)
        Tensor<T> transmission;  // t
        Tensor<T> atmosphere;    // A~
        Tensor<T> attention;     // R before the fusion conv
    };

    CPBlock() = default;
    CPBlock(std::size_t width, const BlockOptions& options, Rng& rng);

    /// image is the [N,3,H,W] network input; required when fuse_rgb is set.
    Output forward_detailed(const Tensor<T>& f, const Tensor<T>* image) const;
    Tensor<T> forward(const Tensor<T>& f, const Tensor<T>* image) const { return forward_detailed(f, image).out; }
    void collect(ParameterList<T>& out, const std::string& prefix) const;

    std::size_t width() const { return width_; }
    /// Replaces the estimated transmission by a constant (diagnostics).
    void set_transmission_override(std::optional<T> value) { t_override_ = value; }

    Conv2dLayer<T>& mapping() { return mapping_; }
    Conv2dLayer<T>& fusion() { return fusion_; }
    TEstimator<T>& t_estimator() { return t_est_; }
    AEstimator<T>& a_estimator() { return a_est_; }

private:
    std::size_t width_ = 0;
    BlockOptions options_;
    Conv2dLayer<T> mapping_;
    TEstimator<T> t_est_;
    AEstimator<T> a_est_;
    Conv2dLayer<T> fusion_;
    std::optional<T> t_override_;
};

/// Intersection-aware fusion: r + r_gamma - intersection(r, r_gamma), the
/// intersection estimated by two 3x3 convs over the concatenated operands.
template <typename T>
class IAAF {
public:
    IAAF() = default;
    IAAF(std::size_t channels, std::size_t hidden, Rng& rng);
    Tensor<T> forward(const Tensor<T>& r, const Tensor<T>& r_gamma) const;
    Tensor<T> intersection(const Tensor<T>& r, const Tensor<T>& r_gamma) const;
    void collect(ParameterList<T>& out, const std::string& prefix) const;

    /// Zeroes the intersection estimator so it outputs exactly 0.
    void zero_intersection();

private:
    Conv2dLayer<T> conv1_;
    Conv2dLayer<T> conv2_;
};

/// CP block with plug-in gamma attention:
/// out = IAAF(R, R^gamma) + R, gamma per channel from global features.
template <typename T>
class CPGABlock {
public:
    struct Output {
        Tensor<T> out;
        Tensor<T> attention;  // R_att, the CP block output
        Tensor<T> gamma;      // [N,C,1,1]
        Tensor<T> corrected;  // R_att^gamma
    };

    CPGABlock() = default;
    CPGABlock(std::size_t width, std::size_t global_width, const BlockOptions& options, Rng& rng);

    /// global_features is [N,G] or [N,G,1,1].
    Output forward_detailed(const Tensor<T>& f, const Tensor<T>* image, const Tensor<T>& global_features) const;
    Tensor<T> forward(const Tensor<T>& f, const Tensor<T>* image, const Tensor<T>& global_features) const {
        return forward_detailed(f, image, global_features).out;
    }
    void collect(ParameterList<T>& out, const std::string& prefix) const;

    CPBlock<T>& cp() { return cp_; }
    IAAF<T>& iaaf() { return iaaf_; }
    void set_gamma_override(std::optional<T> value) { gamma_override_ = value; }

private:
    std::size_t width_ = 0;
    std::size_t global_width_ = 0;
    BlockOptions options_;
    CPBlock<T> cp_;
    Conv2dLayer<T> gamma_head_;
    IAAF<T> iaaf_;
    std::optional<T> gamma_override_;
};

#define CPGA_EXTERN_NN(T)               \
    extern template class Conv2dLayer<T>; \
    extern template class ResBlock<T>;    \
    extern template class ResCBAM<T>;     \
    extern template class TEstimator<T>;  \
    extern template class AEstimator<T>;  \
    extern template class CPBlock<T>;     \
    extern template class IAAF<T>;        \
    extern template class CPGABlock<T>;

CPGA_EXTERN_NN(float)
CPGA_EXTERN_NN(double)
#undef CPGA_EXTERN_NN

}  // namespace cpga
