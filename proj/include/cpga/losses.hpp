#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "cpga/image_priors.hpp"
#include "cpga/nn.hpp"

namespace cpga {

/// Weights of the four supervision terms. A zero weight disables a term.
struct LossSpec {
    double l1 = 1.0;
    double perceptual = 1.0;
    double hdr_l1 = 1.0;
    double ssim = 1.0;
    double mu = kDefaultMu;

    void validate() const;

    /// Parses "l1,ssim" or "l1:1,perceptual:0.5"; unnamed terms get weight 0.
    static LossSpec parse(std::string_view text);
    std::string to_string() const;

    /// Loss-combination ablation rows 'a'..'e': L1; +perceptual; +HDR-L1;
    /// L1+perceptual+SSIM; all four.
    static LossSpec ablation(char row);

    bool operator==(const LossSpec&) const = default;
};

struct SSIMParams {
    std::size_t window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 1.0;

    /// Normalized 2-D Gaussian, row-major window x window.
    std::vector<double> window_weights() const;
};

/// Fixed feature mapping used by the perceptual loss. Parameters are never
/// trained; identical inputs give identical features.
template <typename T>
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual std::vector<Tensor<T>> extract(const Tensor<T>& images) const = 0;
};

template <typename T>
class IdentityExtractor final : public FeatureExtractor<T> {
public:
    std::vector<Tensor<T>> extract(const Tensor<T>& images) const override { return {images}; }
};

/// Strided 3x3 conv + relu stages. The default is a seed-0 random pyramid
/// 3->16->32->64 standing in for a pretrained VGG16 trunk.
template <typename T>
class ConvPyramidExtractor final : public FeatureExtractor<T> {
public:
    struct Stage {
        Tensor<T> weight;
        Tensor<T> bias;
        std::size_t stride;
    };

    explicit ConvPyramidExtractor(std::vector<Stage> stages);
    static ConvPyramidExtractor random(std::uint64_t seed = 0, const std::vector<std::size_t>& widths = {16, 32, 64});
    /// Loads "stage<i>.weight" / "stage<i>.bias" tensors from a checkpoint-format
    /// file; each stage uses stride 2 and padding k/2.
    static ConvPyramidExtractor from_file(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    std::vector<Tensor<T>> extract(const Tensor<T>& images) const override;
    const std::vector<Stage>& stages() const { return stages_; }

private:
    std::vector<Stage> stages_;
};

template <typename T> Tensor<T> l1_loss(const Tensor<T>& yhat, const Tensor<T>& ygt);
template <typename T> Tensor<T> hdr_l1_loss(const Tensor<T>& yhat, const Tensor<T>& ygt, T mu = static_cast<T>(kDefaultMu));

/// Differentiable mean SSIM over valid window positions, per channel.
template <typename T> Tensor<T> ssim_index(const Tensor<T>& x, const Tensor<T>& y, const SSIMParams& p = {});
template <typename T> Tensor<T> ssim_loss(const Tensor<T>& yhat, const Tensor<T>& ygt, const SSIMParams& p = {});
template <typename T>
Tensor<T> perceptual_loss(const Tensor<T>& yhat, const Tensor<T>& ygt, const FeatureExtractor<T>& extractor);

template <typename T>
struct LossBreakdown {
    Tensor<T> total;
    // Unweighted values of the enabled terms; 0 for disabled ones.
    double l1 = 0, perceptual = 0, hdr_l1 = 0, ssim = 0;
};

template <typename T>
LossBreakdown<T> total_loss(const Tensor<T>& yhat, const Tensor<T>& ygt, const LossSpec& spec,
                            const FeatureExtractor<T>& extractor, const SSIMParams& ssim_params = {});

/// Peak signal-to-noise ratio for unit dynamic range; 100 dB when MSE < 1e-10.
template <typename T> double psnr(const Tensor<T>& x, const Tensor<T>& y);
/// Scalar SSIM metric (no graph is recorded).
template <typename T> double ssim(const Tensor<T>& x, const Tensor<T>& y, const SSIMParams& p = {});

inline constexpr double kPsnrCap = 100.0;

}  // namespace cpga
