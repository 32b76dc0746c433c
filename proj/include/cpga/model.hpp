#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cpga/nn.hpp"

namespace cpga {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class InputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Architecture hyperparameters. The default widths (16/16, IAAF hidden 16,
/// global depth 3) put the full model at ~52k parameters, inside the
/// 40k-80k band around the 0.060 M reference.
struct ModelConfig {
    std::size_t n_cp_blocks = 2;
    std::size_t base_width = 16;
    std::size_t global_width = 16;
    std::size_t global_depth = 3;
    std::size_t cbam_reduction = 4;
    std::size_t iaaf_hidden = 16;  // per-block intersection estimator width
    std::size_t image_iaaf_hidden = 16;
    bool enable_global_branch = true;
    bool enable_cpga_blocks = true;
    bool fuse_rgb = true;
    std::array<double, 3> luminance_coefficients = kPaperLuminance;
    double eps_t = 1e-2;
    double eps_gamma = 0.1;
    GammaNormalization gamma_normalization = GammaNormalization::sigmoid;
    std::uint64_t seed = 0;

    void validate() const;
    BlockOptions block_options() const;

    /// Systematic-design ablation rows: 'a' local branch only, 'b' plus the
    /// global gamma branch, 'c' plus CPGA blocks (the default model).
    static ModelConfig ablation(char row);

    bool operator==(const ModelConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Half-resolution gamma estimator: preprocessing conv, stride-2 ResCBAM
/// plus a pooled residual from the preprocessing layer, a conv stack, global
/// average pooling, and a positive scalar gamma head.
template <typename T>
class GlobalBranch {
public:
    struct Output {
        Tensor<T> features;  // [N,G,1,1]
        Tensor<T> gamma;     // [N,1,1,1]
    };

    GlobalBranch() = default;
    GlobalBranch(std::size_t width, std::size_t depth, std::size_t reduction, double eps_gamma, Rng& rng);
    Output forward(const Tensor<T>& image) const;
    void collect(ParameterList<T>& out, const std::string& prefix) const;

private:
    Conv2dLayer<T> pre_;
    ResCBAM<T> down_;
    std::vector<Conv2dLayer<T>> stack_;
    Conv2dLayer<T> head_;
    double eps_gamma_ = 0.1;
};

template <typename T>
class CPGANet {
public:
    struct Output {
        Tensor<T> image;            // final output, clamped to [0,1]
        Tensor<T> unclamped;        // final output before the clamp
        Tensor<T> local;            // R from the local branch
        Tensor<T> gamma;            // [N,1,1,1]; undefined without the global branch
        Tensor<T> global_features;  // [N,G,1,1]; undefined without the global branch
    };

    explicit CPGANet(const ModelConfig& config);
    CPGANet(const CPGANet&) = delete;
    CPGANet& operator=(const CPGANet&) = delete;
    CPGANet(CPGANet&&) noexcept = default;
    CPGANet& operator=(CPGANet&&) noexcept = default;

    /// img: [N,3,H,W] with even H, W >= 16 and values in [-0.01, 1.01].
    Output forward_detailed(const Tensor<T>& img) const;
    Tensor<T> forward(const Tensor<T>& img) const { return forward_detailed(img).image; }

    ParameterList<T> parameters() const;
    const ModelConfig& config() const { return config_; }

    std::vector<CPBlock<T>>& cp_blocks() { return cp_blocks_; }
    std::vector<CPGABlock<T>>& cpga_blocks() { return cpga_blocks_; }

private:
    ModelConfig config_;
    Conv2dLayer<T> stem_;
    std::vector<CPBlock<T>> cp_blocks_;
    std::vector<CPGABlock<T>> cpga_blocks_;
    Conv2dLayer<T> out_;
    std::optional<GlobalBranch<T>> global_;
    std::optional<IAAF<T>> fusion_;
};

void validate_model_input_shape(const Shape& shape);

template <typename T>
std::size_t count_parameters(const CPGANet<T>& model) {
    return count_elements(model.parameters());
}

/// Parameter totals grouped by top-level module ("stem", "blocks.0", ...).
template <typename T>
std::vector<std::pair<std::string, std::size_t>> parameter_breakdown(const CPGANet<T>& model);

struct FlopReport {
    std::uint64_t total = 0;
    std::map<std::string, std::uint64_t> by_module;
};

/// FLOPs of one forward pass on a single h x w image (2 per MAC for convs,
/// one per output element for elementwise ops). No arithmetic is performed.
template <typename T>
FlopReport count_flops(const CPGANet<T>& model, std::size_t h, std::size_t w);

extern template class GlobalBranch<float>;
extern template class GlobalBranch<double>;
extern template class CPGANet<float>;
extern template class CPGANet<double>;

}  // namespace cpga
