#include "cpga/model.hpp"

namespace cpga {

void ModelConfig::validate() const {
    if (base_width < 1 || global_width < 1 || iaaf_hidden < 1 || image_iaaf_hidden < 1)
        throw ConfigError("model widths must be >= 1");
    if (cbam_reduction < 1) throw ConfigError("cbam_reduction must be >= 1");
    if (enable_cpga_blocks && !enable_global_branch)
        throw ConfigError("CPGA blocks need the global branch (enable_global_branch=true)");
    if (!(eps_t > 0.0 && eps_t < 1.0)) throw ConfigError("eps_t must lie in (0, 1)");
    if (!(eps_gamma > 0.0)) throw ConfigError("eps_gamma must be positive");
}

BlockOptions ModelConfig::block_options() const {
    BlockOptions o;
    o.eps_t = eps_t;
    o.eps_gamma = eps_gamma;
    o.cbam_reduction = cbam_reduction;
    o.iaaf_hidden = iaaf_hidden;
    o.fuse_rgb = fuse_rgb;
    o.gamma_normalization = gamma_normalization;
    o.luminance = luminance_coefficients;
    return o;
}

ModelConfig ModelConfig::ablation(char row) {
    ModelConfig c;
    switch (row) {
        case 'a':
            c.enable_global_branch = false;
            c.enable_cpga_blocks = false;
            break;
        case 'b':
            c.enable_cpga_blocks = false;
            break;
        case 'c':
            break;
        default:
            throw ConfigError(std::string("unknown ablation row '") + row + "' (expected a, b or c)");
    }
    return c;
}

nlohmann::json to_json(const ModelConfig& c) {
    nlohmann::json j;
    j["n_cp_blocks"] = c.n_cp_blocks;
    j["base_width"] = c.base_width;
    j["global_width"] = c.global_width;
    j["global_depth"] = c.global_depth;
    j["cbam_reduction"] = c.cbam_reduction;
    j["iaaf_hidden"] = c.iaaf_hidden;
    j["image_iaaf_hidden"] = c.image_iaaf_hidden;
    j["enable_global_branch"] = c.enable_global_branch;
    j["enable_cpga_blocks"] = c.enable_cpga_blocks;
    j["fuse_rgb"] = c.fuse_rgb;
    j["luminance_coefficients"] = c.luminance_coefficients;
    j["eps_t"] = c.eps_t;
    j["eps_gamma"] = c.eps_gamma;
    j["gamma_normalization"] = c.gamma_normalization == GammaNormalization::sigmoid ? "sigmoid" : "clamp";
    j["seed"] = c.seed;
    return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("model config must be a JSON object");
    ModelConfig c;
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "n_cp_blocks") c.n_cp_blocks = value.get<std::size_t>();
            else if (key == "base_width") c.base_width = value.get<std::size_t>();
            else if (key == "global_width") c.global_width = value.get<std::size_t>();
            else if (key == "global_depth") c.global_depth = value.get<std::size_t>();
            else if (key == "cbam_reduction") c.cbam_reduction = value.get<std::size_t>();
            else if (key == "iaaf_hidden") c.iaaf_hidden = value.get<std::size_t>();
            else if (key == "image_iaaf_hidden") c.image_iaaf_hidden = value.get<std::size_t>();
            else if (key == "enable_global_branch") c.enable_global_branch = value.get<bool>();
            else if (key == "enable_cpga_blocks") c.enable_cpga_blocks = value.get<bool>();
            else if (key == "fuse_rgb") c.fuse_rgb = value.get<bool>();
            else if (key == "luminance_coefficients") c.luminance_coefficients = value.get<std::array<double, 3>>();
            else if (key == "eps_t") c.eps_t = value.get<double>();
            else if (key == "eps_gamma") c.eps_gamma = value.get<double>();
            else if (key == "gamma_normalization") {
                const auto s = value.get<std::string>();
                if (s == "sigmoid") c.gamma_normalization = GammaNormalization::sigmoid;
                else if (s == "clamp") c.gamma_normalization = GammaNormalization::clamp;
                else throw ConfigError("gamma_normalization must be 'sigmoid' or 'clamp'");
            } else if (key == "seed") c.seed = value.get<std::uint64_t>();
            else throw ConfigError("unknown model config key '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad model config: ") + e.what());
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------

template <typename T>
GlobalBranch<T>::GlobalBranch(std::size_t width, std::size_t depth, std::size_t reduction, double eps_gamma, Rng& rng)
    : pre_(3, width, 3, 1, Activation::relu, rng), down_(width, 2, reduction, rng), eps_gamma_(eps_gamma) {
    for (std::size_t i = 0; i < depth; ++i) stack_.emplace_back(width, width, 3, 1, Activation::relu, rng);
    head_ = Conv2dLayer<T>(width, 1, 1, 1, Activation::softplus, rng);
}

template <typename T>
typename GlobalBranch<T>::Output GlobalBranch<T>::forward(const Tensor<T>& image) const {
    Tensor<T> pre = pre_.forward(image);
    Tensor<T> x = add(down_.forward(pre), avg_pool2x(pre));
    for (const auto& layer : stack_) x = layer.forward(x);
    Tensor<T> pooled = reduce(x, {2, 3}, ReduceKind::mean, true);
    return {pooled, add_scalar(head_.forward(pooled), static_cast<T>(eps_gamma_))};
}

template <typename T>
void GlobalBranch<T>::collect(ParameterList<T>& out, const std::string& prefix) const {
    pre_.collect(out, prefix + "pre.");
    down_.collect(out, prefix + "down.");
    for (std::size_t i = 0; i < stack_.size(); ++i) stack_[i].collect(out, prefix + "stack." + std::to_string(i) + ".");
    head_.collect(out, prefix + "head.");
}

// ---------------------------------------------------------------------------

template <typename T>
CPGANet<T>::CPGANet(const ModelConfig& config) : config_(config) {
    config_.validate();
    Rng rng(config_.seed);
    const auto options = config_.block_options();
    const std::size_t c = config_.base_width;
    stem_ = Conv2dLayer<T>(3, c, 3, 1, Activation::relu, rng);
    for (std::size_t i = 0; i < config_.n_cp_blocks; ++i) {
        if (config_.enable_cpga_blocks) cpga_blocks_.emplace_back(c, config_.global_width, options, rng);
        else cp_blocks_.emplace_back(c, options, rng);
    }
    out_ = Conv2dLayer<T>(c, 3, 3, 1, Activation::none, rng);
    if (config_.enable_global_branch) {
        global_.emplace(config_.global_width, config_.global_depth, config_.cbam_reduction, config_.eps_gamma, rng);
        fusion_.emplace(3, config_.image_iaaf_hidden, rng);
    }
}

void validate_model_input_shape(const Shape& s) {
    if (s.size() != 4 || s[1] != 3) throw InputError("model input must be [N,3,H,W], got " + to_string(s));
    if (s[2] % 2 || s[3] % 2) throw InputError("model input height and width must be even, got " + to_string(s));
    if (s[2] < 16 || s[3] < 16) throw InputError("model input must be at least 16x16, got " + to_string(s));
}

template <typename T>
typename CPGANet<T>::Output CPGANet<T>::forward_detailed(const Tensor<T>& img) const {
    validate_model_input_shape(img.shape());
    const OpCounter* counter = active_counter();
    if (!(counter && counter->dry_run))
        for (T v : img.data())
            if (!(v >= T(-0.01) && v <= T(1.01)))
                throw InputError("model input values must lie in [0,1] (tolerance 0.01), got " + std::to_string(v));

    Output o;
    if (global_) {
        FlopScope scope("global");
        auto g = global_->forward(img);
        o.gamma = g.gamma;
        o.global_features = g.features;
    }
    Tensor<T> f;
    {
        FlopScope scope("stem");
        f = stem_.forward(img);
    }
    const Tensor<T>* image = config_.fuse_rgb ? &img : nullptr;
    for (std::size_t i = 0; i < cp_blocks_.size(); ++i) {
        FlopScope scope("blocks." + std::to_string(i));
        f = cp_blocks_[i].forward(f, image);
    }
    for (std::size_t i = 0; i < cpga_blocks_.size(); ++i) {
        FlopScope scope("blocks." + std::to_string(i));
        f = cpga_blocks_[i].forward(f, image, o.global_features);
    }
    {
        FlopScope scope("out");
        o.local = out_.forward(f);
    }
    Tensor<T> y = o.local;
    if (fusion_) {
        FlopScope scope("fusion");
        Tensor<T> corrected = gamma_correct(clamp(o.local, static_cast<T>(kGammaInputFloor), T(1)), o.gamma);
        y = fusion_->forward(o.local, corrected);
    }
    o.unclamped = y;
    o.image = clamp(y, T(0), T(1));
    return o;
}

template <typename T>
ParameterList<T> CPGANet<T>::parameters() const {
    ParameterList<T> out;
    stem_.collect(out, "stem.");
    for (std::size_t i = 0; i < cp_blocks_.size(); ++i) cp_blocks_[i].collect(out, "blocks." + std::to_string(i) + ".");
    for (std::size_t i = 0; i < cpga_blocks_.size(); ++i)
        cpga_blocks_[i].collect(out, "blocks." + std::to_string(i) + ".");
    out_.collect(out, "out.");
    if (global_) global_->collect(out, "global.");
    if (fusion_) fusion_->collect(out, "fusion.");
    return out;
}

template <typename T>
std::vector<std::pair<std::string, std::size_t>> parameter_breakdown(const CPGANet<T>& model) {
    std::vector<std::pair<std::string, std::size_t>> groups;
    for (const auto& p : model.parameters()) {
        std::string key = p.name.substr(0, p.name.find('.'));
        if (key == "blocks") {
            const auto second = p.name.find('.', key.size() + 1);
            key = p.name.substr(0, second);
        }
        if (groups.empty() || groups.back().first != key) groups.emplace_back(key, 0);
        groups.back().second += p.tensor.numel();
    }
    return groups;
}

template <typename T>
FlopReport count_flops(const CPGANet<T>& model, std::size_t h, std::size_t w) {
    OpCounter counter;
    counter.dry_run = true;
    {
        NoGradGuard no_grad;
        OpCounterGuard guard(counter);
        model.forward(Tensor<T>::zeros({1, 3, h, w}));
    }
    return {counter.flops, counter.by_scope};
}

template class GlobalBranch<float>;
template class GlobalBranch<double>;
template class CPGANet<float>;
template class CPGANet<double>;
template std::vector<std::pair<std::string, std::size_t>> parameter_breakdown(const CPGANet<float>&);
template std::vector<std::pair<std::string, std::size_t>> parameter_breakdown(const CPGANet<double>&);
template FlopReport count_flops(const CPGANet<float>&, std::size_t, std::size_t);
template FlopReport count_flops(const CPGANet<double>&, std::size_t, std::size_t);

}  // namespace cpga
