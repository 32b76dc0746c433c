#include "cpga/losses.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "cpga/checkpoint.hpp"

namespace cpga {

void LossSpec::validate() const {
    for (double w : {l1, perceptual, hdr_l1, ssim})
        if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("loss weights must be finite and >= 0");
    if (l1 == 0 && perceptual == 0 && hdr_l1 == 0 && ssim == 0)
        throw std::invalid_argument("at least one loss weight must be positive");
    if (!(mu > 0.0)) throw std::invalid_argument("mu must be positive");
}

LossSpec LossSpec::parse(std::string_view text) {
    LossSpec spec{0, 0, 0, 0, kDefaultMu};
    std::size_t start = 0;
    while (true) {
        const auto comma = text.find(',', start);
        const auto end = comma == std::string_view::npos ? text.size() : comma;
        std::string_view item = text.substr(start, end - start);
        if (item.empty()) throw std::invalid_argument("empty loss term in '" + std::string(text) + "'");
        double weight = 1.0;
        if (const auto colon = item.find(':'); colon != std::string_view::npos) {
            const auto num = item.substr(colon + 1);
            auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), weight);
            if (ec != std::errc() || ptr != num.data() + num.size())
                throw std::invalid_argument("bad loss weight '" + std::string(num) + "'");
            item = item.substr(0, colon);
        }
        if (item == "l1") spec.l1 = weight;
        else if (item == "perceptual" || item == "per") spec.perceptual = weight;
        else if (item == "hdr" || item == "hdr_l1") spec.hdr_l1 = weight;
        else if (item == "ssim") spec.ssim = weight;
        else throw std::invalid_argument("unknown loss term '" + std::string(item) + "'");
        if (end == text.size()) break;
        start = end + 1;
    }
    spec.validate();
    return spec;
}

std::string LossSpec::to_string() const {
    std::ostringstream os;
    os << "l1:" << l1 << ",perceptual:" << perceptual << ",hdr_l1:" << hdr_l1 << ",ssim:" << ssim;
    return os.str();
}

LossSpec LossSpec::ablation(char row) {
    switch (row) {
        case 'a': return {1, 0, 0, 0};
        case 'b': return {1, 1, 0, 0};
        case 'c': return {1, 1, 1, 0};
        case 'd': return {1, 1, 0, 1};
        case 'e': return {1, 1, 1, 1};
        default: throw std::invalid_argument(std::string("unknown loss ablation row '") + row + "'");
    }
}

std::vector<double> SSIMParams::window_weights() const {
    std::vector<double> g(window);
    const double c = (static_cast<double>(window) - 1.0) / 2.0;
    double total = 0;
    for (std::size_t i = 0; i < window; ++i) {
        const double d = static_cast<double>(i) - c;
        g[i] = std::exp(-d * d / (2 * sigma * sigma));
        total += g[i];
    }
    for (auto& v : g) v /= total;
    std::vector<double> w(window * window);
    for (std::size_t i = 0; i < window; ++i)
        for (std::size_t j = 0; j < window; ++j) w[i * window + j] = g[i] * g[j];
    return w;
}

// ---------------------------------------------------------------------------

template <typename T>
ConvPyramidExtractor<T>::ConvPyramidExtractor(std::vector<Stage> stages) : stages_(std::move(stages)) {
    if (stages_.empty()) throw std::invalid_argument("feature extractor needs at least one stage");
    for (auto& s : stages_) {
        s.weight.set_requires_grad(false);
        s.bias.set_requires_grad(false);
    }
}

template <typename T>
ConvPyramidExtractor<T> ConvPyramidExtractor<T>::random(std::uint64_t seed, const std::vector<std::size_t>& widths) {
    Rng rng(seed);
    std::vector<Stage> stages;
    std::size_t in = 3;
    for (auto w : widths) {
        Conv2dLayer<T> layer(in, w, 3, 2, Activation::relu, rng);
        stages.push_back({layer.weight().detach(), layer.bias().detach(), 2});
        in = w;
    }
    return ConvPyramidExtractor(std::move(stages));
}

template <typename T>
ConvPyramidExtractor<T> ConvPyramidExtractor<T>::from_file(const std::filesystem::path& path) {
    const auto file = read_checkpoint(path);
    std::vector<Stage> stages;
    for (std::size_t i = 0;; ++i) {
        const auto* w = file.find("stage" + std::to_string(i) + ".weight");
        const auto* b = file.find("stage" + std::to_string(i) + ".bias");
        if (!w) break;
        if (!b) throw MissingTensorError("extractor stage " + std::to_string(i) + " lacks a bias");
        if (w->shape.size() != 4 || b->shape.size() != 1 || b->shape[0] != w->shape[0])
            throw TensorShapeMismatchError("extractor stage " + std::to_string(i) + " has inconsistent shapes");
        stages.push_back({Tensor<T>(w->shape, std::vector<T>(w->values.begin(), w->values.end())),
                          Tensor<T>(b->shape, std::vector<T>(b->values.begin(), b->values.end())), 2});
    }
    return ConvPyramidExtractor(std::move(stages));
}

template <typename T>
void ConvPyramidExtractor<T>::save(const std::filesystem::path& path) const {
    ParameterList<T> params;
    for (std::size_t i = 0; i < stages_.size(); ++i) {
        params.push_back({"stage" + std::to_string(i) + ".weight", stages_[i].weight});
        params.push_back({"stage" + std::to_string(i) + ".bias", stages_[i].bias});
    }
    CheckpointFile file;
    file.meta["kind"] = "feature_extractor";
    file.tensors = export_tensors(params);
    write_checkpoint(path, file);
}

template <typename T>
std::vector<Tensor<T>> ConvPyramidExtractor<T>::extract(const Tensor<T>& images) const {
    std::vector<Tensor<T>> features;
    Tensor<T> x = images;
    for (const auto& s : stages_) {
        x = relu(conv2d(x, s.weight, &s.bias, s.stride, s.weight.dim(2) / 2));
        features.push_back(x);
    }
    return features;
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

}  // namespace

template <typename T>
Tensor<T> l1_loss(const Tensor<T>& yhat, const Tensor<T>& ygt) {
    require_same_shape(yhat, ygt, "l1_loss");
    return mean(abs(sub(yhat, ygt)));
}

template <typename T>
Tensor<T> hdr_l1_loss(const Tensor<T>& yhat, const Tensor<T>& ygt, T mu) {
    require_same_shape(yhat, ygt, "hdr_l1_loss");
    return l1_loss(mu_law(yhat, mu), mu_law(ygt, mu));
}

template <typename T>
Tensor<T> ssim_index(const Tensor<T>& x, const Tensor<T>& y, const SSIMParams& p) {
    require_same_shape(x, y, "ssim");
    if (x.ndim() != 4) throw ShapeError("ssim expects NCHW images");
    if (x.dim(2) < p.window || x.dim(3) < p.window)
        throw ShapeError("ssim needs images of at least " + std::to_string(p.window) + "x" + std::to_string(p.window));
    const auto weights = p.window_weights();
    Tensor<T> window({1, 1, p.window, p.window}, std::vector<T>(weights.begin(), weights.end()));
    const Shape planes{x.dim(0) * x.dim(1), 1, x.dim(2), x.dim(3)};
    const Tensor<T> a = reshape(x, planes);
    const Tensor<T> b = reshape(y, planes);
    auto filt = [&](const Tensor<T>& t) { return conv2d(t, window, static_cast<const Tensor<T>*>(nullptr), 1, 0); };
    const T c1 = static_cast<T>((p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range));
    const T c2 = static_cast<T>((p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range));
    Tensor<T> mu_a = filt(a);
    Tensor<T> mu_b = filt(b);
    Tensor<T> mu_aa = mul(mu_a, mu_a);
    Tensor<T> mu_bb = mul(mu_b, mu_b);
    Tensor<T> mu_ab = mul(mu_a, mu_b);
    Tensor<T> var_a = sub(filt(mul(a, a)), mu_aa);
    Tensor<T> var_b = sub(filt(mul(b, b)), mu_bb);
    Tensor<T> cov = sub(filt(mul(a, b)), mu_ab);
    Tensor<T> num = mul(add_scalar(scale(mu_ab, T(2)), c1), add_scalar(scale(cov, T(2)), c2));
    Tensor<T> den = mul(add_scalar(add(mu_aa, mu_bb), c1), add_scalar(add(var_a, var_b), c2));
    return mean(div(num, den));
}

template <typename T>
Tensor<T> ssim_loss(const Tensor<T>& yhat, const Tensor<T>& ygt, const SSIMParams& p) {
    return add_scalar(scale(ssim_index(yhat, ygt, p), T(-1)), T(1));
}

template <typename T>
Tensor<T> perceptual_loss(const Tensor<T>& yhat, const Tensor<T>& ygt, const FeatureExtractor<T>& extractor) {
    require_same_shape(yhat, ygt, "perceptual_loss");
    const auto fa = extractor.extract(yhat);
    const auto fb = extractor.extract(ygt);
    Tensor<T> total;
    for (std::size_t i = 0; i < fa.size(); ++i) {
        Tensor<T> d = sub(fa[i], fb[i]);
        Tensor<T> term = mean(mul(d, d));
        total = total.defined() ? add(total, term) : term;
    }
    return total;
}

template <typename T>
LossBreakdown<T> total_loss(const Tensor<T>& yhat, const Tensor<T>& ygt, const LossSpec& spec,
                            const FeatureExtractor<T>& extractor, const SSIMParams& ssim_params) {
    spec.validate();
    LossBreakdown<T> out;
    auto accumulate = [&](const Tensor<T>& term, double weight) {
        Tensor<T> weighted = weight == 1.0 ? term : scale(term, static_cast<T>(weight));
        out.total = out.total.defined() ? add(out.total, weighted) : weighted;
    };
    if (spec.l1 > 0) {
        auto t = l1_loss(yhat, ygt);
        out.l1 = t.item();
        accumulate(t, spec.l1);
    }
    if (spec.perceptual > 0) {
        auto t = perceptual_loss(yhat, ygt, extractor);
        out.perceptual = t.item();
        accumulate(t, spec.perceptual);
    }
    if (spec.hdr_l1 > 0) {
        auto t = hdr_l1_loss(yhat, ygt, static_cast<T>(spec.mu));
        out.hdr_l1 = t.item();
        accumulate(t, spec.hdr_l1);
    }
    if (spec.ssim > 0) {
        auto t = ssim_loss(yhat, ygt, ssim_params);
        out.ssim = t.item();
        accumulate(t, spec.ssim);
    }
    return out;
}

template <typename T>
double psnr(const Tensor<T>& x, const Tensor<T>& y) {
    require_same_shape(x, y, "psnr");
    double acc = 0;
    const auto a = x.data();
    const auto b = y.data();
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += d * d;
    }
    const double mse = acc / static_cast<double>(a.size());
    if (mse < 1e-10) return kPsnrCap;
    return 10.0 * std::log10(1.0 / mse);
}

template <typename T>
double ssim(const Tensor<T>& x, const Tensor<T>& y, const SSIMParams& p) {
    NoGradGuard no_grad;
    return static_cast<double>(ssim_index(x, y, p).item());
}

#define CPGA_INSTANTIATE_LOSSES(T)                                                                               \
    template class ConvPyramidExtractor<T>;                                                                     \
    template Tensor<T> l1_loss(const Tensor<T>&, const Tensor<T>&);                                             \
    template Tensor<T> hdr_l1_loss(const Tensor<T>&, const Tensor<T>&, T);                                      \
    template Tensor<T> ssim_index(const Tensor<T>&, const Tensor<T>&, const SSIMParams&);                       \
    template Tensor<T> ssim_loss(const Tensor<T>&, const Tensor<T>&, const SSIMParams&);                        \
    template Tensor<T> perceptual_loss(const Tensor<T>&, const Tensor<T>&, const FeatureExtractor<T>&);         \
    template LossBreakdown<T> total_loss(const Tensor<T>&, const Tensor<T>&, const LossSpec&,                   \
                                         const FeatureExtractor<T>&, const SSIMParams&);                        \
    template double psnr(const Tensor<T>&, const Tensor<T>&);                                                   \
    template double ssim(const Tensor<T>&, const Tensor<T>&, const SSIMParams&);

CPGA_INSTANTIATE_LOSSES(float)
CPGA_INSTANTIATE_LOSSES(double)

}  // namespace cpga
