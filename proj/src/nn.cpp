#include "cpga/nn.hpp"

#include <cmath>
#include <limits>

namespace cpga {

template <typename T>
Conv2dLayer<T>::Conv2dLayer(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
                            Activation act, Rng& rng, std::optional<std::size_t> padding)
    : stride_(stride), padding_(padding.value_or(kernel / 2)), act_(act) {
    const std::size_t fan_in = in_channels * kernel * kernel;
    // same bound as PyTorch's default conv init (kaiming_uniform with a = sqrt(5))
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<T> w(out_channels * fan_in);
    for (auto& v : w) v = static_cast<T>(rng.uniform(-bound, bound));
    std::vector<T> b(out_channels);
    for (auto& v : b) v = static_cast<T>(rng.uniform(-bound, bound));
    weight_ = Tensor<T>({out_channels, in_channels, kernel, kernel}, std::move(w));
    weight_.set_requires_grad(true);
    bias_ = Tensor<T>({out_channels}, std::move(b));
    bias_.set_requires_grad(true);
}

template <typename T>
Tensor<T> Conv2dLayer<T>::forward(const Tensor<T>& x) const {
    return activation(conv2d(x, weight_, &bias_, stride_, padding_), act_);
}

template <typename T>
void Conv2dLayer<T>::collect(ParameterList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + "weight", weight_});
    out.push_back({prefix + "bias", bias_});
}

// ---------------------------------------------------------------------------

template <typename T>
ResBlock<T>::ResBlock(std::size_t channels, Rng& rng)
    : conv1_(channels, channels, 3, 1, Activation::relu, rng), conv2_(channels, channels, 3, 1, Activation::none, rng) {}

template <typename T>
Tensor<T> ResBlock<T>::forward(const Tensor<T>& x) const {
    return add(x, conv2_.forward(conv1_.forward(x)));
}

template <typename T>
void ResBlock<T>::collect(ParameterList<T>& out, const std::string& prefix) const {
    conv1_.collect(out, prefix + "conv1.");
    conv2_.collect(out, prefix + "conv2.");
}

// ---------------------------------------------------------------------------

template <typename T>
ResCBAM<T>::ResCBAM(std::size_t channels, std::size_t stride, std::size_t reduction, Rng& rng)
    : stride_(stride),
      conv1_(channels, channels, 3, stride, Activation::relu, rng),
      conv2_(channels, channels, 3, 1, Activation::none, rng) {
    if (stride != 1 && stride != 2) throw std::invalid_argument("ResCBAM stride must be 1 or 2");
    const std::size_t hidden = std::max<std::size_t>(1, channels / std::max<std::size_t>(1, reduction));
    fc1_ = Conv2dLayer<T>(channels, hidden, 1, 1, Activation::relu, rng);
    fc2_ = Conv2dLayer<T>(hidden, channels, 1, 1, Activation::none, rng);
    spatial_ = Conv2dLayer<T>(2, 1, 7, 1, Activation::none, rng);
    if (stride == 2) shortcut_.emplace(channels, channels, 1, 2, Activation::none, rng, 0);
}

template <typename T>
typename ResCBAM<T>::Output ResCBAM<T>::forward_detailed(const Tensor<T>& x) const {
    Tensor<T> y = conv2_.forward(conv1_.forward(x));
    Tensor<T> avg = reduce(y, {2, 3}, ReduceKind::mean, true);
    Tensor<T> mx = reduce(y, {2, 3}, ReduceKind::max, true);
    Tensor<T> ca = sigmoid(add(fc2_.forward(fc1_.forward(avg)), fc2_.forward(fc1_.forward(mx))));
    y = mul(y, ca);
    Tensor<T> pooled =
        concat<T>({reduce(y, {1}, ReduceKind::mean, true), reduce(y, {1}, ReduceKind::max, true)}, 1);
    Tensor<T> sa = sigmoid(spatial_.forward(pooled));
    y = mul(y, sa);
    Tensor<T> skip = shortcut_ ? shortcut_->forward(x) : x;
    return {add(y, skip), ca, sa};
}

template <typename T>
void ResCBAM<T>::collect(ParameterList<T>& out, const std::string& prefix) const {
    conv1_.collect(out, prefix + "conv1.");
    conv2_.collect(out, prefix + "conv2.");
    fc1_.collect(out, prefix + "channel_fc1.");
    fc2_.collect(out, prefix + "channel_fc2.");
    spatial_.collect(out, prefix + "spatial.");
    if (shortcut_) shortcut_->collect(out, prefix + "shortcut.");
}

// ---------------------------------------------------------------------------

template <typename T>
TEstimator<T>::TEstimator(std::size_t in_channels, std::size_t width, double eps_t, Rng& rng)
    : in_(in_channels, width, 1, 1, Activation::relu, rng),
      body_(width, rng),
      out_(width, width, 1, 1, Activation::sigmoid, rng),
      eps_t_(eps_t) {
    if (!(eps_t > 0.0 && eps_t < 1.0)) throw std::invalid_argument("eps_t must lie in (0, 1)");
}

template <typename T>
Tensor<T> TEstimator<T>::forward(const Tensor<T>& x) const {
    const T eps = static_cast<T>(eps_t_);
    Tensor<T> s = out_.forward(body_.forward(in_.forward(x)));
    // The clamp only guards rounding at the ends of the affine rescale.
    return clamp(add_scalar(scale(s, T(1) - eps), eps), eps, T(1));
}

template <typename T>
void TEstimator<T>::collect(ParameterList<T>& out, const std::string& prefix) const {
    in_.collect(out, prefix + "in.");
    body_.collect(out, prefix + "res.");
    out_.collect(out, prefix + "out.");
}

// ---------------------------------------------------------------------------

template <typename T>
AEstimator<T>::AEstimator(std::size_t in_channels, std::size_t width, Rng& rng)
    : enc_(in_channels, width, 1, 1, Activation::relu, rng),
      down_(width, width, 3, 2, Activation::relu, rng),
      mid_(width, width, 3, 1, Activation::relu, rng),
      dec_(2 * width, width, 1, 1, Activation::none, rng) {}

template <typename T>
Tensor<T> AEstimator<T>::forward(const Tensor<T>& x) const {
    if (x.dim(2) % 2 || x.dim(3) % 2)
        throw ShapeError("AEstimator needs even spatial dims, got " + to_string(x.shape()));
    Tensor<T> skip = enc_.forward(x);
    Tensor<T> up = upsample_nearest2x(mid_.forward(down_.forward(skip)));
    return dec_.forward(concat<T>({up, skip}, 1));
}

template <typename T>
void AEstimator<T>::collect(ParameterList<T>& out, const std::string& prefix) const {
    enc_.collect(out, prefix + "enc.");
    down_.collect(out, prefix + "down.");
    mid_.collect(out, prefix + "mid.");
    dec_.collect(out, prefix + "dec.");
}

// ---------------------------------------------------------------------------

template <typename T>
CPBlock<T>::CPBlock(std::size_t width, const BlockOptions& options, Rng& rng) : width_(width), options_(options) {
    const std::size_t in_channels = width + (options.fuse_rgb ? 3 : 0);
    // t sees the block input, its (max, min, mean) priors and, when the RGB
    // image is fused, the image's bright/dark/luminance priors.
    const std::size_t t_channels = in_channels + 3 + (options.fuse_rgb ? 3 : 0);
    mapping_ = Conv2dLayer<T>(in_channels, width, 1, 1, Activation::none, rng);
    t_est_ = TEstimator<T>(t_channels, width, options.eps_t, rng);
    a_est_ = AEstimator<T>(in_channels, width, rng);
    fusion_ = Conv2dLayer<T>(width, width, 1, 1, Activation::none, rng);
}

template <typename T>
typename CPBlock<T>::Output CPBlock<T>::forward_detailed(const Tensor<T>& f, const Tensor<T>* image) const {
    if (f.ndim() != 4 || f.dim(1) != width_)
        throw ShapeError("CP block of width " + std::to_string(width_) + " got input " + to_string(f.shape()));
    Tensor<T> x = f;
    std::vector<Tensor<T>> t_inputs;
    if (options_.fuse_rgb) {
        if (!image) throw std::invalid_argument("CP block with RGB fusion needs the input image");
        if (image->dim(2) != f.dim(2) || image->dim(3) != f.dim(3))
            throw ShapeError("CP block image/feature size mismatch");
        x = concat<T>({f, *image}, 1);
        t_inputs = {x, channel_priors(x), reduce(*image, {1}, ReduceKind::max, true),
                    reduce(*image, {1}, ReduceKind::min, true), luminance(*image, options_.luminance)};
    } else {
        t_inputs = {x, channel_priors(x)};
    }
    Output o;
    o.mapped = mapping_.forward(x);
    o.atmosphere = a_est_.forward(x);
    if (t_override_) {
        o.transmission = Tensor<T>::full({1}, *t_override_);
    } else {
        o.transmission = t_est_.forward(concat(t_inputs, 1));
    }
    o.attention = atsm_enhance(o.mapped, o.transmission, o.atmosphere);
    o.out = fusion_.forward(o.attention);
    return o;
}

template <typename T>
void CPBlock<T>::collect(ParameterList<T>& out, const std::string& prefix) const {
    mapping_.collect(out, prefix + "mapping.");
    t_est_.collect(out, prefix + "t.");
    a_est_.collect(out, prefix + "a.");
    fusion_.collect(out, prefix + "fusion.");
}

// ---------------------------------------------------------------------------

template <typename T>
IAAF<T>::IAAF(std::size_t channels, std::size_t hidden, Rng& rng)
    : conv1_(2 * channels, hidden, 3, 1, Activation::relu, rng), conv2_(hidden, channels, 3, 1, Activation::none, rng) {}

template <typename T>
Tensor<T> IAAF<T>::intersection(const Tensor<T>& r, const Tensor<T>& r_gamma) const {
    return conv2_.forward(conv1_.forward(concat<T>({r, r_gamma}, 1)));
}

template <typename T>
Tensor<T> IAAF<T>::forward(const Tensor<T>& r, const Tensor<T>& r_gamma) const {
    if (r.shape() != r_gamma.shape())
        throw ShapeError("IAAF operands differ: " + to_string(r.shape()) + " vs " + to_string(r_gamma.shape()));
    return sub(add(r, r_gamma), intersection(r, r_gamma));
}

template <typename T>
void IAAF<T>::zero_intersection() {
    for (auto& v : conv2_.weight().mutable_data()) v = T(0);
    for (auto& v : conv2_.bias().mutable_data()) v = T(0);
}

template <typename T>
void IAAF<T>::collect(ParameterList<T>& out, const std::string& prefix) const {
    conv1_.collect(out, prefix + "conv1.");
    conv2_.collect(out, prefix + "conv2.");
}

// ---------------------------------------------------------------------------

template <typename T>
CPGABlock<T>::CPGABlock(std::size_t width, std::size_t global_width, const BlockOptions& options, Rng& rng)
    : width_(width),
      global_width_(global_width),
      options_(options),
      cp_(width, options, rng),
      gamma_head_(global_width, width, 1, 1, Activation::softplus, rng),
      iaaf_(width, options.iaaf_hidden, rng) {}

template <typename T>
typename CPGABlock<T>::Output CPGABlock<T>::forward_detailed(const Tensor<T>& f, const Tensor<T>* image,
                                                             const Tensor<T>& global_features) const {
    const std::size_t n = f.dim(0);
    if (global_features.numel() != n * global_width_)
        throw ShapeError("CPGA block expects global features [N," + std::to_string(global_width_) + "], got " +
                         to_string(global_features.shape()));
    Output o;
    o.attention = cp_.forward(f, image);
    if (gamma_override_) {
        o.gamma = Tensor<T>::full({n, width_, 1, 1}, *gamma_override_);
    } else {
        Tensor<T> g = global_features.ndim() == 4 ? global_features : reshape(global_features, {n, global_width_, 1, 1});
        o.gamma = add_scalar(gamma_head_.forward(g), static_cast<T>(options_.eps_gamma));
    }
    Tensor<T> base = options_.gamma_normalization == GammaNormalization::sigmoid
                         ? sigmoid(o.attention)
                         : clamp(o.attention, static_cast<T>(kGammaInputFloor), T(1));
    o.corrected = gamma_correct(base, o.gamma);
    o.out = add(iaaf_.forward(o.attention, o.corrected), o.attention);
    return o;
}

template <typename T>
void CPGABlock<T>::collect(ParameterList<T>& out, const std::string& prefix) const {
    cp_.collect(out, prefix + "cp.");
    gamma_head_.collect(out, prefix + "gamma_head.");
    iaaf_.collect(out, prefix + "iaaf.");
}

#define CPGA_INSTANTIATE_NN(T)     \
    template class Conv2dLayer<T>; \
    template class ResBlock<T>;    \
    template class ResCBAM<T>;     \
    template class TEstimator<T>;  \
    template class AEstimator<T>;  \
    template class CPBlock<T>;     \
    template class IAAF<T>;        \
    template class CPGABlock<T>;

CPGA_INSTANTIATE_NN(float)
CPGA_INSTANTIATE_NN(double)

}  // namespace cpga
