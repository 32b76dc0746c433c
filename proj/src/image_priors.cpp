#include "cpga/image_priors.hpp"

#include <limits>

namespace cpga {

template <typename T>
Tensor<T> channel_priors(const Tensor<T>& features) {
    if (features.ndim() != 4) throw ShapeError("channel_priors expects NCHW, got " + to_string(features.shape()));
    return concat<T>({reduce(features, {1}, ReduceKind::max, true), reduce(features, {1}, ReduceKind::min, true),
                      reduce(features, {1}, ReduceKind::mean, true)},
                     1);
}

template <typename T>
Tensor<T> luminance(const Tensor<T>& rgb, const std::array<double, 3>& coefficients) {
    if (rgb.ndim() != 4 || rgb.dim(1) != 3)
        throw ShapeError("luminance expects [N,3,H,W], got " + to_string(rgb.shape()));
    Tensor<T> weights({1, 3, 1, 1}, {static_cast<T>(coefficients[0]), static_cast<T>(coefficients[1]),
                                     static_cast<T>(coefficients[2])});
    return reduce(mul(rgb, weights), {1}, ReduceKind::sum, true);
}

template <typename T>
Tensor<T> gamma_correct(const Tensor<T>& r, const Tensor<T>& gamma) {
    const OpCounter* counter = active_counter();
    if (!(counter && counter->dry_run))
        for (T g : gamma.data())
            if (!(g > T(0))) throw DomainError("gamma_correct: gamma must be positive, got " + std::to_string(g));
    const T floor = static_cast<T>(kGammaInputFloor);
    return pow_elem(clamp(r, floor, std::numeric_limits<T>::max()), gamma);
}

template <typename T>
Tensor<T> atsm_enhance(const Tensor<T>& l, const Tensor<T>& t, const Tensor<T>& a_tilde) {
    // Written as l/t + a(t-1)/t so that t == 1 and a == 0 are both exact.
    return add(div(l, t), mul(a_tilde, div(add_scalar(t, T(-1)), t)));
}

template <typename T>
Tensor<T> mu_law(const Tensor<T>& x, T mu) {
    return mu_law_map(x, mu);
}

#define CPGA_INSTANTIATE_PRIORS(T)                                                         \
    template Tensor<T> channel_priors(const Tensor<T>&);                                  \
    template Tensor<T> luminance(const Tensor<T>&, const std::array<double, 3>&);         \
    template Tensor<T> gamma_correct(const Tensor<T>&, const Tensor<T>&);                 \
    template Tensor<T> atsm_enhance(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
    template Tensor<T> mu_law(const Tensor<T>&, T);

CPGA_INSTANTIATE_PRIORS(float)
CPGA_INSTANTIATE_PRIORS(double)

}  // namespace cpga
