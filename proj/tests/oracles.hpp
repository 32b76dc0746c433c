#pragma once

// Independent reference implementations used as test oracles. Nothing here
// calls into the library's ops; everything is plain loops over std::vector.

#include <cmath>
#include <functional>
#include <vector>

#include "cpga/rng.hpp"
#include "cpga/tensor.hpp"

namespace cpga::oracle {

template <typename T>
Tensor<T> random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<T> v(numel(shape));
    for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
    return Tensor<T>(shape, std::move(v));
}

/// Direct 6-nested-loop cross-correlation, zero padding, accumulated in double.
template <typename T>
std::vector<double> conv2d_direct(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* b, std::size_t stride,
                                  std::size_t pad) {
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const std::size_t Ho = (H + 2 * pad - kh) / stride + 1, Wo = (W + 2 * pad - kw) / stride + 1;
    std::vector<double> out(N * O * Ho * Wo);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t o = 0; o < O; ++o)
            for (std::size_t i = 0; i < Ho; ++i)
                for (std::size_t j = 0; j < Wo; ++j) {
                    double acc = b ? static_cast<double>(b->data()[o]) : 0.0;
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t p = 0; p < kh; ++p)
                            for (std::size_t q = 0; q < kw; ++q) {
                                const long ih = static_cast<long>(i * stride + p) - static_cast<long>(pad);
                                const long iw = static_cast<long>(j * stride + q) - static_cast<long>(pad);
                                if (ih < 0 || iw < 0 || ih >= static_cast<long>(H) || iw >= static_cast<long>(W))
                                    continue;
                                acc += static_cast<double>(x.at({n, c, static_cast<std::size_t>(ih),
                                                                 static_cast<std::size_t>(iw)})) *
                                       static_cast<double>(w.at({o, c, p, q}));
                            }
                    out[((n * O + o) * Ho + i) * Wo + j] = acc;
                }
    return out;
}

/// Central-difference gradient of a scalar function of one flat vector.
inline std::vector<double> numeric_gradient(const std::function<double(const std::vector<double>&)>& f,
                                            std::vector<double> x, double h) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double fp = f(x);
        x[i] = keep - h;
        const double fm = f(x);
        x[i] = keep;
        g[i] = (fp - fm) / (2 * h);
    }
    return g;
}

inline double rel_error(const std::vector<double>& a, const std::vector<double>& b) {
    double num = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double den = std::sqrt(std::max(na, nb));
    return den == 0 ? 0 : std::sqrt(num) / den;
}

/// PSNR with unit peak, 100 dB cap below MSE 1e-10.
inline double psnr_ref(const std::vector<double>& x, const std::vector<double>& y) {
    long double acc = 0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += static_cast<long double>(x[i] - y[i]) * (x[i] - y[i]);
    const double mse = static_cast<double>(acc / x.size());
    return mse < 1e-10 ? 100.0 : -10.0 * std::log10(mse);
}

/// Gaussian-window SSIM (11x11, sigma 1.5, K1 0.01, K2 0.03, L = 1) over every
/// valid window position of every channel plane, averaged. Computed window
/// by window with explicit sums instead of filtered moment maps.
inline double ssim_ref(const std::vector<double>& x, const std::vector<double>& y, std::size_t planes,
                       std::size_t h, std::size_t w) {
    const int k = 11;
    const double sigma = 1.5;
    double g[k][k], total = 0;
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
            const double di = i - k / 2, dj = j - k / 2;
            g[i][j] = std::exp(-(di * di + dj * dj) / (2 * sigma * sigma));
            total += g[i][j];
        }
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double sum = 0;
    std::size_t count = 0;
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t r = 0; r + k <= h; ++r)
            for (std::size_t c = 0; c + k <= w; ++c) {
                double mx = 0, my = 0;
                for (int i = 0; i < k; ++i)
                    for (int j = 0; j < k; ++j) {
                        const std::size_t idx = (p * h + r + i) * w + c + j;
                        const double wt = g[i][j] / total;
                        mx += wt * x[idx];
                        my += wt * y[idx];
                    }
                double vx = 0, vy = 0, cxy = 0;
                for (int i = 0; i < k; ++i)
                    for (int j = 0; j < k; ++j) {
                        const std::size_t idx = (p * h + r + i) * w + c + j;
                        const double wt = g[i][j] / total;
                        vx += wt * (x[idx] - mx) * (x[idx] - mx);
                        vy += wt * (y[idx] - my) * (y[idx] - my);
                        cxy += wt * (x[idx] - mx) * (y[idx] - my);
                    }
                sum += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                ++count;
            }
    return sum / static_cast<double>(count);
}

template <typename T>
std::vector<double> to_double(const Tensor<T>& t) {
    return std::vector<double>(t.data().begin(), t.data().end());
}

}  // namespace cpga::oracle
