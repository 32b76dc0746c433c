#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "cpga/dataset.hpp"
#include "cpga/png_io.hpp"
#include "cpga/rng.hpp"

namespace cpga::testdata {

/// Smooth RGB image in [0.05, 0.95]: a few random low-frequency sinusoids
/// and a linear ramp per channel.
inline Tensor<float> smooth_image(std::size_t h, std::size_t w, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<float> v(3 * h * w);
    for (std::size_t c = 0; c < 3; ++c) {
        const double base = rng.uniform(0.3, 0.7);
        const double gx = rng.uniform(-0.2, 0.2), gy = rng.uniform(-0.2, 0.2);
        double fx[3], fy[3], ph[3], amp[3];
        for (int k = 0; k < 3; ++k) {
            fx[k] = rng.uniform(0.5, 3.0) * 2 * M_PI / static_cast<double>(w);
            fy[k] = rng.uniform(0.5, 3.0) * 2 * M_PI / static_cast<double>(h);
            ph[k] = rng.uniform(0, 2 * M_PI);
            amp[k] = rng.uniform(0.03, 0.1);
        }
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                double val = base + gx * (static_cast<double>(x) / w - 0.5) + gy * (static_cast<double>(y) / h - 0.5);
                for (int k = 0; k < 3; ++k) val += amp[k] * std::sin(fx[k] * x + fy[k] * y + ph[k]);
                v[(c * h + y) * w + x] = static_cast<float>(std::clamp(val, 0.05, 0.95));
            }
    }
    return Tensor<float>({1, 3, h, w}, std::move(v));
}

/// Low-light rendition: scaled power law, low = 0.2 * gt^1.4.
inline Tensor<float> darken(const Tensor<float>& gt) {
    std::vector<float> v(gt.data().begin(), gt.data().end());
    for (auto& x : v) x = 0.2f * std::pow(x, 1.4f);
    return Tensor<float>(gt.shape(), std::move(v));
}

inline std::vector<PairedSample<float>> synthetic_pairs(std::size_t n, std::size_t h, std::size_t w,
                                                        std::uint64_t seed) {
    std::vector<PairedSample<float>> out;
    for (std::size_t i = 0; i < n; ++i) {
        auto gt = smooth_image(h, w, mix_seed(seed, i));
        out.push_back({darken(gt), gt, "img" + std::to_string(i)});
    }
    return out;
}

/// Writes pairs as <root>/low/<id>.png and <root>/high/<id>.png.
inline void write_dataset(const std::filesystem::path& root, const std::vector<PairedSample<float>>& pairs) {
    std::filesystem::create_directories(root / "low");
    std::filesystem::create_directories(root / "high");
    for (const auto& p : pairs) {
        save_png(p.low, root / "low" / (p.id + ".png"));
        save_png(p.gt, root / "high" / (p.id + ".png"));
    }
}

}  // namespace cpga::testdata
