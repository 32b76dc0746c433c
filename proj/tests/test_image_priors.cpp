#include <gtest/gtest.h>

#include <cmath>

#include "cpga/image_priors.hpp"
#include "oracles.hpp"

using namespace cpga;

namespace {

Tensor<double> pixel(double r, double g, double b) { return Tensor<double>({1, 3, 1, 1}, {r, g, b}); }

}  // namespace

TEST(ChannelPriors, Examples) {
    auto p = channel_priors(pixel(0.2, 0.5, 0.8));
    EXPECT_EQ(p.shape(), (Shape{1, 3, 1, 1}));
    EXPECT_DOUBLE_EQ(p.data()[0], 0.8);
    EXPECT_DOUBLE_EQ(p.data()[1], 0.2);
    EXPECT_DOUBLE_EQ(p.data()[2], 0.5);
    auto g = channel_priors(pixel(0.4, 0.4, 0.4));
    for (double v : g.data()) EXPECT_DOUBLE_EQ(v, 0.4);
}

TEST(ChannelPriors, MatchesLoopOnWideFeatureMap) {
    Rng rng(1);
    const std::size_t C = 64, H = 5, W = 7;
    auto f = oracle::random_tensor<float>({2, C, H, W}, rng);
    auto p = channel_priors(f);
    ASSERT_EQ(p.shape(), (Shape{2, 3, H, W}));
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                float mx = -1e9f, mn = 1e9f;
                double s = 0;
                for (std::size_t c = 0; c < C; ++c) {
                    const float v = f.at({n, c, y, x});
                    mx = std::max(mx, v);
                    mn = std::min(mn, v);
                    s += v;
                }
                EXPECT_EQ(p.at({n, 0, y, x}), mx);
                EXPECT_EQ(p.at({n, 1, y, x}), mn);
                EXPECT_NEAR(p.at({n, 2, y, x}), s / C, 1e-6);
                EXPECT_LE(p.at({n, 1, y, x}), p.at({n, 2, y, x}));
                EXPECT_LE(p.at({n, 2, y, x}), p.at({n, 0, y, x}));
            }
}

TEST(Luminance, Coefficients) {
    EXPECT_DOUBLE_EQ(luminance(pixel(1, 0, 0)).item(), 0.299);
    EXPECT_DOUBLE_EQ(luminance(pixel(0, 1, 0)).item(), 0.584);
    EXPECT_EQ(luminance(pixel(1, 1, 1)).item(), 0.299 + 0.584 + 0.114);
    EXPECT_NEAR(luminance(pixel(1, 1, 1)).item(), 0.997, 1e-15);
    EXPECT_DOUBLE_EQ(luminance(pixel(0, 1, 0), kBt601Luminance).item(), 0.587);
    EXPECT_THROW(luminance(Tensor<double>::ones({1, 2, 1, 1})), ShapeError);
}

TEST(GammaCorrect, Examples) {
    auto r = Tensor<double>::scalar(0.25);
    EXPECT_EQ(gamma_correct(r, Tensor<double>::scalar(2.0)).item(), 0.0625);
    EXPECT_NEAR(gamma_correct(Tensor<double>::scalar(0.5), Tensor<double>::scalar(0.4545)).item(),
                std::pow(0.5, 0.4545), 1e-15);
    EXPECT_NEAR(gamma_correct(Tensor<double>::scalar(0.5), Tensor<double>::scalar(0.4545)).item(), 0.7297, 1e-4);
    EXPECT_THROW(gamma_correct(r, Tensor<double>::scalar(0.0)), DomainError);
}

TEST(GammaCorrect, UnitGammaIsIdentityOnValidRange) {
    Rng rng(2);
    auto r = oracle::random_tensor<double>({1, 3, 8, 8}, rng, kGammaInputFloor, 1.0);
    auto out = gamma_correct(r, Tensor<double>::scalar(1.0));
    for (std::size_t i = 0; i < r.numel(); ++i) EXPECT_EQ(out.data()[i], r.data()[i]);
    // below the floor the clamped value comes back
    EXPECT_EQ(gamma_correct(Tensor<double>::scalar(-0.3), Tensor<double>::scalar(1.0)).item(), kGammaInputFloor);
}

TEST(GammaCorrect, Monotone) {
    Rng rng(3);
    for (int i = 0; i < 1000; ++i) {
        double a = rng.uniform(0, 1), b = rng.uniform(0, 1);
        if (a > b) std::swap(a, b);
        auto g = Tensor<double>::scalar(rng.uniform(0.1, 5));
        EXPECT_LE(gamma_correct(Tensor<double>::scalar(a), g).item(), gamma_correct(Tensor<double>::scalar(b), g).item());
    }
}

TEST(Atsm, Examples) {
    auto s = [](double v) { return Tensor<double>::scalar(v); };
    EXPECT_EQ(atsm_enhance(s(0.5), s(0.5), s(0.0)).item(), 1.0);
    EXPECT_NEAR(atsm_enhance(s(0.3), s(0.6), s(0.1)).item(), (0.3 - 0.1) / 0.6 + 0.1, 1e-15);
    EXPECT_NEAR(atsm_enhance(s(0.3), s(0.6), s(0.1)).item(), 0.43333333, 1e-8);
}

TEST(Atsm, UnitTransmissionReturnsInputExactly) {
    Rng rng(4);
    auto l = oracle::random_tensor<double>({1, 3, 4, 4}, rng, 0, 1);
    auto a = oracle::random_tensor<double>({1, 3, 4, 4}, rng, -2, 2);
    auto out = atsm_enhance(l, Tensor<double>::ones({1, 3, 4, 4}), a);
    for (std::size_t i = 0; i < l.numel(); ++i) EXPECT_EQ(out.data()[i], l.data()[i]);
    auto lf = oracle::random_tensor<float>({1, 3, 4, 4}, rng, 0, 1);
    auto af = oracle::random_tensor<float>({1, 3, 4, 4}, rng, -2, 2);
    auto of = atsm_enhance(lf, Tensor<float>::ones({1, 3, 4, 4}), af);
    for (std::size_t i = 0; i < lf.numel(); ++i) EXPECT_EQ(of.data()[i], lf.data()[i]);
}

TEST(Atsm, ZeroAtmosphereIsRetinexDivision) {
    Rng rng(5);
    auto l = oracle::random_tensor<double>({1, 3, 4, 4}, rng, 0, 1);
    auto t = oracle::random_tensor<double>({1, 3, 4, 4}, rng, 0.05, 1);
    auto out = atsm_enhance(l, t, Tensor<double>::zeros({1, 3, 4, 4}));
    for (std::size_t i = 0; i < l.numel(); ++i) EXPECT_EQ(out.data()[i], l.data()[i] / t.data()[i]);
}

TEST(MuLaw, FixedPointsAndValue) {
    auto m = [](double v) { return mu_law(Tensor<double>::scalar(v)).item(); };
    EXPECT_EQ(m(0), 0.0);
    EXPECT_EQ(m(1), 1.0);
    EXPECT_EQ(m(-1), -1.0);
    EXPECT_NEAR(m(1.0 / 5000), std::log(2.0) / std::log(5001.0), 1e-15);
    EXPECT_NEAR(m(1.0 / 5000), 0.08138, 1e-5);
}

TEST(MuLaw, OddIncreasingBounded) {
    Rng rng(6);
    auto x = oracle::random_tensor<double>({10000}, rng, -1, 1);
    auto y = mu_law(x);
    auto yn = mu_law(scale(x, -1.0));
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        EXPECT_EQ(yn.data()[i], -y.data()[i]);
        EXPECT_LE(std::abs(y.data()[i]), 1.0);
        pts.emplace_back(x.data()[i], y.data()[i]);
    }
    std::sort(pts.begin(), pts.end());
    for (std::size_t i = 1; i < pts.size(); ++i)
        if (pts[i].first > pts[i - 1].first) EXPECT_GT(pts[i].second, pts[i - 1].second);
}
