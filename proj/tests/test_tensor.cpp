#include <gtest/gtest.h>

#include <cmath>

#include "cpga/ops.hpp"
#include "oracles.hpp"

using namespace cpga;

namespace {

template <typename T>
std::vector<T> values(const Tensor<T>& t) {
    return {t.data().begin(), t.data().end()};
}

Tensor<double> leaf(Shape s, std::vector<double> v) {
    Tensor<double> t(std::move(s), std::move(v));
    t.set_requires_grad(true);
    return t;
}

/// Autodiff vs central differences of sum(f(x) * w) with respect to one
/// input, the other inputs held fixed.
double fd_check(const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& f,
                std::vector<Tensor<double>> inputs, std::size_t which, double h, std::uint64_t seed = 3) {
    Rng rng(seed);
    for (auto& t : inputs) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    auto probe = f(inputs);
    auto w = oracle::random_tensor<double>(probe.shape(), rng);
    sum(mul(probe, w)).backward();
    const std::vector<double> analytic(inputs[which].grad().begin(), inputs[which].grad().end());
    auto scalar = [&](const std::vector<double>& x) {
        NoGradGuard ng;
        auto in = inputs;
        in[which] = Tensor<double>(inputs[which].shape(), x);
        return sum(mul(f(in), w)).item();
    };
    const auto numeric = oracle::numeric_gradient(scalar, oracle::to_double(inputs[which]), h);
    return oracle::rel_error(analytic, numeric);
}

}  // namespace

TEST(Tensor, ShapeContract) {
    EXPECT_THROW(Tensor<float>({2, 2}, {1, 2, 3}), ShapeError);
    EXPECT_THROW(Tensor<float>::zeros({2, 0}), ShapeError);
    EXPECT_THROW(Tensor<float>::zeros({}), ShapeError);
    auto t = Tensor<float>::full({2, 3}, 1.5f);
    EXPECT_EQ(t.numel(), 6u);
    EXPECT_FALSE(t.has_grad());
}

TEST(Ops, ElementwiseExamples) {
    Tensor<double> a({2}, {1, 2}), b({2}, {3, 4});
    EXPECT_EQ(values(add(a, b)), (std::vector<double>{4, 6}));
    EXPECT_EQ(values(div(Tensor<double>({2}, {1, 1}), Tensor<double>({2}, {2, 4}))),
              (std::vector<double>{0.5, 0.25}));
    Rng rng(1);
    auto x = oracle::random_tensor<double>({3, 4}, rng);
    EXPECT_EQ(values(mul(x, Tensor<double>::ones({3, 4}))), values(x));
}

TEST(Ops, PowElem) {
    EXPECT_EQ(pow_elem(Tensor<double>::scalar(0.25), Tensor<double>::scalar(2.0)).item(), 0.0625);
    Rng rng(2);
    auto x = oracle::random_tensor<double>({5}, rng, 0.0, 2.0);
    EXPECT_EQ(values(pow_elem(x, Tensor<double>::scalar(1.0))), values(x));
    EXPECT_THROW(pow_elem(Tensor<double>::scalar(-0.5), Tensor<double>::scalar(2.0)), DomainError);
}

TEST(Ops, PowElemExponentGradientMatchesFiniteDifference) {
    auto base = Tensor<double>::scalar(0.5);
    auto e = leaf({1}, {2.0});
    pow_elem(base, e).backward();
    const double h = 1e-6;
    const double fd = (std::pow(0.5, 2.0 + h) - std::pow(0.5, 2.0 - h)) / (2 * h);
    EXPECT_NEAR(e.grad()[0], fd, 1e-8);
    EXPECT_NEAR(e.grad()[0], -0.1733, 1e-4);
}

TEST(Ops, BroadcastGradientEqualsExplicitTiling) {
    Rng rng(4);
    auto a = oracle::random_tensor<double>({2, 3, 4}, rng).set_requires_grad(true);
    auto b = oracle::random_tensor<double>({3, 1}, rng).set_requires_grad(true);
    auto w = oracle::random_tensor<double>({2, 3, 4}, rng);
    sum(mul(mul(a, b), w)).backward();
    // Tile b to the full shape, differentiate, then sum over the broadcast axes.
    std::vector<double> tiled(24);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            for (std::size_t k = 0; k < 4; ++k) tiled[(i * 3 + j) * 4 + k] = b.data()[j];
    auto bt = leaf({2, 3, 4}, tiled);
    sum(mul(mul(a.detach(), bt), w)).backward();
    for (std::size_t j = 0; j < 3; ++j) {
        double s = 0;
        for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t k = 0; k < 4; ++k) s += bt.grad()[(i * 3 + j) * 4 + k];
        EXPECT_NEAR(b.grad()[j], s, 1e-12);
    }
}

TEST(Conv2d, OnesExample) {
    auto y = conv2d<float>(Tensor<float>::ones({1, 1, 3, 3}), Tensor<float>::ones({1, 1, 3, 3}), nullptr, 1, 0);
    EXPECT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
    EXPECT_EQ(y.item(), 9.0f);
}

TEST(Conv2d, IdentityKernel) {
    Rng rng(5);
    auto x = oracle::random_tensor<float>({1, 1, 4, 5}, rng);
    auto y = conv2d<float>(x, Tensor<float>::ones({1, 1, 1, 1}), nullptr, 1, 0);
    EXPECT_EQ(values(y), values(x));
}

TEST(Conv2d, MatchesDirectLoopsInSingle) {
    Rng rng(6);
    struct Case {
        std::size_t stride, pad, k;
    };
    for (Case c : {Case{1, 1, 3}, Case{2, 1, 3}, Case{1, 0, 3}, Case{1, 0, 1}, Case{2, 2, 5}}) {
        auto x = oracle::random_tensor<float>({2, 3, 8, 8}, rng);
        auto w = oracle::random_tensor<float>({4, 3, c.k, c.k}, rng);
        auto b = oracle::random_tensor<float>({4}, rng);
        const auto got = oracle::to_double(conv2d(x, w, &b, c.stride, c.pad));
        const auto ref = oracle::conv2d_direct(x, w, &b, c.stride, c.pad);
        ASSERT_EQ(got.size(), ref.size());
        EXPECT_LT(oracle::rel_error(got, ref), 1e-6) << "stride " << c.stride << " pad " << c.pad;
    }
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
    Rng rng(7);
    auto x = oracle::random_tensor<double>({1, 2, 5, 5}, rng);
    auto w = oracle::random_tensor<double>({3, 2, 3, 3}, rng);
    auto b = oracle::random_tensor<double>({3}, rng);
    auto f = [](const std::vector<Tensor<double>>& in) { return conv2d(in[0], in[1], &in[2], 1, 1); };
    EXPECT_LT(fd_check(f, {x, w, b}, 1, 1e-5), 1e-6);
    EXPECT_LT(fd_check(f, {x, w, b}, 0, 1e-5), 1e-6);
    EXPECT_LT(fd_check(f, {x, w, b}, 2, 1e-5), 1e-6);
    auto strided = [](const std::vector<Tensor<double>>& in) { return conv2d(in[0], in[1], &in[2], 2, 1); };
    EXPECT_LT(fd_check(strided, {x, w, b}, 0, 1e-5), 1e-6);
}

TEST(Conv2d, ShapeErrors) {
    EXPECT_THROW(conv2d<float>(Tensor<float>::ones({1, 2, 4, 4}), Tensor<float>::ones({1, 3, 3, 3}), nullptr, 1, 1),
                 ShapeError);
    EXPECT_THROW(conv2d<float>(Tensor<float>::ones({2, 4, 4}), Tensor<float>::ones({1, 2, 3, 3}), nullptr, 1, 1),
                 ShapeError);
    EXPECT_THROW(conv2d<float>(Tensor<float>::ones({1, 1, 2, 2}), Tensor<float>::ones({1, 1, 5, 5}), nullptr, 1, 0),
                 ShapeError);
}

TEST(Resample, UpsampleReplicates) {
    auto y = upsample_nearest2x(Tensor<float>({1, 1, 2, 2}, {1, 2, 3, 4}));
    EXPECT_EQ(values(y), (std::vector<float>{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4}));
}

TEST(Resample, ConstantRoundTrip) {
    auto c = Tensor<float>::full({1, 2, 8, 8}, 0.37f);
    auto down = conv2d<float>(c, Tensor<float>::ones({2, 2, 1, 1}), nullptr, 2, 0);
    auto up = upsample_nearest2x(scale(down, 0.5f));
    EXPECT_EQ(values(up), values(c));
    EXPECT_EQ(values(upsample_nearest2x(avg_pool2x(c))), values(c));
}

TEST(Resample, GradientsMatchFiniteDifferences) {
    Rng rng(8);
    auto x = oracle::random_tensor<double>({1, 2, 4, 6}, rng);
    EXPECT_LT(fd_check([](const auto& in) { return upsample_nearest2x(in[0]); }, {x}, 0, 1e-6), 1e-6);
    EXPECT_LT(fd_check([](const auto& in) { return avg_pool2x(in[0]); }, {x}, 0, 1e-6), 1e-6);
}

TEST(Reduce, ChannelExamples) {
    Tensor<double> x({1, 3, 1, 1}, {0.2, 0.5, 0.8});
    EXPECT_DOUBLE_EQ(reduce(x, {1}, ReduceKind::mean, false).item(), 0.5);
    EXPECT_DOUBLE_EQ(reduce(x, {1}, ReduceKind::max, false).item(), 0.8);
    EXPECT_DOUBLE_EQ(reduce(x, {1}, ReduceKind::min, true).item(), 0.2);
    EXPECT_EQ(reduce(x, {1}, ReduceKind::sum, true).shape(), (Shape{1, 1, 1, 1}));
}

TEST(Reduce, TiedMaxSendsGradientToFirst) {
    auto x = leaf({1, 2}, {0.5, 0.5});
    reduce(x, {1}, ReduceKind::max, false).backward();
    EXPECT_EQ(x.grad()[0], 1.0);
    EXPECT_EQ(x.grad()[1], 0.0);
}

TEST(Activation, Examples) {
    EXPECT_EQ(sigmoid(Tensor<double>::scalar(0)).item(), 0.5);
    EXPECT_EQ(values(relu(Tensor<double>({2}, {-1, 2}))), (std::vector<double>{0, 2}));
    auto z = leaf({1}, {0.0});
    softplus(z).backward();
    EXPECT_DOUBLE_EQ(z.grad()[0], 0.5);
}

TEST(Concat, Examples) {
    Rng rng(9);
    std::vector<Tensor<float>> parts;
    for (int i = 0; i < 3; ++i) parts.push_back(oracle::random_tensor<float>({1, 1, 2, 2}, rng));
    auto c = concat(parts, 1);
    EXPECT_EQ(c.shape(), (Shape{1, 3, 2, 2}));
    EXPECT_EQ(c.at({0, 2, 1, 0}), parts[2].at({0, 0, 1, 0}));
    EXPECT_EQ(values(concat(std::vector<Tensor<float>>{parts[0]}, 1)), values(parts[0]));
}

TEST(Concat, GradientMatchesFiniteDifferences) {
    Rng rng(10);
    auto a = oracle::random_tensor<double>({2, 1, 3, 3}, rng);
    auto b = oracle::random_tensor<double>({2, 2, 3, 3}, rng);
    auto f = [](const std::vector<Tensor<double>>& in) { return concat(std::vector{in[0], in[1]}, 1); };
    EXPECT_LT(fd_check(f, {a, b}, 0, 1e-6), 1e-6);
    EXPECT_LT(fd_check(f, {a, b}, 1, 1e-6), 1e-6);
}

TEST(Backward, SumAndSquare) {
    auto x = leaf({2, 3}, {1, 2, 3, 4, 5, 6});
    sum(x).backward();
    for (double g : x.grad()) EXPECT_EQ(g, 1.0);
    auto y = leaf({2}, {1, 2});
    sum(mul(y, y)).backward();
    EXPECT_EQ(y.grad()[0], 2.0);
    EXPECT_EQ(y.grad()[1], 4.0);
}

TEST(Backward, LeafGradientsAccumulateUntilZeroed) {
    auto x = leaf({2}, {1, 2});
    sum(x).backward();
    sum(x).backward();
    EXPECT_EQ(x.grad()[0], 2.0);
    x.zero_grad();
    EXPECT_FALSE(x.has_grad());
}

TEST(Backward, DiamondGraphVisitsSharedNodeOnce) {
    auto x = leaf({1}, {3.0});
    auto y = mul(x, x);          // shared by both branches
    auto z = add(y, scale(y, 2.0));  // 3 x^2
    z.backward();
    EXPECT_DOUBLE_EQ(x.grad()[0], 18.0);
}

TEST(Backward, IsBitwiseDeterministic) {
    auto run = [] {
        Rng rng(11);
        auto x = oracle::random_tensor<float>({2, 3, 8, 8}, rng).set_requires_grad(true);
        auto w = oracle::random_tensor<float>({4, 3, 3, 3}, rng).set_requires_grad(true);
        auto y = sigmoid(conv2d<float>(x, w, nullptr, 1, 1));
        sum(mul(y, y)).backward();
        return std::vector<float>(w.grad().begin(), w.grad().end());
    };
    EXPECT_EQ(run(), run());
}

TEST(Backward, NoGradRecordsNothing) {
    auto x = leaf({2}, {1, 2});
    NoGradGuard ng;
    auto y = mul(x, x);
    EXPECT_FALSE(y.requires_grad());
    EXPECT_TRUE(y.is_leaf());
}

TEST(FlopCounter, ConvClosedForm) {
    OpCounter counter;
    counter.dry_run = true;
    OpCounterGuard guard(counter);
    Tensor<float> w = Tensor<float>::zeros({8, 3, 3, 3}), b = Tensor<float>::zeros({8});
    conv2d(Tensor<float>::zeros({1, 3, 16, 16}), w, &b, 1, 1);
    EXPECT_EQ(counter.flops, 110592u);
}
