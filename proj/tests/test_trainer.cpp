#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "cpga/trainer.hpp"
#include "oracles.hpp"
#include "synthetic.hpp"

using namespace cpga;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.base_width = 4;
    c.global_width = 4;
    c.global_depth = 1;
    c.cbam_reduction = 2;
    c.iaaf_hidden = 4;
    c.image_iaaf_hidden = 4;
    return c;
}

TrainOptions tiny_options() {
    TrainOptions o;
    o.model = tiny_config();
    o.batch.batch_size = 2;
    o.batch.crop = 16;
    o.batch.seed = 5;
    o.schedule.total_epochs = 100;
    o.schedule.cycle = 4;
    o.epochs = 100;
    return o;
}

std::vector<float> flat_params(const CPGANet<float>& net) {
    std::vector<float> out;
    for (const auto& p : net.parameters()) out.insert(out.end(), p.tensor.data().begin(), p.tensor.data().end());
    return out;
}

fs::path temp_dir(const std::string& name) {
    auto p = fs::temp_directory_path() / ("cpga_test_" + name);
    fs::remove_all(p);
    return p;
}

}  // namespace

TEST(Adam, FirstStepMagnitude) {
    Tensor<double> w({1}, {0.7});
    w.set_requires_grad(true);
    ParameterList<double> params{{"w", w}};
    AdamState<double> state;
    sum(w).backward();  // g = 1
    adam_step(params, state, 1e-3);
    // m = 0.1, v = 0.001, both bias-corrected to 1
    EXPECT_NEAR(0.7 - w.data()[0], 1e-3 / (1 + 1e-8), 1e-15);
    EXPECT_EQ(state.step, 1u);
}

TEST(Adam, MatchesRecurrenceOverSteps) {
    Tensor<double> w({2}, {0.5, -0.25});
    w.set_requires_grad(true);
    ParameterList<double> params{{"w", w}};
    AdamState<double> state;
    double m[2] = {0, 0}, v[2] = {0, 0}, ref[2] = {0.5, -0.25};
    for (int t = 1; t <= 5; ++t) {
        w.zero_grad();
        sum(mul(w, w)).backward();  // g = 2w
        for (int k = 0; k < 2; ++k) {
            const double g = 2 * ref[k];
            m[k] = 0.9 * m[k] + 0.1 * g;
            v[k] = 0.999 * v[k] + 0.001 * g * g;
            const double mh = m[k] / (1 - std::pow(0.9, t)), vh = v[k] / (1 - std::pow(0.999, t));
            ref[k] -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
        }
        adam_step(params, state, 0.01);
        EXPECT_NEAR(w.data()[0], ref[0], 1e-14);
        EXPECT_NEAR(w.data()[1], ref[1], 1e-14);
    }
}

TEST(Adam, ZeroGradientFixedPointAndErrors) {
    Tensor<float> w({3}, {1, 2, 3});
    w.set_requires_grad(true);
    ParameterList<float> params{{"w", w}};
    AdamState<float> state;
    adam_step(params, state, 1e-3);
    EXPECT_EQ(w.data()[1], 2.0f);
    state.m[0] = {0.5f, 0.5f, 0.5f};
    adam_step(params, state, 1e-3);
    EXPECT_LT(state.m[0][0], 0.5f);
    EXPECT_EQ(state.step, 2u);
    EXPECT_THROW(adam_step(params, state, 0.0), std::invalid_argument);
    Tensor<float> other({2}, {1, 2});
    EXPECT_THROW(adam_step(ParameterList<float>{{"w", w}, {"x", other}}, state, 1e-3), ShapeError);
}

TEST(Schedule, ClosedForm) {
    Schedule s;
    EXPECT_EQ(s.lr_at(0), 1e-3);
    EXPECT_NEAR(s.lr_at(33), 1e-3 * 0.5 * (1 + std::cos(33 * std::numbers::pi / 67)), 1e-18);
    EXPECT_NEAR(s.lr_at(33) / 1e-3, 0.5117, 1e-4);
    EXPECT_EQ(s.lr_at(67), 1e-3);
    for (std::size_t e = 0; e < 600; ++e) {
        const double expected = 0.5 * 1e-3 * (1 + std::cos(std::numbers::pi * static_cast<double>(e % 67) / 67.0));
        ASSERT_NEAR(s.lr_at(e), expected, 1e-18) << e;
        ASSERT_GT(s.lr_at(e), 0.0);
        ASSERT_LE(s.lr_at(e), 1e-3);
    }
    EXPECT_THROW(s.lr_at(600), std::out_of_range);
    Schedule flat;
    flat.cycle = 0;
    EXPECT_EQ(flat.lr_at(599), 1e-3);
}

TEST(Log, Format) {
    LogRecord r{3, 17, 0.5, 0.25, 0.125, 1.0 / 3, 2.0, 1e-3};
    EXPECT_EQ(format_log_line(r), "3\t17\t0.5\t0.25\t0.125\t0.333333333\t2\t0.001");
}

TEST(Trainer, StepCounterAndDeterminism) {
    auto pairs = testdata::synthetic_pairs(4, 24, 24, 1);
    MemorySource<float> src(pairs);
    auto opts = tiny_options();
    opts.max_steps = 10;
    Trainer a(opts, src), b(opts, src);
    std::uint64_t last = 0;
    a.on_step = [&](const LogRecord& r) {
        EXPECT_EQ(r.step, last + 1);
        EXPECT_EQ(a.optimizer().step, r.step);
        last = r.step;
    };
    const auto ra = a.run();
    b.run();
    EXPECT_EQ(ra.steps, 10u);
    EXPECT_EQ(flat_params(a.model()), flat_params(b.model()));
    for (std::size_t i = 1; i < ra.records.size(); ++i) {
        const auto& p = ra.records[i - 1];
        const auto& q = ra.records[i];
        EXPECT_TRUE(q.epoch > p.epoch || (q.epoch == p.epoch && q.step > p.step));
    }
}

TEST(Trainer, ResumeAtAnySplitMatches) {
    auto pairs = testdata::synthetic_pairs(5, 24, 24, 2);
    MemorySource<float> src(pairs);
    auto opts = tiny_options();
    opts.max_steps = 12;
    Trainer full(opts, src);
    full.run();
    for (std::uint64_t split : {1u, 3u, 7u}) {
        auto first = opts;
        first.max_steps = split;
        Trainer a(first, src);
        a.run();
        auto bytes = encode_checkpoint(a.make_checkpoint());
        Trainer b(opts, src);
        b.restore(decode_checkpoint(bytes));
        b.run();
        EXPECT_EQ(flat_params(b.model()), flat_params(full.model())) << "split " << split;
    }
}

TEST(Trainer, WritesLogAndCheckpoints) {
    auto dir = temp_dir("trainer_out");
    auto pairs = testdata::synthetic_pairs(4, 24, 24, 3);
    MemorySource<float> src(pairs);
    auto opts = tiny_options();
    opts.out_dir = dir;
    opts.epochs = 2;
    opts.validate_every = 1;
    Trainer t(opts, src, &src);
    const auto r = t.run();
    EXPECT_EQ(r.steps, 4u);
    ASSERT_TRUE(r.best.has_value());
    for (auto name : {"train.log", "last.ckpt", "final.ckpt", "best.ckpt"}) EXPECT_TRUE(fs::exists(dir / name)) << name;
    std::ifstream log(dir / "train.log");
    std::string line;
    std::getline(log, line);
    EXPECT_EQ(line, kLogHeader);
    int rows = 0;
    while (std::getline(log, line)) ++rows;
    EXPECT_EQ(rows, 4);
    auto model = load_checkpoint<float>(dir / "final.ckpt");
    EXPECT_EQ(flat_params(model), flat_params(t.model()));
}

TEST(Trainer, NonFiniteLossAborts) {
    auto dir = temp_dir("trainer_nan");
    auto pairs = testdata::synthetic_pairs(2, 24, 24, 4);
    MemorySource<float> src(pairs);
    auto opts = tiny_options();
    opts.out_dir = dir;
    Trainer t(opts, src);
    Tensor<float> w = t.model().parameters().back().tensor;
    w.mutable_data()[0] = std::numeric_limits<float>::quiet_NaN();
    try {
        t.run();
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_EQ(e.step(), 1u);
    }
    std::ifstream log(dir / "train.log");
    std::string header, row;
    std::getline(log, header);
    ASSERT_TRUE(std::getline(log, row));
    EXPECT_NE(row.find("nan"), std::string::npos);
}

TEST(Trainer, EvaluateReturnsFiniteMetrics) {
    auto pairs = testdata::synthetic_pairs(2, 16, 16, 5);
    for (auto& p : pairs) p.low = p.gt;
    MemorySource<float> src(pairs);
    CPGANet<float> net(tiny_config());
    const auto v = evaluate(net, src);
    EXPECT_TRUE(std::isfinite(v.psnr));
    EXPECT_LE(v.ssim, 1.0);
}
