#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "cpga/gradcheck.hpp"
#include "cpga/ops.hpp"

using namespace cpga;

namespace {

struct FaultGuard {
    FaultGuard() { cpga::testing::set_conv2d_sign_fault(true); }
    ~FaultGuard() { cpga::testing::set_conv2d_sign_fault(false); }
};

}  // namespace

TEST(Gradcheck, RelativeError) {
    EXPECT_EQ(relative_error({0, 0}, {0, 0}), 0.0);
    EXPECT_DOUBLE_EQ(relative_error({1, 0}, {0, 0}), 1.0);
    EXPECT_NEAR(relative_error({3, 4}, {3, 4.5}), 0.5 / std::sqrt(29.25), 1e-12);
}

TEST(Gradcheck, SuiteCoversOpsLossesAndModel) {
    std::set<std::string> names;
    for (const auto& s : gradcheck_suite()) {
        EXPECT_TRUE(names.insert(s.name).second) << "duplicate " << s.name;
        EXPECT_LE(s.threshold, kCompositeThreshold);
    }
    for (auto n : {"add", "div", "pow_elem", "conv2d", "upsample_nearest2x", "reduce.max", "sigmoid", "softplus",
                   "concat", "channel_priors", "gamma_correct", "atsm_enhance", "mu_law", "l1_loss", "hdr_l1_loss",
                   "ssim_loss", "perceptual_loss", "total_loss", "model"})
        EXPECT_TRUE(names.contains(n)) << n;
}

TEST(Gradcheck, FilteredRunPasses) {
    GradcheckOptions o;
    const auto results = run_gradcheck({"conv2d", "mul", "gamma_correct"}, o);
    ASSERT_GE(results.size(), 3u);
    for (const auto& r : results) {
        EXPECT_TRUE(r.passed) << r.op << " " << r.max_rel_error;
        EXPECT_EQ(r.instances, 20u);
        EXPECT_LT(r.max_rel_error, r.threshold);
    }
    EXPECT_THROW(run_gradcheck({"no_such_op"}), std::invalid_argument);
}

TEST(Gradcheck, DetectsWrongSignBackward) {
    FaultGuard fault;
    GradcheckOptions o;
    o.instances = 3;
    for (const auto& r : run_gradcheck({"conv2d"}, o)) {
        EXPECT_FALSE(r.passed) << r.op;
        EXPECT_GT(r.max_rel_error, 0.5);
    }
}
