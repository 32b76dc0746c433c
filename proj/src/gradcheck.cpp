#include "cpga/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "cpga/image_priors.hpp"
#include "cpga/losses.hpp"
#include "cpga/model.hpp"
#include "cpga/nn.hpp"
#include "cpga/ops.hpp"
#include "cpga/rng.hpp"

namespace cpga {

using TD = Tensor<double>;

namespace {

TD uniform(const Shape& shape, double lo, double hi, Rng& rng, bool grad = true) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    TD t(shape, std::move(v));
    if (grad) t.set_requires_grad(true);
    return t;
}

// Values with |x| in [margin, hi] and random sign, away from the kink at 0.
TD signed_away(const Shape& shape, double margin, double hi, Rng& rng) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = rng.uniform(margin, hi) * (rng.uniform(0, 1) < 0.5 ? -1.0 : 1.0);
    TD t(shape, std::move(v));
    t.set_requires_grad(true);
    return t;
}

// Parameters become leaves of the check alongside the explicit inputs. Zero
// biases are jittered: they put relu inputs exactly on the kink wherever
// the incoming features vanish.
std::vector<TD> with_params(std::vector<TD> inputs, const ParameterList<double>& params, Rng& rng) {
    for (const auto& p : params) {
        TD t = p.tensor;
        if (p.name.ends_with("bias"))
            for (auto& v : t.mutable_data()) v = rng.uniform(-0.1, 0.1);
        inputs.push_back(t);
    }
    return inputs;
}

template <typename M>
std::vector<TD> with_params(std::vector<TD> inputs, const M& module, Rng& rng) {
    ParameterList<double> params;
    module.collect(params, "");
    return with_params(std::move(inputs), params, rng);
}

GradcheckSpec op(std::string name, std::function<GradcheckCase(Rng&)> make, double threshold = kOpThreshold) {
    // composite functions contain relu/clamp/max kinks that random inputs
    // cannot avoid, so their stencils are screened
    const bool screen = threshold > kOpThreshold;
    return {std::move(name), threshold, [make, screen](std::uint64_t seed) {
                Rng rng(seed);
                GradcheckCase c = make(rng);
                c.screen_kinks = screen;
                return c;
            }};
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ull;
    return h;
}

}  // namespace

double relative_error(const std::vector<double>& a, const std::vector<double>& n) {
    double diff = 0, na = 0, nn = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - n[i]) * (a[i] - n[i]);
        na += a[i] * a[i];
        nn += n[i] * n[i];
    }
    const double denom = std::sqrt(std::max(na, nn));
    if (denom == 0) return 0;
    return std::sqrt(diff) / denom;
}

namespace {

double check_with_step(const GradcheckCase& c, const GradcheckOptions& options, std::uint64_t seed, double step) {
    Rng rng(mix_seed(seed, 0x77));
    TD out;
    {
        NoGradGuard guard;
        out = c.fn();
    }
    const TD weights = uniform(out.shape(), -1, 1, rng, false);
    auto objective = [&] { return sum(mul(c.fn(), weights)); };

    for (auto t : c.inputs) t.zero_grad();
    objective().backward();

    const std::size_t quota =
        std::clamp<std::size_t>(options.max_total_coords / std::max<std::size_t>(1, c.inputs.size()), 1,
                                options.max_coords);
    std::vector<double> analytic, numeric;
    std::size_t screened = 0, total = 0;
    for (auto t : c.inputs) {
        const std::size_t n = t.numel();
        std::vector<std::size_t> coords(n);
        std::iota(coords.begin(), coords.end(), 0);
        if (n > quota) {
            std::shuffle(coords.begin(), coords.end(), rng.engine());
            coords.resize(quota);
        }
        const auto grad = t.grad();
        auto data = t.mutable_data();
        for (std::size_t k : coords) {
            analytic.push_back(grad.empty() ? 0.0 : grad[k]);
            const double orig = data[k];
            const double h = step * std::max(1.0, std::abs(orig));
            NoGradGuard guard;
            data[k] = orig + h;
            const double plus = objective().item();
            data[k] = orig - h;
            const double minus = objective().item();
            const double d1 = (plus - minus) / (2 * h);
            ++total;
            if (c.screen_kinks) {
                // smooth functions give nearly equal central differences at h
                // and h/2; a kink inside the stencil does not
                data[k] = orig + h / 2;
                const double plus2 = objective().item();
                data[k] = orig - h / 2;
                const double minus2 = objective().item();
                const double d2 = (plus2 - minus2) / h;
                const double noise =
                    64 * std::numeric_limits<double>::epsilon() * (std::abs(plus) + std::abs(minus)) / h;
                if (std::abs(d1 - d2) > 1e-4 * std::max(std::abs(d1), std::abs(d2)) + noise) {
                    data[k] = orig;
                    analytic.pop_back();
                    ++screened;
                    continue;
                }
            }
            data[k] = orig;
            numeric.push_back(d1);
        }
    }
    for (auto t : c.inputs) t.zero_grad();
    // a stencil that straddles kinks almost everywhere means the check is void
    if (screened * 4 > total) return std::numeric_limits<double>::quiet_NaN();
    return relative_error(analytic, numeric);
}

}  // namespace

double check_case(const GradcheckCase& c, const GradcheckOptions& options, std::uint64_t seed) {
    double err = check_with_step(c, options, seed, options.step);
    // shrink the stencil past a kink sitting next to the sample point
    for (int retry = 0; retry < 2 && c.screen_kinks && std::isnan(err); ++retry)
        err = check_with_step(c, options, seed, options.step * std::pow(0.1, retry + 1));
    return err;
}

GradcheckResult run_check(const GradcheckSpec& spec, const GradcheckOptions& options) {
    GradcheckResult r;
    r.op = spec.name;
    r.threshold = spec.threshold;
    for (std::size_t i = 0; i < options.instances; ++i) {
        const std::uint64_t seed = mix_seed(options.seed, fnv1a(spec.name), i);
        const auto c = spec.make(seed);
        const double err = check_case(c, options, seed);
        r.max_rel_error = std::isnan(err) ? err : std::max(r.max_rel_error, err);
        ++r.instances;
        if (std::isnan(err)) break;
    }
    r.passed = !std::isnan(r.max_rel_error) && r.max_rel_error < r.threshold;
    return r;
}

std::vector<GradcheckSpec> gradcheck_suite() {
    std::vector<GradcheckSpec> s;
    const Shape img{2, 3, 5, 6};

    // elementwise and broadcasting
    s.push_back(op("add", [img](Rng& r) {
        TD a = uniform(img, -1, 1, r), b = uniform({3, 1, 6}, -1, 1, r);
        return GradcheckCase{{a, b}, [a, b] { return add(a, b); }};
    }));
    s.push_back(op("sub", [img](Rng& r) {
        TD a = uniform(img, -1, 1, r), b = uniform({1, 3, 1, 1}, -1, 1, r);
        return GradcheckCase{{a, b}, [a, b] { return sub(a, b); }};
    }));
    s.push_back(op("mul", [img](Rng& r) {
        TD a = uniform(img, -1, 1, r), b = uniform({2, 1, 5, 6}, -1, 1, r);
        return GradcheckCase{{a, b}, [a, b] { return mul(a, b); }};
    }));
    s.push_back(op("div", [img](Rng& r) {
        TD a = uniform(img, -1, 1, r), b = uniform({2, 3, 1, 1}, 0.5, 2, r);
        return GradcheckCase{{a, b}, [a, b] { return div(a, b); }};
    }));
    s.push_back(op("add_scalar", [img](Rng& r) {
        TD a = uniform(img, -1, 1, r);
        return GradcheckCase{{a}, [a] { return add_scalar(a, 0.37); }};
    }));
    s.push_back(op("scale", [img](Rng& r) {
        TD a = uniform(img, -1, 1, r);
        return GradcheckCase{{a}, [a] { return scale(a, -1.7); }};
    }));
    s.push_back(op("pow_elem", [img](Rng& r) {
        TD b = uniform(img, 0.2, 2, r), e = uniform({2, 3, 1, 1}, 0.3, 2.5, r);
        return GradcheckCase{{b, e}, [b, e] { return pow_elem(b, e); }};
    }));

    // convolution
    s.push_back(op("conv2d", [](Rng& r) {
        TD x = uniform({2, 3, 7, 6}, -1, 1, r), w = uniform({4, 3, 3, 3}, -1, 1, r), b = uniform({4}, -1, 1, r);
        return GradcheckCase{{x, w, b}, [x, w, b] { return conv2d(x, w, &b, 1, 1); }};
    }));
    s.push_back(op("conv2d.strided", [](Rng& r) {
        TD x = uniform({2, 3, 8, 7}, -1, 1, r), w = uniform({2, 3, 3, 3}, -1, 1, r), b = uniform({2}, -1, 1, r);
        return GradcheckCase{{x, w, b}, [x, w, b] { return conv2d(x, w, &b, 2, 1); }};
    }));
    s.push_back(op("conv2d.pointwise", [](Rng& r) {
        TD x = uniform({2, 5, 4, 4}, -1, 1, r), w = uniform({3, 5, 1, 1}, -1, 1, r), b = uniform({3}, -1, 1, r);
        return GradcheckCase{{x, w, b}, [x, w, b] { return conv2d(x, w, &b, 1, 0); }};
    }));
    s.push_back(op("conv2d.nobias", [](Rng& r) {
        TD x = uniform({1, 2, 9, 9}, -1, 1, r), w = uniform({1, 2, 7, 7}, -1, 1, r);
        return GradcheckCase{{x, w}, [x, w] { return conv2d(x, w, static_cast<const TD*>(nullptr), 1, 3); }};
    }));
    s.push_back(op("conv2d.valid", [](Rng& r) {
        TD x = uniform({2, 2, 6, 6}, -1, 1, r), w = uniform({3, 2, 3, 3}, -1, 1, r);
        return GradcheckCase{{x, w}, [x, w] { return conv2d(x, w, static_cast<const TD*>(nullptr), 2, 0); }};
    }));

    // resampling
    s.push_back(op("upsample_nearest2x", [](Rng& r) {
        TD x = uniform({2, 3, 3, 4}, -1, 1, r);
        return GradcheckCase{{x}, [x] { return upsample_nearest2x(x); }};
    }));
    s.push_back(op("avg_pool2x", [](Rng& r) {
        TD x = uniform({2, 3, 4, 6}, -1, 1, r);
        return GradcheckCase{{x}, [x] { return avg_pool2x(x); }};
    }));

    // reductions
    const std::pair<const char*, ReduceKind> kinds[] = {
        {"reduce.max", ReduceKind::max}, {"reduce.min", ReduceKind::min},
        {"reduce.mean", ReduceKind::mean}, {"reduce.sum", ReduceKind::sum}};
    for (const auto& [name, kind] : kinds) {
        const ReduceKind k = kind;
        s.push_back(op(name, [img, k](Rng& r) {
            TD x = uniform(img, -1, 1, r);
            return GradcheckCase{{x}, [x, k] { return add(reduce(x, {1}, k, true), reduce(x, {2, 3}, k, true)); }};
        }));
    }
    s.push_back(op("sum", [img](Rng& r) {
        TD x = uniform(img, -1, 1, r);
        return GradcheckCase{{x}, [x] { return sum(x); }};
    }));
    s.push_back(op("mean", [img](Rng& r) {
        TD x = uniform(img, -1, 1, r);
        return GradcheckCase{{x}, [x] { return mean(x); }};
    }));

    // pointwise nonlinearities
    s.push_back(op("relu", [img](Rng& r) {
        TD x = signed_away(img, 0.05, 2, r);
        return GradcheckCase{{x}, [x] { return relu(x); }};
    }));
    s.push_back(op("sigmoid", [img](Rng& r) {
        TD x = uniform(img, -3, 3, r);
        return GradcheckCase{{x}, [x] { return sigmoid(x); }};
    }));
    s.push_back(op("tanh", [img](Rng& r) {
        TD x = uniform(img, -3, 3, r);
        return GradcheckCase{{x}, [x] { return activation(x, Activation::tanh); }};
    }));
    s.push_back(op("softplus", [img](Rng& r) {
        TD x = uniform(img, -3, 3, r);
        return GradcheckCase{{x}, [x] { return softplus(x); }};
    }));
    s.push_back(op("abs", [img](Rng& r) {
        TD x = signed_away(img, 0.05, 2, r);
        return GradcheckCase{{x}, [x] { return abs(x); }};
    }));
    s.push_back(op("clamp", [img](Rng& r) {
        TD x = uniform(img, -1, 1, r);
        for (auto& v : x.mutable_data())
            if (std::abs(std::abs(v) - 0.5) < 0.02) v += 0.05;
        return GradcheckCase{{x}, [x] { return clamp(x, -0.5, 0.5); }};
    }));
    s.push_back(op("mu_law_map", [img](Rng& r) {
        TD x = uniform(img, 0.01, 1, r);
        return GradcheckCase{{x}, [x] { return mu_law_map(x, kDefaultMu); }};
    }));

    // layout
    s.push_back(op("concat", [](Rng& r) {
        TD a = uniform({2, 2, 3, 3}, -1, 1, r), b = uniform({2, 4, 3, 3}, -1, 1, r);
        return GradcheckCase{{a, b}, [a, b] { return concat<double>({a, b, a}, 1); }};
    }));
    s.push_back(op("reshape", [img](Rng& r) {
        TD x = uniform(img, -1, 1, r);
        return GradcheckCase{{x}, [x] { return reshape(x, {6, 30}); }};
    }));

    // image priors
    s.push_back(op("channel_priors", [](Rng& r) {
        TD x = uniform({2, 5, 4, 4}, -1, 1, r);
        return GradcheckCase{{x}, [x] { return channel_priors(x); }};
    }));
    s.push_back(op("luminance", [img](Rng& r) {
        TD x = uniform(img, 0, 1, r);
        return GradcheckCase{{x}, [x] { return luminance(x); }};
    }));
    s.push_back(op("gamma_correct", [](Rng& r) {
        TD x = uniform({2, 4, 5, 5}, 0.05, 1, r), g = uniform({2, 4, 1, 1}, 0.3, 2.5, r);
        return GradcheckCase{{x, g}, [x, g] { return gamma_correct(x, g); }};
    }));
    s.push_back(op("atsm_enhance", [](Rng& r) {
        TD l = uniform({2, 4, 5, 5}, -1, 1, r), t = uniform({2, 1, 5, 5}, 0.2, 1, r),
           a = uniform({2, 4, 5, 5}, -1, 1, r);
        return GradcheckCase{{l, t, a}, [l, t, a] { return atsm_enhance(l, t, a); }};
    }));
    s.push_back(op("mu_law", [img](Rng& r) {
        TD x = uniform(img, 0.01, 1, r);
        return GradcheckCase{{x}, [x] { return mu_law(x); }};
    }));

    // losses
    s.push_back(op("l1_loss", [img](Rng& r) {
        TD y = uniform(img, 0, 1, r), g = uniform(img, 0, 1, r, false);
        return GradcheckCase{{y}, [y, g] { return l1_loss(y, g); }};
    }, kCompositeThreshold));
    s.push_back(op("hdr_l1_loss", [img](Rng& r) {
        TD y = uniform(img, 0.01, 1, r), g = uniform(img, 0.01, 1, r, false);
        return GradcheckCase{{y}, [y, g] { return hdr_l1_loss(y, g); }};
    }, kCompositeThreshold));
    s.push_back(op("ssim_loss", [](Rng& r) {
        TD y = uniform({2, 3, 14, 13}, 0, 1, r), g = uniform({2, 3, 14, 13}, 0, 1, r, false);
        return GradcheckCase{{y}, [y, g] { return ssim_loss(y, g); }};
    }, kCompositeThreshold));
    s.push_back(op("perceptual_loss", [](Rng& r) {
        TD y = uniform({2, 3, 16, 16}, 0, 1, r), g = uniform({2, 3, 16, 16}, 0, 1, r, false);
        auto ex = std::make_shared<ConvPyramidExtractor<double>>(ConvPyramidExtractor<double>::random(0, {4, 6}));
        return GradcheckCase{{y}, [y, g, ex] { return perceptual_loss(y, g, *ex); }};
    }, kCompositeThreshold));
    s.push_back(op("total_loss", [](Rng& r) {
        TD y = uniform({1, 3, 16, 16}, 0.01, 1, r), g = uniform({1, 3, 16, 16}, 0.01, 1, r, false);
        auto ex = std::make_shared<ConvPyramidExtractor<double>>(ConvPyramidExtractor<double>::random(0, {4, 6}));
        return GradcheckCase{{y}, [y, g, ex] { return total_loss(y, g, LossSpec{}, *ex).total; }};
    }, kCompositeThreshold));

    // blocks, with respect to inputs and parameters
    s.push_back(op("block.rescbam", [](Rng& r) {
        auto m = std::make_shared<ResCBAM<double>>(4, 1, 2, r);
        TD x = uniform({2, 4, 6, 6}, -1, 1, r);
        return GradcheckCase{with_params({x}, *m, r), [m, x] { return m->forward(x); }};
    }, kCompositeThreshold));
    s.push_back(op("block.rescbam_strided", [](Rng& r) {
        auto m = std::make_shared<ResCBAM<double>>(4, 2, 2, r);
        TD x = uniform({2, 4, 6, 8}, -1, 1, r);
        return GradcheckCase{with_params({x}, *m, r), [m, x] { return m->forward(x); }};
    }, kCompositeThreshold));
    s.push_back(op("block.t_estimator", [](Rng& r) {
        auto m = std::make_shared<TEstimator<double>>(5, 4, 1e-2, r);
        TD x = uniform({2, 5, 5, 5}, -1, 1, r);
        return GradcheckCase{with_params({x}, *m, r), [m, x] { return m->forward(x); }};
    }, kCompositeThreshold));
    s.push_back(op("block.a_estimator", [](Rng& r) {
        auto m = std::make_shared<AEstimator<double>>(5, 4, r);
        TD x = uniform({2, 5, 6, 4}, -1, 1, r);
        return GradcheckCase{with_params({x}, *m, r), [m, x] { return m->forward(x); }};
    }, kCompositeThreshold));
    s.push_back(op("block.iaaf", [](Rng& r) {
        auto m = std::make_shared<IAAF<double>>(3, 4, r);
        TD a = uniform({2, 3, 5, 5}, 0, 1, r), b = uniform({2, 3, 5, 5}, 0, 1, r);
        return GradcheckCase{with_params({a, b}, *m, r), [m, a, b] { return m->forward(a, b); }};
    }, kCompositeThreshold));
    s.push_back(op("block.cp", [](Rng& r) {
        BlockOptions o;
        o.iaaf_hidden = 4;
        auto m = std::make_shared<CPBlock<double>>(4, o, r);
        TD f = uniform({2, 4, 6, 6}, -1, 1, r), im = uniform({2, 3, 6, 6}, 0, 1, r);
        return GradcheckCase{with_params({f, im}, *m, r), [m, f, im] { return m->forward(f, &im); }};
    }, kCompositeThreshold));
    s.push_back(op("block.cpga", [](Rng& r) {
        BlockOptions o;
        o.iaaf_hidden = 4;
        auto m = std::make_shared<CPGABlock<double>>(4, 3, o, r);
        TD f = uniform({2, 4, 6, 6}, -1, 1, r), im = uniform({2, 3, 6, 6}, 0, 1, r), g = uniform({2, 3}, -1, 1, r);
        return GradcheckCase{with_params({f, im, g}, *m, r), [m, f, im, g] { return m->forward(f, &im, g); }};
    }, kCompositeThreshold));
    s.push_back(op("block.global", [](Rng& r) {
        auto m = std::make_shared<GlobalBranch<double>>(4, 2, 2, 0.1, r);
        TD x = uniform({2, 3, 8, 8}, 0, 1, r);
        return GradcheckCase{with_params({x}, *m, r), [m, x] { return m->forward(x).gamma; }};
    }, kCompositeThreshold));

    s.push_back(op("model", [](Rng& r) {
        ModelConfig c;
        c.base_width = 4;
        c.global_width = 4;
        c.global_depth = 1;
        c.cbam_reduction = 2;
        c.iaaf_hidden = 4;
        c.image_iaaf_hidden = 4;
        c.seed = r.engine()();
        auto m = std::make_shared<CPGANet<double>>(c);
        TD x = uniform({1, 3, 16, 16}, 0.1, 0.9, r);
        return GradcheckCase{with_params({x}, m->parameters(), r), [m, x] { return m->forward_detailed(x).unclamped; }};
    }, kCompositeThreshold));
    return s;
}

std::vector<GradcheckResult> run_gradcheck(const std::vector<std::string>& filter, const GradcheckOptions& options) {
    std::vector<GradcheckResult> out;
    for (const auto& spec : gradcheck_suite()) {
        bool selected = filter.empty();
        for (const auto& f : filter)
            if (spec.name == f || spec.name.starts_with(f + ".")) selected = true;
        if (selected) out.push_back(run_check(spec, options));
    }
    if (out.empty()) throw std::invalid_argument("no gradient check matches the requested op");
    return out;
}

}  // namespace cpga
