#include "cpga/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

namespace cpga {

namespace {

thread_local OpCounter* g_counter = nullptr;
bool g_conv2d_sign_fault = false;

template <typename T>
using Impl = detail::TensorImpl<T>;
template <typename T>
using BackwardFn = std::function<void(const Impl<T>&)>;

/// Records FLOPs; true when the caller should skip arithmetic.
bool account(std::uint64_t flops) {
    if (!g_counter) return false;
    g_counter->add(flops);
    return g_counter->dry_run;
}

template <typename T>
Tensor<T> make_output(Shape shape, std::vector<T> data, const char* op,
                      std::initializer_list<const Tensor<T>*> inputs, BackwardFn<T> backward) {
    Tensor<T> out(std::move(shape), std::move(data));
    if (!detail::grad_mode_enabled()) return out;
    bool needs = false;
    for (const auto* in : inputs) needs = needs || in->requires_grad();
    if (!needs) return out;
    auto node = std::make_shared<detail::GradNode<T>>();
    node->op = op;
    for (const auto* in : inputs) node->inputs.push_back(in->impl());
    node->backward = std::move(backward);
    out.impl()->requires_grad = true;
    out.impl()->node = std::move(node);
    return out;
}

// ---------------------------------------------------------------------------
// Broadcasting

struct BroadcastPlan {
    Shape out;
    std::vector<std::size_t> stride_a;
    std::vector<std::size_t> stride_b;
};

std::vector<std::size_t> aligned_strides(const Shape& in, const Shape& out) {
    const std::size_t rank = out.size();
    const std::size_t offset = rank - in.size();
    std::vector<std::size_t> strides(rank, 0);
    std::size_t s = 1;
    for (std::size_t i = in.size(); i-- > 0;) {
        strides[i + offset] = in[i] == 1 ? 0 : s;
        s *= in[i];
    }
    return strides;
}

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
    BroadcastPlan plan;
    plan.out = broadcast_shapes(a, b);
    plan.stride_a = aligned_strides(a, plan.out);
    plan.stride_b = aligned_strides(b, plan.out);
    return plan;
}

/// Calls f(out_index, a_index, b_index) for every output element in order.
template <typename F>
void for_each_broadcast(const BroadcastPlan& plan, F&& f) {
    const std::size_t rank = plan.out.size();
    const std::size_t inner = plan.out[rank - 1];
    const std::size_t sa = plan.stride_a[rank - 1];
    const std::size_t sb = plan.stride_b[rank - 1];
    const std::size_t outer = numel(plan.out) / inner;
    std::vector<std::size_t> idx(rank, 0);
    std::size_t base_a = 0, base_b = 0, o = 0;
    for (std::size_t block = 0; block < outer; ++block) {
        for (std::size_t j = 0; j < inner; ++j) f(o++, base_a + j * sa, base_b + j * sb);
        for (std::size_t d = rank - 1; d-- > 0;) {
            ++idx[d];
            base_a += plan.stride_a[d];
            base_b += plan.stride_b[d];
            if (idx[d] < plan.out[d]) break;
            base_a -= plan.stride_a[d] * idx[d];
            base_b -= plan.stride_b[d] * idx[d];
            idx[d] = 0;
        }
    }
}

/// Elementwise binary op. da/db give the local partials from (x, y, z).
template <typename T, typename Fwd, typename DA, typename DB>
Tensor<T> binary(const char* name, const Tensor<T>& a, const Tensor<T>& b, Fwd fwd, DA da, DB db) {
    auto plan = plan_broadcast(a.shape(), b.shape());
    const std::size_t n = numel(plan.out);
    if (account(n)) return Tensor<T>::zeros(plan.out);
    std::vector<T> out(n);
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    if (a.shape() == b.shape()) {
        for (std::size_t i = 0; i < n; ++i) out[i] = fwd(pa[i], pb[i]);
    } else {
        for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = fwd(pa[ia], pb[ib]); });
    }
    auto ia = a.impl();
    auto ib = b.impl();
    return make_output<T>(plan.out, std::move(out), name, {&a, &b}, [ia, ib, plan, da, db](const Impl<T>& z) {
        T* ga = ia->grad_buffer();
        T* gb = ib->grad_buffer();
        const T* x = ia->data.data();
        const T* y = ib->data.data();
        const T* g = z.grad.data();
        const T* zd = z.data.data();
        if (ia->shape == ib->shape) {
            const std::size_t n = z.data.size();
            if (ga)
                for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * da(x[i], y[i], zd[i]);
            if (gb)
                for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * db(x[i], y[i], zd[i]);
            return;
        }
        for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) {
            if (ga) ga[i] += g[o] * da(x[i], y[j], zd[o]);
            if (gb) gb[j] += g[o] * db(x[i], y[j], zd[o]);
        });
    });
}

template <typename T, typename Fwd, typename D>
Tensor<T> unary(const char* name, const Tensor<T>& x, Fwd fwd, D deriv) {
    const std::size_t n = x.numel();
    if (account(n)) return Tensor<T>::zeros(x.shape());
    std::vector<T> out(n);
    const T* px = x.data().data();
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(px[i]);
    auto ix = x.impl();
    return make_output<T>(x.shape(), std::move(out), name, {&x}, [ix, deriv](const Impl<T>& z) {
        T* gx = ix->grad_buffer();
        if (!gx) return;
        const T* xd = ix->data.data();
        for (std::size_t i = 0; i < z.data.size(); ++i) gx[i] += z.grad[i] * deriv(xd[i], z.data[i]);
    });
}

void require_4d(const Shape& s, const char* op) {
    if (s.size() != 4) throw ShapeError(std::string(op) + " expects a 4-D NCHW tensor, got " + to_string(s));
}

}  // namespace

// ---------------------------------------------------------------------------

Shape broadcast_shapes(const Shape& a, const Shape& b) {
    const std::size_t rank = std::max(a.size(), b.size());
    Shape out(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (da != db && da != 1 && db != 1)
            throw ShapeError("shapes " + to_string(a) + " and " + to_string(b) + " are not broadcastable");
        out[i] = std::max(da, db);
    }
    return out;
}

OpCounterGuard::OpCounterGuard(OpCounter& counter) : previous_(g_counter) { g_counter = &counter; }
OpCounterGuard::~OpCounterGuard() { g_counter = previous_; }

FlopScope::FlopScope(std::string name) {
    if (!g_counter) return;
    active_ = true;
    previous_ = g_counter->scope;
    g_counter->scope = std::move(name);
}

FlopScope::~FlopScope() {
    if (active_ && g_counter) g_counter->scope = previous_;
}

OpCounter* active_counter() { return g_counter; }

namespace testing {
void set_conv2d_sign_fault(bool enabled) { g_conv2d_sign_fault = enabled; }
bool conv2d_sign_fault() { return g_conv2d_sign_fault; }
}  // namespace testing

const char* to_string(Activation kind) {
    switch (kind) {
        case Activation::none: return "none";
        case Activation::relu: return "relu";
        case Activation::sigmoid: return "sigmoid";
        case Activation::tanh: return "tanh";
        case Activation::softplus: return "softplus";
    }
    return "?";
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary(
        "add", a, b, [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); }, [](T, T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary(
        "sub", a, b, [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); }, [](T, T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary(
        "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y, T) { return y; }, [](T x, T, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    return binary(
        "div", a, b, [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
        [](T, T y, T z) { return -z / y; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T value) {
    return unary("add_scalar", x, [value](T v) { return v + value; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
    return unary("scale", x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> pow_elem(const Tensor<T>& base, const Tensor<T>& exponent) {
    for (T v : base.data())
        if (v < T(0)) throw DomainError("pow_elem: negative base " + std::to_string(v));
    const T log_floor = static_cast<T>(kPowLogFloor);
    return binary(
        "pow_elem", base, exponent, [](T b, T e) { return std::pow(b, e); },
        [](T b, T e, T) { return e * std::pow(b, e - T(1)); },
        [log_floor](T b, T, T z) { return z * std::log(std::max(b, log_floor)); });
}

// ---------------------------------------------------------------------------
// Convolution

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias, std::size_t stride,
                 std::size_t padding) {
    require_4d(input.shape(), "conv2d");
    require_4d(weight.shape(), "conv2d weight");
    if (stride < 1) throw ShapeError("conv2d stride must be >= 1");
    const std::size_t N = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
    const std::size_t Cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
    if (weight.dim(1) != Cin)
        throw ShapeError("conv2d channel mismatch: input " + to_string(input.shape()) + ", weight " +
                         to_string(weight.shape()));
    if (kh > H + 2 * padding || kw > W + 2 * padding) throw ShapeError("conv2d kernel larger than padded input");
    if (bias && (bias->numel() != Cout)) throw ShapeError("conv2d bias length must equal output channels");
    const std::size_t Ho = (H + 2 * padding - kh) / stride + 1;
    const std::size_t Wo = (W + 2 * padding - kw) / stride + 1;
    const std::size_t K = Cin * kh * kw;
    const std::size_t HWo = Ho * Wo;
    const Shape out_shape{N, Cout, Ho, Wo};
    if (account(2ull * N * Cout * K * HWo)) return Tensor<T>::zeros(out_shape);

    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using MapC = Eigen::Map<const Mat>;
    using MapM = Eigen::Map<Mat>;
    const bool pointwise = kh == 1 && kw == 1 && stride == 1 && padding == 0;

    // Valid output columns [lo, hi) for each kernel column offset.
    std::vector<std::size_t> ow_lo(kw), ow_hi(kw);
    for (std::size_t kj = 0; kj < kw; ++kj) {
        std::size_t lo = 0, hi = 0;
        for (std::size_t ow = 0; ow < Wo; ++ow) {
            const long iw = static_cast<long>(ow * stride + kj) - static_cast<long>(padding);
            if (iw < 0) lo = ow + 1;
            if (iw < static_cast<long>(W)) hi = ow + 1;
        }
        ow_lo[kj] = std::min(lo, hi);
        ow_hi[kj] = hi;
    }

    // Column buffers cover a band of output rows sized to stay in cache.
    const std::size_t band = std::clamp<std::size_t>((std::size_t{1} << 15) / std::max<std::size_t>(K * Wo, 1), 1, Ho);

    auto im2col = [=](const T* in, std::size_t oh0, std::size_t oh1, Mat& cols) {
        cols.resize(K, (oh1 - oh0) * Wo);
        T* dst = cols.data();
        for (std::size_t c = 0; c < Cin; ++c)
            for (std::size_t ki = 0; ki < kh; ++ki)
                for (std::size_t kj = 0; kj < kw; ++kj) {
                    const std::size_t lo = ow_lo[kj], hi = ow_hi[kj];
                    for (std::size_t oh = oh0; oh < oh1; ++oh, dst += Wo) {
                        const long ih = static_cast<long>(oh * stride + ki) - static_cast<long>(padding);
                        if (ih < 0 || ih >= static_cast<long>(H) || lo >= hi) {
                            std::fill(dst, dst + Wo, T(0));
                            continue;
                        }
                        const T* src = in + (c * H + static_cast<std::size_t>(ih)) * W + lo * stride + kj - padding;
                        std::fill(dst, dst + lo, T(0));
                        if (stride == 1) {
                            std::copy(src, src + (hi - lo), dst + lo);
                        } else {
                            for (std::size_t ow = lo; ow < hi; ++ow, src += stride) dst[ow] = *src;
                        }
                        std::fill(dst + hi, dst + Wo, T(0));
                    }
                }
    };
    auto col2im = [=](const Mat& cols, std::size_t oh0, std::size_t oh1, T* in_grad) {
        const T* src = cols.data();
        for (std::size_t c = 0; c < Cin; ++c)
            for (std::size_t ki = 0; ki < kh; ++ki)
                for (std::size_t kj = 0; kj < kw; ++kj) {
                    const std::size_t lo = ow_lo[kj], hi = ow_hi[kj];
                    for (std::size_t oh = oh0; oh < oh1; ++oh, src += Wo) {
                        const long ih = static_cast<long>(oh * stride + ki) - static_cast<long>(padding);
                        if (ih < 0 || ih >= static_cast<long>(H) || lo >= hi) continue;
                        T* row = in_grad + (c * H + static_cast<std::size_t>(ih)) * W + lo * stride + kj - padding;
                        for (std::size_t ow = lo; ow < hi; ++ow, row += stride) *row += src[ow];
                    }
                }
    };

    std::vector<T> out(N * Cout * HWo);
    MapC wmat(weight.data().data(), Cout, K);
    Mat cols;
    for (std::size_t n = 0; n < N; ++n) {
        const T* in_n = input.data().data() + n * Cin * H * W;
        MapM out_n(out.data() + n * Cout * HWo, Cout, HWo);
        if (pointwise) {
            out_n.noalias() = wmat * MapC(in_n, Cin, HWo);
        } else {
            for (std::size_t oh0 = 0; oh0 < Ho; oh0 += band) {
                const std::size_t oh1 = std::min(Ho, oh0 + band);
                im2col(in_n, oh0, oh1, cols);
                out_n.middleCols(oh0 * Wo, (oh1 - oh0) * Wo).noalias() = wmat * cols;
            }
        }
        if (bias) {
            const T* b = bias->data().data();
            for (std::size_t co = 0; co < Cout; ++co) out_n.row(co).array() += b[co];
        }
    }

    auto ii = input.impl();
    auto iw = weight.impl();
    auto ib = bias ? bias->impl() : nullptr;
    BackwardFn<T> backward = [=](const Impl<T>& z) {
        T* gin = ii->grad_buffer();
        T* gw = iw->grad_buffer();
        T* gb = ib ? ib->grad_buffer() : nullptr;
        MapC wm(iw->data.data(), Cout, K);
        Mat local_cols;
        Mat dcols;
        const T sign = g_conv2d_sign_fault ? T(-1) : T(1);
        for (std::size_t n = 0; n < N; ++n) {
            MapC gout(z.grad.data() + n * Cout * HWo, Cout, HWo);
            const T* in_n = ii->data.data() + n * Cin * H * W;
            if (gb)
                for (std::size_t co = 0; co < Cout; ++co) {
                    // plain loop: Eigen's vectorized sum depends on pointer alignment
                    const T* g = z.grad.data() + (n * Cout + co) * HWo;
                    T acc = 0;
                    for (std::size_t i = 0; i < HWo; ++i) acc += g[i];
                    gb[co] += acc;
                }
            if (pointwise) {
                if (gw) {
                    MapM gwm(gw, Cout, K);
                    gwm.noalias() += gout * MapC(in_n, Cin, HWo).transpose();
                }
                if (gin) {
                    MapM gim(gin + n * Cin * H * W, Cin, HWo);
                    gim.noalias() += sign * (wm.transpose() * gout);
                }
                continue;
            }
            for (std::size_t oh0 = 0; oh0 < Ho; oh0 += band) {
                const std::size_t oh1 = std::min(Ho, oh0 + band);
                const auto gblock = gout.middleCols(oh0 * Wo, (oh1 - oh0) * Wo);
                if (gw) {
                    MapM gwm(gw, Cout, K);
                    im2col(in_n, oh0, oh1, local_cols);
                    gwm.noalias() += gblock * local_cols.transpose();
                }
                if (gin) {
                    dcols.noalias() = sign * (wm.transpose() * gblock);
                    col2im(dcols, oh0, oh1, gin + n * Cin * H * W);
                }
            }
        }
    };
    if (bias) return make_output<T>(out_shape, std::move(out), "conv2d", {&input, &weight, bias}, backward);
    return make_output<T>(out_shape, std::move(out), "conv2d", {&input, &weight}, backward);
}

template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& input) {
    require_4d(input.shape(), "upsample_nearest2x");
    const std::size_t planes = input.dim(0) * input.dim(1), H = input.dim(2), W = input.dim(3);
    const Shape out_shape{input.dim(0), input.dim(1), 2 * H, 2 * W};
    if (account(numel(out_shape))) return Tensor<T>::zeros(out_shape);
    std::vector<T> out(numel(out_shape));
    const T* in = input.data().data();
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t h = 0; h < 2 * H; ++h) {
            const T* src = in + (p * H + h / 2) * W;
            T* dst = out.data() + (p * 2 * H + h) * 2 * W;
            for (std::size_t w = 0; w < 2 * W; ++w) dst[w] = src[w / 2];
        }
    auto ii = input.impl();
    return make_output<T>(out_shape, std::move(out), "upsample_nearest2x", {&input},
                          [ii, planes, H, W](const Impl<T>& z) {
                              T* g = ii->grad_buffer();
                              if (!g) return;
                              for (std::size_t p = 0; p < planes; ++p)
                                  for (std::size_t h = 0; h < 2 * H; ++h) {
                                      const T* src = z.grad.data() + (p * 2 * H + h) * 2 * W;
                                      T* dst = g + (p * H + h / 2) * W;
                                      for (std::size_t w = 0; w < 2 * W; ++w) dst[w / 2] += src[w];
                                  }
                          });
}

template <typename T>
Tensor<T> avg_pool2x(const Tensor<T>& input) {
    require_4d(input.shape(), "avg_pool2x");
    const std::size_t planes = input.dim(0) * input.dim(1), H = input.dim(2), W = input.dim(3);
    if (H % 2 || W % 2) throw ShapeError("avg_pool2x needs even spatial dims, got " + to_string(input.shape()));
    const std::size_t Ho = H / 2, Wo = W / 2;
    const Shape out_shape{input.dim(0), input.dim(1), Ho, Wo};
    if (account(input.numel())) return Tensor<T>::zeros(out_shape);
    std::vector<T> out(numel(out_shape));
    const T* in = input.data().data();
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t h = 0; h < Ho; ++h) {
            const T* r0 = in + (p * H + 2 * h) * W;
            const T* r1 = r0 + W;
            T* dst = out.data() + (p * Ho + h) * Wo;
            for (std::size_t w = 0; w < Wo; ++w)
                dst[w] = T(0.25) * (r0[2 * w] + r0[2 * w + 1] + r1[2 * w] + r1[2 * w + 1]);
        }
    auto ii = input.impl();
    return make_output<T>(out_shape, std::move(out), "avg_pool2x", {&input}, [ii, planes, H, W](const Impl<T>& z) {
        T* g = ii->grad_buffer();
        if (!g) return;
        const std::size_t Ho = H / 2, Wo = W / 2;
        for (std::size_t p = 0; p < planes; ++p)
            for (std::size_t h = 0; h < Ho; ++h) {
                const T* src = z.grad.data() + (p * Ho + h) * Wo;
                T* r0 = g + (p * H + 2 * h) * W;
                T* r1 = r0 + W;
                for (std::size_t w = 0; w < Wo; ++w) {
                    const T v = T(0.25) * src[w];
                    r0[2 * w] += v;
                    r0[2 * w + 1] += v;
                    r1[2 * w] += v;
                    r1[2 * w + 1] += v;
                }
            }
    });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> reduce(const Tensor<T>& input, const std::vector<std::size_t>& axes, ReduceKind kind, bool keepdims) {
    if (axes.empty()) throw ShapeError("reduce: axis list is empty");
    const Shape& in_shape = input.shape();
    const std::size_t rank = in_shape.size();
    std::vector<bool> reduced(rank, false);
    for (auto a : axes) {
        if (a >= rank) throw ShapeError("reduce: axis " + std::to_string(a) + " out of range for " + to_string(in_shape));
        reduced[a] = true;
    }
    Shape kept_shape = in_shape;
    std::size_t group = 1;
    for (std::size_t d = 0; d < rank; ++d)
        if (reduced[d]) {
            group *= in_shape[d];
            kept_shape[d] = 1;
        }
    Shape out_shape;
    if (keepdims) {
        out_shape = kept_shape;
    } else {
        for (std::size_t d = 0; d < rank; ++d)
            if (!reduced[d]) out_shape.push_back(in_shape[d]);
        if (out_shape.empty()) out_shape = {1};
    }
    if (account(input.numel())) return Tensor<T>::zeros(out_shape);

    // Output flat index of every input element (input order is flat order).
    const std::size_t n_in = input.numel();
    const std::size_t n_out = numel(out_shape);
    auto out_index = std::make_shared<std::vector<std::size_t>>(n_in);
    {
        std::vector<std::size_t> strides(rank, 0);
        std::size_t s = 1;
        for (std::size_t d = rank; d-- > 0;) {
            strides[d] = reduced[d] ? 0 : s;
            s *= kept_shape[d];
        }
        std::vector<std::size_t> idx(rank, 0);
        std::size_t o = 0;
        for (std::size_t i = 0; i < n_in; ++i) {
            (*out_index)[i] = o;
            for (std::size_t d = rank; d-- > 0;) {
                ++idx[d];
                o += strides[d];
                if (idx[d] < in_shape[d]) break;
                o -= strides[d] * idx[d];
                idx[d] = 0;
            }
        }
    }

    const T* x = input.data().data();
    std::vector<T> out(n_out, T(0));
    auto ii = input.impl();
    if (kind == ReduceKind::sum || kind == ReduceKind::mean) {
        for (std::size_t i = 0; i < n_in; ++i) out[(*out_index)[i]] += x[i];
        const T factor = kind == ReduceKind::mean ? T(1) / static_cast<T>(group) : T(1);
        if (kind == ReduceKind::mean)
            for (auto& v : out) v *= factor;
        return make_output<T>(out_shape, std::move(out), kind == ReduceKind::sum ? "reduce_sum" : "reduce_mean",
                              {&input}, [ii, out_index, factor](const Impl<T>& z) {
                                  T* g = ii->grad_buffer();
                                  if (!g) return;
                                  for (std::size_t i = 0; i < out_index->size(); ++i)
                                      g[i] += factor * z.grad[(*out_index)[i]];
                              });
    }

    const bool is_max = kind == ReduceKind::max;
    auto arg = std::make_shared<std::vector<std::size_t>>(n_out, n_in);
    for (std::size_t i = 0; i < n_in; ++i) {
        const std::size_t o = (*out_index)[i];
        std::size_t& best = (*arg)[o];
        if (best == n_in || (is_max ? x[i] > x[best] : x[i] < x[best])) best = i;
    }
    for (std::size_t o = 0; o < n_out; ++o) out[o] = x[(*arg)[o]];
    return make_output<T>(out_shape, std::move(out), is_max ? "reduce_max" : "reduce_min", {&input},
                          [ii, arg](const Impl<T>& z) {
                              T* g = ii->grad_buffer();
                              if (!g) return;
                              for (std::size_t o = 0; o < arg->size(); ++o) g[(*arg)[o]] += z.grad[o];
                          });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    std::vector<std::size_t> axes(x.ndim());
    std::iota(axes.begin(), axes.end(), 0);
    return reduce(x, axes, ReduceKind::sum, false);
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    std::vector<std::size_t> axes(x.ndim());
    std::iota(axes.begin(), axes.end(), 0);
    return reduce(x, axes, ReduceKind::mean, false);
}

// ---------------------------------------------------------------------------
// Elementwise unary

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation kind) {
    switch (kind) {
        case Activation::none:
            return x;
        case Activation::relu:
            return unary("relu", x, [](T v) { return v > T(0) ? v : T(0); },
                         [](T v, T) { return v > T(0) ? T(1) : T(0); });
        case Activation::sigmoid:
            return unary(
                "sigmoid", x,
                [](T v) {
                    if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
                    const T e = std::exp(v);
                    return e / (T(1) + e);
                },
                [](T, T y) { return y * (T(1) - y); });
        case Activation::tanh:
            return unary("tanh", x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
        case Activation::softplus:
            return unary(
                "softplus", x,
                [](T v) { return v > T(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
                [](T v, T) {
                    if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
                    const T e = std::exp(v);
                    return e / (T(1) + e);
                });
    }
    throw std::invalid_argument("unknown activation");
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
    if (lo > hi) throw std::invalid_argument("clamp: lo > hi");
    return unary("clamp", x, [lo, hi](T v) { return std::min(std::max(v, lo), hi); },
                 [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
    return unary("abs", x, [](T v) { return std::abs(v); },
                 [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> mu_law_map(const Tensor<T>& x, T mu) {
    if (!(mu > T(0))) throw std::invalid_argument("mu_law: mu must be positive");
    const T denom = std::log1p(mu);
    return unary(
        "mu_law", x,
        [mu, denom](T v) {
            const T m = std::log1p(mu * std::abs(v)) / denom;
            return v < T(0) ? -m : m;
        },
        [mu, denom](T v, T) { return mu / ((T(1) + mu * std::abs(v)) * denom); });
}

// ---------------------------------------------------------------------------
// Shape ops

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& tensors, std::size_t axis) {
    if (tensors.empty()) throw ShapeError("concat of an empty list");
    if (tensors.size() == 1) return tensors.front();
    const Shape& first = tensors.front().shape();
    if (axis >= first.size()) throw ShapeError("concat axis out of range");
    Shape out_shape = first;
    out_shape[axis] = 0;
    for (const auto& t : tensors) {
        if (t.ndim() != first.size()) throw ShapeError("concat rank mismatch");
        for (std::size_t d = 0; d < first.size(); ++d)
            if (d != axis && t.dim(d) != first[d])
                throw ShapeError("concat shape mismatch: " + to_string(first) + " vs " + to_string(t.shape()));
        out_shape[axis] += t.dim(axis);
    }
    if (account(numel(out_shape))) return Tensor<T>::zeros(out_shape);
    std::size_t outer = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
    std::vector<std::size_t> chunk(tensors.size());
    std::size_t row = 0;
    for (std::size_t k = 0; k < tensors.size(); ++k) {
        chunk[k] = tensors[k].numel() / outer;
        row += chunk[k];
    }
    std::vector<T> out(numel(out_shape));
    for (std::size_t o = 0; o < outer; ++o) {
        T* dst = out.data() + o * row;
        for (std::size_t k = 0; k < tensors.size(); ++k) {
            const T* src = tensors[k].data().data() + o * chunk[k];
            std::copy(src, src + chunk[k], dst);
            dst += chunk[k];
        }
    }
    Tensor<T> result(out_shape, std::move(out));
    if (!detail::grad_mode_enabled()) return result;
    bool needs = false;
    for (const auto& t : tensors) needs = needs || t.requires_grad();
    if (!needs) return result;
    auto node = std::make_shared<detail::GradNode<T>>();
    node->op = "concat";
    for (const auto& t : tensors) node->inputs.push_back(t.impl());
    node->backward = [inputs = node->inputs, chunk, outer, row](const Impl<T>& z) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < inputs.size(); ++k) {
            T* g = inputs[k]->grad_buffer();
            if (g)
                for (std::size_t o = 0; o < outer; ++o) {
                    const T* src = z.grad.data() + o * row + offset;
                    T* dst = g + o * chunk[k];
                    for (std::size_t i = 0; i < chunk[k]; ++i) dst[i] += src[i];
                }
            offset += chunk[k];
        }
    };
    result.impl()->requires_grad = true;
    result.impl()->node = std::move(node);
    return result;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, const Shape& shape) {
    validate_shape(shape);
    if (numel(shape) != x.numel())
        throw ShapeError("reshape " + to_string(x.shape()) + " -> " + to_string(shape) + " changes element count");
    if (account(0)) return Tensor<T>::zeros(shape);
    std::vector<T> data(x.data().begin(), x.data().end());
    auto ix = x.impl();
    return make_output<T>(shape, std::move(data), "reshape", {&x}, [ix](const Impl<T>& z) {
        T* g = ix->grad_buffer();
        if (!g) return;
        for (std::size_t i = 0; i < z.grad.size(); ++i) g[i] += z.grad[i];
    });
}

#define CPGA_INSTANTIATE_OPS(T)                                                                         \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                        \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                        \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                        \
    template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                        \
    template Tensor<T> add_scalar(const Tensor<T>&, T);                                                \
    template Tensor<T> scale(const Tensor<T>&, T);                                                     \
    template Tensor<T> pow_elem(const Tensor<T>&, const Tensor<T>&);                                   \
    template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, std::size_t,       \
                              std::size_t);                                                            \
    template Tensor<T> upsample_nearest2x(const Tensor<T>&);                                           \
    template Tensor<T> avg_pool2x(const Tensor<T>&);                                                   \
    template Tensor<T> reduce(const Tensor<T>&, const std::vector<std::size_t>&, ReduceKind, bool);    \
    template Tensor<T> sum(const Tensor<T>&);                                                          \
    template Tensor<T> mean(const Tensor<T>&);                                                         \
    template Tensor<T> activation(const Tensor<T>&, Activation);                                       \
    template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                             \
    template Tensor<T> reshape(const Tensor<T>&, const Shape&);                                        \
    template Tensor<T> clamp(const Tensor<T>&, T, T);                                                  \
    template Tensor<T> abs(const Tensor<T>&);                                                          \
    template Tensor<T> mu_law_map(const Tensor<T>&, T);

CPGA_INSTANTIATE_OPS(float)
CPGA_INSTANTIATE_OPS(double)

}  // namespace cpga
