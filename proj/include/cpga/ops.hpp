#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cpga/tensor.hpp"

namespace cpga {

// Elementwise arithmetic with trailing-dimension broadcasting.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
/// Plain quotient. The denominator is never clamped here.
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> add_scalar(const Tensor<T>& x, T value);
template <typename T> Tensor<T> scale(const Tensor<T>& x, T factor);

/// base^exponent for base >= 0. The exponent gradient uses ln(max(base, 1e-8)).
template <typename T> Tensor<T> pow_elem(const Tensor<T>& base, const Tensor<T>& exponent);

inline constexpr double kPowLogFloor = 1e-8;

/// 2-D cross-correlation over NCHW input with zero padding.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias,
                 std::size_t stride, std::size_t padding);

template <typename T> Tensor<T> upsample_nearest2x(const Tensor<T>& input);
/// 2x2 average pooling with stride 2; H and W must be even.
template <typename T> Tensor<T> avg_pool2x(const Tensor<T>& input);

enum class ReduceKind { max, min, mean, sum };

/// max/min send the gradient to the first attaining element in flat order.
template <typename T>
Tensor<T> reduce(const Tensor<T>& input, const std::vector<std::size_t>& axes, ReduceKind kind,
                 bool keepdims);
template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);

enum class Activation { none, relu, sigmoid, tanh, softplus };
const char* to_string(Activation kind);

template <typename T> Tensor<T> activation(const Tensor<T>& x, Activation kind);
template <typename T> Tensor<T> relu(const Tensor<T>& x) { return activation(x, Activation::relu); }
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x) { return activation(x, Activation::sigmoid); }
template <typename T> Tensor<T> softplus(const Tensor<T>& x) { return activation(x, Activation::softplus); }

template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& tensors, std::size_t axis);
template <typename T> Tensor<T> reshape(const Tensor<T>& x, const Shape& shape);
/// Pass-through gradient inside [lo, hi], zero outside.
template <typename T> Tensor<T> clamp(const Tensor<T>& x, T lo, T hi);
template <typename T> Tensor<T> abs(const Tensor<T>& x);
/// sgn(x) * log(1 + mu|x|) / log(1 + mu)
template <typename T> Tensor<T> mu_law_map(const Tensor<T>& x, T mu);

/// Computes the shape produced by broadcasting a against b.
Shape broadcast_shapes(const Shape& a, const Shape& b);

/// Thread-local operation accounting. While a counter is installed every op
/// adds its FLOP estimate (2 per multiply-accumulate for conv2d, one per
/// output element otherwise). In dry-run mode ops skip arithmetic and return
/// zero-filled tensors of the right shape.
struct OpCounter {
    bool dry_run = false;
    std::uint64_t flops = 0;
    std::map<std::string, std::uint64_t> by_scope;
    std::string scope = "other";

    void add(std::uint64_t n) {
        flops += n;
        by_scope[scope] += n;
    }
};

class OpCounterGuard {
public:
    explicit OpCounterGuard(OpCounter& counter);
    ~OpCounterGuard();
    OpCounterGuard(const OpCounterGuard&) = delete;
    OpCounterGuard& operator=(const OpCounterGuard&) = delete;

private:
    OpCounter* previous_;
};

/// Attributes FLOPs to a named scope while alive (no-op without a counter).
class FlopScope {
public:
    explicit FlopScope(std::string name);
    ~FlopScope();
    FlopScope(const FlopScope&) = delete;
    FlopScope& operator=(const FlopScope&) = delete;

private:
    std::string previous_;
    bool active_ = false;
};

OpCounter* active_counter();

namespace testing {
/// Flips the sign of conv2d's input gradient. Negative control for the
/// gradient-check harness; never enable outside verification.
void set_conv2d_sign_fault(bool enabled);
bool conv2d_sign_fault();
}  // namespace testing

}  // namespace cpga
