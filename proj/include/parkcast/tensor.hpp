#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "parkcast/errors.hpp"
#include "parkcast/rng.hpp"

namespace parkcast {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major tensor of 64-bit reals with an optional gradient buffer.
/// Copies are shallow: they share the same storage, so a Tensor behaves as a
/// handle into the autodiff graph. Leaf tensors created with
/// requires_grad=true accumulate gradients during backward().
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);

    static Tensor from_data(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(s_); }
    const Shape& shape() const { return s_->shape; }
    std::size_t ndim() const { return s_->shape.size(); }
    std::size_t size() const { return s_->data.size(); }

    std::vector<double>& data() { return s_->data; }
    const std::vector<double>& data() const { return s_->data; }

    /// Value of a rank-anything tensor with a single element.
    double value() const;
    double at(std::initializer_list<std::size_t> index) const;

    bool requires_grad() const { return s_->requires_grad; }
    void set_requires_grad(bool flag) { s_->requires_grad = flag; }

    bool grad_allocated() const { return !s_->grad.empty(); }
    /// Gradient buffer, allocated as zeros on first access. Const in the
    /// handle sense: copies share storage, so mutation through any handle is
    /// intended.
    std::vector<double>& grad() const;
    void zero_grad() { s_->grad.clear(); }

    /// Storage identity; stable across shallow copies.
    std::uint64_t id() const { return s_->id; }

    /// Deep copy with detached storage (no grad, no tape history).
    Tensor clone() const;

private:
    struct Storage {
        Shape shape;
        std::vector<double> data;
        std::vector<double> grad; // empty until touched
        bool requires_grad = false;
        std::uint64_t id = 0;
    };
    std::shared_ptr<Storage> s_;
};

/// Reverse-mode tape. Primitive ops append entries in execution order, which
/// is automatically topological; backward() replays them once in reverse.
/// One tape per thread.
class GradTape {
public:
    struct Entry {
        std::string op;
        std::vector<std::uint64_t> input_ids;
        std::uint64_t output_id = 0;
        Tensor output;                // keeps the node alive for the replay
        std::function<void()> vjp;    // accumulates into the inputs' grads
    };

    static GradTape& active();

    bool enabled() const { return disable_depth_ == 0; }
    std::size_t size() const { return entries_.size(); }
    void clear() { entries_.clear(); }

    void record(std::string op, std::vector<std::uint64_t> input_ids, Tensor output,
                std::function<void()> vjp);

    /// Seeds d(loss)/d(loss)=1, replays the tape in reverse visiting each
    /// entry exactly once, then clears the tape.
    void backward(Tensor& loss);

private:
    friend class NoGradGuard;
    std::vector<Entry> entries_;
    int disable_depth_ = 0;
};

/// Scoped guard that suspends tape recording (inference / finite differences).
class NoGradGuard {
public:
    NoGradGuard() { ++GradTape::active().disable_depth_; }
    ~NoGradGuard() { --GradTape::active().disable_depth_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

void backward(Tensor loss);

/// Multiply-accumulate counter charged by matmul; thread-local.
namespace mac_counter {
void reset();
std::uint64_t value();
void add(std::uint64_t macs);
} // namespace mac_counter

// ---- primitive operations ------------------------------------------------
// Every op validates shapes eagerly (mismatches throw ShapeError naming both
// shapes) and records its vector-Jacobian product on the active tape.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax(const Tensor& x, int axis);
Tensor layer_norm(const Tensor& h, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor relu(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b); // broadcasting
Tensor sub(const Tensor& a, const Tensor& b); // broadcasting
Tensor mul(const Tensor& a, const Tensor& b); // broadcasting
Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);

Tensor reshape(const Tensor& x, Shape new_shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t len);
Tensor take(const Tensor& x, std::size_t axis, const std::vector<std::size_t>& indices);

Tensor sum(const Tensor& x);  // -> scalar
Tensor mean(const Tensor& x); // -> scalar
Tensor mse(const Tensor& a, const Tensor& b);

/// Inverted dropout; identity when !training or p == 0.
Tensor dropout(const Tensor& x, double p, Rng& rng, bool training);

bool all_finite(const Tensor& x);

// ---- optimizer -------------------------------------------------------------

struct AdamParams {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::size_t step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
};

/// One Adam update over `params` using their accumulated gradients.
/// Parameters whose gradient was never touched are left unchanged.
/// Throws TrainingError if any gradient is non-finite.
void adam_step(std::vector<Tensor>& params, AdamState& state, const AdamParams& hp);

class AdamOptimizer {
public:
    AdamOptimizer(std::vector<Tensor> params, AdamParams hp = {});
    void step();
    void zero_grad();
    const std::vector<Tensor>& params() const { return params_; }

private:
    std::vector<Tensor> params_;
    AdamState state_;
    AdamParams hp_;
};

} // namespace parkcast
