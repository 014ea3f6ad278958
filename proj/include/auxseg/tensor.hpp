#pragma once

// Dense f64 tensor with a define-by-run reverse-mode tape.
//
// Every op that sees at least one input with requires_grad (while grad mode
// is enabled) records a node holding its inputs and a backward closure. The
// closure receives the output's gradient and value and accumulates into the
// gradient buffers of its inputs.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace auxseg {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {
struct TensorImpl;
}

class Tensor {
public:
    /// Closure run during backward: (grad of this output, value of this output).
    using BackwardFn = std::function<void(std::span<const double>, std::span<const double>)>;

    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    /// Rank-0 tensor holding one value.
    static Tensor scalar(double value, bool requires_grad = false);

    /// Builds the result of an op. A tape node is attached only when grad mode
    /// is on and one of `inputs` requires grad; otherwise `backward` is dropped.
    static Tensor make_result(Shape shape, std::vector<double> data, const char* op,
                              std::vector<Tensor> inputs, BackwardFn backward);

    bool defined() const noexcept { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;
    std::size_t dim(std::size_t axis) const;

    std::span<const double> data() const;
    std::span<double> mutable_data();
    double item() const;

    bool requires_grad() const;
    void set_requires_grad(bool value);

    bool has_grad() const;
    /// Empty span when no gradient has been accumulated yet.
    std::span<const double> grad() const;
    /// Gradient buffer, allocated (zeroed) on first use. Only valid for tensors
    /// that require grad; op backward closures use it to accumulate.
    std::span<double> grad_buffer() const;
    void zero_grad();

    /// Op name of the node that produced this tensor, or nullptr for leaves.
    const char* op_name() const;
    bool is_leaf() const;

    /// Same values, no graph, requires_grad=false.
    Tensor detach() const;

    /// Deep copy of values; the copy is a leaf with the same requires_grad.
    Tensor clone() const;

    /// Reverse sweep from this scalar. Leaf gradients accumulate across calls;
    /// intermediate gradients are reset at the start of each call.
    void backward() const;

    /// Identity of the underlying storage (two handles may share one tensor).
    const void* id() const noexcept { return impl_.get(); }

private:
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
    detail::TensorImpl& impl() const;

    std::shared_ptr<detail::TensorImpl> impl_;
};

// Grad mode ------------------------------------------------------------------

bool grad_enabled();

/// Disables tape recording on this thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Branch fingerprint ---------------------------------------------------------
//
// Ops with nondifferentiable points (relu, abs, maxpool argmax, log clamp)
// report their branch decisions here while a recorder is active. Gradient
// checking uses the fingerprint to skip stencils that straddle a kink.

namespace detail {
struct BranchState {
    bool active = false;
    std::uint64_t hash = 0xcbf29ce484222325ULL;
};
BranchState& branch_state();
inline void note_branch(BranchState& state, std::uint64_t decision) {
    state.hash ^= decision + 0x9e3779b97f4a7c15ULL + (state.hash << 6) + (state.hash >> 2);
}
}  // namespace detail

class BranchRecorder {
public:
    BranchRecorder();
    ~BranchRecorder();
    BranchRecorder(const BranchRecorder&) = delete;
    BranchRecorder& operator=(const BranchRecorder&) = delete;

    std::uint64_t fingerprint() const;

private:
    detail::BranchState saved_;
};

// Elementwise ops. Shapes must match, or one operand must hold a single value.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scalar_mul(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor abs(const Tensor& a);

// Reductions to a rank-0 tensor.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scalar_mul(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scalar_mul(a, s); }

}  // namespace auxseg
