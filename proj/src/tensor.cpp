#include "auxseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>
#include <utility>

namespace auxseg {

namespace detail {

struct Node {
    const char* op = nullptr;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    Tensor::BackwardFn backward;
};

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    std::shared_ptr<Node> node;
};

BranchState& branch_state() {
    thread_local BranchState state;
    return state;
}

}  // namespace detail

namespace {

thread_local bool g_grad_enabled = true;

void check_shape(const Shape& shape) {
    for (std::size_t extent : shape) {
        if (extent == 0) {
            throw std::invalid_argument("tensor extents must be positive, got " + shape_to_string(shape));
        }
    }
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t extent : shape) n *= extent;
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << ',';
        out << shape[i];
    }
    out << ']';
    return out.str();
}

// Construction ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    check_shape(shape);
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->data.assign(shape_numel(shape), value);
    impl->shape = std::move(shape);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    check_shape(shape);
    if (shape_numel(shape) != data.size()) {
        throw std::invalid_argument("data length " + std::to_string(data.size()) + " does not match shape " +
                                    shape_to_string(shape));
    }
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from_data({}, {value}, requires_grad); }

Tensor Tensor::make_result(Shape shape, std::vector<double> data, const char* op, std::vector<Tensor> inputs,
                           BackwardFn backward) {
    Tensor out = from_data(std::move(shape), std::move(data));
    if (!g_grad_enabled) return out;
    const bool any = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.defined() && t.requires_grad(); });
    if (!any) return out;
    auto node = std::make_shared<detail::Node>();
    node->op = op;
    node->inputs.reserve(inputs.size());
    for (auto& t : inputs) node->inputs.push_back(t.impl_);
    node->backward = std::move(backward);
    out.impl_->requires_grad = true;
    out.impl_->node = std::move(node);
    return out;
}

// Accessors -------------------------------------------------------------------

detail::TensorImpl& Tensor::impl() const {
    if (!impl_) throw std::logic_error("use of undefined tensor");
    return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }
std::size_t Tensor::numel() const { return impl().data.size(); }

std::size_t Tensor::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) {
        throw std::out_of_range("axis " + std::to_string(axis) + " out of range for shape " + shape_to_string(s));
    }
    return s[axis];
}

std::span<const double> Tensor::data() const { return impl().data; }
std::span<double> Tensor::mutable_data() { return impl().data; }

double Tensor::item() const {
    if (numel() != 1) throw std::invalid_argument("item() on tensor of shape " + shape_to_string(shape()));
    return impl().data[0];
}

bool Tensor::requires_grad() const { return impl().requires_grad; }

void Tensor::set_requires_grad(bool value) {
    if (!is_leaf()) throw std::logic_error("requires_grad can only be changed on leaf tensors");
    impl().requires_grad = value;
    if (!value) impl().grad.clear();
}

bool Tensor::has_grad() const { return !impl().grad.empty(); }
std::span<const double> Tensor::grad() const { return impl().grad; }

std::span<double> Tensor::grad_buffer() const {
    auto& i = impl();
    if (!i.requires_grad) throw std::logic_error("grad_buffer() on tensor that does not require grad");
    if (i.grad.empty()) i.grad.assign(i.data.size(), 0.0);
    return i.grad;
}

void Tensor::zero_grad() {
    auto& i = impl();
    std::fill(i.grad.begin(), i.grad.end(), 0.0);
}

const char* Tensor::op_name() const { return impl().node ? impl().node->op : nullptr; }
bool Tensor::is_leaf() const { return impl().node == nullptr; }

Tensor Tensor::detach() const { return from_data(shape(), impl().data, false); }

Tensor Tensor::clone() const { return from_data(shape(), impl().data, requires_grad()); }

// Backward ----------------------------------------------------------------------

void Tensor::backward() const {
    auto& root = impl();
    if (root.data.size() != 1) {
        throw std::invalid_argument("backward() requires a scalar root, got shape " + shape_to_string(root.shape));
    }
    if (!root.requires_grad) throw std::invalid_argument("backward() on a tensor that does not require grad");

    // Post-order DFS gives inputs before outputs; reverse it for the sweep.
    std::vector<detail::TensorImpl*> order;
    std::unordered_set<detail::TensorImpl*> visited;
    std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack;
    stack.emplace_back(impl_.get(), 0);
    visited.insert(impl_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        const auto* tape = node->node.get();
        if (tape && next < tape->inputs.size()) {
            detail::TensorImpl* child = tape->inputs[next++].get();
            if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
            continue;
        }
        order.push_back(node);
        stack.pop_back();
    }

    for (auto* t : order) {
        if (t->node) t->grad.assign(t->data.size(), 0.0);
    }
    if (root.grad.empty()) root.grad.assign(1, 0.0);
    root.grad[0] += 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        auto* t = *it;
        if (t->node && t->node->backward) t->node->backward(t->grad, t->data);
    }
}

// Grad mode and branch recording ---------------------------------------------------

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

BranchRecorder::BranchRecorder() : saved_(detail::branch_state()) {
    detail::branch_state() = detail::BranchState{};
    detail::branch_state().active = true;
}

BranchRecorder::~BranchRecorder() { detail::branch_state() = saved_; }

std::uint64_t BranchRecorder::fingerprint() const { return detail::branch_state().hash; }

// Elementwise --------------------------------------------------------------------

namespace {

enum class Broadcast { none, left_scalar, right_scalar };

Broadcast resolve_broadcast(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() == b.shape()) return Broadcast::none;
    if (b.numel() == 1) return Broadcast::right_scalar;
    if (a.numel() == 1) return Broadcast::left_scalar;
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                                shape_to_string(b.shape()));
}

// Adds `g` into `dst`, summing when `dst` is a broadcast scalar.
void accumulate(std::span<double> dst, std::span<const double> g) {
    if (dst.size() == g.size()) {
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    } else {
        double s = 0.0;
        for (double v : g) s += v;
        dst[0] += s;
    }
}

template <class Fwd>
std::vector<double> binary_values(const Tensor& a, const Tensor& b, Broadcast bc, Fwd fwd) {
    const auto x = a.data();
    const auto y = b.data();
    const std::size_t n = std::max(x.size(), y.size());
    std::vector<double> out(n);
    switch (bc) {
        case Broadcast::none:
            for (std::size_t i = 0; i < n; ++i) out[i] = fwd(x[i], y[i]);
            break;
        case Broadcast::right_scalar:
            for (std::size_t i = 0; i < n; ++i) out[i] = fwd(x[i], y[0]);
            break;
        case Broadcast::left_scalar:
            for (std::size_t i = 0; i < n; ++i) out[i] = fwd(x[0], y[i]);
            break;
    }
    return out;
}

Shape result_shape(const Tensor& a, const Tensor& b, Broadcast bc) {
    return bc == Broadcast::left_scalar ? b.shape() : a.shape();
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    const auto bc = resolve_broadcast(a, b, "add");
    auto values = binary_values(a, b, bc, [](double x, double y) { return x + y; });
    return Tensor::make_result(result_shape(a, b, bc), std::move(values), "add", {a, b},
                               [a, b](std::span<const double> g, std::span<const double>) {
                                   if (a.requires_grad()) accumulate(a.grad_buffer(), g);
                                   if (b.requires_grad()) accumulate(b.grad_buffer(), g);
                               });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    const auto bc = resolve_broadcast(a, b, "sub");
    auto values = binary_values(a, b, bc, [](double x, double y) { return x - y; });
    return Tensor::make_result(result_shape(a, b, bc), std::move(values), "sub", {a, b},
                               [a, b](std::span<const double> g, std::span<const double>) {
                                   if (a.requires_grad()) accumulate(a.grad_buffer(), g);
                                   if (b.requires_grad()) {
                                       std::vector<double> neg(g.begin(), g.end());
                                       for (double& v : neg) v = -v;
                                       accumulate(b.grad_buffer(), neg);
                                   }
                               });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    const auto bc = resolve_broadcast(a, b, "mul");
    auto values = binary_values(a, b, bc, [](double x, double y) { return x * y; });
    return Tensor::make_result(
        result_shape(a, b, bc), std::move(values), "mul", {a, b},
        [a, b, bc](std::span<const double> g, std::span<const double>) {
            const auto x = a.data();
            const auto y = b.data();
            if (a.requires_grad()) {
                std::vector<double> ga(g.size());
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * y[bc == Broadcast::right_scalar ? 0 : i];
                accumulate(a.grad_buffer(), ga);
            }
            if (b.requires_grad()) {
                std::vector<double> gb(g.size());
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] = g[i] * x[bc == Broadcast::left_scalar ? 0 : i];
                accumulate(b.grad_buffer(), gb);
            }
        });
}

Tensor scalar_mul(const Tensor& a, double factor) {
    std::vector<double> values(a.data().begin(), a.data().end());
    for (double& v : values) v *= factor;
    return Tensor::make_result(a.shape(), std::move(values), "scalar_mul", {a},
                               [a, factor](std::span<const double> g, std::span<const double>) {
                                   auto ga = a.grad_buffer();
                                   for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
                               });
}

Tensor add_scalar(const Tensor& a, double offset) {
    std::vector<double> values(a.data().begin(), a.data().end());
    for (double& v : values) v += offset;
    return Tensor::make_result(a.shape(), std::move(values), "add_scalar", {a},
                               [a](std::span<const double> g, std::span<const double>) {
                                   auto ga = a.grad_buffer();
                                   for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                               });
}

Tensor relu(const Tensor& a) {
    const auto x = a.data();
    std::vector<double> values(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) values[i] = x[i] > 0.0 ? x[i] : 0.0;
    if (auto& bs = detail::branch_state(); bs.active) {
        for (double v : x) detail::note_branch(bs, v > 0.0 ? 2 : (v < 0.0 ? 0 : 1));
    }
    // Subgradient at exactly zero is 0.
    return Tensor::make_result(a.shape(), std::move(values), "relu", {a},
                               [a](std::span<const double> g, std::span<const double>) {
                                   const auto x = a.data();
                                   auto ga = a.grad_buffer();
                                   for (std::size_t i = 0; i < g.size(); ++i) {
                                       if (x[i] > 0.0) ga[i] += g[i];
                                   }
                               });
}

Tensor exp(const Tensor& a) {
    const auto x = a.data();
    std::vector<double> values(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) values[i] = std::exp(x[i]);
    return Tensor::make_result(a.shape(), std::move(values), "exp", {a},
                               [a](std::span<const double> g, std::span<const double> y) {
                                   auto ga = a.grad_buffer();
                                   for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
                               });
}

Tensor log(const Tensor& a) {
    const auto x = a.data();
    std::vector<double> values(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0)) {
            std::ostringstream msg;
            msg << "log of non-positive value " << x[i] << " at index " << i;
            throw std::domain_error(msg.str());
        }
        values[i] = std::log(x[i]);
    }
    return Tensor::make_result(a.shape(), std::move(values), "log", {a},
                               [a](std::span<const double> g, std::span<const double>) {
                                   const auto x = a.data();
                                   auto ga = a.grad_buffer();
                                   for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / x[i];
                               });
}

Tensor abs(const Tensor& a) {
    const auto x = a.data();
    std::vector<double> values(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) values[i] = std::fabs(x[i]);
    if (auto& bs = detail::branch_state(); bs.active) {
        for (double v : x) detail::note_branch(bs, v > 0.0 ? 2 : (v < 0.0 ? 0 : 1));
    }
    return Tensor::make_result(a.shape(), std::move(values), "abs", {a},
                               [a](std::span<const double> g, std::span<const double>) {
                                   const auto x = a.data();
                                   auto ga = a.grad_buffer();
                                   for (std::size_t i = 0; i < g.size(); ++i) {
                                       if (x[i] > 0.0) {
                                           ga[i] += g[i];
                                       } else if (x[i] < 0.0) {
                                           ga[i] -= g[i];
                                       }
                                   }
                               });
}

// Reductions -----------------------------------------------------------------------

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return Tensor::make_result({}, {s}, "sum", {a}, [a](std::span<const double> g, std::span<const double>) {
        auto ga = a.grad_buffer();
        for (double& v : ga) v += g[0];
    });
}

Tensor mean(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    const double inv_n = 1.0 / static_cast<double>(a.numel());
    return Tensor::make_result({}, {s * inv_n}, "mean", {a},
                               [a, inv_n](std::span<const double> g, std::span<const double>) {
                                   auto ga = a.grad_buffer();
                                   for (double& v : ga) v += g[0] * inv_n;
                               });
}

}  // namespace auxseg
