#include "deco/tensor.hpp"

#include <algorithm>
#include <functional>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace deco {

std::string to_string(DType dtype) { return dtype == DType::f32 ? "f32" : "f64"; }

DType parse_dtype(const std::string& name) {
    if (name == "f32" || name == "float32") return DType::f32;
    if (name == "f64" || name == "float64") return DType::f64;
    throw ConfigError("unknown precision '" + name + "' (expected f32 or f64)");
}

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

Buffer::Buffer(DType dtype, std::size_t n) {
    if (dtype == DType::f32)
        data_ = std::vector<float>(n, 0.0f);
    else
        data_ = std::vector<double>(n, 0.0);
}

std::size_t Buffer::size() const {
    return std::visit([](const auto& v) { return v.size(); }, data_);
}

void Buffer::fill_zero() {
    std::visit([](auto& v) { std::fill(v.begin(), v.end(), 0); }, data_);
}

void Buffer::add(const Buffer& other) {
    if (other.dtype() != dtype() || other.size() != size()) throw std::logic_error("gradient buffer mismatch");
    dispatch(dtype(), [&]<typename T>() {
        auto dst = as<T>();
        auto src = other.as<T>();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    });
}

namespace {

thread_local bool g_grad_enabled = true;

void fill_from(Buffer& buf, const std::vector<double>& values) {
    dispatch(buf.dtype(), [&]<typename T>() {
        auto dst = buf.as<T>();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(values[i]);
    });
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor Tensor::from_impl(std::shared_ptr<TensorImpl> impl) {
    Tensor t;
    t.impl_ = std::move(impl);
    return t;
}

Tensor Tensor::zeros(Shape shape, DType dtype, bool requires_grad) {
    for (auto d : shape)
        if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    auto impl = std::make_shared<TensorImpl>();
    impl->data = Buffer(dtype, deco::numel(shape));
    impl->shape = std::move(shape);
    impl->requires_grad = requires_grad;
    return from_impl(std::move(impl));
}

Tensor Tensor::full(Shape shape, double value, DType dtype, bool requires_grad) {
    Tensor t = zeros(std::move(shape), dtype, requires_grad);
    dispatch(dtype, [&]<typename T>() {
        auto v = t.values<T>();
        std::fill(v.begin(), v.end(), static_cast<T>(value));
    });
    return t;
}

Tensor Tensor::from_vector(Shape shape, const std::vector<double>& values, DType dtype, bool requires_grad) {
    if (deco::numel(shape) != values.size())
        throw ShapeError("shape " + shape_str(shape) + " holds " + std::to_string(deco::numel(shape)) +
                         " values, got " + std::to_string(values.size()));
    Tensor t = zeros(std::move(shape), dtype, requires_grad);
    fill_from(t.buffer(), values);
    return t;
}

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, double stddev, DType dtype, bool requires_grad) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> values(deco::numel(shape));
    for (auto& v : values) v = dist(rng);
    return from_vector(std::move(shape), values, dtype, requires_grad);
}

Tensor Tensor::uniform(Shape shape, std::mt19937_64& rng, double lo, double hi, DType dtype, bool requires_grad) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> values(deco::numel(shape));
    for (auto& v : values) v = dist(rng);
    return from_vector(std::move(shape), values, dtype, requires_grad);
}

double Tensor::at(std::size_t flat_index) const {
    return dispatch(dtype(), [&]<typename T>() { return static_cast<double>(values<T>()[flat_index]); });
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return at(0);
}

std::vector<double> Tensor::to_vector() const {
    return dispatch(dtype(), [&]<typename T>() {
        auto v = values<T>();
        return std::vector<double>(v.begin(), v.end());
    });
}

void Tensor::set(std::size_t flat_index, double value) {
    dispatch(dtype(), [&]<typename T>() { values<T>()[flat_index] = static_cast<T>(value); });
}

void Tensor::set_requires_grad(bool value) {
    if (impl().grad_fn && !value) throw std::logic_error("cannot clear requires_grad on a non-leaf tensor");
    impl().requires_grad = value;
}

const Buffer& Tensor::grad_buffer() const {
    if (!impl().grad) throw std::logic_error("tensor has no gradient");
    return *impl().grad;
}

Buffer& Tensor::grad_buffer() {
    if (!impl().grad) throw std::logic_error("tensor has no gradient");
    return *impl().grad;
}

std::vector<double> Tensor::grad_vector() const {
    const Buffer& g = grad_buffer();
    return dispatch(g.dtype(), [&]<typename T>() {
        auto v = g.as<T>();
        return std::vector<double>(v.begin(), v.end());
    });
}

void Tensor::zero_grad() {
    if (impl().grad) impl().grad->fill_zero();
}

Tensor Tensor::detach() const {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = shape();
    impl->data = buffer();
    return from_impl(std::move(impl));
}

Tensor Tensor::clone() const {
    Tensor t = detach();
    t.impl().requires_grad = requires_grad() && !grad_fn();
    return t;
}

Tensor Tensor::to(DType target) const {
    if (target == dtype()) return detach();
    return from_vector(shape(), to_vector(), target);
}

Tensor make_result(Shape shape, Buffer data, std::shared_ptr<Node> node) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    if (node && grad_enabled()) {
        bool any = std::any_of(node->inputs.begin(), node->inputs.end(),
                               [](const Tensor& t) { return t.defined() && t.requires_grad(); });
        if (any) {
            impl->requires_grad = true;
            impl->grad_fn = std::move(node);
        }
    }
    return Tensor::from_impl(std::move(impl));
}

void Tensor::backward() const {
    if (numel() != 1) throw ShapeError("backward() needs a scalar loss, got shape " + shape_str(shape()));
    if (!requires_grad()) throw std::logic_error("backward() on a tensor that does not require grad");

    // Reverse topological order over tensors, iterative DFS.
    std::vector<TensorImpl*> order;
    std::unordered_set<TensorImpl*> visited;
    std::vector<std::pair<TensorImpl*, std::size_t>> stack{{raw(), 0}};
    visited.insert(raw());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        const auto& fn = node->grad_fn;
        if (fn && next < fn->inputs.size()) {
            TensorImpl* child = fn->inputs[next++].raw();
            if (child && child->requires_grad && visited.insert(child).second) stack.push_back({child, 0});
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    std::unordered_map<TensorImpl*, Buffer> pass;
    {
        Buffer seed(dtype(), 1);
        dispatch(dtype(), [&]<typename T>() { seed.as<T>()[0] = T(1); });
        pass.emplace(raw(), std::move(seed));
    }

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl* t = *it;
        auto found = pass.find(t);
        if (found == pass.end()) continue;
        if (t->grad_fn) {
            auto& inputs = t->grad_fn->inputs;
            std::vector<Buffer*> slots(inputs.size(), nullptr);
            for (std::size_t i = 0; i < inputs.size(); ++i) {
                TensorImpl* in = inputs[i].raw();
                if (!in || !in->requires_grad) continue;
                auto [slot, inserted] = pass.try_emplace(in);
                if (inserted) slot->second = Buffer(in->data.dtype(), in->data.size());
                slots[i] = &slot->second;
            }
            t->grad_fn->backward(found->second, slots);
        }
    }

    for (auto& [t, g] : pass) {
        if (t->grad)
            t->grad->add(g);
        else
            t->grad = std::move(g);
    }
}

}  // namespace deco
