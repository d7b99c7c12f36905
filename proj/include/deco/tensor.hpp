#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "deco/error.hpp"

namespace deco {

enum class DType : std::uint8_t { f32, f64 };

std::string to_string(DType dtype);
DType parse_dtype(const std::string& name);

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
constexpr DType dtype_of() {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

// Invokes f.template operator()<T>() with T matching dtype.
template <typename F>
decltype(auto) dispatch(DType dtype, F&& f) {
    if (dtype == DType::f32) return f.template operator()<float>();
    return f.template operator()<double>();
}

// Flat storage for one dtype.
class Buffer {
public:
    Buffer() = default;
    Buffer(DType dtype, std::size_t n);

    DType dtype() const { return std::holds_alternative<std::vector<float>>(data_) ? DType::f32 : DType::f64; }
    std::size_t size() const;

    template <typename T>
    std::span<T> as() {
        return std::span<T>(std::get<std::vector<T>>(data_));
    }
    template <typename T>
    std::span<const T> as() const {
        return std::span<const T>(std::get<std::vector<T>>(data_));
    }

    void fill_zero();
    void add(const Buffer& other);

private:
    std::variant<std::vector<double>, std::vector<float>> data_;
};

class Tensor;

// One recorded differentiable operation.
class Node {
public:
    virtual ~Node() = default;
    virtual const char* name() const = 0;
    // Accumulates (+=) into grad_inputs[i] for every input whose slot is non-null.
    virtual void backward(const Buffer& grad_output, std::span<Buffer*> grad_inputs) = 0;

    std::vector<Tensor> inputs;
};

struct TensorImpl {
    Shape shape;
    Buffer data;
    bool requires_grad = false;
    std::optional<Buffer> grad;
    std::shared_ptr<Node> grad_fn;
};

// Dense row-major tensor handle. Copies share storage; use clone() for a deep copy.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, DType dtype = DType::f64, bool requires_grad = false);
    static Tensor full(Shape shape, double value, DType dtype = DType::f64, bool requires_grad = false);
    static Tensor from_vector(Shape shape, const std::vector<double>& values, DType dtype = DType::f64,
                              bool requires_grad = false);
    static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0, DType dtype = DType::f64,
                        bool requires_grad = false);
    static Tensor uniform(Shape shape, std::mt19937_64& rng, double lo, double hi, DType dtype = DType::f64,
                          bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl().shape; }
    std::size_t ndim() const { return impl().shape.size(); }
    std::size_t dim(std::size_t i) const { return impl().shape.at(i); }
    std::size_t numel() const { return impl().data.size(); }
    DType dtype() const { return impl().data.dtype(); }

    template <typename T>
    std::span<T> values() {
        check_dtype<T>();
        return impl().data.as<T>();
    }
    template <typename T>
    std::span<const T> values() const {
        check_dtype<T>();
        return std::as_const(impl()).data.template as<T>();
    }

    Buffer& buffer() { return impl().data; }
    const Buffer& buffer() const { return impl().data; }

    double at(std::size_t flat_index) const;
    double item() const;
    std::vector<double> to_vector() const;
    void set(std::size_t flat_index, double value);

    bool requires_grad() const { return impl().requires_grad; }
    void set_requires_grad(bool value);
    bool has_grad() const { return impl().grad.has_value(); }
    const Buffer& grad_buffer() const;
    Buffer& grad_buffer();
    std::vector<double> grad_vector() const;
    void zero_grad();
    void clear_grad() { impl().grad.reset(); }

    const std::shared_ptr<Node>& grad_fn() const { return impl().grad_fn; }

    // Reverse-mode differentiation from this scalar. Gradients sum into every
    // reachable tensor that requires grad.
    void backward() const;

    Tensor detach() const;
    Tensor clone() const;
    Tensor to(DType dtype) const;

    TensorImpl* raw() const { return impl_.get(); }

    static Tensor from_impl(std::shared_ptr<TensorImpl> impl);

private:
    template <typename T>
    void check_dtype() const {
        if (dtype() != dtype_of<T>())
            throw std::invalid_argument("tensor dtype is " + to_string(dtype()) + ", requested " +
                                        to_string(dtype_of<T>()));
    }
    TensorImpl& impl() const {
        if (!impl_) throw std::logic_error("access to undefined tensor");
        return *impl_;
    }

    std::shared_ptr<TensorImpl> impl_;
};

// Graph recording switch, thread local.
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Builds the result of an op: attaches node when recording and any input requires grad.
Tensor make_result(Shape shape, Buffer data, std::shared_ptr<Node> node);

}  // namespace deco
