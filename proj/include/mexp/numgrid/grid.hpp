#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mexp/error.hpp"

namespace mexp {

using Shape = std::vector<int>;

inline std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (int e : shape) n *= static_cast<std::size_t>(e);
    return n;
}

inline std::string to_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

/// Allocator with a fixed 64-byte alignment, so vectorized kernels split
/// every buffer of a given length the same way on every run.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

/// Dense row-major array with optional gradient tracking. A BasicGrid is a
/// cheap handle; copies alias the same storage. Op outputs are never written
/// after construction, parameters are mutated only through their ParamSet.
template <typename T>
class BasicGrid {
public:
    using value_type = T;

    BasicGrid() = default;

    BasicGrid(Shape shape, Buffer<T> data, bool requires_grad = false) : node_(std::make_shared<Node>()) {
        for (int e : shape) {
            if (e <= 0) throw ShapeError("grid extents must be positive, got " + to_string(shape));
        }
        if (numel(shape) != data.size()) {
            throw ShapeError("grid shape " + to_string(shape) + " holds " +
                             std::to_string(numel(shape)) + " values, got " +
                             std::to_string(data.size()));
        }
        node_->shape = std::move(shape);
        node_->value = std::move(data);
        node_->requires_grad = requires_grad;
    }

    BasicGrid(Shape shape, const std::vector<T>& data, bool requires_grad = false)
        : BasicGrid(std::move(shape), Buffer<T>(data.begin(), data.end()), requires_grad) {}

    BasicGrid(Shape shape, std::initializer_list<T> data, bool requires_grad = false)
        : BasicGrid(std::move(shape), Buffer<T>(data), requires_grad) {}

    static BasicGrid zeros(Shape shape, bool requires_grad = false) {
        auto n = numel(shape);
        return BasicGrid(std::move(shape), Buffer<T>(n, T(0)), requires_grad);
    }

    static BasicGrid full(Shape shape, T value, bool requires_grad = false) {
        auto n = numel(shape);
        return BasicGrid(std::move(shape), Buffer<T>(n, value), requires_grad);
    }

    static BasicGrid scalar(T value) { return BasicGrid({1}, {value}); }

    bool defined() const noexcept { return static_cast<bool>(node_); }

    const Shape& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int extent(int axis) const {
        return node_->shape.at(axis < 0 ? node_->shape.size() + axis : axis);
    }
    std::size_t size() const { return node_->value.size(); }

    std::span<const T> values() const { return node_->value; }
    std::span<T> mutable_values() { return node_->value; }
    const T* data() const { return node_->value.data(); }
    T operator[](std::size_t i) const { return node_->value[i]; }

    T item() const {
        if (size() != 1) throw ShapeError("item() on non-scalar grid " + to_string(shape()));
        return node_->value[0];
    }

    bool requires_grad() const { return node_ && node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }

    bool has_grad() const { return !node_->grad.empty(); }

    /// Gradient view; empty span when no gradient has been accumulated.
    std::span<const T> grad() const { return node_->grad; }

    /// Writable gradient buffer, allocated as zeros on first use. Gradients
    /// belong to the shared node, so this is available through const handles.
    std::span<T> grad_buffer() const {
        if (node_->grad.empty()) node_->grad.assign(node_->value.size(), T(0));
        return node_->grad;
    }

    void zero_grad() const { std::fill(node_->grad.begin(), node_->grad.end(), T(0)); }
    void drop_grad() const { Buffer<T>().swap(node_->grad); }

    bool same_storage(const BasicGrid& other) const { return node_ == other.node_; }

    bool all_finite() const {
        return std::all_of(node_->value.begin(), node_->value.end(),
                           [](T v) { return std::isfinite(v); });
    }

    /// Copy of the values with a different shape; no tape record.
    BasicGrid detached_reshape(Shape shape) const {
        return BasicGrid(std::move(shape), node_->value);
    }

    template <typename U>
    BasicGrid<U> cast() const {
        Buffer<U> out(node_->value.begin(), node_->value.end());
        return BasicGrid<U>(node_->shape, std::move(out), node_->requires_grad);
    }

private:
    struct Node {
        Shape shape;
        Buffer<T> value;
        Buffer<T> grad;
        bool requires_grad = false;
    };
    std::shared_ptr<Node> node_;
};

using Grid = BasicGrid<float>;
using GridD = BasicGrid<double>;

}  // namespace mexp
