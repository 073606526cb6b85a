#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace ctseg::gan {

/// NCHW extent.
struct Shape {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    std::size_t numel() const noexcept {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    std::size_t plane() const noexcept { return static_cast<std::size_t>(h) * w; }
    std::string str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
               std::to_string(w) + ")";
    }
    friend bool operator==(const Shape&, const Shape&) = default;
};

template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T{}) : shape_(shape), data_(shape.numel(), fill) {}

    const Shape& shape() const noexcept { return shape_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& at(int n, int c, int h, int w) { return data_[offset(n, c, h, w)]; }
    const T& at(int n, int c, int h, int w) const { return data_[offset(n, c, h, w)]; }

    T* sample(int n) { return data_.data() + static_cast<std::size_t>(n) * shape_.c * shape_.plane(); }
    const T* sample(int n) const {
        return data_.data() + static_cast<std::size_t>(n) * shape_.c * shape_.plane();
    }
    T* plane(int n, int c) { return sample(n) + static_cast<std::size_t>(c) * shape_.plane(); }
    const T* plane(int n, int c) const { return sample(n) + static_cast<std::size_t>(c) * shape_.plane(); }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    /// Releases storage; used to drop cached activations.
    void reset() {
        shape_ = {};
        std::vector<T>().swap(data_);
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_);
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return out;
    }

private:
    std::size_t offset(int n, int c, int h, int w) const noexcept {
        return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }

    Shape shape_;
    std::vector<T> data_;
};

/// Stacks b's channels after a's; batch and spatial extents must agree.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

/// Inverse of concat_channels: first `leading` channels go to `head`.
template <typename T>
void split_channels(const Tensor<T>& joined, int leading, Tensor<T>& head, Tensor<T>& tail);

}  // namespace ctseg::gan
