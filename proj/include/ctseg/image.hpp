#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace ctseg {

/// Dense interleaved image: row-major, channels innermost.
template <typename T>
class Image {
public:
    Image() = default;
    Image(int rows, int cols, int channels = 1, T fill = T{})
        : rows_(rows), cols_(cols), channels_(channels),
          data_(static_cast<std::size_t>(rows) * cols * channels, fill) {}

    int rows() const noexcept { return rows_; }
    int cols() const noexcept { return cols_; }
    int channels() const noexcept { return channels_; }
    bool empty() const noexcept { return data_.empty(); }
    std::size_t size() const noexcept { return data_.size(); }

    T& at(int r, int c, int ch = 0) {
        return data_[(static_cast<std::size_t>(r) * cols_ + c) * channels_ + ch];
    }
    const T& at(int r, int c, int ch = 0) const {
        return data_[(static_cast<std::size_t>(r) * cols_ + c) * channels_ + ch];
    }

    std::span<T> pixels() noexcept { return data_; }
    std::span<const T> pixels() const noexcept { return data_; }
    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }

    bool same_shape(const Image& other) const noexcept {
        return rows_ == other.rows_ && cols_ == other.cols_ && channels_ == other.channels_;
    }
    template <typename U>
    bool same_extent(const Image<U>& other) const noexcept {
        return rows_ == other.rows() && cols_ == other.cols();
    }

    std::string shape_string() const {
        return std::to_string(rows_) + "x" + std::to_string(cols_) + "x" + std::to_string(channels_);
    }

    friend bool operator==(const Image&, const Image&) = default;

private:
    int rows_ = 0;
    int cols_ = 0;
    int channels_ = 0;
    std::vector<T> data_;
};

using Gray8Image = Image<std::uint8_t>;
using RgbImage = Image<std::uint8_t>;  // three channels, [0,255]
using FloatImage = Image<float>;

}  // namespace ctseg
