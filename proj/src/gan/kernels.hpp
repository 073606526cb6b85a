#pragma once

// Internal dense kernels shared by the convolution layers.

#include <algorithm>
#include <cstddef>

#include <Eigen/Core>

namespace ctseg::gan::detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// C = op(A) * op(B) (+ C when accumulate). All operands row-major.
template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const T* a, const T* b, T* c,
          bool accumulate) {
    using Map = Eigen::Map<const RowMatrix<T>>;
    Eigen::Map<RowMatrix<T>> out(c, m, n);
    const Map a_mat(a, trans_a ? k : m, trans_a ? m : k);
    const Map b_mat(b, trans_b ? n : k, trans_b ? k : n);
    if (!trans_a && !trans_b) {
        if (accumulate) out.noalias() += a_mat * b_mat; else out.noalias() = a_mat * b_mat;
    } else if (trans_a && !trans_b) {
        if (accumulate) out.noalias() += a_mat.transpose() * b_mat; else out.noalias() = a_mat.transpose() * b_mat;
    } else if (!trans_a && trans_b) {
        if (accumulate) out.noalias() += a_mat * b_mat.transpose(); else out.noalias() = a_mat * b_mat.transpose();
    } else {
        if (accumulate) out.noalias() += a_mat.transpose() * b_mat.transpose();
        else out.noalias() = a_mat.transpose() * b_mat.transpose();
    }
}

/// Output columns [lo, hi) whose input coordinate ow*stride - padding + offset
/// falls inside [0, extent).
inline void valid_range(int out_extent, int stride, int padding, int offset, int extent, int& lo, int& hi) {
    // smallest ow with ow*stride >= padding - offset
    const int need = padding - offset;
    lo = need <= 0 ? 0 : (need + stride - 1) / stride;
    // largest ow with ow*stride - padding + offset <= extent - 1
    const int top = extent - 1 + padding - offset;
    hi = top < 0 ? 0 : std::min(out_extent, top / stride + 1);
    if (lo > hi) lo = hi;
}

/// Unfolds kernel windows: col[(c*k + ki)*k + kj][oh*out_w + ow].
template <typename T>
void im2col(const T* image, int channels, int height, int width, int kernel, int stride,
            int padding, int out_h, int out_w, T* col) {
    const std::size_t out_plane = static_cast<std::size_t>(out_h) * out_w;
    for (int c = 0; c < channels; ++c) {
        const T* src = image + static_cast<std::size_t>(c) * height * width;
        for (int ki = 0; ki < kernel; ++ki) {
            for (int kj = 0; kj < kernel; ++kj) {
                T* dst = col + (static_cast<std::size_t>(c) * kernel * kernel + ki * kernel + kj) * out_plane;
                int ow_lo = 0;
                int ow_hi = 0;
                valid_range(out_w, stride, padding, kj, width, ow_lo, ow_hi);
                for (int oh = 0; oh < out_h; ++oh) {
                    const int ih = oh * stride - padding + ki;
                    T* row = dst + static_cast<std::size_t>(oh) * out_w;
                    if (ih < 0 || ih >= height) {
                        std::fill(row, row + out_w, T{});
                        continue;
                    }
                    std::fill(row, row + ow_lo, T{});
                    std::fill(row + ow_hi, row + out_w, T{});
                    const T* src_row = src + static_cast<std::size_t>(ih) * width - padding + kj;
                    if (stride == 1) {
                        std::copy(src_row + ow_lo, src_row + ow_hi, row + ow_lo);
                    } else if (stride == 2) {
                        for (int ow = ow_lo; ow < ow_hi; ++ow) row[ow] = src_row[2 * ow];
                    } else {
                        for (int ow = ow_lo; ow < ow_hi; ++ow) row[ow] = src_row[ow * stride];
                    }
                }
            }
        }
    }
}

/// Adjoint of im2col: scatter-adds columns back into image (image is not cleared).
template <typename T>
void col2im(const T* col, int channels, int height, int width, int kernel, int stride, int padding,
            int out_h, int out_w, T* image) {
    const std::size_t out_plane = static_cast<std::size_t>(out_h) * out_w;
    for (int c = 0; c < channels; ++c) {
        T* dst = image + static_cast<std::size_t>(c) * height * width;
        for (int ki = 0; ki < kernel; ++ki) {
            for (int kj = 0; kj < kernel; ++kj) {
                const T* src = col + (static_cast<std::size_t>(c) * kernel * kernel + ki * kernel + kj) * out_plane;
                int ow_lo = 0;
                int ow_hi = 0;
                valid_range(out_w, stride, padding, kj, width, ow_lo, ow_hi);
                for (int oh = 0; oh < out_h; ++oh) {
                    const int ih = oh * stride - padding + ki;
                    if (ih < 0 || ih >= height) continue;
                    const T* row = src + static_cast<std::size_t>(oh) * out_w;
                    T* dst_row = dst + static_cast<std::size_t>(ih) * width - padding + kj;
                    if (stride == 1) {
                        for (int ow = ow_lo; ow < ow_hi; ++ow) dst_row[ow] += row[ow];
                    } else if (stride == 2) {
                        for (int ow = ow_lo; ow < ow_hi; ++ow) dst_row[2 * ow] += row[ow];
                    } else {
                        for (int ow = ow_lo; ow < ow_hi; ++ow) dst_row[ow * stride] += row[ow];
                    }
                }
            }
        }
    }
}

}  // namespace ctseg::gan::detail
