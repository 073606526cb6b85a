#include "ctseg/gan/layers.hpp"

#include <algorithm>
#include <cmath>

#include "ctseg/error.hpp"
#include "kernels.hpp"

namespace ctseg::gan {

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    const Shape sa = a.shape();
    const Shape sb = b.shape();
    if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
        fail(ErrorCode::invalid_argument, "cannot concatenate " + sa.str() + " with " + sb.str());
    }
    Tensor<T> out({sa.n, sa.c + sb.c, sa.h, sa.w});
    for (int n = 0; n < sa.n; ++n) {
        std::copy_n(a.sample(n), static_cast<std::size_t>(sa.c) * sa.plane(), out.sample(n));
        std::copy_n(b.sample(n), static_cast<std::size_t>(sb.c) * sb.plane(), out.plane(n, sa.c));
    }
    return out;
}

template <typename T>
void split_channels(const Tensor<T>& joined, int leading, Tensor<T>& head, Tensor<T>& tail) {
    const Shape s = joined.shape();
    head = Tensor<T>({s.n, leading, s.h, s.w});
    tail = Tensor<T>({s.n, s.c - leading, s.h, s.w});
    for (int n = 0; n < s.n; ++n) {
        std::copy_n(joined.sample(n), static_cast<std::size_t>(leading) * s.plane(), head.sample(n));
        std::copy_n(joined.plane(n, leading), static_cast<std::size_t>(s.c - leading) * s.plane(),
                    tail.sample(n));
    }
}

namespace {

/// Sum with eight interleaved double accumulators (fixed order, vectorisable).
template <typename T>
double lane_sum(const T* p, std::size_t n) {
    double lanes[8] = {};
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        for (int k = 0; k < 8; ++k) lanes[k] += static_cast<double>(p[i + k]);
    }
    for (; i < n; ++i) lanes[i % 8] += static_cast<double>(p[i]);
    return ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
}

template <typename T>
double lane_sq_dev(const T* p, std::size_t n, double mean) {
    double lanes[8] = {};
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        for (int k = 0; k < 8; ++k) {
            const double d = static_cast<double>(p[i + k]) - mean;
            lanes[k] += d * d;
        }
    }
    for (; i < n; ++i) {
        const double d = static_cast<double>(p[i]) - mean;
        lanes[i % 8] += d * d;
    }
    return ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
}

template <typename T>
double lane_dot(const T* a, const T* b, std::size_t n) {
    double lanes[8] = {};
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        for (int k = 0; k < 8; ++k) lanes[k] += static_cast<double>(a[i + k]) * static_cast<double>(b[i + k]);
    }
    for (; i < n; ++i) lanes[i % 8] += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
}

template <typename T>
Parameter<T> make_param(std::string name, Shape shape) {
    return Parameter<T>{std::move(name), Tensor<T>(shape), Tensor<T>(shape)};
}

void require_cache(bool present, const char* layer) {
    if (!present) fail(ErrorCode::invalid_argument, std::string(layer) + ": backward without a training forward");
}

}  // namespace

// ---------------------------------------------------------------------------
// Conv2d

template <typename T>
Conv2d<T>::Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride,
                  int padding, bool bias)
    : in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride), padding_(padding),
      weight_(make_param<T>(name + ".weight", {out_channels, in_channels, kernel, kernel})) {
    if (bias) bias_ = make_param<T>(name + ".bias", {1, out_channels, 1, 1});
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x, const Pass& pass) {
    const Shape s = x.shape();
    if (s.c != in_) {
        fail(ErrorCode::invalid_argument, weight_.name + ": expected " + std::to_string(in_) +
                                              " input channels, got " + std::to_string(s.c));
    }
    const int oh = output_extent(s.h, kernel_, stride_, padding_);
    const int ow = output_extent(s.w, kernel_, stride_, padding_);
    if (oh <= 0 || ow <= 0) {
        fail(ErrorCode::invalid_argument, weight_.name + ": input " + s.str() + " too small for kernel");
    }
    const int patch = in_ * kernel_ * kernel_;
    const int positions = oh * ow;
    Tensor<T> y({s.n, out_, oh, ow});
    col_.resize(static_cast<std::size_t>(patch) * positions);
    for (int n = 0; n < s.n; ++n) {
        detail::im2col(x.sample(n), in_, s.h, s.w, kernel_, stride_, padding_, oh, ow, col_.data());
        detail::gemm(false, false, out_, positions, patch, weight_.value.data(), col_.data(), y.sample(n), false);
        if (bias_) {
            for (int c = 0; c < out_; ++c) {
                T* p = y.plane(n, c);
                const T b = bias_->value[c];
                for (int i = 0; i < positions; ++i) p[i] += b;
            }
        }
    }
    if (pass.training) input_ = x; else input_.reset();
    return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& grad_out) {
    require_cache(!input_.empty(), "Conv2d");
    const Shape s = input_.shape();
    const Shape g = grad_out.shape();
    const int patch = in_ * kernel_ * kernel_;
    const int positions = g.h * g.w;
    Tensor<T> grad_in;
    if (input_grad_) grad_in = Tensor<T>(s);
    col_.resize(static_cast<std::size_t>(patch) * positions);
    for (int n = 0; n < s.n; ++n) {
        detail::im2col(input_.sample(n), in_, s.h, s.w, kernel_, stride_, padding_, g.h, g.w, col_.data());
        detail::gemm(false, true, out_, patch, positions, grad_out.sample(n), col_.data(),
                     weight_.grad.data(), true);
        if (bias_) {
            for (int c = 0; c < out_; ++c) {
                const T* p = grad_out.plane(n, c);
                T acc{};
                for (int i = 0; i < positions; ++i) acc += p[i];
                bias_->grad[c] += acc;
            }
        }
        if (input_grad_) {
            detail::gemm(true, false, patch, positions, out_, weight_.value.data(), grad_out.sample(n),
                         col_.data(), false);
            detail::col2im(col_.data(), in_, s.h, s.w, kernel_, stride_, padding_, g.h, g.w, grad_in.sample(n));
        }
    }
    return grad_in;
}

template <typename T>
std::vector<Parameter<T>*> Conv2d<T>::parameters() {
    std::vector<Parameter<T>*> out{&weight_};
    if (bias_) out.push_back(&*bias_);
    return out;
}

// ---------------------------------------------------------------------------
// ConvTranspose2d

template <typename T>
ConvTranspose2d<T>::ConvTranspose2d(std::string name, int in_channels, int out_channels, int kernel,
                                    int stride, int padding, bool bias)
    : in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride), padding_(padding),
      weight_(make_param<T>(name + ".weight", {in_channels, out_channels, kernel, kernel})) {
    if (bias) bias_ = make_param<T>(name + ".bias", {1, out_channels, 1, 1});
}

template <typename T>
Tensor<T> ConvTranspose2d<T>::forward(const Tensor<T>& x, const Pass& pass) {
    const Shape s = x.shape();
    if (s.c != in_) {
        fail(ErrorCode::invalid_argument, weight_.name + ": expected " + std::to_string(in_) +
                                              " input channels, got " + std::to_string(s.c));
    }
    const int oh = output_extent(s.h, kernel_, stride_, padding_);
    const int ow = output_extent(s.w, kernel_, stride_, padding_);
    const int patch = out_ * kernel_ * kernel_;
    const int positions = s.h * s.w;
    Tensor<T> y({s.n, out_, oh, ow});
    col_.resize(static_cast<std::size_t>(patch) * positions);
    for (int n = 0; n < s.n; ++n) {
        detail::gemm(true, false, patch, positions, in_, weight_.value.data(), x.sample(n), col_.data(), false);
        detail::col2im(col_.data(), out_, oh, ow, kernel_, stride_, padding_, s.h, s.w, y.sample(n));
        if (bias_) {
            const std::size_t plane = y.shape().plane();
            for (int c = 0; c < out_; ++c) {
                T* p = y.plane(n, c);
                const T b = bias_->value[c];
                for (std::size_t i = 0; i < plane; ++i) p[i] += b;
            }
        }
    }
    if (pass.training) input_ = x; else input_.reset();
    return y;
}

template <typename T>
Tensor<T> ConvTranspose2d<T>::backward(const Tensor<T>& grad_out) {
    require_cache(!input_.empty(), "ConvTranspose2d");
    const Shape s = input_.shape();
    const Shape g = grad_out.shape();
    const int patch = out_ * kernel_ * kernel_;
    const int positions = s.h * s.w;
    Tensor<T> grad_in(s);
    col_.resize(static_cast<std::size_t>(patch) * positions);
    for (int n = 0; n < s.n; ++n) {
        detail::im2col(grad_out.sample(n), out_, g.h, g.w, kernel_, stride_, padding_, s.h, s.w, col_.data());
        detail::gemm(false, true, in_, patch, positions, input_.sample(n), col_.data(), weight_.grad.data(), true);
        detail::gemm(false, false, in_, positions, patch, weight_.value.data(), col_.data(), grad_in.sample(n), false);
        if (bias_) {
            const std::size_t plane = g.plane();
            for (int c = 0; c < out_; ++c) {
                const T* p = grad_out.plane(n, c);
                T acc{};
                for (std::size_t i = 0; i < plane; ++i) acc += p[i];
                bias_->grad[c] += acc;
            }
        }
    }
    return grad_in;
}

template <typename T>
std::vector<Parameter<T>*> ConvTranspose2d<T>::parameters() {
    std::vector<Parameter<T>*> out{&weight_};
    if (bias_) out.push_back(&*bias_);
    return out;
}

// ---------------------------------------------------------------------------
// BatchNorm2d

template <typename T>
BatchNorm2d<T>::BatchNorm2d(std::string name, int channels, bool running_eval, double eps)
    : channels_(channels), running_eval_(running_eval), eps_(eps),
      gamma_(make_param<T>(name + ".gamma", {1, channels, 1, 1})),
      beta_(make_param<T>(name + ".beta", {1, channels, 1, 1})),
      running_mean_(make_param<T>(name + ".running_mean", {1, channels, 1, 1})),
      running_var_(make_param<T>(name + ".running_var", {1, channels, 1, 1})) {
    gamma_.value.fill(T{1});
    running_var_.value.fill(T{1});
}

template <typename T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& x, const Pass& pass) {
    const Shape s = x.shape();
    if (s.c != channels_) fail(ErrorCode::invalid_argument, gamma_.name + ": channel mismatch");
    const std::size_t plane = s.plane();
    const double count = static_cast<double>(plane) * s.n;
    Tensor<T> y(s);
    if (pass.training) {
        normalized_ = Tensor<T>(s);
        inv_std_.assign(channels_, 0.0);
    }
    for (int c = 0; c < channels_; ++c) {
        double mean = 0.0;
        double var = 0.0;
        if (running_eval_ && !pass.training) {
            mean = running_mean_.value[c];
            var = running_var_.value[c];
        } else {
            double sum = 0.0;
            for (int n = 0; n < s.n; ++n) sum += lane_sum(x.plane(n, c), plane);
            mean = sum / count;
            double sq = 0.0;
            for (int n = 0; n < s.n; ++n) sq += lane_sq_dev(x.plane(n, c), plane, mean);
            var = sq / count;
            if (running_eval_) {
                const double unbiased = count > 1 ? sq / (count - 1) : var;
                running_mean_.value[c] = static_cast<T>(0.9 * running_mean_.value[c] + 0.1 * mean);
                running_var_.value[c] = static_cast<T>(0.9 * running_var_.value[c] + 0.1 * unbiased);
            }
        }
        const double inv_std = 1.0 / std::sqrt(var + eps_);
        const T g = gamma_.value[c];
        const T b = beta_.value[c];
        const T shift = static_cast<T>(mean);
        const T scale = static_cast<T>(inv_std);
        for (int n = 0; n < s.n; ++n) {
            const T* p = x.plane(n, c);
            T* q = y.plane(n, c);
            if (pass.training) {
                T* xhat = normalized_.plane(n, c);
                for (std::size_t i = 0; i < plane; ++i) {
                    xhat[i] = (p[i] - shift) * scale;
                    q[i] = g * xhat[i] + b;
                }
            } else {
                for (std::size_t i = 0; i < plane; ++i) q[i] = g * ((p[i] - shift) * scale) + b;
            }
        }
        if (pass.training) inv_std_[c] = inv_std;
    }
    if (!pass.training) clear_cache();
    return y;
}

template <typename T>
Tensor<T> BatchNorm2d<T>::backward(const Tensor<T>& grad_out) {
    require_cache(!normalized_.empty(), "BatchNorm2d");
    const Shape s = normalized_.shape();
    const std::size_t plane = s.plane();
    const double count = static_cast<double>(plane) * s.n;
    Tensor<T> grad_in(s);
    for (int c = 0; c < channels_; ++c) {
        double sum_dy = 0.0;
        double sum_dy_xhat = 0.0;
        for (int n = 0; n < s.n; ++n) {
            sum_dy += lane_sum(grad_out.plane(n, c), plane);
            sum_dy_xhat += lane_dot(grad_out.plane(n, c), normalized_.plane(n, c), plane);
        }
        gamma_.grad[c] += static_cast<T>(sum_dy_xhat);
        beta_.grad[c] += static_cast<T>(sum_dy);
        const double g = gamma_.value[c];
        // dx = g * inv_std * (dy - mean(dy) - xhat * mean(dy * xhat))
        const T a = static_cast<T>(g * inv_std_[c]);
        const T mean_dy = static_cast<T>(sum_dy / count);
        const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / count);
        for (int n = 0; n < s.n; ++n) {
            const T* dy = grad_out.plane(n, c);
            const T* xhat = normalized_.plane(n, c);
            T* dx = grad_in.plane(n, c);
            for (std::size_t i = 0; i < plane; ++i) dx[i] = a * (dy[i] - mean_dy - xhat[i] * mean_dy_xhat);
        }
    }
    return grad_in;
}

template <typename T>
std::vector<Parameter<T>*> BatchNorm2d<T>::parameters() {
    return {&gamma_, &beta_};
}

template <typename T>
std::vector<Parameter<T>*> BatchNorm2d<T>::buffers() {
    if (!running_eval_) return {};
    return {&running_mean_, &running_var_};
}

// ---------------------------------------------------------------------------
// Activation

template <typename T>
Tensor<T> Activation<T>::forward(const Tensor<T>& x, const Pass& pass) {
    Tensor<T> y(x.shape());
    const std::size_t size = x.size();
    const T* in = x.data();
    T* out = y.data();
    switch (kind_) {
        case ActivationKind::relu:
            for (std::size_t i = 0; i < size; ++i) out[i] = in[i] > T{} ? in[i] : T{};
            break;
        case ActivationKind::leaky_relu:
            for (std::size_t i = 0; i < size; ++i) out[i] = in[i] > T{} ? in[i] : slope_ * in[i];
            break;
        case ActivationKind::tanh:
            // tanh(x) = expm1(2x) / (expm1(2x) + 2); saturates cleanly past |x| = 20.
            for (std::size_t i = 0; i < size; ++i) {
                const T v = std::clamp(in[i], T{-20}, T{20});
                const T e = std::expm1(T{2} * v);
                out[i] = e / (e + T{2});
            }
            break;
        case ActivationKind::sigmoid:
            for (std::size_t i = 0; i < size; ++i) out[i] = T{1} / (T{1} + std::exp(-in[i]));
            break;
    }
    if (pass.training) {
        const bool keeps_input = kind_ == ActivationKind::relu || kind_ == ActivationKind::leaky_relu;
        cached_ = keeps_input ? x : y;
    } else {
        cached_.reset();
    }
    return y;
}

template <typename T>
Tensor<T> Activation<T>::backward(const Tensor<T>& grad_out) {
    require_cache(!cached_.empty(), "Activation");
    Tensor<T> grad_in(grad_out.shape());
    const std::size_t size = grad_out.size();
    const T* g = grad_out.data();
    const T* c = cached_.data();
    T* out = grad_in.data();
    switch (kind_) {
        case ActivationKind::relu:
            for (std::size_t i = 0; i < size; ++i) out[i] = c[i] > T{} ? g[i] : T{};
            break;
        case ActivationKind::leaky_relu:
            for (std::size_t i = 0; i < size; ++i) out[i] = c[i] > T{} ? g[i] : slope_ * g[i];
            break;
        case ActivationKind::tanh:
            for (std::size_t i = 0; i < size; ++i) out[i] = g[i] * (T{1} - c[i] * c[i]);
            break;
        case ActivationKind::sigmoid:
            for (std::size_t i = 0; i < size; ++i) out[i] = g[i] * c[i] * (T{1} - c[i]);
            break;
    }
    return grad_in;
}

// ---------------------------------------------------------------------------
// Dropout

template <typename T>
Tensor<T> Dropout<T>::forward(const Tensor<T>& x, const Pass& pass) {
    if (!pass.training || rate_ <= 0.0) {
        mask_.reset();
        return x;
    }
    if (pass.rng == nullptr) fail(ErrorCode::invalid_argument, "Dropout: training pass without an rng");
    mask_ = Tensor<T>(x.shape());
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate_));
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        mask_[i] = uniform01(*pass.rng) >= rate_ ? keep_scale : T{};
        y[i] = x[i] * mask_[i];
    }
    return y;
}

template <typename T>
Tensor<T> Dropout<T>::backward(const Tensor<T>& grad_out) {
    if (mask_.empty()) return grad_out;
    Tensor<T> grad_in(grad_out.shape());
    for (std::size_t i = 0; i < grad_out.size(); ++i) grad_in[i] = grad_out[i] * mask_[i];
    return grad_in;
}

// ---------------------------------------------------------------------------
// Sequential

template <typename T>
Tensor<T> Sequential<T>::forward(const Tensor<T>& x, const Pass& pass) {
    if (layers_.empty()) return x;
    Tensor<T> h = layers_.front()->forward(x, pass);
    for (std::size_t i = 1; i < layers_.size(); ++i) h = layers_[i]->forward(h, pass);
    return h;
}

template <typename T>
Tensor<T> Sequential<T>::backward(const Tensor<T>& grad_out) {
    Tensor<T> g = grad_out;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
}

template <typename T>
std::vector<Parameter<T>*> Sequential<T>::parameters() {
    std::vector<Parameter<T>*> out;
    for (auto& layer : layers_) {
        auto params = layer->parameters();
        out.insert(out.end(), params.begin(), params.end());
    }
    return out;
}

template <typename T>
std::vector<Parameter<T>*> Sequential<T>::buffers() {
    std::vector<Parameter<T>*> out;
    for (auto& layer : layers_) {
        auto b = layer->buffers();
        out.insert(out.end(), b.begin(), b.end());
    }
    return out;
}

template <typename T>
void Sequential<T>::clear_cache() {
    for (auto& layer : layers_) layer->clear_cache();
}

#define CTSEG_INSTANTIATE(T)                                                              \
    template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);             \
    template void split_channels(const Tensor<T>&, int, Tensor<T>&, Tensor<T>&);         \
    template class Conv2d<T>;                                                            \
    template class ConvTranspose2d<T>;                                                   \
    template class BatchNorm2d<T>;                                                       \
    template class Activation<T>;                                                        \
    template class Dropout<T>;                                                           \
    template class Sequential<T>;

CTSEG_INSTANTIATE(float)
CTSEG_INSTANTIATE(double)

#undef CTSEG_INSTANTIATE

}  // namespace ctseg::gan
