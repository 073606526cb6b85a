#include "ctseg/gan/losses.hpp"

#include <algorithm>
#include <cmath>

#include "ctseg/error.hpp"

namespace ctseg::gan {

namespace {

template <typename T, typename LabelAt>
double bce(const Tensor<T>& patch, LabelAt label_at, Tensor<T>* grad) {
    const std::size_t n = patch.size();
    if (n == 0) fail(ErrorCode::invalid_argument, "adversarial_loss: empty patch map");
    if (grad != nullptr) *grad = Tensor<T>(patch.shape());
    constexpr double lo = kProbabilityEpsilon;
    constexpr double hi = 1.0 - kProbabilityEpsilon;
    const double inv_n = 1.0 / static_cast<double>(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double p = static_cast<double>(patch[i]);
        const double y = label_at(i);
        const double pc = std::clamp(p, lo, hi);
        total += -(y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc));
        if (grad != nullptr) {
            const bool clamped = p < lo || p > hi;
            (*grad)[i] = clamped ? T{} : static_cast<T>(-(y / pc - (1.0 - y) / (1.0 - pc)) * inv_n);
        }
    }
    return total * inv_n;
}

}  // namespace

template <typename T>
double adversarial_loss(const Tensor<T>& patch, const Tensor<T>& labels, Tensor<T>* grad) {
    if (!(patch.shape() == labels.shape())) {
        fail(ErrorCode::invalid_argument, "adversarial_loss: patch " + patch.shape().str() +
                                              " vs labels " + labels.shape().str());
    }
    return bce(patch, [&](std::size_t i) { return static_cast<double>(labels[i]); }, grad);
}

template <typename T>
double adversarial_loss(const Tensor<T>& patch, double label, Tensor<T>* grad) {
    return bce(patch, [label](std::size_t) { return label; }, grad);
}

template <typename T>
double l1_loss(const Tensor<T>& generated, const Tensor<T>& target, Tensor<T>* grad) {
    if (!(generated.shape() == target.shape())) {
        fail(ErrorCode::invalid_argument, "l1_loss: " + generated.shape().str() + " vs " + target.shape().str());
    }
    const std::size_t n = generated.size();
    if (n == 0) fail(ErrorCode::invalid_argument, "l1_loss: empty images");
    if (grad != nullptr) *grad = Tensor<T>(generated.shape());
    const double inv_n = 1.0 / static_cast<double>(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(generated[i]) - static_cast<double>(target[i]);
        total += std::abs(d);
        if (grad != nullptr) (*grad)[i] = static_cast<T>(d > 0 ? inv_n : (d < 0 ? -inv_n : 0.0));
    }
    return total * inv_n;
}

template double adversarial_loss(const Tensor<float>&, const Tensor<float>&, Tensor<float>*);
template double adversarial_loss(const Tensor<double>&, const Tensor<double>&, Tensor<double>*);
template double adversarial_loss(const Tensor<float>&, double, Tensor<float>*);
template double adversarial_loss(const Tensor<double>&, double, Tensor<double>*);
template double l1_loss(const Tensor<float>&, const Tensor<float>&, Tensor<float>*);
template double l1_loss(const Tensor<double>&, const Tensor<double>&, Tensor<double>*);

}  // namespace ctseg::gan
