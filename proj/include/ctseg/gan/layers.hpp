#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ctseg/gan/tensor.hpp"
#include "ctseg/rng.hpp"

namespace ctseg::gan {

template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
};

/// How a forward pass runs. Training passes cache activations for backward
/// and draw dropout masks from `rng`; evaluation passes keep nothing.
struct Pass {
    bool training = false;
    Rng* rng = nullptr;
};

template <typename T>
class Layer {
public:
    virtual ~Layer() = default;
    virtual Tensor<T> forward(const Tensor<T>& x, const Pass& pass) = 0;
    /// Accumulates parameter gradients and returns d(loss)/d(input).
    virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;
    virtual std::vector<Parameter<T>*> parameters() { return {}; }
    /// Non-trainable state that is saved with the network.
    virtual std::vector<Parameter<T>*> buffers() { return {}; }
    virtual void clear_cache() {}
};

template <typename T>
class Conv2d final : public Layer<T> {
public:
    Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride, int padding,
           bool bias);

    Tensor<T> forward(const Tensor<T>& x, const Pass& pass) override;
    Tensor<T> backward(const Tensor<T>& grad_out) override;
    std::vector<Parameter<T>*> parameters() override;
    void clear_cache() override { input_.reset(); }

    /// When false, backward() skips the input gradient and returns an empty tensor.
    void set_input_grad(bool enabled) { input_grad_ = enabled; }

    static int output_extent(int input, int kernel, int stride, int padding) {
        return (input + 2 * padding - kernel) / stride + 1;
    }

private:
    int in_;
    int out_;
    int kernel_;
    int stride_;
    int padding_;
    bool input_grad_ = true;
    Parameter<T> weight_;  // [out, in, k, k]
    std::optional<Parameter<T>> bias_;
    Tensor<T> input_;
    std::vector<T> col_;
};

template <typename T>
class ConvTranspose2d final : public Layer<T> {
public:
    ConvTranspose2d(std::string name, int in_channels, int out_channels, int kernel, int stride,
                    int padding, bool bias);

    Tensor<T> forward(const Tensor<T>& x, const Pass& pass) override;
    Tensor<T> backward(const Tensor<T>& grad_out) override;
    std::vector<Parameter<T>*> parameters() override;
    void clear_cache() override { input_.reset(); }

    static int output_extent(int input, int kernel, int stride, int padding) {
        return (input - 1) * stride - 2 * padding + kernel;
    }

private:
    int in_;
    int out_;
    int kernel_;
    int stride_;
    int padding_;
    Parameter<T> weight_;  // [in, out, k, k]
    std::optional<Parameter<T>> bias_;
    Tensor<T> input_;
    std::vector<T> col_;
};

/// Batch normalisation over (N, H, W) with learned affine transform.
template <typename T>
class BatchNorm2d final : public Layer<T> {
public:
    /// With `running_eval`, training passes keep running averages of the
    /// statistics (momentum 0.1) and evaluation passes normalize with them;
    /// otherwise every pass normalizes with the statistics of its input.
    BatchNorm2d(std::string name, int channels, bool running_eval = false, double eps = 1e-5);

    Tensor<T> forward(const Tensor<T>& x, const Pass& pass) override;
    Tensor<T> backward(const Tensor<T>& grad_out) override;
    std::vector<Parameter<T>*> parameters() override;
    std::vector<Parameter<T>*> buffers() override;
    void clear_cache() override {
        normalized_.reset();
        inv_std_.clear();
    }

private:
    int channels_;
    bool running_eval_;
    double eps_;
    Parameter<T> gamma_;
    Parameter<T> beta_;
    Parameter<T> running_mean_;
    Parameter<T> running_var_;
    Tensor<T> normalized_;
    std::vector<double> inv_std_;
};

enum class ActivationKind { relu, leaky_relu, tanh, sigmoid };

template <typename T>
class Activation final : public Layer<T> {
public:
    explicit Activation(ActivationKind kind, double negative_slope = 0.2)
        : kind_(kind), slope_(static_cast<T>(negative_slope)) {}

    Tensor<T> forward(const Tensor<T>& x, const Pass& pass) override;
    Tensor<T> backward(const Tensor<T>& grad_out) override;
    void clear_cache() override { cached_.reset(); }

private:
    ActivationKind kind_;
    T slope_;
    Tensor<T> cached_;  // input for (leaky) relu, output for tanh/sigmoid
};

/// Inverted dropout; identity in evaluation passes.
template <typename T>
class Dropout final : public Layer<T> {
public:
    explicit Dropout(double rate) : rate_(rate) {}

    Tensor<T> forward(const Tensor<T>& x, const Pass& pass) override;
    Tensor<T> backward(const Tensor<T>& grad_out) override;
    void clear_cache() override { mask_.reset(); }

private:
    double rate_;
    Tensor<T> mask_;
};

template <typename T>
class Sequential {
public:
    Sequential() = default;
    Sequential(Sequential&&) noexcept = default;
    Sequential& operator=(Sequential&&) noexcept = default;

    template <typename L, typename... Args>
    L& add(Args&&... args) {
        auto layer = std::make_unique<L>(std::forward<Args>(args)...);
        L& ref = *layer;
        layers_.push_back(std::move(layer));
        return ref;
    }

    Tensor<T> forward(const Tensor<T>& x, const Pass& pass);
    Tensor<T> backward(const Tensor<T>& grad_out);
    std::vector<Parameter<T>*> parameters();
    std::vector<Parameter<T>*> buffers();
    void clear_cache();

    std::size_t size() const noexcept { return layers_.size(); }
    Layer<T>& operator[](std::size_t i) { return *layers_[i]; }

private:
    std::vector<std::unique_ptr<Layer<T>>> layers_;
};

}  // namespace ctseg::gan
