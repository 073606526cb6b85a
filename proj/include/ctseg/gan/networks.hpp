#pragma once

#include <cstdint>
#include <vector>

#include "ctseg/gan/layers.hpp"
#include "ctseg/gan/spec.hpp"

namespace ctseg::gan {

/// UNet generator built from a GeneratorSpec. Maps (N, C_in, S, S) to
/// (N, C_out, S, S) with every output in [-1, 1].
template <typename T>
class Generator {
public:
    explicit Generator(GeneratorSpec spec);

    Tensor<T> forward(const Tensor<T>& input, const Pass& pass);
    /// Backpropagates d(loss)/d(output) and accumulates parameter gradients.
    void backward(const Tensor<T>& grad_output);

    std::vector<Parameter<T>*> parameters();
    void zero_grad();
    void clear_cache();
    std::size_t parameter_count();

    const GeneratorSpec& spec() const noexcept { return spec_; }

private:
    GeneratorSpec spec_;
    std::vector<Sequential<T>> down_;
    std::vector<Sequential<T>> up_;
};

/// Conditional PatchGAN discriminator built from a DiscriminatorSpec.
template <typename T>
class Discriminator {
public:
    explicit Discriminator(DiscriminatorSpec spec);

    /// Scores a (source, candidate) pair; returns an (N, 1, H', W') map of
    /// probabilities. Shapes of source and candidate must agree.
    Tensor<T> forward(const Tensor<T>& source, const Tensor<T>& candidate, const Pass& pass);
    /// Accumulates parameter gradients. Returns d(loss)/d(candidate) when
    /// `candidate_grad` is set, otherwise an empty tensor.
    Tensor<T> backward(const Tensor<T>& grad_map, bool candidate_grad);

    std::vector<Parameter<T>*> parameters();
    /// Batch-norm running statistics, used by evaluation passes.
    std::vector<Parameter<T>*> buffers();
    void zero_grad();
    void clear_cache();
    std::size_t parameter_count();

    const DiscriminatorSpec& spec() const noexcept { return spec_; }

private:
    DiscriminatorSpec spec_;
    Sequential<T> body_;
    Conv2d<T>* first_ = nullptr;
    int source_channels_ = 0;
};

/// Pix2pix initialisation: conv weights ~ N(0, 0.02), norm gains ~ N(1, 0.02),
/// biases and norm shifts zero. Deterministic for a given seed.
template <typename T>
void initialize_parameters(const std::vector<Parameter<T>*>& params, std::uint64_t seed);

}  // namespace ctseg::gan
