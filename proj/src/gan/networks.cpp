#include "ctseg/gan/networks.hpp"

#include <algorithm>
#include <string>

#include "ctseg/error.hpp"

namespace ctseg::gan {

namespace {

template <typename T>
void zero(const std::vector<Parameter<T>*>& params) {
    for (auto* p : params) p->grad.fill(T{});
}

template <typename T>
std::size_t count(const std::vector<Parameter<T>*>& params) {
    std::size_t total = 0;
    for (auto* p : params) total += p->value.size();
    return total;
}

bool ends_with(const std::string& s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

template <typename T>
Generator<T>::Generator(GeneratorSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    const int depth = spec_.depth();
    const int k = spec_.kernel;
    for (int i = 0; i < depth; ++i) {
        Sequential<T> block;
        const std::string name = "down" + std::to_string(i);
        const int in = i == 0 ? spec_.input_channels : spec_.encoder_widths[i - 1];
        const int out = spec_.encoder_widths[i];
        const bool outermost = i == 0;
        const bool innermost = i == depth - 1;
        if (!outermost) block.template add<Activation<T>>(ActivationKind::leaky_relu, spec_.leaky_slope);
        const bool norm = !outermost && !innermost;
        auto& conv = block.template add<Conv2d<T>>(name + ".conv", in, out, k, 2, 1, !norm);
        if (outermost) conv.set_input_grad(false);
        if (norm) block.template add<BatchNorm2d<T>>(name + ".norm", out);
        down_.push_back(std::move(block));
    }
    for (int j = 0; j < depth; ++j) {
        Sequential<T> block;
        const std::string name = "up" + std::to_string(j);
        const int in = spec_.decoder_input_channels(j);
        const bool outermost = j == depth - 1;
        block.template add<Activation<T>>(ActivationKind::relu);
        if (outermost) {
            block.template add<ConvTranspose2d<T>>(name + ".deconv", in, spec_.output_channels, k, 2, 1, true);
            block.template add<Activation<T>>(ActivationKind::tanh);
        } else {
            const int out = spec_.decoder_widths[j];
            block.template add<ConvTranspose2d<T>>(name + ".deconv", in, out, k, 2, 1, false);
            block.template add<BatchNorm2d<T>>(name + ".norm", out);
            if (std::find(spec_.dropout_stages.begin(), spec_.dropout_stages.end(), j) !=
                spec_.dropout_stages.end()) {
                block.template add<Dropout<T>>(spec_.dropout_rate);
            }
        }
        up_.push_back(std::move(block));
    }
}

template <typename T>
Tensor<T> Generator<T>::forward(const Tensor<T>& input, const Pass& pass) {
    const Shape s = input.shape();
    if (s.c != spec_.input_channels || s.h != spec_.input_size || s.w != spec_.input_size) {
        fail(ErrorCode::invalid_argument,
             "generator: input " + s.str() + " does not match spec (" + std::to_string(spec_.input_channels) +
                 " x " + std::to_string(spec_.input_size) + " x " + std::to_string(spec_.input_size) + ")");
    }
    const int depth = spec_.depth();
    std::vector<Tensor<T>> encoded(depth);
    encoded[0] = down_[0].forward(input, pass);
    for (int i = 1; i < depth; ++i) encoded[i] = down_[i].forward(encoded[i - 1], pass);
    Tensor<T> h = up_[0].forward(encoded[depth - 1], pass);
    for (int j = 1; j < depth; ++j) {
        h = up_[j].forward(concat_channels(h, encoded[depth - 1 - j]), pass);
    }
    return h;
}

template <typename T>
void Generator<T>::backward(const Tensor<T>& grad_output) {
    const int depth = spec_.depth();
    std::vector<Tensor<T>> enc_grad(depth);
    Tensor<T> g = grad_output;
    for (int j = depth - 1; j >= 1; --j) {
        Tensor<T> joined = up_[j].backward(g);
        Tensor<T> skip;
        split_channels(joined, spec_.decoder_widths[j - 1], g, skip);
        enc_grad[depth - 1 - j] = std::move(skip);
    }
    enc_grad[depth - 1] = up_[0].backward(g);
    for (int i = depth - 1; i >= 0; --i) {
        Tensor<T> gi = down_[i].backward(enc_grad[i]);
        if (i > 0) {
            Tensor<T>& acc = enc_grad[i - 1];
            for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += gi[k];
        }
    }
}

template <typename T>
std::vector<Parameter<T>*> Generator<T>::parameters() {
    std::vector<Parameter<T>*> out;
    for (auto& block : down_) {
        auto p = block.parameters();
        out.insert(out.end(), p.begin(), p.end());
    }
    for (auto& block : up_) {
        auto p = block.parameters();
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

template <typename T>
void Generator<T>::zero_grad() { zero(parameters()); }

template <typename T>
void Generator<T>::clear_cache() {
    for (auto& block : down_) block.clear_cache();
    for (auto& block : up_) block.clear_cache();
}

template <typename T>
std::size_t Generator<T>::parameter_count() { return count(parameters()); }

template <typename T>
Discriminator<T>::Discriminator(DiscriminatorSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    if (spec_.input_channels % 2 != 0) {
        fail(ErrorCode::invalid_argument, "discriminator: input_channels must split evenly into source/candidate");
    }
    source_channels_ = spec_.input_channels / 2;
    int in = spec_.input_channels;
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
        const auto& layer = spec_.layers[i];
        const std::string name = "disc" + std::to_string(i);
        auto& conv = body_.template add<Conv2d<T>>(name + ".conv", in, layer.out_channels, layer.kernel,
                                                   layer.stride, layer.padding, !layer.norm);
        if (i == 0) first_ = &conv;
        if (layer.norm) body_.template add<BatchNorm2d<T>>(name + ".norm", layer.out_channels, true);
        switch (layer.activation) {
            case LayerActivation::leaky_relu:
                body_.template add<Activation<T>>(ActivationKind::leaky_relu, spec_.leaky_slope);
                break;
            case LayerActivation::sigmoid:
                body_.template add<Activation<T>>(ActivationKind::sigmoid);
                break;
            case LayerActivation::none:
                break;
        }
        in = layer.out_channels;
    }
}

template <typename T>
Tensor<T> Discriminator<T>::forward(const Tensor<T>& source, const Tensor<T>& candidate, const Pass& pass) {
    if (!(source.shape() == candidate.shape())) {
        fail(ErrorCode::invalid_argument, "discriminator: source " + source.shape().str() +
                                              " and candidate " + candidate.shape().str() + " differ");
    }
    if (source.shape().c != source_channels_) {
        fail(ErrorCode::invalid_argument, "discriminator: expected " + std::to_string(source_channels_) +
                                              " channels per image, got " + std::to_string(source.shape().c));
    }
    return body_.forward(concat_channels(source, candidate), pass);
}

template <typename T>
Tensor<T> Discriminator<T>::backward(const Tensor<T>& grad_map, bool candidate_grad) {
    first_->set_input_grad(candidate_grad);
    Tensor<T> joined = body_.backward(grad_map);
    first_->set_input_grad(true);
    if (!candidate_grad) return {};
    Tensor<T> source_part;
    Tensor<T> candidate_part;
    split_channels(joined, source_channels_, source_part, candidate_part);
    return candidate_part;
}

template <typename T>
std::vector<Parameter<T>*> Discriminator<T>::parameters() { return body_.parameters(); }

template <typename T>
std::vector<Parameter<T>*> Discriminator<T>::buffers() { return body_.buffers(); }

template <typename T>
void Discriminator<T>::zero_grad() { zero(parameters()); }

template <typename T>
void Discriminator<T>::clear_cache() { body_.clear_cache(); }

template <typename T>
std::size_t Discriminator<T>::parameter_count() { return count(parameters()); }

template <typename T>
void initialize_parameters(const std::vector<Parameter<T>*>& params, std::uint64_t seed) {
    Rng rng(seed);
    for (auto* p : params) {
        if (ends_with(p->name, ".weight")) {
            for (auto& v : p->value.values()) v = static_cast<T>(0.02 * standard_normal(rng));
        } else if (ends_with(p->name, ".gamma")) {
            for (auto& v : p->value.values()) v = static_cast<T>(1.0 + 0.02 * standard_normal(rng));
        } else {
            p->value.fill(T{});
        }
    }
}

template class Generator<float>;
template class Generator<double>;
template class Discriminator<float>;
template class Discriminator<double>;
template void initialize_parameters(const std::vector<Parameter<float>*>&, std::uint64_t);
template void initialize_parameters(const std::vector<Parameter<double>*>&, std::uint64_t);

}  // namespace ctseg::gan
