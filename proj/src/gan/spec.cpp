#include "ctseg/gan/spec.hpp"

#include <algorithm>

#include <nlohmann/json.hpp>

#include "ctseg/error.hpp"

namespace ctseg::gan {

namespace {

void check(bool ok, const std::string& message) {
    if (!ok) fail(ErrorCode::invalid_argument, message);
}

std::string_view activation_name(LayerActivation a) {
    switch (a) {
        case LayerActivation::none: return "none";
        case LayerActivation::leaky_relu: return "leaky_relu";
        case LayerActivation::sigmoid: return "sigmoid";
    }
    return "none";
}

LayerActivation parse_activation(const std::string& name) {
    if (name == "none") return LayerActivation::none;
    if (name == "leaky_relu") return LayerActivation::leaky_relu;
    if (name == "sigmoid") return LayerActivation::sigmoid;
    fail(ErrorCode::invalid_argument, "unknown activation '" + name + "'");
}

}  // namespace

GeneratorSpec GeneratorSpec::mirrored(std::vector<int> encoder_widths, int input_size) {
    GeneratorSpec spec;
    spec.input_size = input_size;
    spec.encoder_widths = std::move(encoder_widths);
    spec.decoder_widths.clear();
    const int depth = spec.depth();
    for (int j = depth - 2; j >= 0; --j) spec.decoder_widths.push_back(spec.encoder_widths[j]);
    spec.dropout_stages.clear();
    for (int j = 0; j < std::min(3, depth - 1); ++j) spec.dropout_stages.push_back(j);
    return spec;
}

int GeneratorSpec::decoder_input_channels(int stage) const {
    const int depth = this->depth();
    if (stage == 0) return encoder_widths[depth - 1];
    return decoder_widths[stage - 1] + encoder_widths[depth - 1 - stage];
}

void GeneratorSpec::validate() const {
    check(!encoder_widths.empty(), "generator: encoder_widths must not be empty");
    check(static_cast<int>(decoder_widths.size()) == depth() - 1,
          "generator: asymmetric encoder/decoder (" + std::to_string(encoder_widths.size()) +
              " encoder stages need " + std::to_string(depth() - 1) + " decoder stages, got " +
              std::to_string(decoder_widths.size()) + ")");
    check(input_channels > 0 && output_channels > 0, "generator: channel counts must be positive");
    check(kernel == 4, "generator: only 4x4 up/down-sampling kernels are supported");
    check(depth() < 31 && input_size >= (1 << depth()) && input_size % (1 << depth()) == 0,
          "generator: input_size " + std::to_string(input_size) + " not divisible by 2^" +
              std::to_string(depth()));
    for (int w : encoder_widths) check(w > 0, "generator: encoder widths must be positive");
    for (int w : decoder_widths) check(w > 0, "generator: decoder widths must be positive");
    for (int s : dropout_stages) {
        check(s >= 0 && s < depth() - 1, "generator: dropout stage " + std::to_string(s) + " out of range");
    }
    check(dropout_rate >= 0.0 && dropout_rate < 1.0, "generator: dropout_rate must be in [0,1)");
}

DiscriminatorSpec DiscriminatorSpec::patchgan(std::vector<int> widths, int input_channels) {
    DiscriminatorSpec spec;
    spec.input_channels = input_channels;
    for (std::size_t i = 0; i < widths.size(); ++i) {
        ConvLayerSpec layer;
        layer.out_channels = widths[i];
        layer.stride = i + 1 < widths.size() ? 2 : 1;
        layer.norm = i > 0;
        layer.activation = LayerActivation::leaky_relu;
        spec.layers.push_back(layer);
    }
    spec.layers.push_back(ConvLayerSpec{1, 4, 1, 1, false, LayerActivation::sigmoid});
    return spec;
}

void DiscriminatorSpec::validate() const {
    check(input_channels > 0, "discriminator: input_channels must be positive");
    check(!layers.empty(), "discriminator: no layers");
    for (const auto& layer : layers) {
        check(layer.out_channels > 0 && layer.kernel > 0 && layer.stride > 0 && layer.padding >= 0,
              "discriminator: invalid layer geometry");
    }
    check(layers.back().out_channels == 1 && layers.back().activation == LayerActivation::sigmoid,
          "discriminator: final layer must be a one-channel sigmoid map");
}

std::pair<int, int> DiscriminatorSpec::output_extent(int height, int width) const {
    for (const auto& layer : layers) {
        height = (height + 2 * layer.padding - layer.kernel) / layer.stride + 1;
        width = (width + 2 * layer.padding - layer.kernel) / layer.stride + 1;
    }
    return {height, width};
}

int receptive_field(std::span<const ConvLayerSpec> layers) {
    int field = 1;
    for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
        field = field * it->stride + (it->kernel - it->stride);
    }
    return field;
}

void LossWeights::validate() const {
    check(lambda_l1 > 0.0, "loss weights: lambda_l1 must be positive");
    check(disc_weight > 0.0 && disc_weight <= 1.0, "loss weights: disc_weight must be in (0,1]");
}

void to_json(nlohmann::json& j, const GeneratorSpec& s) {
    j = nlohmann::json{{"type", "unet"},
                       {"input_size", s.input_size},
                       {"input_channels", s.input_channels},
                       {"output_channels", s.output_channels},
                       {"kernel", s.kernel},
                       {"stride", 2},
                       {"encoder_widths", s.encoder_widths},
                       {"decoder_widths", s.decoder_widths},
                       {"dropout_stages", s.dropout_stages},
                       {"dropout_rate", s.dropout_rate},
                       {"encoder_activation", "leaky_relu"},
                       {"decoder_activation", "relu"},
                       {"output_activation", "tanh"},
                       {"leaky_slope", s.leaky_slope}};
}

void from_json(const nlohmann::json& j, GeneratorSpec& s) {
    s.input_size = j.at("input_size").get<int>();
    s.input_channels = j.at("input_channels").get<int>();
    s.output_channels = j.at("output_channels").get<int>();
    s.kernel = j.value("kernel", 4);
    s.encoder_widths = j.at("encoder_widths").get<std::vector<int>>();
    s.decoder_widths = j.at("decoder_widths").get<std::vector<int>>();
    s.dropout_stages = j.value("dropout_stages", std::vector<int>{});
    s.dropout_rate = j.value("dropout_rate", 0.5);
    s.leaky_slope = j.value("leaky_slope", 0.2);
}

void to_json(nlohmann::json& j, const ConvLayerSpec& s) {
    j = nlohmann::json{{"out_channels", s.out_channels}, {"kernel", s.kernel},
                       {"stride", s.stride},             {"padding", s.padding},
                       {"norm", s.norm ? "batch" : "none"},
                       {"activation", activation_name(s.activation)}};
}

void from_json(const nlohmann::json& j, ConvLayerSpec& s) {
    s.out_channels = j.at("out_channels").get<int>();
    s.kernel = j.at("kernel").get<int>();
    s.stride = j.at("stride").get<int>();
    s.padding = j.at("padding").get<int>();
    s.norm = j.at("norm").get<std::string>() == "batch";
    s.activation = parse_activation(j.at("activation").get<std::string>());
}

void to_json(nlohmann::json& j, const DiscriminatorSpec& s) {
    j = nlohmann::json{{"type", "patchgan"},
                       {"input_channels", s.input_channels},
                       {"layers", s.layers},
                       {"leaky_slope", s.leaky_slope},
                       {"receptive_field", receptive_field(s)}};
}

void from_json(const nlohmann::json& j, DiscriminatorSpec& s) {
    s.input_channels = j.at("input_channels").get<int>();
    s.layers = j.at("layers").get<std::vector<ConvLayerSpec>>();
    s.leaky_slope = j.value("leaky_slope", 0.2);
}

void to_json(nlohmann::json& j, const LossWeights& w) {
    j = nlohmann::json{{"lambda_l1", w.lambda_l1}, {"disc_weight", w.disc_weight}};
}

void from_json(const nlohmann::json& j, LossWeights& w) {
    w.lambda_l1 = j.at("lambda_l1").get<double>();
    w.disc_weight = j.at("disc_weight").get<double>();
}

}  // namespace ctseg::gan
