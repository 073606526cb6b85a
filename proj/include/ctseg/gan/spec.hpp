#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace ctseg::gan {

/// UNet generator layout. Encoder stage i halves the spatial extent with a
/// 4x4 stride-2 convolution; decoder stage j doubles it with a transposed
/// convolution and (except the innermost) consumes its mirror encoder output
/// through a skip connection. The last decoder stage emits output_channels
/// through tanh.
struct GeneratorSpec {
    int input_size = 256;
    int input_channels = 3;
    int output_channels = 3;
    int kernel = 4;
    std::vector<int> encoder_widths{64, 128, 256, 512, 512, 512, 512, 512};
    std::vector<int> decoder_widths{512, 512, 512, 512, 256, 128, 64};
    std::vector<int> dropout_stages{0, 1, 2};
    double dropout_rate = 0.5;
    double leaky_slope = 0.2;

    /// Encoder widths with a mirrored decoder; dropout in the first
    /// min(3, depth-1) decoder stages.
    static GeneratorSpec mirrored(std::vector<int> encoder_widths, int input_size = 256);

    int depth() const noexcept { return static_cast<int>(encoder_widths.size()); }
    /// Channels entering decoder stage j (upsampled path plus skip).
    int decoder_input_channels(int stage) const;

    /// Throws Error(invalid_argument) describing the first violated constraint.
    void validate() const;

    friend bool operator==(const GeneratorSpec&, const GeneratorSpec&) = default;
};

enum class LayerActivation { none, leaky_relu, sigmoid };

struct ConvLayerSpec {
    int out_channels = 1;
    int kernel = 4;
    int stride = 1;
    int padding = 1;
    bool norm = false;
    LayerActivation activation = LayerActivation::none;

    friend bool operator==(const ConvLayerSpec&, const ConvLayerSpec&) = default;
};

/// Conditional PatchGAN: source and candidate are stacked on the channel axis
/// and mapped to a one-channel map of per-patch real probabilities.
struct DiscriminatorSpec {
    int input_channels = 6;
    std::vector<ConvLayerSpec> layers;
    double leaky_slope = 0.2;

    /// Widths get 4x4 convolutions, stride 2 except the last (stride 1),
    /// batch norm on all but the first, then a stride-1 one-channel sigmoid head.
    static DiscriminatorSpec patchgan(std::vector<int> widths, int input_channels = 6);
    /// The 70x70 PatchGAN: widths {64, 128, 256, 512}.
    static DiscriminatorSpec patchgan70() { return patchgan({64, 128, 256, 512}); }

    void validate() const;
    /// Output map extent for an input of the given extent.
    std::pair<int, int> output_extent(int height, int width) const;

    friend bool operator==(const DiscriminatorSpec&, const DiscriminatorSpec&) = default;
};

/// Side of the input square seen by one output unit, by the backward
/// recursion r <- r * stride + (kernel - stride) starting from r = 1.
int receptive_field(std::span<const ConvLayerSpec> layers);
inline int receptive_field(const DiscriminatorSpec& spec) { return receptive_field(spec.layers); }

struct LossWeights {
    double lambda_l1 = 100.0;
    double disc_weight = 0.5;

    void validate() const;
    friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

void to_json(nlohmann::json& j, const GeneratorSpec& spec);
void from_json(const nlohmann::json& j, GeneratorSpec& spec);
void to_json(nlohmann::json& j, const ConvLayerSpec& spec);
void from_json(const nlohmann::json& j, ConvLayerSpec& spec);
void to_json(nlohmann::json& j, const DiscriminatorSpec& spec);
void from_json(const nlohmann::json& j, DiscriminatorSpec& spec);
void to_json(nlohmann::json& j, const LossWeights& weights);
void from_json(const nlohmann::json& j, LossWeights& weights);

}  // namespace ctseg::gan
