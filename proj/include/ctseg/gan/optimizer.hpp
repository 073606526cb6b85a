#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "ctseg/gan/layers.hpp"

namespace ctseg::gan {

struct AdamConfig {
    double learning_rate = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adaptive-moment gradient descent over a fixed parameter list.
template <typename T>
class Adam {
public:
    Adam(std::vector<Parameter<T>*> params, AdamConfig config);

    void step();
    std::int64_t steps_taken() const noexcept { return step_; }

    void save_state(std::ostream& out) const;
    /// Throws Error(corrupt) if the stored moments do not match the parameters.
    void load_state(std::istream& in);

private:
    std::vector<Parameter<T>*> params_;
    AdamConfig config_;
    std::vector<Tensor<T>> first_;
    std::vector<Tensor<T>> second_;
    std::int64_t step_ = 0;
};

/// Binary parameter blob: magic, scalar width, then (name, NCHW shape, raw
/// little-endian values) per parameter in network order.
template <typename T>
void write_parameters(std::ostream& out, const std::vector<Parameter<T>*>& params);

/// Loads into an already-built network. Names and shapes must match exactly,
/// otherwise Error(corrupt) names the first offending parameter.
template <typename T>
void read_parameters(std::istream& in, const std::vector<Parameter<T>*>& params);

}  // namespace ctseg::gan
