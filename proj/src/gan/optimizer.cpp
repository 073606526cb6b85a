#include "ctseg/gan/optimizer.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "ctseg/error.hpp"

namespace ctseg::gan {

namespace {

constexpr char kParamMagic[8] = {'C', 'T', 'S', 'G', 'P', 'A', 'R', '1'};
constexpr char kAdamMagic[8] = {'C', 'T', 'S', 'G', 'A', 'D', 'M', '1'};

template <typename V>
void put(std::ostream& out, V value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(V));
}

template <typename V>
V get(std::istream& in) {
    V value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(V));
    if (!in) fail(ErrorCode::corrupt, "parameter stream truncated");
    return value;
}

void expect_magic(std::istream& in, const char (&magic)[8], const char* what) {
    char buf[8] = {};
    in.read(buf, 8);
    if (!in || std::memcmp(buf, magic, 8) != 0) fail(ErrorCode::corrupt, std::string(what) + ": bad magic");
}

template <typename T>
void put_tensor(std::ostream& out, const Tensor<T>& t) {
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(T)));
}

template <typename T>
void get_tensor(std::istream& in, Tensor<T>& t) {
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(T)));
    if (!in) fail(ErrorCode::corrupt, "parameter stream truncated");
}

}  // namespace

template <typename T>
Adam<T>::Adam(std::vector<Parameter<T>*> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
    for (auto* p : params_) {
        first_.emplace_back(p->value.shape());
        second_.emplace_back(p->value.shape());
    }
}

template <typename T>
void Adam<T>::step() {
    ++step_;
    const double b1 = config_.beta1;
    const double b2 = config_.beta2;
    const double correction1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double correction2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    const T beta1 = static_cast<T>(b1);
    const T beta2 = static_cast<T>(b2);
    const T one_minus_beta1 = static_cast<T>(1.0 - b1);
    const T one_minus_beta2 = static_cast<T>(1.0 - b2);
    const T step_size = static_cast<T>(config_.learning_rate / correction1);
    const T inv_sqrt_correction2 = static_cast<T>(1.0 / std::sqrt(correction2));
    const T eps = static_cast<T>(config_.eps);
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto* p = params_[k];
        T* value = p->value.data();
        const T* grad = p->grad.data();
        T* m = first_[k].data();
        T* v = second_[k].data();
        const std::size_t n = p->value.size();
        for (std::size_t i = 0; i < n; ++i) {
            const T g = grad[i];
            m[i] = beta1 * m[i] + one_minus_beta1 * g;
            v[i] = beta2 * v[i] + one_minus_beta2 * g * g;
            value[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_correction2 + eps);
        }
    }
}

template <typename T>
void Adam<T>::save_state(std::ostream& out) const {
    out.write(kAdamMagic, 8);
    put<std::int64_t>(out, step_);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(params_.size()));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        put<std::uint64_t>(out, first_[k].size());
        put_tensor(out, first_[k]);
        put_tensor(out, second_[k]);
    }
}

template <typename T>
void Adam<T>::load_state(std::istream& in) {
    expect_magic(in, kAdamMagic, "optimizer state");
    step_ = get<std::int64_t>(in);
    const auto count = get<std::uint32_t>(in);
    if (count != params_.size()) fail(ErrorCode::corrupt, "optimizer state: parameter count mismatch");
    for (std::size_t k = 0; k < params_.size(); ++k) {
        if (get<std::uint64_t>(in) != first_[k].size()) {
            fail(ErrorCode::corrupt, "optimizer state: size mismatch for " + params_[k]->name);
        }
        get_tensor(in, first_[k]);
        get_tensor(in, second_[k]);
    }
}

template <typename T>
void write_parameters(std::ostream& out, const std::vector<Parameter<T>*>& params) {
    out.write(kParamMagic, 8);
    put<std::uint32_t>(out, sizeof(T));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
    for (const auto* p : params) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(p->name.size()));
        out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        const Shape s = p->value.shape();
        for (int d : {s.n, s.c, s.h, s.w}) put<std::int32_t>(out, d);
        put_tensor(out, p->value);
    }
    if (!out) fail(ErrorCode::io, "failed writing parameter blob");
}

template <typename T>
void read_parameters(std::istream& in, const std::vector<Parameter<T>*>& params) {
    expect_magic(in, kParamMagic, "parameter blob");
    if (get<std::uint32_t>(in) != sizeof(T)) fail(ErrorCode::corrupt, "parameter blob: scalar width mismatch");
    const auto count = get<std::uint32_t>(in);
    if (count != params.size()) {
        fail(ErrorCode::corrupt, "parameter blob holds " + std::to_string(count) + " tensors, network has " +
                                     std::to_string(params.size()));
    }
    for (auto* p : params) {
        const auto name_len = get<std::uint32_t>(in);
        if (name_len > 4096) fail(ErrorCode::corrupt, "parameter blob: implausible name length");
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        Shape s;
        s.n = get<std::int32_t>(in);
        s.c = get<std::int32_t>(in);
        s.h = get<std::int32_t>(in);
        s.w = get<std::int32_t>(in);
        if (name != p->name || !(s == p->value.shape())) {
            fail(ErrorCode::corrupt, "parameter blob: expected " + p->name + p->value.shape().str() + ", found " +
                                         name + s.str());
        }
        get_tensor(in, p->value);
    }
}

template class Adam<float>;
template class Adam<double>;
template void write_parameters(std::ostream&, const std::vector<Parameter<float>*>&);
template void write_parameters(std::ostream&, const std::vector<Parameter<double>*>&);
template void read_parameters(std::istream&, const std::vector<Parameter<float>*>&);
template void read_parameters(std::istream&, const std::vector<Parameter<double>*>&);

}  // namespace ctseg::gan
