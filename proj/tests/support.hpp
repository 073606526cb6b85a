#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>

#include "ctseg/harness.hpp"
#include "ctseg/phantom.hpp"
#include "ctseg/trainer.hpp"

namespace testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir() {
        std::string pattern = (std::filesystem::temp_directory_path() / "ctseg-test-XXXXXX").string();
        if (!::mkdtemp(pattern.data())) throw std::runtime_error("mkdtemp failed");
        path_ = pattern;
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline ctseg::PhantomSpec small_phantom(int patients, int slices, std::uint64_t seed = 7,
                                        ctseg::PhantomStyle style = ctseg::PhantomStyle::style_A) {
    ctseg::PhantomSpec spec = ctseg::PhantomSpec::defaults();
    spec.patient_count = patients;
    spec.slices_per_patient = slices;
    spec.seed = seed;
    spec.style = style;
    return spec;
}

/// Very small networks so training tests finish in seconds.
inline ctseg::TrainConfig tiny_train_config(int epochs, std::uint64_t seed) {
    ctseg::TrainConfig config;
    config.epochs = epochs;
    config.seed = seed;
    config.learning_rate = 1e-3;
    config.generator = ctseg::gan::GeneratorSpec::mirrored({4, 8, 8});
    config.discriminator = ctseg::gan::DiscriminatorSpec::patchgan({4, 8});
    return config;
}

}  // namespace testing
