#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ctseg/gan/networks.hpp"
#include "ctseg/gan/optimizer.hpp"
#include "ctseg/gan/spec.hpp"
#include "ctseg/organ.hpp"
#include "ctseg/preprocess.hpp"

namespace ctseg {

struct TrainConfig {
    int epochs = 30;
    int batch_size = 1;
    double learning_rate = 2e-4;
    double momentum_decay_1 = 0.5;
    double momentum_decay_2 = 0.999;
    gan::LossWeights loss_weights;
    int checkpoint_every = 10;
    std::uint64_t seed = 0;
    gan::GeneratorSpec generator;
    gan::DiscriminatorSpec discriminator = gan::DiscriminatorSpec::patchgan70();

    void validate() const;
    gan::AdamConfig adam() const { return {learning_rate, momentum_decay_1, momentum_decay_2, 1e-8}; }

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void to_json(nlohmann::json& j, const TrainConfig& config);
void from_json(const nlohmann::json& j, TrainConfig& config);

struct TrainLogRecord {
    long iteration = 0;
    int epoch = 0;
    double d_loss_real = 0.0;  // disc_weight * BCE(D(source, target), 1)
    double d_loss_fake = 0.0;  // disc_weight * BCE(D(source, G(source)), 0)
    double g_adv = 0.0;
    double g_l1 = 0.0;
    double g_total = 0.0;  // g_adv + lambda_l1 * g_l1

    friend bool operator==(const TrainLogRecord&, const TrainLogRecord&) = default;
};

/// Tab-separated, fixed column order, header line first.
inline constexpr std::string_view kTrainLogHeader = "iteration\tepoch\td_loss_real\td_loss_fake\tg_adv\tg_l1\tg_total";
std::string format_log_record(const TrainLogRecord& record);
std::vector<TrainLogRecord> read_train_log(const std::filesystem::path& path);

/// Epochs at which checkpoints are written: multiples of `cadence` up to
/// `epochs`, plus `epochs` itself. Only epochs after `start_epoch` are listed.
std::vector<int> checkpoint_epochs(int epochs, int cadence, int start_epoch = 0);

/// Frozen generator plus provenance. On disk a bundle is a directory:
///   generator.bin  parameter blob
///   spec.json      generator and discriminator specs
///   config.json    training configuration snapshot
///   bundle.json    organ, dataset fingerprint, epoch, iteration, blob hash
///   train_state.bin (optional) discriminator parameters and optimizer moments
struct ModelBundle {
    Organ organ = Organ::liver;
    gan::GeneratorSpec spec;
    TrainConfig config;
    std::string dataset_fingerprint;
    int epoch = 0;
    long iteration = 0;
    std::string generator_blob;
    std::string parameter_hash;  // sha256 of generator_blob
    std::string train_state_blob;

    /// Rebuilds the generator and loads the stored parameters. Throws
    /// Error(corrupt) naming the organ if the blob does not fit the spec.
    std::unique_ptr<gan::Generator<float>> build_generator() const;

    void save(const std::filesystem::path& directory) const;
    /// Throws Error(corrupt) naming the organ for any inconsistency.
    static ModelBundle load(const std::filesystem::path& directory);
};

/// The two networks and their optimizers for one training session.
class TrainingSession {
public:
    explicit TrainingSession(const TrainConfig& config);

    /// One alternating update on a batch of (source, target) tensors, each
    /// (N, 3, S, S) in [-1, 1]. Throws Error(non_finite) with the loss
    /// components if any loss is not finite.
    TrainLogRecord train_step(const gan::Tensor<float>& source, const gan::Tensor<float>& target, long iteration,
                              int epoch);

    gan::Generator<float>& generator() { return *generator_; }
    gan::Discriminator<float>& discriminator() { return *discriminator_; }
    const TrainConfig& config() const { return config_; }

    std::string generator_blob();
    std::string state_blob();
    void load_generator_blob(const std::string& blob);
    void load_state_blob(const std::string& blob);

private:
    TrainConfig config_;
    std::unique_ptr<gan::Generator<float>> generator_;
    std::unique_ptr<gan::Discriminator<float>> discriminator_;
    std::unique_ptr<gan::Adam<float>> g_opt_;
    std::unique_ptr<gan::Adam<float>> d_opt_;
};

struct TrainResult {
    ModelBundle final_bundle;
    std::filesystem::path final_bundle_dir;
    std::vector<int> checkpoints;  // epochs written by this call
    std::vector<TrainLogRecord> log;  // records produced by this call
};

/// Called after every epoch with (epoch, mean g_l1 over the epoch).
using EpochCallback = std::function<void(int, double)>;

/// Archive contents loaded for training.
struct TrainingData {
    std::vector<ArchiveEntry> entries;
    std::string fingerprint;  // sha256 of the archive file
    Organ organ = Organ::liver;

    static TrainingData load(const std::filesystem::path& archive);
};

/// Runs config.epochs epochs from scratch. Writes train_log.tsv and
/// checkpoints/epoch_NNNN/ bundles under `out_dir`.
TrainResult train(const TrainingData& data, const TrainConfig& config, const std::filesystem::path& out_dir,
                  const EpochCallback& on_epoch = {});

/// Continues a run from a bundle with training state up to config.epochs
/// total epochs. The bundle's dataset fingerprint must match the data.
TrainResult resume(const ModelBundle& bundle, const TrainingData& data, const TrainConfig& config,
                   const std::filesystem::path& out_dir, const EpochCallback& on_epoch = {});

std::filesystem::path checkpoint_dir(const std::filesystem::path& out_dir, int epoch);

}  // namespace ctseg
