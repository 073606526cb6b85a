#include "ctseg/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "ctseg/error.hpp"
#include "ctseg/fs_util.hpp"
#include "ctseg/gan/losses.hpp"
#include "ctseg/hash.hpp"
#include "ctseg/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ctseg {

namespace {

constexpr std::uint64_t kDropoutSalt = 0x64726f70ULL;
constexpr std::uint64_t kShuffleSalt = 0x73687566ULL;
constexpr std::uint64_t kDiscriminatorSalt = 0x64697363ULL;
constexpr std::string_view kStateMagic = "CTSGSTA2";

template <typename T>
bool finite(T v) {
    return std::isfinite(static_cast<double>(v));
}

void check_finite(const TrainLogRecord& r) {
    for (double v : {r.d_loss_real, r.d_loss_fake, r.g_adv, r.g_l1, r.g_total}) {
        if (!std::isfinite(v)) {
            fail(ErrorCode::non_finite,
                 "non-finite loss at iteration " + std::to_string(r.iteration) + " (epoch " +
                     std::to_string(r.epoch) + "): " + format_log_record(r));
        }
    }
}

}  // namespace

void TrainConfig::validate() const {
    if (epochs < 1) fail(ErrorCode::invalid_argument, "epochs must be >= 1");
    if (batch_size < 1) fail(ErrorCode::invalid_argument, "batch_size must be >= 1");
    if (checkpoint_every < 1) fail(ErrorCode::invalid_argument, "checkpoint_every must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        fail(ErrorCode::invalid_argument, "learning_rate must be positive");
    }
    if (!(momentum_decay_1 >= 0.0 && momentum_decay_1 < 1.0) || !(momentum_decay_2 >= 0.0 && momentum_decay_2 < 1.0)) {
        fail(ErrorCode::invalid_argument, "momentum decays must lie in [0, 1)");
    }
    loss_weights.validate();
    generator.validate();
    discriminator.validate();
    if (discriminator.input_channels != generator.input_channels + generator.output_channels) {
        fail(ErrorCode::invalid_argument,
             "discriminator takes " + std::to_string(discriminator.input_channels) + " channels, generator pairs " +
                 std::to_string(generator.input_channels + generator.output_channels));
    }
    const auto [h, w] = discriminator.output_extent(generator.input_size, generator.input_size);
    if (h < 1 || w < 1) fail(ErrorCode::invalid_argument, "discriminator collapses the input to nothing");
}

void to_json(json& j, const TrainConfig& c) {
    j = {{"epochs", c.epochs},
         {"batch_size", c.batch_size},
         {"learning_rate", c.learning_rate},
         {"momentum_decay_1", c.momentum_decay_1},
         {"momentum_decay_2", c.momentum_decay_2},
         {"loss_weights", c.loss_weights},
         {"checkpoint_every", c.checkpoint_every},
         {"seed", c.seed},
         {"generator", c.generator},
         {"discriminator", c.discriminator}};
}

void from_json(const json& j, TrainConfig& c) {
    TrainConfig d;
    d.epochs = j.value("epochs", d.epochs);
    d.batch_size = j.value("batch_size", d.batch_size);
    d.learning_rate = j.value("learning_rate", d.learning_rate);
    d.momentum_decay_1 = j.value("momentum_decay_1", d.momentum_decay_1);
    d.momentum_decay_2 = j.value("momentum_decay_2", d.momentum_decay_2);
    if (j.contains("loss_weights")) d.loss_weights = j.at("loss_weights").get<gan::LossWeights>();
    d.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
    d.seed = j.value("seed", d.seed);
    if (j.contains("generator")) d.generator = j.at("generator").get<gan::GeneratorSpec>();
    if (j.contains("discriminator")) d.discriminator = j.at("discriminator").get<gan::DiscriminatorSpec>();
    c = std::move(d);
}

std::string format_log_record(const TrainLogRecord& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%ld\t%d\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g", r.iteration, r.epoch, r.d_loss_real,
                  r.d_loss_fake, r.g_adv, r.g_l1, r.g_total);
    return buf;
}

std::vector<TrainLogRecord> read_train_log(const fs::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::io, "cannot read training log '" + path.string() + "'");
    std::string line;
    std::getline(in, line);
    if (line != kTrainLogHeader) fail(ErrorCode::corrupt, "training log '" + path.string() + "' has a bad header");
    std::vector<TrainLogRecord> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        TrainLogRecord r;
        if (std::sscanf(line.c_str(), "%ld\t%d\t%lf\t%lf\t%lf\t%lf\t%lf", &r.iteration, &r.epoch, &r.d_loss_real,
                        &r.d_loss_fake, &r.g_adv, &r.g_l1, &r.g_total) != 7) {
            fail(ErrorCode::corrupt, "training log '" + path.string() + "': malformed line '" + line + "'");
        }
        out.push_back(r);
    }
    return out;
}

std::vector<int> checkpoint_epochs(int epochs, int cadence, int start_epoch) {
    if (cadence < 1) fail(ErrorCode::invalid_argument, "checkpoint cadence must be >= 1");
    std::vector<int> out;
    for (int e = cadence; e <= epochs; e += cadence) {
        if (e > start_epoch) out.push_back(e);
    }
    if (epochs > start_epoch && (out.empty() || out.back() != epochs)) out.push_back(epochs);
    return out;
}

fs::path checkpoint_dir(const fs::path& out_dir, int epoch) {
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%04d", epoch);
    return out_dir / "checkpoints" / name;
}

// ---------------------------------------------------------------------------
// Bundles

std::unique_ptr<gan::Generator<float>> ModelBundle::build_generator() const {
    const std::string organ_name(to_string(organ));
    try {
        spec.validate();
        auto g = std::make_unique<gan::Generator<float>>(spec);
        std::istringstream in(generator_blob);
        gan::read_parameters(in, g->parameters());
        return g;
    } catch (const Error& e) {
        fail(ErrorCode::corrupt, "bundle for " + organ_name + " is unusable: " + e.what());
    }
}

void ModelBundle::save(const fs::path& directory) const {
    const fs::path staging = directory.string() + ".staging";
    fs::remove_all(staging);
    fs::create_directories(staging);
    write_file_atomic(staging / "generator.bin", generator_blob);
    json specs = {{"generator", spec}, {"discriminator", config.discriminator}};
    write_file_atomic(staging / "spec.json", specs.dump(2) + "\n");
    write_file_atomic(staging / "config.json", json(config).dump(2) + "\n");
    json meta = {{"format", 1},
                 {"organ", std::string(to_string(organ))},
                 {"dataset_fingerprint", dataset_fingerprint},
                 {"epoch", epoch},
                 {"iteration", iteration},
                 {"parameter_sha256", parameter_hash}};
    write_file_atomic(staging / "bundle.json", meta.dump(2) + "\n");
    if (!train_state_blob.empty()) write_file_atomic(staging / "train_state.bin", train_state_blob);
    publish_directory(staging, directory);
}

ModelBundle ModelBundle::load(const fs::path& directory) {
    ModelBundle b;
    json meta;
    try {
        meta = json::parse(read_file(directory / "bundle.json"));
    } catch (const std::exception& e) {
        fail(ErrorCode::corrupt, "bundle '" + directory.string() + "': unreadable bundle.json: " + e.what());
    }
    std::string organ_name = "unknown organ";
    try {
        organ_name = meta.at("organ").get<std::string>();
        b.organ = parse_organ(organ_name);
        b.dataset_fingerprint = meta.at("dataset_fingerprint").get<std::string>();
        b.epoch = meta.at("epoch").get<int>();
        b.iteration = meta.at("iteration").get<long>();
        b.parameter_hash = meta.at("parameter_sha256").get<std::string>();
        const json specs = json::parse(read_file(directory / "spec.json"));
        b.spec = specs.at("generator").get<gan::GeneratorSpec>();
        b.config = json::parse(read_file(directory / "config.json")).get<TrainConfig>();
        b.generator_blob = read_file(directory / "generator.bin");
        if (fs::exists(directory / "train_state.bin")) b.train_state_blob = read_file(directory / "train_state.bin");
    } catch (const std::exception& e) {
        fail(ErrorCode::corrupt, "bundle for " + organ_name + " at '" + directory.string() + "' is corrupt: " + e.what());
    }
    if (sha256_hex(b.generator_blob) != b.parameter_hash) {
        fail(ErrorCode::corrupt, "bundle for " + organ_name + ": generator.bin does not match its recorded hash");
    }
    b.build_generator();  // shape check
    return b;
}

// ---------------------------------------------------------------------------
// Session

TrainingSession::TrainingSession(const TrainConfig& config) : config_(config) {
    config_.validate();
    generator_ = std::make_unique<gan::Generator<float>>(config_.generator);
    discriminator_ = std::make_unique<gan::Discriminator<float>>(config_.discriminator);
    gan::initialize_parameters(generator_->parameters(), config_.seed);
    gan::initialize_parameters(discriminator_->parameters(), derive_seed(config_.seed, kDiscriminatorSalt));
    g_opt_ = std::make_unique<gan::Adam<float>>(generator_->parameters(), config_.adam());
    d_opt_ = std::make_unique<gan::Adam<float>>(discriminator_->parameters(), config_.adam());
}

TrainLogRecord TrainingSession::train_step(const gan::Tensor<float>& source, const gan::Tensor<float>& target,
                                           long iteration, int epoch) {
    if (!(source.shape() == target.shape())) {
        fail(ErrorCode::invalid_argument, "train_step: source " + source.shape().str() + " vs target " +
                                              target.shape().str());
    }
    const double w = config_.loss_weights.disc_weight;
    const double lambda = config_.loss_weights.lambda_l1;
    Rng dropout(derive_seed(derive_seed(config_.seed, kDropoutSalt), static_cast<std::uint64_t>(iteration)));
    const gan::Pass train_pass{true, &dropout};

    TrainLogRecord rec;
    rec.iteration = iteration;
    rec.epoch = epoch;

    gan::Tensor<float> fake = generator_->forward(source, train_pass);

    // Discriminator: real pair -> 1, generated pair -> 0, each scaled by disc_weight.
    discriminator_->zero_grad();
    gan::Tensor<float> grad;
    {
        const gan::Tensor<float> p_real = discriminator_->forward(source, target, train_pass);
        rec.d_loss_real = w * gan::adversarial_loss(p_real, 1.0, &grad);
        for (auto& g : grad.values()) g = static_cast<float>(g * w);
        discriminator_->backward(grad, false);
    }
    {
        const gan::Tensor<float> p_fake = discriminator_->forward(source, fake, train_pass);
        rec.d_loss_fake = w * gan::adversarial_loss(p_fake, 0.0, &grad);
        for (auto& g : grad.values()) g = static_cast<float>(g * w);
        discriminator_->backward(grad, false);
    }
    if (!finite(rec.d_loss_real) || !finite(rec.d_loss_fake)) check_finite(rec);
    d_opt_->step();

    // Generator through the updated, frozen discriminator.
    generator_->zero_grad();
    gan::Tensor<float> grad_fake;
    {
        const gan::Tensor<float> p = discriminator_->forward(source, fake, train_pass);
        rec.g_adv = gan::adversarial_loss(p, 1.0, &grad);
        grad_fake = discriminator_->backward(grad, true);
    }
    gan::Tensor<float> grad_l1;
    rec.g_l1 = gan::l1_loss(fake, target, &grad_l1);
    rec.g_total = gan::generator_loss(rec.g_adv, rec.g_l1, config_.loss_weights);
    check_finite(rec);
    const float lam = static_cast<float>(lambda);
    float* gf = grad_fake.data();
    const float* gl = grad_l1.data();
    for (std::size_t i = 0; i < grad_fake.size(); ++i) gf[i] += lam * gl[i];
    generator_->backward(grad_fake);
    g_opt_->step();

    generator_->clear_cache();
    discriminator_->clear_cache();
    return rec;
}

std::string TrainingSession::generator_blob() {
    std::ostringstream out;
    gan::write_parameters(out, generator_->parameters());
    return std::move(out).str();
}

std::string TrainingSession::state_blob() {
    std::ostringstream out;
    out.write(kStateMagic.data(), static_cast<std::streamsize>(kStateMagic.size()));
    gan::write_parameters(out, discriminator_->parameters());
    gan::write_parameters(out, discriminator_->buffers());
    g_opt_->save_state(out);
    d_opt_->save_state(out);
    return std::move(out).str();
}

void TrainingSession::load_generator_blob(const std::string& blob) {
    std::istringstream in(blob);
    gan::read_parameters(in, generator_->parameters());
}

void TrainingSession::load_state_blob(const std::string& blob) {
    std::istringstream in(blob);
    std::string magic(kStateMagic.size(), '\0');
    in.read(magic.data(), static_cast<std::streamsize>(magic.size()));
    if (magic != kStateMagic) fail(ErrorCode::corrupt, "training state has a bad header");
    gan::read_parameters(in, discriminator_->parameters());
    gan::read_parameters(in, discriminator_->buffers());
    g_opt_->load_state(in);
    d_opt_->load_state(in);
}

// ---------------------------------------------------------------------------
// Loop

TrainingData TrainingData::load(const fs::path& archive) {
    TrainingData d;
    d.entries = unpack_archive(archive);
    d.fingerprint = sha256_file(archive);
    d.organ = d.entries.front().organ;
    for (const auto& e : d.entries) {
        if (e.organ != d.organ) {
            fail(ErrorCode::invalid_argument, "archive '" + archive.string() + "' mixes organs " +
                                                  std::string(to_string(d.organ)) + " and " +
                                                  std::string(to_string(e.organ)));
        }
    }
    return d;
}

namespace {

struct DecodedSample {
    gan::Tensor<float> source;
    gan::Tensor<float> target;
};

std::vector<DecodedSample> decode(const TrainingData& data, const TrainConfig& config) {
    std::vector<DecodedSample> out;
    out.reserve(data.entries.size());
    const int size = config.generator.input_size;
    for (const auto& e : data.entries) {
        RgbImage source;
        Gray8Image target;
        split_composite(e.composite, source, target);
        if (source.rows() != size || source.cols() != size) {
            fail(ErrorCode::invalid_argument, "archive composites hold " + std::to_string(source.rows()) + "x" +
                                                  std::to_string(source.cols()) + " images, generator expects " +
                                                  std::to_string(size) + "x" + std::to_string(size));
        }
        out.push_back({to_tensor(source), target_to_tensor(target)});
    }
    return out;
}

gan::Tensor<float> stack(const std::vector<DecodedSample>& samples, std::span<const std::size_t> idx, bool source) {
    const gan::Shape one = (source ? samples[idx[0]].source : samples[idx[0]].target).shape();
    gan::Tensor<float> out({static_cast<int>(idx.size()), one.c, one.h, one.w});
    const std::size_t per = one.numel();
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const auto& t = source ? samples[idx[k]].source : samples[idx[k]].target;
        std::copy_n(t.data(), per, out.data() + k * per);
    }
    return out;
}

TrainResult run(TrainingSession& session, const TrainingData& data, const TrainConfig& config, int start_epoch,
                long start_iteration, const fs::path& out_dir, const EpochCallback& on_epoch) {
    const std::vector<DecodedSample> samples = decode(data, config);
    fs::create_directories(out_dir);
    const fs::path log_path = out_dir / "train_log.tsv";
    if (start_epoch == 0 || !fs::exists(log_path)) {
        write_file_atomic(log_path, std::string(kTrainLogHeader) + "\n");
    }
    std::ofstream log(log_path, std::ios::app);
    if (!log) fail(ErrorCode::io, "cannot append to '" + log_path.string() + "'");

    TrainResult result;
    const std::vector<int> checkpoints = checkpoint_epochs(config.epochs, config.checkpoint_every, start_epoch);
    std::size_t next_checkpoint = 0;
    long iteration = start_iteration;
    std::vector<std::size_t> order(samples.size());
    for (int epoch = start_epoch + 1; epoch <= config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(derive_seed(derive_seed(config.seed, kShuffleSalt), static_cast<std::uint64_t>(epoch)));
        shuffle(std::span<std::size_t>(order), rng);
        double l1_sum = 0.0;
        int steps = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(config.batch_size));
            const std::span<const std::size_t> batch(order.data() + begin, end - begin);
            const TrainLogRecord rec =
                session.train_step(stack(samples, batch, true), stack(samples, batch, false), ++iteration, epoch);
            log << format_log_record(rec) << '\n';
            result.log.push_back(rec);
            l1_sum += rec.g_l1;
            ++steps;
        }
        log.flush();
        const double mean_l1 = l1_sum / steps;
        spdlog::info("epoch {}/{}: {} iterations, mean g_l1 {:.5f}", epoch, config.epochs, steps, mean_l1);
        if (on_epoch) on_epoch(epoch, mean_l1);

        if (next_checkpoint < checkpoints.size() && checkpoints[next_checkpoint] == epoch) {
            ModelBundle b;
            b.organ = data.organ;
            b.spec = config.generator;
            b.config = config;
            b.dataset_fingerprint = data.fingerprint;
            b.epoch = epoch;
            b.iteration = iteration;
            b.generator_blob = session.generator_blob();
            b.parameter_hash = sha256_hex(b.generator_blob);
            b.train_state_blob = session.state_blob();
            const fs::path dir = checkpoint_dir(out_dir, epoch);
            b.save(dir);
            result.checkpoints.push_back(epoch);
            result.final_bundle = std::move(b);
            result.final_bundle_dir = dir;
            ++next_checkpoint;
        }
    }
    return result;
}

}  // namespace

TrainResult train(const TrainingData& data, const TrainConfig& config, const fs::path& out_dir,
                  const EpochCallback& on_epoch) {
    config.validate();
    if (data.entries.empty()) fail(ErrorCode::invalid_argument, "training archive is empty");
    TrainingSession session(config);
    return run(session, data, config, 0, 0, out_dir, on_epoch);
}

TrainResult resume(const ModelBundle& bundle, const TrainingData& data, const TrainConfig& config,
                   const fs::path& out_dir, const EpochCallback& on_epoch) {
    config.validate();
    if (bundle.dataset_fingerprint != data.fingerprint) {
        fail(ErrorCode::invalid_argument, "bundle was trained on dataset " + bundle.dataset_fingerprint +
                                              " but the archive fingerprint is " + data.fingerprint);
    }
    if (!(bundle.spec == config.generator)) {
        fail(ErrorCode::invalid_argument, "resume config's generator spec differs from the bundle's");
    }
    if (bundle.train_state_blob.empty()) {
        fail(ErrorCode::invalid_argument, "bundle at epoch " + std::to_string(bundle.epoch) + " has no training state");
    }
    if (bundle.epoch >= config.epochs) {
        fail(ErrorCode::invalid_argument, "bundle is already at epoch " + std::to_string(bundle.epoch) +
                                              ", budget is " + std::to_string(config.epochs));
    }
    TrainingSession session(config);
    session.load_generator_blob(bundle.generator_blob);
    session.load_state_blob(bundle.train_state_blob);
    return run(session, data, config, bundle.epoch, bundle.iteration, out_dir, on_epoch);
}

}  // namespace ctseg
