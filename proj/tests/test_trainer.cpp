#include <doctest.h>

#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "ctseg/error.hpp"
#include "ctseg/fs_util.hpp"
#include "ctseg/gan/losses.hpp"
#include "ctseg/phantom.hpp"
#include "ctseg/rng.hpp"
#include "ctseg/trainer.hpp"
#include "support.hpp"

using namespace ctseg;
namespace fs = std::filesystem;

namespace {

// Small liver archive from a phantom corpus; returns the archive path.
fs::path liver_archive(const fs::path& dir, int patients, int slices, std::uint64_t seed = 7) {
    const fs::path corpus = dir / "corpus";
    generate_phantoms(testing::small_phantom(patients, slices, seed), corpus);
    const auto ids = list_patients(corpus);
    const auto pairs = build_pairs(corpus, Organ::liver, ids, PairOptions{});
    const fs::path archive = dir / "liver.ctsa";
    pack_archive(pairs, archive);
    return archive;
}

std::string param_bytes(std::vector<gan::Parameter<float>*> params) {
    std::string out;
    for (auto* p : params) out.append(reinterpret_cast<const char*>(p->value.data()), p->value.size() * sizeof(float));
    return out;
}

std::vector<int> cadence_oracle(int epochs, int cadence) {
    std::set<int> s{epochs};
    for (int k = cadence; k <= epochs; k += cadence) s.insert(k);
    return {s.begin(), s.end()};
}

}  // namespace

TEST_CASE("checkpoint cadence") {
    CHECK(checkpoint_epochs(25, 10) == std::vector<int>{10, 20, 25});
    CHECK(checkpoint_epochs(5, 10) == std::vector<int>{5});
    CHECK(checkpoint_epochs(20, 10) == std::vector<int>{10, 20});
    CHECK(checkpoint_epochs(20, 10, 10) == std::vector<int>{20});
    Rng rng(3);
    for (int i = 0; i < 500; ++i) {
        const int epochs = 1 + static_cast<int>(uniform_index(rng, 200));
        const int cadence = 1 + static_cast<int>(uniform_index(rng, 50));
        REQUIRE(checkpoint_epochs(epochs, cadence) == cadence_oracle(epochs, cadence));
    }
}

TEST_CASE("config validation and JSON") {
    TrainConfig c = testing::tiny_train_config(3, 1);
    CHECK_NOTHROW(c.validate());
    CHECK(nlohmann::json(c).get<TrainConfig>() == c);
    for (auto mutate : std::vector<std::function<void(TrainConfig&)>>{
             [](TrainConfig& x) { x.epochs = 0; }, [](TrainConfig& x) { x.batch_size = 0; },
             [](TrainConfig& x) { x.learning_rate = -1; }, [](TrainConfig& x) { x.checkpoint_every = 0; },
             [](TrainConfig& x) { x.loss_weights.lambda_l1 = 0; }}) {
        TrainConfig bad = c;
        mutate(bad);
        CHECK_THROWS_AS(bad.validate(), Error);
    }
}

TEST_CASE("train step: scaled discriminator loss and update order") {
    TrainConfig config = testing::tiny_train_config(1, 5);
    config.generator.input_size = 32;
    config.generator.dropout_rate = 0.0;
    Rng rng(1);
    gan::Tensor<float> src({1, 3, 32, 32});
    gan::Tensor<float> tgt({1, 3, 32, 32});
    for (auto& v : src.values()) v = static_cast<float>(uniform(rng, -1, 1));
    for (auto& v : tgt.values()) v = static_cast<float>(uniform(rng, -1, 1));

    TrainingSession a(config);
    TrainingSession b(config);  // untouched twin with the initial parameters
    const std::string d_before = param_bytes(a.discriminator().parameters());
    const std::string g_before = param_bytes(a.generator().parameters());
    const TrainLogRecord rec = a.train_step(src, tgt, 1, 1);
    CHECK(param_bytes(a.discriminator().parameters()) != d_before);
    CHECK(param_bytes(a.generator().parameters()) != g_before);

    Rng unused(0);
    const gan::Pass pass{true, &unused};
    const gan::Tensor<float> real_map = b.discriminator().forward(src, tgt, pass);
    // 32 -> 16 (stride 2) -> 15 -> 14 through the two stride-1 layers.
    CHECK(real_map.shape() == gan::Shape{1, 1, 14, 14});
    CHECK(rec.d_loss_real == 0.5 * gan::adversarial_loss(real_map, 1.0));

    // The generator's adversarial term is scored by the discriminator as it
    // stands after the whole step: updated first, then left alone.
    const gan::Tensor<float> fake = b.generator().forward(src, pass);
    const gan::Tensor<float> scored = a.discriminator().forward(src, fake, pass);
    CHECK(rec.g_adv == gan::adversarial_loss(scored, 1.0));
    CHECK(rec.g_l1 == gan::l1_loss(fake, tgt));
    CHECK(rec.g_total == rec.g_adv + 100.0 * rec.g_l1);
    for (double v : {rec.d_loss_real, rec.d_loss_fake, rec.g_adv, rec.g_l1, rec.g_total}) {
        CHECK(std::isfinite(v));
        CHECK(v >= 0.0);
    }
}

TEST_CASE("default discriminator emits a 30x30 map, so real labels are 30x30 ones") {
    gan::Discriminator<float> d(gan::DiscriminatorSpec::patchgan70());
    CHECK(d.spec().output_extent(256, 256) == std::pair{30, 30});
}

TEST_CASE("non-finite losses abort with diagnostics") {
    TrainConfig config = testing::tiny_train_config(1, 5);
    config.generator.input_size = 32;
    TrainingSession s(config);
    gan::Tensor<float> src({1, 3, 32, 32}, 0.0f);
    gan::Tensor<float> tgt({1, 3, 32, 32}, std::nanf(""));
    try {
        s.train_step(src, tgt, 7, 1);
        FAIL("NaN target accepted");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::non_finite);
        CHECK(std::string(e.what()).find("iteration 7") != std::string::npos);
    }
}

TEST_CASE("training run: log, checkpoints, determinism, resume") {
    testing::TempDir dir;
    const fs::path archive = liver_archive(dir.path(), 2, 6);
    const TrainingData data = TrainingData::load(archive);
    const std::size_t n = data.entries.size();
    REQUIRE(n >= 3);

    TrainConfig config = testing::tiny_train_config(4, 11);
    config.batch_size = 2;
    config.checkpoint_every = 3;
    const TrainResult r1 = train(data, config, dir / "run1");
    const long batches = static_cast<long>((n + 1) / 2);
    CHECK(static_cast<long>(r1.log.size()) == 4 * batches);
    CHECK(r1.checkpoints == std::vector<int>{3, 4});
    CHECK(fs::exists(checkpoint_dir(dir / "run1", 3) / "generator.bin"));
    CHECK(r1.final_bundle.epoch == 4);
    CHECK(r1.final_bundle.iteration == 4 * batches);
    for (std::size_t i = 0; i < r1.log.size(); ++i) CHECK(r1.log[i].iteration == static_cast<long>(i) + 1);

    const std::vector<TrainLogRecord> from_disk = read_train_log(dir / "run1" / "train_log.tsv");
    REQUIRE(from_disk.size() == r1.log.size());
    CHECK(from_disk.front().iteration == 1);
    CHECK(std::abs(from_disk.back().g_l1 - r1.log.back().g_l1) <= 1e-6 * r1.log.back().g_l1);

    const TrainResult r2 = train(data, config, dir / "run2");
    CHECK(r2.final_bundle.generator_blob == r1.final_bundle.generator_blob);
    CHECK(r2.log == r1.log);

    // Resume from the epoch-3 checkpoint to the same budget.
    const ModelBundle at3 = ModelBundle::load(checkpoint_dir(dir / "run1", 3));
    CHECK(at3.epoch == 3);
    const TrainResult rr = resume(at3, data, config, dir / "resumed");
    CHECK(rr.checkpoints == std::vector<int>{4});
    CHECK(static_cast<long>(rr.log.size()) == batches);
    CHECK(rr.log.front().iteration == 3 * batches + 1);
    CHECK(rr.final_bundle.generator_blob == r1.final_bundle.generator_blob);

    // A bundle from another archive is refused and both fingerprints are named.
    testing::TempDir other;
    const TrainingData foreign = TrainingData::load(liver_archive(other.path(), 2, 5, 8));
    try {
        resume(at3, foreign, config, dir / "bad");
        FAIL("foreign archive accepted");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find(at3.dataset_fingerprint) != std::string::npos);
        CHECK(std::string(e.what()).find(foreign.fingerprint) != std::string::npos);
    }
}

TEST_CASE("resume continues the checkpoint sequence") {
    testing::TempDir dir;
    const TrainingData data = TrainingData::load(liver_archive(dir.path(), 2, 3));
    TrainConfig config = testing::tiny_train_config(10, 2);
    const TrainResult first = train(data, config, dir / "a");
    CHECK(first.checkpoints == std::vector<int>{10});
    config.epochs = 20;
    const TrainResult second = resume(first.final_bundle, data, config, dir / "a");
    CHECK(second.checkpoints == std::vector<int>{20});
    CHECK(second.log.size() == 10 * data.entries.size());
    CHECK(read_train_log(dir / "a" / "train_log.tsv").size() == 20 * data.entries.size());

    config.epochs = 30;
    const TrainResult third = resume(ModelBundle::load(checkpoint_dir(dir / "a", 20)), data, config, dir / "a");
    CHECK(third.log.size() == 10 * data.entries.size());
    CHECK(third.log.front().epoch == 21);
    CHECK(third.log.back().epoch == 30);
}

TEST_CASE("archive and spec shape mismatch is rejected before training") {
    testing::TempDir dir;
    const TrainingData data = TrainingData::load(liver_archive(dir.path(), 2, 3));
    TrainConfig config = testing::tiny_train_config(1, 1);
    config.generator.input_size = 64;
    CHECK_THROWS_AS(train(data, config, dir / "x"), Error);
    CHECK_FALSE(fs::exists(dir / "x" / "train_log.tsv"));
}

TEST_CASE("bundle save/load and corruption") {
    testing::TempDir dir;
    const TrainingData data = TrainingData::load(liver_archive(dir.path(), 2, 3));
    const TrainResult r = train(data, testing::tiny_train_config(1, 3), dir / "run");
    const ModelBundle loaded = ModelBundle::load(r.final_bundle_dir);
    CHECK(loaded.parameter_hash == r.final_bundle.parameter_hash);
    CHECK(loaded.spec == r.final_bundle.spec);
    CHECK(loaded.config == r.final_bundle.config);
    CHECK(loaded.dataset_fingerprint == data.fingerprint);
    CHECK(loaded.build_generator()->parameter_count() > 0);

    std::string blob = read_file(r.final_bundle_dir / "generator.bin");
    blob[blob.size() / 2] ^= 0x5a;
    write_file_atomic(r.final_bundle_dir / "generator.bin", blob);
    try {
        ModelBundle::load(r.final_bundle_dir);
        FAIL("corrupt bundle accepted");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::corrupt);
        CHECK(std::string(e.what()).find("liver") != std::string::npos);
    }
}

TEST_CASE("thirty epochs at least halve the L1 term") {
    testing::TempDir dir;
    const TrainingData data = TrainingData::load(liver_archive(dir.path(), 3, 8));
    std::vector<double> per_epoch;
    train(data, testing::tiny_train_config(30, 0), dir / "run",
          [&](int, double mean_l1) { per_epoch.push_back(mean_l1); });
    REQUIRE(per_epoch.size() == 30);
    const double ratio = per_epoch.back() / per_epoch.front();
    MESSAGE("first-epoch L1 " << per_epoch.front() << ", last " << per_epoch.back() << ", ratio " << ratio);
    CHECK(ratio <= 0.5);
}
