#include <doctest.h>

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "ctseg/error.hpp"
#include "ctseg/hash.hpp"
#include "ctseg/inference.hpp"
#include "ctseg/phantom.hpp"
#include "ctseg/rng.hpp"
#include "support.hpp"

using namespace ctseg;
namespace fs = std::filesystem;

namespace {

// Untrained bundle with the tiny architecture; enough to exercise plumbing.
ModelBundle fresh_bundle(Organ organ, std::uint64_t seed) {
    const TrainConfig config = testing::tiny_train_config(1, seed);
    TrainingSession session(config);
    ModelBundle b;
    b.organ = organ;
    b.spec = config.generator;
    b.config = config;
    b.dataset_fingerprint = "fixture";
    b.epoch = 1;
    b.generator_blob = session.generator_blob();
    b.parameter_hash = sha256_hex(b.generator_blob);
    return b;
}

std::uint8_t blend_oracle(std::uint8_t under, std::uint8_t color, double alpha) {
    return static_cast<std::uint8_t>(std::floor((1.0 - alpha) * under + alpha * color + 0.5));
}

// Generator output that reproduces a mask exactly: +1 inside, -1 outside.
FloatImage perfect_output(const MaskImage& mask) {
    FloatImage out(mask.rows(), mask.cols(), 3);
    for (int r = 0; r < mask.rows(); ++r) {
        for (int c = 0; c < mask.cols(); ++c) {
            for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = mask.at(r, c) ? 1.0f : -1.0f;
        }
    }
    return out;
}

}  // namespace

TEST_CASE("overlay with empty masks is the gray image lifted to RGB") {
    Rng rng(1);
    Gray8Image gray(32, 32);
    for (auto& v : gray.pixels()) v = static_cast<std::uint8_t>(uniform_index(rng, 256));
    const RgbImage out = render_overlay(gray, {{Organ::liver, MaskImage(32, 32)}, {Organ::spleen, MaskImage(32, 32)}});
    for (int r = 0; r < 32; ++r) {
        for (int c = 0; c < 32; ++c) {
            for (int ch = 0; ch < 3; ++ch) REQUIRE(out.at(r, c, ch) == gray.at(r, c));
        }
    }
}

TEST_CASE("overlay blend arithmetic and draw order") {
    Rng rng(2);
    Gray8Image gray(16, 16);
    for (auto& v : gray.pixels()) v = static_cast<std::uint8_t>(uniform_index(rng, 256));
    const MaskImage full(16, 16, 1, 1);
    const auto green = organ_color(Organ::liver);
    const RgbImage liver = render_overlay(gray, {{Organ::liver, full}});
    for (int r = 0; r < 16; ++r) {
        for (int c = 0; c < 16; ++c) {
            for (int ch = 0; ch < 3; ++ch) REQUIRE(liver.at(r, c, ch) == blend_oracle(gray.at(r, c), green[ch], 0.4));
        }
    }

    MaskImage half(16, 16);
    for (int r = 0; r < 8; ++r) {
        for (int c = 0; c < 16; ++c) half.at(r, c) = 1;
    }
    const auto red = organ_color(Organ::liver_laceration);
    // Same result whichever order the caller lists the masks in.
    const RgbImage a = render_overlay(gray, {{Organ::liver, full}, {Organ::liver_laceration, half}});
    const RgbImage b = render_overlay(gray, {{Organ::liver_laceration, half}, {Organ::liver, full}});
    CHECK(a == b);
    for (int ch = 0; ch < 3; ++ch) {
        const std::uint8_t under = blend_oracle(gray.at(2, 3), green[ch], 0.4);
        CHECK(a.at(2, 3, ch) == blend_oracle(under, red[ch], 0.4));
        CHECK(a.at(12, 3, ch) == blend_oracle(gray.at(12, 3), green[ch], 0.4));
    }
    CHECK(organ_color(Organ::left_kidney) == std::array<std::uint8_t, 3>{0, 0, 255});
    CHECK(organ_color(Organ::right_kidney) == std::array<std::uint8_t, 3>{0, 255, 255});
    CHECK(organ_color(Organ::spleen) == std::array<std::uint8_t, 3>{255, 255, 0});
}

TEST_CASE("segment_study with five bundles") {
    testing::TempDir dir;
    generate_phantoms(testing::small_phantom(1, 4), dir / "corpus");
    const auto patients = list_patients(dir / "corpus");
    const CtSeries series = load_series(dir / ("corpus/images/" + patients[0]));

    std::map<Organ, ModelBundle> bundles;
    std::uint64_t seed = 1;
    for (Organ o : kAllOrgans) bundles[o] = fresh_bundle(o, seed++);

    SegmentOptions options;
    std::vector<MaskImage> truth;
    for (int s = 0; s < 4; ++s) {
        truth.push_back(resize_nearest(load_slice_mask(dir / "corpus", Organ::liver, patients[0], s, 256, 256)));
    }
    options.truth[Organ::liver] = truth;
    const StudyResult result = segment_study(bundles, series, options);
    CHECK(result.findings.size() == 5);
    CHECK(result.slice_count == 4);
    for (const auto& f : result.findings) {
        CHECK(f.masks.size() == 4);
        CHECK(result.provenance.at(f.organ) == bundles.at(f.organ).parameter_hash);
        CHECK(f.volume.has_value() == (f.organ == Organ::liver_laceration));
    }
    CHECK(result.find(Organ::liver)->dice.has_value());
    CHECK_FALSE(result.find(Organ::spleen)->dice.has_value());
    const auto* lac = result.find(Organ::liver_laceration);
    CHECK(result.laceration_ml() == lac->volume->milliliters);
    CHECK(lac->volume->milliliters == lac->volume->voxel_count * lac->volume->voxel_volume_mm3 / 1000.0);

    const nlohmann::json j = result.to_json();
    CHECK(j.at("findings").size() == 5);

    write_study(result, series, options.window, dir / "out");
    CHECK(fs::exists(dir / "out" / "study.json"));
    CHECK(fs::exists(dir / "out" / "overlays" / "slice_0003.png"));
    CHECK(fs::exists(dir / "out" / "masks" / "liver_laceration" / "slice_0000.png"));
    CHECK(read_rgb_image(dir / "out" / "overlays" / "slice_0002.png") ==
          study_overlay(result, series, options.window, 2));
}

TEST_CASE("zero-intensity slices segment without error") {
    CtSeries series;
    series.patient_id = "Z";
    series.pixel_spacing_mm = {1.0, 1.0};
    series.slice_thickness_mm = 2.0;
    for (int i = 0; i < 2; ++i) {
        HuSlice s;
        s.values = FloatImage(256, 256);
        s.index = i;
        s.position_mm = 2.0 * i;
        series.slices.push_back(s);
    }
    const StudyResult r = segment_study({{Organ::liver_laceration, fresh_bundle(Organ::liver_laceration, 4)}}, series);
    REQUIRE(r.findings.size() == 1);
    CHECK(r.findings[0].masks.size() == 2);
    CHECK(r.laceration_ml() >= 0.0);
}

TEST_CASE("segment_study rejects empty series and broken bundles") {
    CtSeries empty;
    empty.patient_id = "E";
    CHECK_THROWS_AS(segment_study({{Organ::liver, fresh_bundle(Organ::liver, 1)}}, empty), Error);

    testing::TempDir dir;
    generate_phantoms(testing::small_phantom(1, 2), dir / "c");
    const CtSeries series = load_series(dir / ("c/images/" + list_patients(dir / "c")[0]));

    CHECK_THROWS_AS(segment_study({{Organ::spleen, fresh_bundle(Organ::liver, 1)}}, series), Error);

    ModelBundle broken = fresh_bundle(Organ::right_kidney, 2);
    broken.generator_blob.resize(broken.generator_blob.size() / 2);
    try {
        segment_study({{Organ::right_kidney, broken}}, series);
        FAIL("truncated bundle accepted");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::corrupt);
        CHECK(std::string(e.what()).find("right_kidney") != std::string::npos);
    }
}

TEST_CASE("evaluation wiring: perfect predictions score 1") {
    testing::TempDir dir;
    generate_phantoms(testing::small_phantom(3, 6), dir / "c");
    const auto patients = list_patients(dir / "c");
    PairOptions opts;
    opts.include_empty_slices = true;
    const auto pairs = build_pairs(dir / "c", Organ::liver, patients, opts);
    const DiceReport r =
        evaluate_predictions(Organ::liver, pairs, [](const PairedSample& p) { return perfect_output(p.mask); });
    CHECK(r.per_patient.size() == 3);
    for (const auto& [id, p] : r.per_patient) CHECK(p.dice == 1.0);
    CHECK(r.mean_dice == 1.0);
    CHECK_THROWS_AS(evaluate_predictions(Organ::liver, std::span<const PairedSample>{},
                                         [](const PairedSample& p) { return perfect_output(p.mask); }),
                    Error);
}

TEST_CASE("cross evaluation is pure and degenerates to evaluate on the same corpus") {
    testing::TempDir dir;
    generate_phantoms(testing::small_phantom(3, 5), dir / "a");
    const auto patients = list_patients(dir / "a");
    const ModelBundle bundle = fresh_bundle(Organ::liver, 9);
    const std::string hash_before = sha256_hex(bundle.generator_blob);

    const PairOptions opts;
    const DiceReport cross = cross_evaluate(bundle, dir / "a", patients, opts);
    CHECK(sha256_hex(bundle.generator_blob) == hash_before);
    CHECK(cross.metadata.at("eval_corpus_fingerprint") == corpus_fingerprint(dir / "a"));
    CHECK(cross.metadata.at("bundle_parameter_sha256") == hash_before);

    const auto pairs = build_pairs(dir / "a", Organ::liver, patients, opts);
    const DiceReport same = evaluate(bundle, pairs);
    CHECK(same.mean_dice == cross.mean_dice);
    REQUIRE(same.per_patient.size() == cross.per_patient.size());
    for (const auto& [id, p] : same.per_patient) CHECK(cross.per_patient.at(id).counts == p.counts);

    PhantomSpec no_lesions = testing::small_phantom(2, 3);
    no_lesions.lesions.count_min = no_lesions.lesions.count_max = 0;
    generate_phantoms(no_lesions, dir / "b");
    CHECK_THROWS_AS(cross_evaluate(fresh_bundle(Organ::liver_laceration, 3), dir / "b", list_patients(dir / "b"), opts),
                    Error);
}

TEST_CASE("corpus fingerprint tracks content") {
    testing::TempDir dir;
    generate_phantoms(testing::small_phantom(1, 2), dir / "a");
    generate_phantoms(testing::small_phantom(1, 2), dir / "b");
    CHECK(corpus_fingerprint(dir / "a") == corpus_fingerprint(dir / "b"));
    std::ofstream(dir / "b" / "extra.txt") << "x";
    CHECK(corpus_fingerprint(dir / "a") != corpus_fingerprint(dir / "b"));
}
