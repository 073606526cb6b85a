#include <doctest.h>

#include <cmath>

#include <nlohmann/json.hpp>

#include "ctseg/error.hpp"
#include "ctseg/metrics.hpp"
#include "ctseg/rng.hpp"
#include "oracles.hpp"

using namespace ctseg;

namespace {

MaskImage random_mask(int size, Rng& rng, double density) {
    MaskImage m(size, size);
    for (auto& v : m.pixels()) v = uniform01(rng) < density ? 1 : 0;
    return m;
}

}  // namespace

TEST_CASE("dice matches brute-force counting on random masks") {
    Rng rng(2024);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const double density = uniform01(rng);
        const MaskImage a = random_mask(16, rng, density);
        const MaskImage b = random_mask(16, rng, uniform01(rng));
        const double lib = dice(a, b);
        worst = std::max(worst, std::abs(lib - testing::brute_dice(a, b)));
        REQUIRE(lib == dice(b, a));
        REQUIRE((lib >= 0.0 && lib <= 1.0));
    }
    CHECK(worst <= 1e-12);
}

TEST_CASE("dice analytic cases") {
    MaskImage a(4, 4);
    a.at(1, 1) = a.at(2, 2) = 1;
    CHECK(dice(a, a) == 1.0);
    MaskImage b(4, 4);
    b.at(0, 0) = 1;
    CHECK(dice(a, b) == 0.0);
    CHECK(dice(MaskImage(4, 4), MaskImage(4, 4)) == 1.0);
    CHECK(dice(a, MaskImage(4, 4)) == 0.0);

    const MaskImage full(2, 2, 1, 1);
    MaskImage corner(2, 2);
    corner.at(0, 0) = 1;
    CHECK(dice(full, corner) == 0.4);

    CHECK_THROWS_AS(dice(MaskImage(4, 4), MaskImage(4, 5)), Error);
}

TEST_CASE("flipping background outside the reference never raises dice") {
    Rng rng(9);
    for (int trial = 0; trial < 300; ++trial) {
        const MaskImage a = random_mask(16, rng, 0.4);
        MaskImage b = random_mask(16, rng, 0.4);
        const double before = dice(a, b);
        for (int k = 0; k < 256; ++k) {
            const int r = k / 16;
            const int c = k % 16;
            if (a.at(r, c) == 0 && b.at(r, c) == 0) {
                b.at(r, c) = 1;
                break;
            }
        }
        REQUIRE(dice(a, b) <= before);
    }
}

TEST_CASE("binarize") {
    CHECK(binarize(FloatImage(4, 4, 3, -1.0f)) == MaskImage(4, 4));
    CHECK(binarize(FloatImage(4, 4, 3, 1.0f)) == MaskImage(4, 4, 1, 1));
    CHECK(binarize(FloatImage(4, 4, 3, 0.0f)) == MaskImage(4, 4));
    FloatImage mixed(1, 1, 3);
    mixed.at(0, 0, 0) = 1.0f;
    mixed.at(0, 0, 1) = 0.0f;
    mixed.at(0, 0, 2) = -0.4f;  // mean 0.2 -> 0.6
    CHECK(binarize(mixed, 0.55).at(0, 0) == 1);
    CHECK(binarize(mixed, 0.65).at(0, 0) == 0);
    CHECK_THROWS_AS(binarize(mixed, 0.0), Error);
    CHECK_THROWS_AS(binarize(mixed, 1.0), Error);
}

TEST_CASE("aggregation pools per patient then averages patients") {
    // Patient A: two slices, pooled counts give 2*3/(4+4) = 0.75.
    std::vector<SliceOutcome> outcomes;
    MaskImage p1(2, 2);
    p1.at(0, 0) = p1.at(0, 1) = 1;
    MaskImage t1(2, 2);
    t1.at(0, 0) = t1.at(1, 1) = 1;
    MaskImage p2(2, 2);
    p2.at(0, 0) = p2.at(0, 1) = 1;
    MaskImage t2(2, 2);
    t2.at(0, 0) = t2.at(0, 1) = 1;
    outcomes.push_back({"A", 0, p1, t1});
    outcomes.push_back({"A", 1, p2, t2});
    // Patient B: one empty-vs-empty slice.
    outcomes.push_back({"B", 0, MaskImage(2, 2), MaskImage(2, 2)});

    const DiceReport r = aggregate_dice(Organ::liver, outcomes, 0.5);
    CHECK(r.per_patient.at("A").counts == DiceCounts{3, 4, 4});
    CHECK(r.per_patient.at("A").dice == 0.75);
    CHECK(r.per_patient.at("A").slices == 2);
    CHECK(r.per_patient.at("B").dice == 1.0);
    CHECK(r.mean_dice == (0.75 + 1.0) / 2.0);
    CHECK_THROWS_AS(aggregate_dice(Organ::liver, std::span<const SliceOutcome>{}, 0.5), Error);

    const DiceReport back = DiceReport::from_json(r.to_json());
    CHECK(back.mean_dice == r.mean_dice);
    CHECK(back.per_patient.at("A").counts == r.per_patient.at("A").counts);
    CHECK(back.organ == Organ::liver);
}

TEST_CASE("table row format") {
    DiceReport r;
    r.organ = Organ::liver;
    r.mean_dice = 0.97;
    CHECK(r.table_row() == "Liver & 60/40 & 97.0");
    r.organ = Organ::liver_laceration;
    r.mean_dice = 0.9;
    CHECK(r.table_row() == "Liver Laceration & 60/40 & 90.0");
    const std::vector<DiceReport> rows{r};
    CHECK(dice_table(rows, "T").find("Segmentation & Train/Test Split & Dice Score (%)") != std::string::npos);
}

TEST_CASE("volume arithmetic") {
    CHECK(volume_from_count(0, 1.0).milliliters == 0.0);
    const VolumeEstimate unit = volume_from_count(1000, voxel_volume_mm3(1.0, 1.0, 1.0, 256, 256, 256, 256));
    CHECK(unit.milliliters == 1.0);
    CHECK(unit.voxel_volume_mm3 == 1.0);

    const double v = voxel_volume_mm3(0.7, 0.7, 5.0, 512, 512, 256, 256);
    CHECK(v == 9.8);
    const VolumeEstimate resized = volume_from_count(500, v);
    CHECK(resized.milliliters == 4.9);
    CHECK(resized.voxel_count == 500);
    CHECK(resized.milliliters == resized.voxel_count * resized.voxel_volume_mm3 / 1000.0);

    CtSeries series;
    series.pixel_spacing_mm = {0.7, 0.7};
    series.slice_thickness_mm = 5.0;
    for (int i = 0; i < 3; ++i) {
        HuSlice s;
        s.values = FloatImage(512, 512);
        s.index = i;
        s.position_mm = 5.0 * i;
        series.slices.push_back(s);
    }
    std::vector<MaskImage> masks(3, MaskImage(256, 256));
    for (int k = 0; k < 500; ++k) masks[k % 3].pixels()[k] = 1;
    CHECK(bleeding_volume(masks, series).milliliters == 4.9);
    CHECK(bleeding_volume(std::vector<MaskImage>(3, MaskImage(256, 256)), series).milliliters == 0.0);
    CHECK_THROWS_AS(bleeding_volume(std::vector<MaskImage>(2, MaskImage(256, 256)), series), Error);
    series.slice_thickness_mm = 0.0;
    CHECK_THROWS_AS(bleeding_volume(masks, series), Error);
}
