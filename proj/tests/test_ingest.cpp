#include <doctest.h>

#include <cmath>

#include "ctseg/error.hpp"
#include "ctseg/fs_util.hpp"
#include "ctseg/hash.hpp"
#include "ctseg/ingest.hpp"
#include "ctseg/phantom.hpp"
#include "ctseg/rng.hpp"
#include "support.hpp"

using namespace ctseg;
namespace fs = std::filesystem;

namespace {

FloatImage constant_hu(int size, float hu) { return FloatImage(size, size, 1, hu); }

DicomSliceInfo info_for(int instance, double z, const std::string& uid = "1.2.3.4") {
    DicomSliceInfo info;
    info.patient_id = "P01";
    info.series_uid = uid;
    info.instance_number = instance;
    info.position_z_mm = z;
    info.pixel_spacing_mm = 0.7;
    info.slice_thickness_mm = 5.0;
    return info;
}

std::string error_message(const std::function<void()>& f, ErrorCode expected) {
    try {
        f();
    } catch (const Error& e) {
        CHECK(e.code() == expected);
        return e.what();
    }
    FAIL("expected an error");
    return {};
}

}  // namespace

TEST_CASE("calibration") {
    CHECK(calibrate(1024.0, 1.0, -1024.0) == 0.0);
    CHECK(calibrate(0.0, 1.0, -1024.0) == -1024.0);
    CHECK(calibrate(-5000.0, 1.0, 0.0) == kMinHu);
    CHECK(calibrate(9000.0, 1.0, 0.0) == kMaxHu);
    // Linearity: the combined raw value maps to the combined HU.
    Rng rng(1);
    for (int i = 0; i < 200; ++i) {
        const double r1 = uniform(rng, 0, 1500);
        const double r2 = uniform(rng, 0, 1500);
        const double slope = 1.0;
        const double lhs = calibrate(0.5 * r1 + 0.5 * r2, slope, -1024.0);
        const double rhs = 0.5 * calibrate(r1, slope, -1024.0) + 0.5 * calibrate(r2, slope, -1024.0);
        REQUIRE(std::abs(lhs - rhs) <= 1e-9);
    }
}

TEST_CASE("window mapping") {
    const WindowSpec w;  // 60 / 400
    CHECK(window_value(60.0, w) == 128);
    CHECK(window_value(-140.0, w) == 0);
    CHECK(window_value(-1000.0, w) == 0);
    CHECK(window_value(260.0, w) == 255);
    CHECK(window_value(3000.0, w) == 255);
    // Hand evaluation: (160 - (-140)) / 400 * 255 = 191.25 -> 191.
    CHECK(window_value(160.0, w) == 191);

    int previous = 0;
    for (double hu = -300.0; hu <= 400.0; hu += 0.37) {
        const int v = window_value(hu, w);
        REQUIRE(v >= previous);
        previous = v;
    }
    CHECK_THROWS_AS(WindowSpec({60.0, 0.0}).validate(), Error);
}

TEST_CASE("lossless export round trip") {
    testing::TempDir dir;
    const Gray8Image zero(64, 64);
    export_image(zero, dir / "zero.png");
    CHECK(read_gray_image(dir / "zero.png") == zero);

    Rng rng(2);
    RgbImage rgb(40, 30, 3);
    for (auto& v : rgb.pixels()) v = static_cast<std::uint8_t>(uniform_index(rng, 256));
    export_image(rgb, dir / "rgb.png");
    CHECK(read_rgb_image(dir / "rgb.png") == rgb);

    const Gray8Image big(512, 512, 1, 90);
    export_image(big, dir / "big.jpg", ImageFormat::jpeg);
    const Gray8Image back = read_gray_image(dir / "big.jpg");
    CHECK(back.rows() == 512);
    CHECK(back.cols() == 512);

    const std::string msg = error_message([&] { export_image(zero, dir / "no" / "such" / "dir.png"); }, ErrorCode::io);
    CHECK(msg.find("dir.png") != std::string::npos);
}

TEST_CASE("series sort by through-plane position") {
    testing::TempDir dir;
    // Positions 0, 5, 2.5 written in that file order; instance numbers disagree on purpose.
    write_dicom_slice(constant_hu(16, 0.0f), info_for(3, 0.0), dir / "a.dcm");
    write_dicom_slice(constant_hu(16, 100.0f), info_for(1, 5.0), dir / "b.dcm");
    write_dicom_slice(constant_hu(16, 50.0f), info_for(2, 2.5), dir / "c.dcm");
    const CtSeries s = load_series(dir.path());
    REQUIRE(s.slices.size() == 3);
    // Expected order: file indices (0, 2, 1).
    CHECK(s.slices[0].values.at(0, 0) == 0.0f);
    CHECK(s.slices[1].values.at(0, 0) == 50.0f);
    CHECK(s.slices[2].values.at(0, 0) == 100.0f);
    CHECK(s.slices[1].position_mm == 2.5);
    CHECK(s.patient_id == "P01");
    CHECK(s.pixel_spacing_mm[0] == doctest::Approx(0.7));
    CHECK(s.slice_thickness_mm == doctest::Approx(5.0));

    const CtSeries again = load_series(dir.path());
    for (std::size_t i = 0; i < s.slices.size(); ++i) CHECK(again.slices[i].values == s.slices[i].values);
}

TEST_CASE("instance number is the fallback sort key") {
    testing::TempDir dir;
    for (int i : {2, 0, 1}) {
        DicomSliceInfo info = info_for(i + 1, 0.0);
        info.write_position = false;
        write_dicom_slice(constant_hu(8, static_cast<float>(10 * i)), info, dir / ("s" + std::to_string(i) + ".dcm"));
    }
    const CtSeries s = load_series(dir.path());
    for (int i = 0; i < 3; ++i) CHECK(s.slices[i].values.at(0, 0) == static_cast<float>(10 * i));
}

TEST_CASE("HU values survive the DICOM round trip") {
    testing::TempDir dir;
    FloatImage hu(32, 32);
    Rng rng(3);
    for (auto& v : hu.pixels()) v = static_cast<float>(std::round(uniform(rng, -1000, 2000)));
    write_dicom_slice(hu, info_for(1, 0.0), dir / "x.dcm");
    CHECK(load_series(dir.path()).slices[0].values == hu);
}

TEST_CASE("ingest errors") {
    testing::TempDir dir;
    const fs::path mixed = dir / "mixed";
    fs::create_directories(mixed);
    write_dicom_slice(constant_hu(8, 0.0f), info_for(1, 0.0, "1.2.3.4"), mixed / "a.dcm");
    write_dicom_slice(constant_hu(8, 0.0f), info_for(2, 1.0, "9.9.9.9"), mixed / "b.dcm");
    std::string msg = error_message([&] { load_series(mixed); }, ErrorCode::invalid_argument);
    CHECK(msg.find("1.2.3.4") != std::string::npos);
    CHECK(msg.find("9.9.9.9") != std::string::npos);

    const fs::path nocal = dir / "nocal";
    fs::create_directories(nocal);
    DicomSliceInfo info = info_for(1, 0.0);
    info.write_calibration = false;
    write_dicom_slice(constant_hu(8, 0.0f), info, nocal / "a.dcm");
    msg = error_message([&] { load_series(nocal); }, ErrorCode::invalid_argument);
    CHECK(msg.find("RescaleSlope") != std::string::npos);

    const fs::path junk = dir / "junk";
    fs::create_directories(junk);
    write_file_atomic(junk / "a.dcm", "definitely not DICOM");
    error_message([&] { load_series(junk); }, ErrorCode::invalid_argument);

    const fs::path empty = dir / "empty";
    fs::create_directories(empty);
    error_message([&] { load_series(empty); }, ErrorCode::invalid_argument);
    error_message([&] { load_series(dir / "absent"); }, ErrorCode::not_found);
}

TEST_CASE("manifest text and validation") {
    const DatasetManifest standard = DatasetManifest::parse("patient_count: 20\nimage_count: 2823\nliver: 1153\n");
    CHECK(standard.patient_count == 20);
    CHECK(standard.image_count == 2823);
    CHECK(standard.organ_mask_counts.at(Organ::liver) == 1153);
    CHECK(DatasetManifest::parse(standard.to_text()) == standard);

    DatasetManifest local;
    local.patient_count = 20;
    local.image_count = 1979;
    local.organ_mask_counts = {{Organ::liver, 632}, {Organ::liver_laceration, 310}};
    CHECK(validate_manifest(local, local).pass());

    testing::TempDir dir;
    const ManifestReport empty = validate_manifest(scan_corpus(dir.path()), standard);
    CHECK_FALSE(empty.pass());
    CHECK(empty.checks[0].field == "patient_count");
    CHECK(empty.checks[0].delta() == -20);
    CHECK(empty.to_text().find("delta -20") != std::string::npos);

    CHECK_THROWS_AS(DatasetManifest::parse("patient_count: 2\n"), Error);
    CHECK_THROWS_AS(DatasetManifest::parse("patient_count: 2\nimage_count: 1\nliver: 5\n"), Error);
    CHECK_THROWS_AS(DatasetManifest::parse("patient_count: -1\nimage_count: 1\n"), Error);
}

TEST_CASE("generated phantom corpus passes its own manifest") {
    testing::TempDir dir;
    PhantomSpec spec = testing::small_phantom(2, 4);
    spec.image_size = 64;
    const DatasetManifest written = generate_phantoms(spec, dir.path());
    CHECK(validate_manifest(scan_corpus(dir.path()), written).pass());
    CHECK(DatasetManifest::load(dir / "manifest.txt") == written);
}
