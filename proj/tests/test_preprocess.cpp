#include <doctest.h>

#include <algorithm>
#include <set>

#include "ctseg/error.hpp"
#include "ctseg/fs_util.hpp"
#include "ctseg/hash.hpp"
#include "ctseg/phantom.hpp"
#include "ctseg/preprocess.hpp"
#include "ctseg/rng.hpp"
#include "support.hpp"

using namespace ctseg;
namespace fs = std::filesystem;

namespace {

Gray8Image random_gray(int rows, int cols, Rng& rng) {
    Gray8Image g(rows, cols);
    for (auto& v : g.pixels()) v = static_cast<std::uint8_t>(uniform_index(rng, 256));
    return g;
}

MaskImage random_mask(int rows, int cols, Rng& rng) {
    MaskImage m(rows, cols);
    for (auto& v : m.pixels()) v = static_cast<std::uint8_t>(uniform_index(rng, 2));
    return m;
}

PairedSample random_sample(Rng& rng, int size, const std::string& patient, int slice) {
    PairedSample s;
    s.source = RgbImage(size, size, 3);
    for (auto& v : s.source.pixels()) v = static_cast<std::uint8_t>(uniform_index(rng, 256));
    s.target = random_gray(size, size, rng);
    s.patient_id = patient;
    s.slice_index = slice;
    return s;
}

}  // namespace

TEST_CASE("colormap has 256 distinct entries") {
    std::set<std::array<std::uint8_t, 3>> distinct(colormap().begin(), colormap().end());
    CHECK(distinct.size() == 256);
}

TEST_CASE("colorize maps each gray level through the table") {
    const RgbImage flat = colorize(Gray8Image(256, 256, 1, 77));
    for (int r = 0; r < 256; r += 17) {
        for (int c = 0; c < 256; c += 13) {
            for (int ch = 0; ch < 3; ++ch) REQUIRE(flat.at(r, c, ch) == colormap()[77][ch]);
        }
    }
    Gray8Image ends(256, 256);
    ends.at(0, 0) = 0;
    ends.at(0, 1) = 255;
    const RgbImage e = colorize(ends);
    for (int ch = 0; ch < 3; ++ch) {
        CHECK(e.at(0, 0, ch) == colormap()[0][ch]);
        CHECK(e.at(0, 1, ch) == colormap()[255][ch]);
    }
    const RgbImage big = colorize(Gray8Image(512, 512, 1, 10));
    CHECK(big.rows() == 256);
    CHECK(big.cols() == 256);
    CHECK(big.channels() == 3);
}

TEST_CASE("nearest resize never invents values") {
    Rng rng(1);
    Gray8Image m(512, 512);
    for (auto& v : m.pixels()) v = uniform_index(rng, 3) == 0 ? 0 : 200;
    const Gray8Image small = resize_nearest(m, 256);
    for (auto v : small.pixels()) REQUIRE((v == 0 || v == 200));
}

TEST_CASE("make_target") {
    const Gray8Image gray(256, 256, 1, 100);
    const MaskImage zeros(256, 256);
    for (auto v : make_target(gray, zeros).pixels()) REQUIRE(v == 0);
    const MaskImage ones(256, 256, 1, 1);
    CHECK(make_target(gray, ones) == gray);

    MaskImage checker(256, 256);
    for (int r = 0; r < 256; ++r) {
        for (int c = 0; c < 256; ++c) checker.at(r, c) = (r + c) % 2;
    }
    const Gray8Image t = make_target(gray, checker);
    for (int r = 0; r < 256; ++r) {
        for (int c = 0; c < 256; ++c) REQUIRE(t.at(r, c) == ((r + c) % 2 ? 100 : 0));
    }
    const Gray8Image label = make_target(gray, checker, TargetMode::constant_label);
    CHECK(label.at(0, 1) == 255);
    CHECK(label.at(0, 0) == 0);

    // Zero outside the mask, for random inputs at native resolution.
    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        const Gray8Image g = random_gray(512, 512, rng);
        const MaskImage m = random_mask(512, 512, rng);
        const Gray8Image tt = make_target(g, m);
        const Gray8Image mm = resize_nearest(m);
        for (std::size_t i = 0; i < tt.size(); ++i) {
            if (mm.pixels()[i] == 0) REQUIRE(tt.pixels()[i] == 0);
        }
    }

    try {
        make_target(gray, MaskImage(128, 128));
        FAIL("mismatched shapes accepted");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("256x256") != std::string::npos);
        CHECK(std::string(e.what()).find("128x128") != std::string::npos);
    }
    MaskImage bad(256, 256);
    bad.at(3, 3) = 7;
    CHECK_THROWS_AS(check_binary(bad), Error);
}

TEST_CASE("composite concat and split are inverse") {
    Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        const PairedSample s = random_sample(rng, 64, "P", 0);
        const RgbImage joined = concat_pair(s);
        CHECK(joined.cols() == 2 * s.source.cols());
        RgbImage src;
        Gray8Image tgt;
        split_composite(joined, src, tgt);
        CHECK(src == s.source);
        CHECK(tgt == s.target);
    }
    PairedSample bw;
    bw.source = RgbImage(8, 8, 3, 0);
    bw.target = Gray8Image(8, 8, 1, 255);
    const RgbImage j = concat_pair(bw);
    for (int r = 0; r < 8; ++r) {
        for (int c = 0; c < 16; ++c) {
            for (int ch = 0; ch < 3; ++ch) REQUIRE(j.at(r, c, ch) == (c < 8 ? 0 : 255));
        }
    }
}

TEST_CASE("patient split") {
    std::vector<std::string> twenty;
    for (int i = 0; i < 20; ++i) twenty.push_back("P" + std::to_string(100 + i));
    const DatasetSplit s = split_patients(twenty, 7);
    CHECK(s.train_patients.size() == 12);
    CHECK(s.test_patients.size() == 8);
    const DatasetSplit again = split_patients(twenty, 7);
    CHECK(again.train_patients == s.train_patients);
    CHECK(again.test_patients == s.test_patients);

    const DatasetSplit two = split_patients({"a", "b"}, 1);
    CHECK(two.train_patients.size() == 1);
    CHECK(two.test_patients.size() == 1);
    CHECK_THROWS_AS(split_patients({"a"}, 1), Error);

    Rng rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 2 + static_cast<int>(uniform_index(rng, 40));
        std::vector<std::string> ids;
        for (int i = 0; i < n; ++i) ids.push_back("id" + std::to_string(uniform_index(rng, 1u << 30)) + "_" + std::to_string(i));
        const DatasetSplit sp = split_patients(ids, rng());
        REQUIRE(static_cast<int>(sp.train_patients.size()) == (6 * n) / 10);
        std::set<std::string> all(sp.train_patients.begin(), sp.train_patients.end());
        for (const auto& t : sp.test_patients) REQUIRE(all.insert(t).second);
        REQUIRE(all == std::set<std::string>(ids.begin(), ids.end()));
        REQUIRE(std::is_sorted(sp.train_patients.begin(), sp.train_patients.end()));
    }
}

TEST_CASE("archive round trip") {
    testing::TempDir dir;
    Rng rng(5);
    std::vector<PairedSample> pairs;
    for (int i = 0; i < 10; ++i) pairs.push_back(random_sample(rng, 32, "P" + std::to_string(i % 3), i));
    pairs[4].organ = Organ::liver;
    pack_archive(pairs, dir / "a.ctsa");
    const std::vector<ArchiveEntry> back = unpack_archive(dir / "a.ctsa");
    REQUIRE(back.size() == pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        CHECK(back[i].composite == concat_pair(pairs[i]));
        CHECK(back[i].patient_id == pairs[i].patient_id);
        CHECK(back[i].slice_index == pairs[i].slice_index);
    }

    std::vector<PairedSample> mixed = pairs;
    mixed.push_back(random_sample(rng, 16, "X", 0));
    CHECK_THROWS_AS(pack_archive(mixed, dir / "b.ctsa"), Error);

    std::string bytes = read_file(dir / "a.ctsa");
    bytes.resize(bytes.size() - 100);
    write_file_atomic(dir / "c.ctsa", bytes);
    try {
        unpack_archive(dir / "c.ctsa");
        FAIL("truncated archive accepted");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::corrupt);
    }
}

TEST_CASE("tensor mapping at the model boundary") {
    RgbImage img(2, 2, 3);
    img.at(0, 0, 0) = 0;
    img.at(0, 1, 1) = 255;
    const auto t = to_tensor(img);
    CHECK(t.shape() == gan::Shape{1, 3, 2, 2});
    CHECK(t.at(0, 0, 0, 0) == -1.0f);
    CHECK(t.at(0, 1, 0, 1) == 1.0f);
    const auto g = target_to_tensor(Gray8Image(2, 2, 1, 255));
    CHECK(g.shape() == gan::Shape{1, 3, 2, 2});
    for (float v : g.values()) CHECK(v == 1.0f);
}

TEST_CASE("paired samples from a corpus share the inference transform") {
    testing::TempDir dir;
    const PhantomSpec spec = testing::small_phantom(2, 4);
    generate_phantoms(spec, dir.path());
    const std::vector<std::string> patients = list_patients(dir.path());
    REQUIRE(patients.size() == 2);

    PairOptions opts;
    opts.include_empty_slices = true;
    const auto pairs = build_pairs(dir.path(), Organ::liver, patients, opts);
    REQUIRE(pairs.size() == 8);

    const CtSeries series = load_series(dir / ("images/" + patients[1]));
    for (int i = 0; i < 4; ++i) {
        const PairedSample& p = pairs[4 + i];
        CHECK(p.patient_id == patients[1]);
        CHECK(p.slice_index == i);
        // Hash equality of the training source and the inference input.
        const RgbImage infer = source_from_hu(series.slices[i].values, opts.window);
        CHECK(sha256_hex(std::string_view(reinterpret_cast<const char*>(infer.data()), infer.size())) ==
              sha256_hex(std::string_view(reinterpret_cast<const char*>(p.source.data()), p.source.size())));
        for (std::size_t k = 0; k < p.target.size(); ++k) {
            if (p.mask.pixels()[k] == 0) REQUIRE(p.target.pixels()[k] == 0);
        }
    }

    const auto masked_only = build_pairs(dir.path(), Organ::liver, patients, PairOptions{});
    for (const auto& p : masked_only) {
        CHECK(std::any_of(p.mask.pixels().begin(), p.mask.pixels().end(), [](auto v) { return v != 0; }));
    }
}
