#include <algorithm>
#include <cstdio>
#include <set>

#include <opencv2/imgproc.hpp>

#include "ctseg/error.hpp"
#include "ctseg/preprocess.hpp"
#include "ctseg/rng.hpp"

namespace fs = std::filesystem;

namespace ctseg {

namespace {

Gray8Image resize_with(const Gray8Image& image, int size, int interpolation) {
    if (image.channels() != 1) fail(ErrorCode::invalid_argument, "resize expects a single-channel image");
    if (image.rows() == size && image.cols() == size) return image;
    cv::Mat in(image.rows(), image.cols(), CV_8UC1, const_cast<std::uint8_t*>(image.data()));
    Gray8Image out(size, size);
    cv::Mat dst(size, size, CV_8UC1, out.data());
    cv::resize(in, dst, cv::Size(size, size), 0, 0, interpolation);
    return out;
}

}  // namespace

Gray8Image resize_bilinear(const Gray8Image& image, int size) {
    return resize_with(image, size, cv::INTER_LINEAR);
}

Gray8Image resize_nearest(const Gray8Image& image, int size) {
    return resize_with(image, size, cv::INTER_NEAREST_EXACT);
}

RgbImage colorize(const Gray8Image& gray, int size) {
    const Gray8Image resized = resize_bilinear(gray, size);
    const auto& lut = colormap();
    RgbImage out(size, size, 3);
    auto in = resized.pixels();
    std::uint8_t* dst = out.data();
    for (std::size_t i = 0; i < in.size(); ++i) {
        const auto& rgb = lut[in[i]];
        dst[3 * i] = rgb[0];
        dst[3 * i + 1] = rgb[1];
        dst[3 * i + 2] = rgb[2];
    }
    return out;
}

RgbImage source_from_hu(const FloatImage& hu, const WindowSpec& window) {
    return colorize(window_to_gray(hu, window));
}

std::string_view to_string(TargetMode mode) {
    return mode == TargetMode::masked_intensity ? "masked_intensity" : "constant_label";
}

TargetMode parse_target_mode(std::string_view name) {
    if (name == "masked_intensity") return TargetMode::masked_intensity;
    if (name == "constant_label") return TargetMode::constant_label;
    fail(ErrorCode::invalid_argument, "unknown target mode '" + std::string(name) + "'");
}

void check_binary(const MaskImage& mask) {
    for (std::uint8_t v : mask.pixels()) {
        if (v > 1) fail(ErrorCode::invalid_argument, "mask value " + std::to_string(v) + " is not binary");
    }
}

MaskImage read_mask(const fs::path& path) {
    MaskImage mask = read_gray_image(path);
    for (auto& v : mask.pixels()) v = v != 0 ? 1 : 0;
    return mask;
}

void write_mask(const MaskImage& mask, const fs::path& path) {
    Gray8Image scaled = mask;
    for (auto& v : scaled.pixels()) v = v != 0 ? 255 : 0;
    export_image(scaled, path, ImageFormat::png);
}

Gray8Image make_target(const Gray8Image& gray, const MaskImage& mask, TargetMode mode, int size) {
    if (!gray.same_shape(mask) || gray.channels() != 1) {
        fail(ErrorCode::invalid_argument,
             "make_target: gray is " + gray.shape_string() + " but mask is " + mask.shape_string());
    }
    Gray8Image target(gray.rows(), gray.cols());
    auto g = gray.pixels();
    auto m = mask.pixels();
    auto t = target.pixels();
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (m[i] != 0) t[i] = mode == TargetMode::masked_intensity ? g[i] : std::uint8_t{255};
    }
    return resize_nearest(target, size);
}

RgbImage concat_pair(const PairedSample& sample) {
    const int rows = sample.source.rows();
    const int cols = sample.source.cols();
    if (sample.source.channels() != 3 || sample.target.channels() != 1 || !sample.source.same_extent(sample.target)) {
        fail(ErrorCode::invalid_argument, "concat_pair: source " + sample.source.shape_string() +
                                              " and target " + sample.target.shape_string() + " do not pair");
    }
    RgbImage out(rows, 2 * cols, 3);
    for (int r = 0; r < rows; ++r) {
        std::copy_n(&sample.source.at(r, 0), 3 * cols, &out.at(r, 0));
        for (int c = 0; c < cols; ++c) {
            const std::uint8_t v = sample.target.at(r, c);
            std::uint8_t* px = &out.at(r, cols + c);
            px[0] = px[1] = px[2] = v;
        }
    }
    return out;
}

void split_composite(const RgbImage& composite, RgbImage& source, Gray8Image& target) {
    if (composite.channels() != 3 || composite.cols() % 2 != 0) {
        fail(ErrorCode::invalid_argument, "composite " + composite.shape_string() + " is not a side-by-side pair");
    }
    const int rows = composite.rows();
    const int cols = composite.cols() / 2;
    source = RgbImage(rows, cols, 3);
    target = Gray8Image(rows, cols);
    for (int r = 0; r < rows; ++r) {
        std::copy_n(&composite.at(r, 0), 3 * cols, &source.at(r, 0));
        for (int c = 0; c < cols; ++c) target.at(r, c) = composite.at(r, cols + c, 0);
    }
}

DatasetSplit split_patients(std::vector<std::string> patients, std::uint64_t seed) {
    std::sort(patients.begin(), patients.end());
    if (std::adjacent_find(patients.begin(), patients.end()) != patients.end()) {
        fail(ErrorCode::invalid_argument, "split_patients: duplicate patient id");
    }
    if (patients.size() < 2) {
        fail(ErrorCode::invalid_argument,
             "split_patients needs at least 2 patients, got " + std::to_string(patients.size()));
    }
    Rng rng(seed);
    shuffle(std::span<std::string>(patients), rng);
    const std::size_t train = patients.size() * 6 / 10;
    DatasetSplit split;
    split.seed = seed;
    split.train_patients.assign(patients.begin(), patients.begin() + static_cast<std::ptrdiff_t>(train));
    split.test_patients.assign(patients.begin() + static_cast<std::ptrdiff_t>(train), patients.end());
    std::sort(split.train_patients.begin(), split.train_patients.end());
    std::sort(split.test_patients.begin(), split.test_patients.end());
    return split;
}

gan::Tensor<float> to_tensor(const RgbImage& image) {
    if (image.channels() != 3) fail(ErrorCode::invalid_argument, "to_tensor expects an RGB image");
    gan::Tensor<float> t({1, 3, image.rows(), image.cols()});
    const std::uint8_t* src = image.data();
    const std::size_t plane = static_cast<std::size_t>(image.rows()) * image.cols();
    for (int ch = 0; ch < 3; ++ch) {
        float* dst = t.plane(0, ch);
        for (std::size_t i = 0; i < plane; ++i) dst[i] = static_cast<float>(src[3 * i + ch]) / 127.5f - 1.0f;
    }
    return t;
}

gan::Tensor<float> target_to_tensor(const Gray8Image& target) {
    gan::Tensor<float> t({1, 3, target.rows(), target.cols()});
    const std::size_t plane = static_cast<std::size_t>(target.rows()) * target.cols();
    auto src = target.pixels();
    for (int ch = 0; ch < 3; ++ch) {
        float* dst = t.plane(0, ch);
        for (std::size_t i = 0; i < plane; ++i) dst[i] = static_cast<float>(src[i]) / 127.5f - 1.0f;
    }
    return t;
}

fs::path label_path(const fs::path& corpus_root, Organ organ, const std::string& patient_id, int slice_index) {
    char name[32];
    std::snprintf(name, sizeof name, "slice_%04d.png", slice_index);
    return corpus_root / "labels" / std::string(to_string(organ)) / patient_id / name;
}

MaskImage load_slice_mask(const fs::path& corpus_root, Organ organ, const std::string& patient_id,
                          int slice_index, int rows, int cols) {
    const fs::path path = label_path(corpus_root, organ, patient_id, slice_index);
    if (!fs::exists(path)) return MaskImage(rows, cols);
    MaskImage mask = read_mask(path);
    if (mask.rows() != rows || mask.cols() != cols) {
        fail(ErrorCode::invalid_argument, "label '" + path.string() + "' is " + mask.shape_string() +
                                              ", slice is " + std::to_string(rows) + "x" + std::to_string(cols));
    }
    return mask;
}

std::vector<std::string> list_patients(const fs::path& corpus_root) {
    const fs::path images = corpus_root / "images";
    if (!fs::is_directory(images)) {
        fail(ErrorCode::not_found, "'" + corpus_root.string() + "' has no images/ directory");
    }
    std::vector<std::string> out;
    for (const auto& entry : fs::directory_iterator(images)) {
        if (entry.is_directory()) out.push_back(entry.path().filename().string());
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<PairedSample> build_pairs(const fs::path& corpus_root, Organ organ,
                                      std::span<const std::string> patients, const PairOptions& options) {
    std::vector<PairedSample> pairs;
    for (const auto& patient : patients) {
        const CtSeries series = load_series(corpus_root / "images" / patient);
        for (const auto& slice : series.slices) {
            const MaskImage mask =
                load_slice_mask(corpus_root, organ, patient, slice.index, series.rows(), series.cols());
            const bool empty = std::all_of(mask.pixels().begin(), mask.pixels().end(),
                                           [](std::uint8_t v) { return v == 0; });
            if (empty && !options.include_empty_slices) continue;
            const Gray8Image gray = window_to_gray(slice.values, options.window);
            PairedSample sample;
            sample.source = colorize(gray);
            sample.target = make_target(gray, mask, options.target_mode);
            sample.mask = resize_nearest(mask);
            sample.patient_id = patient;
            sample.slice_index = slice.index;
            sample.organ = organ;
            pairs.push_back(std::move(sample));
        }
    }
    return pairs;
}

}  // namespace ctseg
