#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "ctseg/image.hpp"
#include "ctseg/organ.hpp"

namespace ctseg {

/// Plausible CT range; calibrated values are clamped into it.
inline constexpr double kMinHu = -1100.0;
inline constexpr double kMaxHu = 3100.0;

enum class SourceTag { standard_corpus, local_corpus, phantom };

std::string_view to_string(SourceTag tag);
SourceTag parse_source_tag(std::string_view name);

struct HuSlice {
    FloatImage values;  // Hounsfield units
    int index = 0;      // position in the sorted series
    double position_mm = 0.0;
    int instance_number = 0;
};

struct CtSeries {
    std::string patient_id;
    std::string series_uid;
    std::vector<HuSlice> slices;
    std::array<double, 2> pixel_spacing_mm{0.0, 0.0};  // (row, col)
    double slice_thickness_mm = 0.0;
    SourceTag source_tag = SourceTag::standard_corpus;

    int rows() const { return slices.empty() ? 0 : slices.front().values.rows(); }
    int cols() const { return slices.empty() ? 0 : slices.front().values.cols(); }

    /// Throws Error(invalid_argument) if slice extents differ, ordering is
    /// not strictly monotonic, or geometry is not positive.
    void validate() const;
};

struct WindowSpec {
    double center_hu = 60.0;
    double width_hu = 400.0;

    void validate() const;
};

/// Reads every DICOM file in `directory` (non-recursive) as one series.
/// Slices are ordered by the through-plane component of Image Position
/// (Patient), falling back to Instance Number when positions are absent.
CtSeries load_series(const std::filesystem::path& directory,
                     SourceTag tag = SourceTag::standard_corpus);

/// HU = slope * raw + intercept, clamped to [kMinHu, kMaxHu].
double calibrate(double raw, double slope, double intercept);

/// Linear map of [center - width/2, center + width/2] onto [0, 255].
/// Rounds half up, so the window center lands on 128.
std::uint8_t window_value(double hu, const WindowSpec& window);
Gray8Image window_to_gray(const FloatImage& hu, const WindowSpec& window);
inline Gray8Image window_to_gray(const HuSlice& slice, const WindowSpec& window) {
    return window_to_gray(slice.values, window);
}

enum class ImageFormat { png, jpeg };

/// Writes an 8-bit gray or RGB image. PNG is lossless; JPEG uses quality 95.
/// Throws Error(io) naming the path on failure.
void export_image(const Image<std::uint8_t>& image, const std::filesystem::path& path,
                  ImageFormat format = ImageFormat::png);
Gray8Image read_gray_image(const std::filesystem::path& path);
RgbImage read_rgb_image(const std::filesystem::path& path);

/// Dataset inventory. Text form is one "key: value" line per field:
/// patient_count, image_count, then one line per organ with masks.
struct DatasetManifest {
    long patient_count = 0;
    long image_count = 0;
    std::map<Organ, long> organ_mask_counts;

    void validate() const;
    std::string to_text() const;
    static DatasetManifest parse(std::string_view text);
    static DatasetManifest load(const std::filesystem::path& path);

    friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

struct ManifestCheck {
    std::string field;
    long expected = 0;
    long observed = 0;

    long delta() const { return observed - expected; }
    bool matched() const { return observed == expected; }
};

struct ManifestReport {
    std::vector<ManifestCheck> checks;

    bool pass() const;
    std::string to_text() const;
};

/// Inventories a corpus directory laid out as
///   images/<patient>/*.dcm
///   labels/<organ>/<patient>/slice_NNNN.png   (only slices with a nonempty mask)
DatasetManifest scan_corpus(const std::filesystem::path& root);

ManifestReport validate_manifest(const DatasetManifest& observed, const DatasetManifest& expected);

}  // namespace ctseg
