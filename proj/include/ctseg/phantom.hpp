#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string_view>

#include <nlohmann/json_fwd.hpp>

#include "ctseg/ingest.hpp"
#include "ctseg/organ.hpp"

namespace ctseg {

struct Range {
    double lo = 0.0;
    double hi = 0.0;

    friend bool operator==(const Range&, const Range&) = default;
};

/// Ellipsoid placement. Centers are fractions of the image side (x across,
/// y down) and of the slice stack (z); semi-axes are in pixels (x, y) and
/// slices (z).
struct OrganGeometry {
    Range center_x;
    Range center_y;
    Range center_z{0.5, 0.5};
    Range axis_x;
    Range axis_y;
    Range axis_z;
    Range tilt_deg{-10.0, 10.0};
    double hu = 0.0;

    friend bool operator==(const OrganGeometry&, const OrganGeometry&) = default;
};

struct LesionGeometry {
    int count_min = 1;
    int count_max = 3;
    Range radius_px{14.0, 22.0};
    Range radius_z{3.0, 5.0};
    double hu = 230.0;

    friend bool operator==(const LesionGeometry&, const LesionGeometry&) = default;
};

enum class PhantomStyle { style_A, style_B };

std::string_view to_string(PhantomStyle style);
PhantomStyle parse_phantom_style(std::string_view name);

struct StyleParams {
    double intensity_offset_hu = 0.0;  // added to every tissue value
    double noise_sigma_hu = 12.0;

    friend bool operator==(const StyleParams&, const StyleParams&) = default;
};

struct PhantomSpec {
    int patient_count = 20;
    int slices_per_patient = 25;
    int image_size = 256;
    double pixel_spacing_mm = 1.4;
    double slice_thickness_mm = 5.0;
    double body_hu = 40.0;
    std::map<Organ, OrganGeometry> organs;  // liver_laceration is driven by `lesions`
    LesionGeometry lesions;
    PhantomStyle style = PhantomStyle::style_A;
    StyleParams style_a;
    StyleParams style_b{-55.0, 24.0};
    std::uint64_t seed = 7;

    /// Default anatomy: liver left of image, spleen right, kidneys posterior.
    static PhantomSpec defaults();

    const StyleParams& active_style() const {
        return style == PhantomStyle::style_A ? style_a : style_b;
    }
    /// Throws Error(invalid_argument) for degenerate ranges.
    void validate() const;

    friend bool operator==(const PhantomSpec&, const PhantomSpec&) = default;
};

void to_json(nlohmann::json& j, const Range& range);
void from_json(const nlohmann::json& j, Range& range);
void to_json(nlohmann::json& j, const PhantomSpec& spec);
void from_json(const nlohmann::json& j, PhantomSpec& spec);

/// Writes a corpus under `root`:
///   images/<patient>/slice_NNNN.dcm, labels/<organ>/<patient>/slice_NNNN.png
///   (nonempty masks only), manifest.txt and phantom.json.
/// Byte-identical output for a fixed spec.
DatasetManifest generate_phantoms(const PhantomSpec& spec, const std::filesystem::path& root);

/// Writes one CT slice as an uncompressed DICOM file with slope 1 and
/// intercept -1024.
struct DicomSliceInfo {
    std::string patient_id;
    std::string series_uid;
    int instance_number = 1;
    double position_z_mm = 0.0;
    double pixel_spacing_mm = 1.0;
    double slice_thickness_mm = 1.0;
    bool write_position = true;
    bool write_calibration = true;
};
void write_dicom_slice(const FloatImage& hu, const DicomSliceInfo& info, const std::filesystem::path& path);

}  // namespace ctseg
