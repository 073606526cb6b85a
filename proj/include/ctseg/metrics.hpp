#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ctseg/image.hpp"
#include "ctseg/ingest.hpp"
#include "ctseg/organ.hpp"
#include "ctseg/preprocess.hpp"

namespace ctseg {

inline constexpr double kDefaultThreshold = 0.5;

/// Pixel is foreground iff (v + 1) / 2 > threshold, where v is the mean of
/// the image's channels. Threshold must lie in (0, 1).
MaskImage binarize(const FloatImage& generated, double threshold = kDefaultThreshold);

struct DiceCounts {
    long intersection = 0;
    long size_a = 0;
    long size_b = 0;

    /// 2|A n B| / (|A| + |B|); 1 when both are empty.
    double dice() const;
    DiceCounts& operator+=(const DiceCounts& other);

    friend bool operator==(const DiceCounts&, const DiceCounts&) = default;
};

DiceCounts dice_counts(const MaskImage& a, const MaskImage& b);
inline double dice(const MaskImage& a, const MaskImage& b) { return dice_counts(a, b).dice(); }

struct PatientDice {
    DiceCounts counts;  // pooled over the patient's slices
    double dice = 1.0;
    int slices = 0;
};

/// One predicted/true mask pair for evaluation.
struct SliceOutcome {
    std::string patient_id;
    int slice_index = 0;
    MaskImage predicted;
    MaskImage truth;
};

struct DiceReport {
    Organ organ = Organ::liver;
    std::map<std::string, PatientDice> per_patient;
    double mean_dice = 0.0;
    double threshold = kDefaultThreshold;
    std::string split_label = "60/40";
    /// Provenance (fingerprints, seeds, config snapshot) copied into reports.
    std::map<std::string, std::string> metadata;

    /// "Liver & 60/40 & 97.0"
    std::string table_row() const;
    nlohmann::json to_json() const;
    static DiceReport from_json(const nlohmann::json& j);
};

/// Pools pixel counts per patient (micro average), then takes the
/// arithmetic mean over patients in id order. Empty input is rejected.
DiceReport aggregate_dice(Organ organ, std::span<const SliceOutcome> outcomes, double threshold);

struct VolumeEstimate {
    double milliliters = 0.0;
    long voxel_count = 0;
    double voxel_volume_mm3 = 0.0;

    friend bool operator==(const VolumeEstimate&, const VolumeEstimate&) = default;
};

/// Physical volume of one mask voxel: row x col spacing x thickness, scaled
/// by the native-to-mask resize factor per axis. Spacings are quantized to
/// whole nanometres and multiplied exactly before a single rounding.
double voxel_volume_mm3(double row_spacing_mm, double col_spacing_mm, double thickness_mm, int native_rows,
                        int native_cols, int mask_rows, int mask_cols);

/// milliliters = voxel_count * voxel_volume_mm3 / 1000.
VolumeEstimate volume_from_count(long voxel_count, double voxel_volume);

/// One mask per series slice; masks may be at model resolution.
VolumeEstimate bleeding_volume(std::span<const MaskImage> masks, const CtSeries& series);

/// Human-readable table in the layout "Segmentation & Train/Test Split & Dice Score (%)".
std::string dice_table(std::span<const DiceReport> reports, const std::string& title);

}  // namespace ctseg
