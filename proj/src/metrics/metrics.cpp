#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ctseg/error.hpp"
#include "ctseg/metrics.hpp"

using nlohmann::json;

namespace ctseg {

MaskImage binarize(const FloatImage& generated, double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0)) {
        fail(ErrorCode::invalid_argument, "threshold " + std::to_string(threshold) + " outside (0, 1)");
    }
    const int ch = generated.channels();
    MaskImage mask(generated.rows(), generated.cols());
    const float* src = generated.data();
    auto out = mask.pixels();
    for (std::size_t i = 0; i < out.size(); ++i) {
        double v = 0.0;
        for (int c = 0; c < ch; ++c) v += src[i * ch + c];
        v /= ch;
        out[i] = (v + 1.0) / 2.0 > threshold ? 1 : 0;
    }
    return mask;
}

double DiceCounts::dice() const {
    const long total = size_a + size_b;
    if (total == 0) return 1.0;
    return 2.0 * static_cast<double>(intersection) / static_cast<double>(total);
}

DiceCounts& DiceCounts::operator+=(const DiceCounts& other) {
    intersection += other.intersection;
    size_a += other.size_a;
    size_b += other.size_b;
    return *this;
}

DiceCounts dice_counts(const MaskImage& a, const MaskImage& b) {
    if (!a.same_shape(b)) {
        fail(ErrorCode::invalid_argument, "dice: masks are " + a.shape_string() + " and " + b.shape_string());
    }
    DiceCounts c;
    auto pa = a.pixels();
    auto pb = b.pixels();
    for (std::size_t i = 0; i < pa.size(); ++i) {
        const bool x = pa[i] != 0;
        const bool y = pb[i] != 0;
        c.size_a += x;
        c.size_b += y;
        c.intersection += x && y;
    }
    return c;
}

DiceReport aggregate_dice(Organ organ, std::span<const SliceOutcome> outcomes, double threshold) {
    if (outcomes.empty()) fail(ErrorCode::invalid_argument, "evaluation set is empty");
    DiceReport report;
    report.organ = organ;
    report.threshold = threshold;
    for (const auto& o : outcomes) {
        auto& p = report.per_patient[o.patient_id];
        p.counts += dice_counts(o.predicted, o.truth);
        ++p.slices;
    }
    double sum = 0.0;
    for (auto& [id, p] : report.per_patient) {
        p.dice = p.counts.dice();
        sum += p.dice;
    }
    report.mean_dice = sum / static_cast<double>(report.per_patient.size());
    return report;
}

std::string DiceReport::table_row() const {
    char pct[32];
    std::snprintf(pct, sizeof pct, "%.1f", 100.0 * mean_dice);
    return std::string(display_name(organ)) + " & " + split_label + " & " + pct;
}

json DiceReport::to_json() const {
    json patients = json::object();
    for (const auto& [id, p] : per_patient) {
        patients[id] = {{"dice", p.dice},
                        {"intersection", p.counts.intersection},
                        {"size_predicted", p.counts.size_a},
                        {"size_truth", p.counts.size_b},
                        {"slices", p.slices}};
    }
    return {{"organ", std::string(to_string(organ))},
            {"mean_dice", mean_dice},
            {"threshold", threshold},
            {"split", split_label},
            {"aggregation", "per-patient pooled pixel counts, mean over patients"},
            {"per_patient", patients},
            {"metadata", metadata}};
}

DiceReport DiceReport::from_json(const json& j) {
    DiceReport r;
    r.organ = parse_organ(j.at("organ").get<std::string>());
    r.mean_dice = j.at("mean_dice").get<double>();
    r.threshold = j.at("threshold").get<double>();
    r.split_label = j.value("split", r.split_label);
    for (const auto& [id, p] : j.at("per_patient").items()) {
        PatientDice d;
        d.dice = p.at("dice").get<double>();
        d.counts = {p.at("intersection").get<long>(), p.at("size_predicted").get<long>(),
                    p.at("size_truth").get<long>()};
        d.slices = p.value("slices", 0);
        r.per_patient[id] = d;
    }
    if (j.contains("metadata")) r.metadata = j.at("metadata").get<std::map<std::string, std::string>>();
    return r;
}

double voxel_volume_mm3(double row_spacing_mm, double col_spacing_mm, double thickness_mm, int native_rows,
                        int native_cols, int mask_rows, int mask_cols) {
    for (double v : {row_spacing_mm, col_spacing_mm, thickness_mm}) {
        if (!(v > 0.0) || !std::isfinite(v)) fail(ErrorCode::invalid_argument, "series geometry is missing");
    }
    if (native_rows <= 0 || native_cols <= 0 || mask_rows <= 0 || mask_cols <= 0) {
        fail(ErrorCode::invalid_argument, "voxel volume needs positive grid extents");
    }
    using i128 = __int128;
    const auto nm = [](double mm) { return static_cast<i128>(std::llround(mm * 1e6)); };
    i128 num = nm(row_spacing_mm) * nm(col_spacing_mm) * nm(thickness_mm) * native_rows * native_cols;
    i128 den = static_cast<i128>(mask_rows) * mask_cols;
    i128 scale = 1;
    for (int i = 0; i < 18; ++i) scale *= 10;  // nm^3 -> mm^3
    den *= scale;
    i128 a = num;
    i128 b = den;
    while (b != 0) {
        const i128 t = a % b;
        a = b;
        b = t;
    }
    num /= a;
    den /= a;
    return static_cast<double>(static_cast<long double>(num) / static_cast<long double>(den));
}

VolumeEstimate volume_from_count(long voxel_count, double voxel_volume) {
    VolumeEstimate v;
    v.voxel_count = voxel_count;
    v.voxel_volume_mm3 = voxel_volume;
    v.milliliters = static_cast<double>(voxel_count) * voxel_volume / 1000.0;
    return v;
}

VolumeEstimate bleeding_volume(std::span<const MaskImage> masks, const CtSeries& series) {
    if (masks.size() != series.slices.size()) {
        fail(ErrorCode::invalid_argument, "bleeding_volume: " + std::to_string(masks.size()) + " masks for " +
                                              std::to_string(series.slices.size()) + " slices");
    }
    if (masks.empty()) return volume_from_count(0, voxel_volume_mm3(series.pixel_spacing_mm[0],
                                                                     series.pixel_spacing_mm[1],
                                                                     series.slice_thickness_mm, 1, 1, 1, 1));
    const double vv = voxel_volume_mm3(series.pixel_spacing_mm[0], series.pixel_spacing_mm[1],
                                       series.slice_thickness_mm, series.rows(), series.cols(), masks[0].rows(),
                                       masks[0].cols());
    long count = 0;
    for (const auto& m : masks) {
        if (!m.same_shape(masks[0])) fail(ErrorCode::invalid_argument, "bleeding_volume: mask shapes differ");
        for (std::uint8_t v : m.pixels()) count += v != 0;
    }
    return volume_from_count(count, vv);
}

std::string dice_table(std::span<const DiceReport> reports, const std::string& title) {
    std::ostringstream out;
    out << title << "\n";
    out << "Segmentation & Train/Test Split & Dice Score (%)\n";
    for (const auto& r : reports) out << r.table_row() << "\n";
    return out.str();
}

}  // namespace ctseg
