#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ctseg/ingest.hpp"
#include "ctseg/metrics.hpp"
#include "ctseg/preprocess.hpp"
#include "ctseg/trainer.hpp"

namespace ctseg {

/// Frozen generator for one organ; evaluation-mode forward passes only.
class Predictor {
public:
    explicit Predictor(const ModelBundle& bundle);

    /// Generator output for one colorized source, channels interleaved, in [-1, 1].
    FloatImage predict(const RgbImage& source);
    MaskImage segment(const RgbImage& source, double threshold);

    Organ organ() const { return organ_; }

private:
    Organ organ_;
    std::unique_ptr<gan::Generator<float>> generator_;
};

/// Runs `predict` over the pairs and scores its binarized output against
/// each pair's mask.
using PredictFn = std::function<FloatImage(const PairedSample&)>;
DiceReport evaluate_predictions(Organ organ, std::span<const PairedSample> pairs, const PredictFn& predict,
                                double threshold = kDefaultThreshold);

/// Held-out evaluation of a bundle.
DiceReport evaluate(const ModelBundle& bundle, std::span<const PairedSample> test,
                    double threshold = kDefaultThreshold);

/// Hash over every file below `root` (relative path and contents, sorted).
std::string corpus_fingerprint(const std::filesystem::path& root);

/// Applies a bundle trained on one corpus to annotated patients of another.
/// No parameters change; the report is tagged with both fingerprints.
DiceReport cross_evaluate(const ModelBundle& bundle, const std::filesystem::path& corpus_b,
                          std::span<const std::string> patients, const PairOptions& options,
                          double threshold = kDefaultThreshold);

struct OrganFinding {
    Organ organ = Organ::liver;
    std::vector<MaskImage> masks;  // one per series slice, model resolution
    std::optional<double> dice;
    std::optional<VolumeEstimate> volume;  // laceration only
};

struct StudyResult {
    std::string patient_id;
    int slice_count = 0;
    std::vector<OrganFinding> findings;  // organ order, at most one per organ
    std::map<Organ, std::string> provenance;  // organ -> generator parameter hash
    std::string created_at;  // UTC, ISO 8601

    const OrganFinding* find(Organ organ) const;
    /// Laceration volume in mL, 0 when there is no laceration finding.
    double laceration_ml() const;

    /// Summary without mask pixels.
    nlohmann::json to_json() const;
};

struct SegmentOptions {
    WindowSpec window;
    double threshold = kDefaultThreshold;
    /// Ground truth per organ (one mask per slice, model resolution). When
    /// present the finding carries a Dice score.
    std::map<Organ, std::vector<MaskImage>> truth;
};

StudyResult segment_study(const std::map<Organ, ModelBundle>& bundles, const CtSeries& series,
                          const SegmentOptions& options = {});

/// Overlay colors and z-order: liver, left kidney, right kidney, spleen,
/// then laceration on top.
std::array<std::uint8_t, 3> organ_color(Organ organ);
inline constexpr double kOverlayAlpha = 0.4;

/// Gray lifted to RGB, then each organ mask blended in draw order:
/// out = (1 - alpha) * under + alpha * color, rounded half up.
RgbImage render_overlay(const Gray8Image& gray, const std::vector<std::pair<Organ, MaskImage>>& masks,
                        double alpha = kOverlayAlpha);

/// Writes study.json, masks/<organ>/slice_NNNN.png and overlays/slice_NNNN.png.
void write_study(const StudyResult& result, const CtSeries& series, const WindowSpec& window,
                 const std::filesystem::path& directory);

/// Overlay for one slice of a study (model resolution).
RgbImage study_overlay(const StudyResult& result, const CtSeries& series, const WindowSpec& window, int slice);

}  // namespace ctseg
