#include "ctseg/inference.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>

#include <nlohmann/json.hpp>

#include "ctseg/error.hpp"
#include "ctseg/hash.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ctseg {

Predictor::Predictor(const ModelBundle& bundle) : organ_(bundle.organ), generator_(bundle.build_generator()) {}

FloatImage Predictor::predict(const RgbImage& source) {
    const gan::Tensor<float> out = generator_->forward(to_tensor(source), gan::Pass{false, nullptr});
    const gan::Shape s = out.shape();
    FloatImage img(s.h, s.w, s.c);
    float* dst = img.data();
    const std::size_t plane = s.plane();
    for (int c = 0; c < s.c; ++c) {
        const float* src = out.plane(0, c);
        for (std::size_t i = 0; i < plane; ++i) dst[i * s.c + c] = src[i];
    }
    return img;
}

MaskImage Predictor::segment(const RgbImage& source, double threshold) {
    return binarize(predict(source), threshold);
}

DiceReport evaluate_predictions(Organ organ, std::span<const PairedSample> pairs, const PredictFn& predict,
                                double threshold) {
    if (pairs.empty()) fail(ErrorCode::invalid_argument, "evaluation needs at least one test pair");
    std::vector<SliceOutcome> outcomes;
    outcomes.reserve(pairs.size());
    for (const auto& p : pairs) {
        if (p.mask.empty()) {
            fail(ErrorCode::invalid_argument,
                 "test pair " + p.patient_id + "/" + std::to_string(p.slice_index) + " has no ground-truth mask");
        }
        outcomes.push_back({p.patient_id, p.slice_index, binarize(predict(p), threshold), p.mask});
    }
    return aggregate_dice(organ, outcomes, threshold);
}

DiceReport evaluate(const ModelBundle& bundle, std::span<const PairedSample> test, double threshold) {
    Predictor predictor(bundle);
    DiceReport report = evaluate_predictions(
        bundle.organ, test, [&](const PairedSample& p) { return predictor.predict(p.source); }, threshold);
    report.metadata["bundle_parameter_sha256"] = bundle.parameter_hash;
    report.metadata["train_dataset_fingerprint"] = bundle.dataset_fingerprint;
    report.metadata["bundle_epoch"] = std::to_string(bundle.epoch);
    return report;
}

std::string corpus_fingerprint(const fs::path& root) {
    if (!fs::is_directory(root)) fail(ErrorCode::not_found, "corpus '" + root.string() + "' does not exist");
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) files.push_back(fs::relative(e.path(), root));
    }
    std::sort(files.begin(), files.end());
    Sha256 h;
    for (const auto& rel : files) {
        h.update(rel.generic_string());
        h.update(std::string_view("\0", 1));
        h.update(sha256_file(root / rel));
    }
    return h.hex_digest();
}

DiceReport cross_evaluate(const ModelBundle& bundle, const fs::path& corpus_b, std::span<const std::string> patients,
                          const PairOptions& options, double threshold) {
    const fs::path labels = corpus_b / "labels" / std::string(to_string(bundle.organ));
    if (!fs::is_directory(labels)) {
        fail(ErrorCode::invalid_argument, "corpus '" + corpus_b.string() + "' has no " +
                                              std::string(to_string(bundle.organ)) + " annotations");
    }
    const std::vector<PairedSample> pairs = build_pairs(corpus_b, bundle.organ, patients, options);
    DiceReport report = evaluate(bundle, pairs, threshold);
    report.metadata["eval_corpus_fingerprint"] = corpus_fingerprint(corpus_b);
    return report;
}

const OrganFinding* StudyResult::find(Organ organ) const {
    for (const auto& f : findings) {
        if (f.organ == organ) return &f;
    }
    return nullptr;
}

double StudyResult::laceration_ml() const {
    const OrganFinding* f = find(Organ::liver_laceration);
    return f != nullptr && f->volume ? f->volume->milliliters : 0.0;
}

json StudyResult::to_json() const {
    json findings_json = json::array();
    for (const auto& f : findings) {
        long pixels = 0;
        std::vector<int> present;
        for (std::size_t i = 0; i < f.masks.size(); ++i) {
            long n = 0;
            for (std::uint8_t v : f.masks[i].pixels()) n += v != 0;
            pixels += n;
            if (n > 0) present.push_back(static_cast<int>(i));
        }
        json item = {{"organ", std::string(to_string(f.organ))},
                     {"mask_pixels", pixels},
                     {"slices_present", present}};
        item["dice"] = f.dice ? json(*f.dice) : json(nullptr);
        if (f.volume) {
            item["volume"] = {{"milliliters", f.volume->milliliters},
                              {"voxel_count", f.volume->voxel_count},
                              {"voxel_volume_mm3", f.volume->voxel_volume_mm3}};
        }
        findings_json.push_back(item);
    }
    json prov = json::object();
    for (const auto& [organ, hash] : provenance) prov[std::string(to_string(organ))] = hash;
    return {{"patient_id", patient_id},
            {"slice_count", slice_count},
            {"findings", findings_json},
            {"provenance", prov},
            {"created_at", created_at},
            {"laceration_ml", laceration_ml()}};
}

namespace {

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace

StudyResult segment_study(const std::map<Organ, ModelBundle>& bundles, const CtSeries& series,
                          const SegmentOptions& options) {
    if (series.slices.empty()) fail(ErrorCode::invalid_argument, "series '" + series.patient_id + "' is empty");
    options.window.validate();
    StudyResult result;
    result.patient_id = series.patient_id;
    result.slice_count = static_cast<int>(series.slices.size());
    result.created_at = utc_now();

    std::vector<RgbImage> sources;
    sources.reserve(series.slices.size());
    for (const auto& slice : series.slices) sources.push_back(source_from_hu(slice.values, options.window));

    for (const auto& [organ, bundle] : bundles) {
        if (bundle.organ != organ) {
            fail(ErrorCode::invalid_argument, "bundle registered for " + std::string(to_string(organ)) +
                                                  " was trained for " + std::string(to_string(bundle.organ)));
        }
        Predictor predictor(bundle);
        OrganFinding finding;
        finding.organ = organ;
        finding.masks.reserve(sources.size());
        for (const auto& src : sources) finding.masks.push_back(predictor.segment(src, options.threshold));
        if (organ == Organ::liver_laceration) finding.volume = bleeding_volume(finding.masks, series);
        if (const auto it = options.truth.find(organ); it != options.truth.end()) {
            if (it->second.size() != finding.masks.size()) {
                fail(ErrorCode::invalid_argument, "ground truth for " + std::string(to_string(organ)) +
                                                      " does not cover every slice");
            }
            DiceCounts c;
            for (std::size_t i = 0; i < finding.masks.size(); ++i) c += dice_counts(finding.masks[i], it->second[i]);
            finding.dice = c.dice();
        }
        result.provenance[organ] = bundle.parameter_hash;
        result.findings.push_back(std::move(finding));
    }
    return result;
}

std::array<std::uint8_t, 3> organ_color(Organ organ) {
    switch (organ) {
        case Organ::liver: return {0, 255, 0};
        case Organ::liver_laceration: return {255, 0, 0};
        case Organ::left_kidney: return {0, 0, 255};
        case Organ::right_kidney: return {0, 255, 255};
        case Organ::spleen: return {255, 255, 0};
    }
    return {255, 255, 255};
}

namespace {

int draw_rank(Organ organ) {
    switch (organ) {
        case Organ::liver: return 0;
        case Organ::left_kidney: return 1;
        case Organ::right_kidney: return 2;
        case Organ::spleen: return 3;
        case Organ::liver_laceration: return 4;
    }
    return 5;
}

}  // namespace

RgbImage render_overlay(const Gray8Image& gray, const std::vector<std::pair<Organ, MaskImage>>& masks,
                        double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) fail(ErrorCode::invalid_argument, "overlay alpha must lie in [0, 1]");
    RgbImage out(gray.rows(), gray.cols(), 3);
    auto g = gray.pixels();
    std::uint8_t* o = out.data();
    for (std::size_t i = 0; i < g.size(); ++i) o[3 * i] = o[3 * i + 1] = o[3 * i + 2] = g[i];

    std::vector<const std::pair<Organ, MaskImage>*> ordered;
    for (const auto& m : masks) {
        if (!m.second.same_extent(gray)) {
            fail(ErrorCode::invalid_argument, std::string(to_string(m.first)) + " mask is " +
                                                  m.second.shape_string() + ", slice is " + gray.shape_string());
        }
        ordered.push_back(&m);
    }
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const auto* a, const auto* b) { return draw_rank(a->first) < draw_rank(b->first); });
    for (const auto* m : ordered) {
        const auto color = organ_color(m->first);
        auto mp = m->second.pixels();
        for (std::size_t i = 0; i < mp.size(); ++i) {
            if (mp[i] == 0) continue;
            for (int c = 0; c < 3; ++c) {
                const double v = (1.0 - alpha) * o[3 * i + c] + alpha * color[c];
                o[3 * i + c] = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
            }
        }
    }
    return out;
}

RgbImage study_overlay(const StudyResult& result, const CtSeries& series, const WindowSpec& window, int slice) {
    if (slice < 0 || slice >= static_cast<int>(series.slices.size())) {
        fail(ErrorCode::not_found, "slice " + std::to_string(slice) + " is outside the series");
    }
    const Gray8Image gray = resize_bilinear(window_to_gray(series.slices[slice].values, window));
    std::vector<std::pair<Organ, MaskImage>> masks;
    for (const auto& f : result.findings) masks.emplace_back(f.organ, f.masks.at(slice));
    return render_overlay(gray, masks);
}

void write_study(const StudyResult& result, const CtSeries& series, const WindowSpec& window,
                 const fs::path& directory) {
    fs::create_directories(directory / "overlays");
    for (const auto& f : result.findings) {
        const fs::path dir = directory / "masks" / std::string(to_string(f.organ));
        fs::create_directories(dir);
        for (std::size_t i = 0; i < f.masks.size(); ++i) {
            char name[32];
            std::snprintf(name, sizeof name, "slice_%04zu.png", i);
            write_mask(f.masks[i], dir / name);
        }
    }
    for (int i = 0; i < result.slice_count; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "slice_%04d.png", i);
        export_image(study_overlay(result, series, window, i), directory / "overlays" / name);
    }
    std::FILE* f = std::fopen((directory / "study.json").c_str(), "wb");
    if (f == nullptr) fail(ErrorCode::io, "cannot write study.json under '" + directory.string() + "'");
    const std::string text = result.to_json().dump(2) + "\n";
    std::fwrite(text.data(), 1, text.size(), f);
    std::fclose(f);
}

}  // namespace ctseg
