#include <cmath>
#include <cstdio>
#include <numbers>
#include <vector>

#include <gdcmAttribute.h>
#include <gdcmWriter.h>
#include <nlohmann/json.hpp>

#include "ctseg/error.hpp"
#include "ctseg/fs_util.hpp"
#include "ctseg/phantom.hpp"
#include "ctseg/preprocess.hpp"
#include "ctseg/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ctseg {

namespace {

struct Ellipsoid {
    double cx, cy, cz;  // pixels, pixels, slices
    double ax, ay, az;
    double cos_t, sin_t;

    /// Normalised squared distance; inside when <= 1.
    double level(double x, double y, double z) const {
        const double dx = x - cx;
        const double dy = y - cy;
        const double u = dx * cos_t + dy * sin_t;
        const double v = -dx * sin_t + dy * cos_t;
        const double w = (z - cz) / az;
        return (u / ax) * (u / ax) + (v / ay) * (v / ay) + w * w;
    }
};

double draw(Rng& rng, const Range& r) { return r.lo == r.hi ? r.lo : uniform(rng, r.lo, r.hi); }

Ellipsoid place(Rng& rng, const OrganGeometry& g, int size, int slices) {
    Ellipsoid e{};
    e.cx = draw(rng, g.center_x) * size;
    e.cy = draw(rng, g.center_y) * size;
    e.cz = draw(rng, g.center_z) * (slices - 1);
    e.ax = draw(rng, g.axis_x);
    e.ay = draw(rng, g.axis_y);
    e.az = draw(rng, g.axis_z);
    const double t = draw(rng, g.tilt_deg) * std::numbers::pi / 180.0;
    e.cos_t = std::cos(t);
    e.sin_t = std::sin(t);
    return e;
}

void check_range(const Range& r, const std::string& what, bool positive) {
    if (!std::isfinite(r.lo) || !std::isfinite(r.hi) || r.lo > r.hi || (positive && !(r.lo > 0.0))) {
        fail(ErrorCode::invalid_argument, "phantom spec: degenerate range for " + what);
    }
}

// Paint order; later organs overwrite earlier ones in both intensity and label.
constexpr Organ kPaintOrder[] = {Organ::liver, Organ::spleen, Organ::right_kidney, Organ::left_kidney};

constexpr std::uint8_t kNoLabel = 0xff;

}  // namespace

std::string_view to_string(PhantomStyle style) {
    return style == PhantomStyle::style_A ? "style_A" : "style_B";
}

PhantomStyle parse_phantom_style(std::string_view name) {
    if (name == "style_A") return PhantomStyle::style_A;
    if (name == "style_B") return PhantomStyle::style_B;
    fail(ErrorCode::invalid_argument, "unknown phantom style '" + std::string(name) + "'");
}

PhantomSpec PhantomSpec::defaults() {
    PhantomSpec s;
    s.organs[Organ::liver] = {{0.33, 0.38}, {0.44, 0.50}, {0.45, 0.55}, {38, 48}, {30, 38}, {10, 14}, {-15, 15}, 140.0};
    s.organs[Organ::spleen] = {{0.70, 0.74}, {0.44, 0.50}, {0.45, 0.60}, {16, 22}, {20, 26}, {6, 9}, {-15, 15}, 120.0};
    s.organs[Organ::right_kidney] = {{0.32, 0.36}, {0.69, 0.72}, {0.40, 0.60}, {11, 14}, {15, 18}, {5, 7}, {-10, 10}, 170.0};
    s.organs[Organ::left_kidney] = {{0.64, 0.68}, {0.69, 0.72}, {0.40, 0.60}, {11, 14}, {15, 18}, {5, 7}, {-10, 10}, 170.0};
    return s;
}

void PhantomSpec::validate() const {
    if (patient_count < 1 || slices_per_patient < 1 || image_size < 32) {
        fail(ErrorCode::invalid_argument, "phantom spec: need >= 1 patient, >= 1 slice, image_size >= 32");
    }
    if (!(pixel_spacing_mm > 0.0) || !(slice_thickness_mm > 0.0)) {
        fail(ErrorCode::invalid_argument, "phantom spec: spacing must be positive");
    }
    for (const auto& [organ, g] : organs) {
        if (organ == Organ::liver_laceration) {
            fail(ErrorCode::invalid_argument, "phantom spec: lacerations are configured under 'lesions'");
        }
        const std::string name(to_string(organ));
        check_range(g.center_x, name + ".center_x", false);
        check_range(g.center_y, name + ".center_y", false);
        check_range(g.center_z, name + ".center_z", false);
        check_range(g.axis_x, name + ".axis_x", true);
        check_range(g.axis_y, name + ".axis_y", true);
        check_range(g.axis_z, name + ".axis_z", true);
        check_range(g.tilt_deg, name + ".tilt_deg", false);
    }
    if (lesions.count_min < 0 || lesions.count_max < lesions.count_min) {
        fail(ErrorCode::invalid_argument, "phantom spec: lesion count range is degenerate");
    }
    if (lesions.count_max > 0) {
        check_range(lesions.radius_px, "lesions.radius_px", true);
        check_range(lesions.radius_z, "lesions.radius_z", true);
        if (!organs.contains(Organ::liver)) {
            fail(ErrorCode::invalid_argument, "phantom spec: lesions require a liver");
        }
    }
    for (const auto* st : {&style_a, &style_b}) {
        if (!(st->noise_sigma_hu >= 0.0) || !std::isfinite(st->intensity_offset_hu)) {
            fail(ErrorCode::invalid_argument, "phantom spec: style noise must be nonnegative");
        }
    }
}

void write_dicom_slice(const FloatImage& hu, const DicomSliceInfo& info, const fs::path& path) {
    gdcm::Writer writer;
    gdcm::File& file = writer.GetFile();
    gdcm::DataSet& ds = file.GetDataSet();
    const auto put = [&](const auto& attr) { ds.Replace(attr.GetAsDataElement()); };
    const std::string sop_uid = info.series_uid + "." + std::to_string(info.instance_number);
    put(gdcm::Attribute<0x0008, 0x0016>{"1.2.840.10008.5.1.4.1.1.2"});
    put(gdcm::Attribute<0x0008, 0x0018>{sop_uid.c_str()});
    put(gdcm::Attribute<0x0008, 0x0060>{"CT"});
    put(gdcm::Attribute<0x0010, 0x0020>{info.patient_id.c_str()});
    put(gdcm::Attribute<0x0020, 0x000e>{info.series_uid.c_str()});
    put(gdcm::Attribute<0x0020, 0x0013>{info.instance_number});
    if (info.write_position) {
        put(gdcm::Attribute<0x0020, 0x0032>{{0.0, 0.0, info.position_z_mm}});
        put(gdcm::Attribute<0x0020, 0x0037>{{1.0, 0.0, 0.0, 0.0, 1.0, 0.0}});
    }
    put(gdcm::Attribute<0x0028, 0x0002>{1});
    put(gdcm::Attribute<0x0028, 0x0004>{"MONOCHROME2"});
    put(gdcm::Attribute<0x0028, 0x0010>{static_cast<std::uint16_t>(hu.rows())});
    put(gdcm::Attribute<0x0028, 0x0011>{static_cast<std::uint16_t>(hu.cols())});
    put(gdcm::Attribute<0x0028, 0x0030>{{info.pixel_spacing_mm, info.pixel_spacing_mm}});
    put(gdcm::Attribute<0x0018, 0x0050>{info.slice_thickness_mm});
    put(gdcm::Attribute<0x0028, 0x0100>{16});
    put(gdcm::Attribute<0x0028, 0x0101>{16});
    put(gdcm::Attribute<0x0028, 0x0102>{15});
    put(gdcm::Attribute<0x0028, 0x0103>{1});
    if (info.write_calibration) {
        put(gdcm::Attribute<0x0028, 0x1052>{-1024.0});
        put(gdcm::Attribute<0x0028, 0x1053>{1.0});
    }
    std::vector<std::int16_t> raw(hu.size());
    auto values = hu.pixels();
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const double v = std::clamp(std::nearbyint(static_cast<double>(values[i]) + 1024.0), -32768.0, 32767.0);
        raw[i] = static_cast<std::int16_t>(v);
    }
    gdcm::DataElement pixels(gdcm::Tag(0x7fe0, 0x0010));
    pixels.SetVR(gdcm::VR::OW);
    pixels.SetByteValue(reinterpret_cast<const char*>(raw.data()),
                        static_cast<std::uint32_t>(raw.size() * sizeof(std::int16_t)));
    ds.Replace(pixels);
    file.GetHeader().SetDataSetTransferSyntax(gdcm::TransferSyntax::ExplicitVRLittleEndian);
    writer.SetFileName(path.c_str());
    if (!writer.Write()) fail(ErrorCode::io, "cannot write DICOM '" + path.string() + "'");
}

DatasetManifest generate_phantoms(const PhantomSpec& spec, const fs::path& root) {
    spec.validate();
    const int size = spec.image_size;
    const int slices = spec.slices_per_patient;
    const StyleParams& style = spec.active_style();

    DatasetManifest manifest;
    manifest.patient_count = spec.patient_count;
    manifest.image_count = static_cast<long>(spec.patient_count) * slices;
    for (const auto& [organ, g] : spec.organs) manifest.organ_mask_counts[organ] = 0;
    if (spec.organs.contains(Organ::liver)) manifest.organ_mask_counts[Organ::liver_laceration] = 0;

    fs::create_directories(root / "images");
    for (int p = 0; p < spec.patient_count; ++p) {
        char pid[16];
        std::snprintf(pid, sizeof pid, "P%03d", p + 1);
        const std::string patient(pid);
        Rng geometry(derive_seed(spec.seed, static_cast<std::uint64_t>(p)));
        Rng noise(derive_seed(spec.seed ^ 0x6e6f697365ULL, static_cast<std::uint64_t>(p)));

        // Body outline and spine are fixed anatomy with small jitter.
        const Ellipsoid body{size * 0.5, size * 0.52, 0.0, size * uniform(geometry, 0.42, 0.45),
                             size * uniform(geometry, 0.32, 0.35), 1e9, 1.0, 0.0};
        const Ellipsoid spine{size * 0.5, size * 0.80, 0.0, size * 0.05, size * 0.05, 1e9, 1.0, 0.0};

        std::vector<std::pair<Organ, Ellipsoid>> organs;
        for (Organ organ : kPaintOrder) {
            const auto it = spec.organs.find(organ);
            if (it != spec.organs.end()) organs.emplace_back(organ, place(geometry, it->second, size, slices));
        }
        std::vector<Ellipsoid> lesions;
        const int lesion_count = spec.lesions.count_max == 0
                                     ? 0
                                     : spec.lesions.count_min +
                                           static_cast<int>(uniform_index(
                                               geometry, static_cast<std::uint64_t>(spec.lesions.count_max -
                                                                                    spec.lesions.count_min + 1)));
        if (lesion_count > 0) {
            const Ellipsoid& liver = organs.front().second;
            for (int k = 0; k < lesion_count; ++k) {
                // Polar draw in the liver's inner half so most of the blob stays inside.
                const double rho = 0.55 * std::sqrt(uniform01(geometry));
                const double phi = uniform(geometry, 0.0, 2.0 * std::numbers::pi);
                const double u = rho * liver.ax * std::cos(phi);
                const double v = rho * liver.ay * std::sin(phi);
                Ellipsoid e{};
                e.cx = liver.cx + u * liver.cos_t - v * liver.sin_t;
                e.cy = liver.cy + u * liver.sin_t + v * liver.cos_t;
                e.cz = liver.cz + uniform(geometry, -0.4, 0.4) * liver.az;
                e.ax = draw(geometry, spec.lesions.radius_px);
                e.ay = draw(geometry, spec.lesions.radius_px);
                e.az = draw(geometry, spec.lesions.radius_z);
                const double t = uniform(geometry, 0.0, std::numbers::pi);
                e.cos_t = std::cos(t);
                e.sin_t = std::sin(t);
                lesions.push_back(e);
            }
        }

        const std::string series_uid = "2.25." + std::to_string(derive_seed(spec.seed, 1000003ULL + p) >> 1);
        const fs::path image_dir = root / "images" / patient;
        fs::create_directories(image_dir);
        for (int z = 0; z < slices; ++z) {
            FloatImage hu(size, size, 1, -1000.0f);
            Image<std::uint8_t> label(size, size, 1, kNoLabel);
            MaskImage lesion_mask(size, size);
            for (int y = 0; y < size; ++y) {
                for (int x = 0; x < size; ++x) {
                    const double px = x + 0.5;
                    const double py = y + 0.5;
                    if (body.level(px, py, 0.0) > 1.0) continue;
                    double value = spec.body_hu;
                    if (spine.level(px, py, 0.0) <= 1.0) value = 600.0;
                    for (std::size_t k = 0; k < organs.size(); ++k) {
                        if (organs[k].second.level(px, py, z) <= 1.0) {
                            value = spec.organs.at(organs[k].first).hu;
                            label.at(y, x) = static_cast<std::uint8_t>(k);
                        }
                    }
                    if (!organs.empty() && organs.front().first == Organ::liver && label.at(y, x) == 0) {
                        for (const auto& l : lesions) {
                            if (l.level(px, py, z) <= 1.0) {
                                value = spec.lesions.hu;
                                lesion_mask.at(y, x) = 1;
                                break;
                            }
                        }
                    }
                    hu.at(y, x) = static_cast<float>(value + style.intensity_offset_hu);
                }
            }
            // Noise covers the whole field, air included, in a fixed raster order.
            for (auto& v : hu.pixels()) {
                v = static_cast<float>(std::clamp(v + style.noise_sigma_hu * standard_normal(noise), -1024.0, 3071.0));
            }

            char name[32];
            std::snprintf(name, sizeof name, "slice_%04d.dcm", z);
            DicomSliceInfo info;
            info.patient_id = patient;
            info.series_uid = series_uid;
            info.instance_number = z + 1;
            info.position_z_mm = z * spec.slice_thickness_mm;
            info.pixel_spacing_mm = spec.pixel_spacing_mm;
            info.slice_thickness_mm = spec.slice_thickness_mm;
            write_dicom_slice(hu, info, image_dir / name);

            const auto emit = [&](Organ organ, const MaskImage& mask) {
                bool any = false;
                for (std::uint8_t v : mask.pixels()) any = any || v != 0;
                if (!any) return;
                const fs::path path = label_path(root, organ, patient, z);
                fs::create_directories(path.parent_path());
                write_mask(mask, path);
                ++manifest.organ_mask_counts[organ];
            };
            for (std::size_t k = 0; k < organs.size(); ++k) {
                MaskImage mask(size, size);
                auto lp = label.pixels();
                auto mp = mask.pixels();
                for (std::size_t i = 0; i < mp.size(); ++i) mp[i] = lp[i] == k ? 1 : 0;
                emit(organs[k].first, mask);
            }
            if (!lesions.empty()) emit(Organ::liver_laceration, lesion_mask);
        }
    }
    write_file_atomic(root / "manifest.txt", manifest.to_text());
    write_file_atomic(root / "phantom.json", json(spec).dump(2) + "\n");
    return manifest;
}

void to_json(json& j, const Range& r) { j = json::array({r.lo, r.hi}); }
void from_json(const json& j, Range& r) {
    if (!j.is_array() || j.size() != 2) fail(ErrorCode::invalid_argument, "range must be [lo, hi]");
    r.lo = j.at(0).get<double>();
    r.hi = j.at(1).get<double>();
}

namespace {

json geometry_json(const OrganGeometry& g) {
    return {{"center_x", g.center_x}, {"center_y", g.center_y}, {"center_z", g.center_z},
            {"axis_x", g.axis_x},     {"axis_y", g.axis_y},     {"axis_z", g.axis_z},
            {"tilt_deg", g.tilt_deg}, {"hu", g.hu}};
}

OrganGeometry geometry_from(const json& j) {
    OrganGeometry g;
    from_json(j.at("center_x"), g.center_x);
    from_json(j.at("center_y"), g.center_y);
    if (j.contains("center_z")) from_json(j.at("center_z"), g.center_z);
    from_json(j.at("axis_x"), g.axis_x);
    from_json(j.at("axis_y"), g.axis_y);
    from_json(j.at("axis_z"), g.axis_z);
    if (j.contains("tilt_deg")) from_json(j.at("tilt_deg"), g.tilt_deg);
    g.hu = j.at("hu").get<double>();
    return g;
}

json style_json(const StyleParams& s) {
    return {{"intensity_offset_hu", s.intensity_offset_hu}, {"noise_sigma_hu", s.noise_sigma_hu}};
}

StyleParams style_from(const json& j) {
    return {j.at("intensity_offset_hu").get<double>(), j.at("noise_sigma_hu").get<double>()};
}

}  // namespace

void to_json(json& j, const PhantomSpec& spec) {
    json organs = json::object();
    for (const auto& [organ, g] : spec.organs) organs[std::string(to_string(organ))] = geometry_json(g);
    json lesion_range_px;
    json lesion_range_z;
    to_json(lesion_range_px, spec.lesions.radius_px);
    to_json(lesion_range_z, spec.lesions.radius_z);
    j = {{"patient_count", spec.patient_count},
         {"slices_per_patient", spec.slices_per_patient},
         {"image_size", spec.image_size},
         {"pixel_spacing_mm", spec.pixel_spacing_mm},
         {"slice_thickness_mm", spec.slice_thickness_mm},
         {"body_hu", spec.body_hu},
         {"organs", organs},
         {"lesions",
          {{"count_min", spec.lesions.count_min},
           {"count_max", spec.lesions.count_max},
           {"radius_px", lesion_range_px},
           {"radius_z", lesion_range_z},
           {"hu", spec.lesions.hu}}},
         {"style", std::string(to_string(spec.style))},
         {"style_A", style_json(spec.style_a)},
         {"style_B", style_json(spec.style_b)},
         {"seed", spec.seed}};
}

void from_json(const json& j, PhantomSpec& spec) {
    PhantomSpec s = PhantomSpec::defaults();
    s.patient_count = j.value("patient_count", s.patient_count);
    s.slices_per_patient = j.value("slices_per_patient", s.slices_per_patient);
    s.image_size = j.value("image_size", s.image_size);
    s.pixel_spacing_mm = j.value("pixel_spacing_mm", s.pixel_spacing_mm);
    s.slice_thickness_mm = j.value("slice_thickness_mm", s.slice_thickness_mm);
    s.body_hu = j.value("body_hu", s.body_hu);
    if (j.contains("organs")) {
        s.organs.clear();
        for (const auto& [name, g] : j.at("organs").items()) s.organs[parse_organ(name)] = geometry_from(g);
    }
    if (j.contains("lesions")) {
        const json& l = j.at("lesions");
        s.lesions.count_min = l.value("count_min", s.lesions.count_min);
        s.lesions.count_max = l.value("count_max", s.lesions.count_max);
        if (l.contains("radius_px")) from_json(l.at("radius_px"), s.lesions.radius_px);
        if (l.contains("radius_z")) from_json(l.at("radius_z"), s.lesions.radius_z);
        s.lesions.hu = l.value("hu", s.lesions.hu);
    }
    if (j.contains("style")) s.style = parse_phantom_style(j.at("style").get<std::string>());
    if (j.contains("style_A")) s.style_a = style_from(j.at("style_A"));
    if (j.contains("style_B")) s.style_b = style_from(j.at("style_B"));
    s.seed = j.value("seed", s.seed);
    spec = std::move(s);
}

}  // namespace ctseg
