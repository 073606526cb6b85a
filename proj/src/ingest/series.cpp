#include <algorithm>
#include <cmath>
#include <cstring>
#include <optional>
#include <set>

#include <gdcmAttribute.h>
#include <gdcmImageReader.h>

#include "ctseg/error.hpp"
#include "ctseg/ingest.hpp"

namespace fs = std::filesystem;

namespace ctseg {

namespace {

std::string trim(std::string s) {
    const auto keep = [](unsigned char ch) { return ch != ' ' && ch != '\0'; };
    auto end = std::find_if(s.rbegin(), s.rend(), keep).base();
    auto begin = std::find_if(s.begin(), end, keep);
    return std::string(begin, end);
}

template <std::uint16_t Group, std::uint16_t Element>
bool has_tag(const gdcm::DataSet& ds) {
    const gdcm::Tag tag(Group, Element);
    return ds.FindDataElement(tag) && !ds.GetDataElement(tag).IsEmpty();
}

template <std::uint16_t Group, std::uint16_t Element>
std::string string_tag(const gdcm::DataSet& ds) {
    if (!has_tag<Group, Element>(ds)) return {};
    gdcm::Attribute<Group, Element> attr;
    attr.SetFromDataSet(ds);
    return trim(std::string(attr.GetValue()));
}

struct RawSlice {
    fs::path file;
    std::string series_uid;
    std::string patient_id;
    std::optional<double> position;
    std::optional<int> instance;
    double slope = 1.0;
    double intercept = 0.0;
    std::array<double, 2> spacing{0.0, 0.0};
    double thickness = 0.0;
    FloatImage values;
};

[[noreturn]] void missing(const fs::path& file, std::string_view tag) {
    fail(ErrorCode::invalid_argument,
         "'" + file.string() + "' lacks required tag " + std::string(tag));
}

template <typename Stored>
void convert(const char* buffer, RawSlice& slice) {
    auto px = slice.values.pixels();
    for (std::size_t i = 0; i < px.size(); ++i) {
        Stored raw;
        std::memcpy(&raw, buffer + i * sizeof(Stored), sizeof(Stored));
        px[i] = static_cast<float>(calibrate(static_cast<double>(raw), slice.slope, slice.intercept));
    }
}

RawSlice read_slice(const fs::path& file) {
    gdcm::ImageReader reader;
    reader.SetFileName(file.c_str());
    if (!reader.Read()) {
        fail(ErrorCode::invalid_argument, "'" + file.string() + "' is not a readable DICOM image");
    }
    const gdcm::DataSet& ds = reader.GetFile().GetDataSet();
    RawSlice slice;
    slice.file = file;
    slice.series_uid = string_tag<0x0020, 0x000e>(ds);
    slice.patient_id = string_tag<0x0010, 0x0020>(ds);

    if (!has_tag<0x0028, 0x1053>(ds)) missing(file, "RescaleSlope (0028,1053)");
    if (!has_tag<0x0028, 0x1052>(ds)) missing(file, "RescaleIntercept (0028,1052)");
    if (!has_tag<0x0028, 0x0030>(ds)) missing(file, "PixelSpacing (0028,0030)");
    if (!has_tag<0x0018, 0x0050>(ds)) missing(file, "SliceThickness (0018,0050)");
    {
        gdcm::Attribute<0x0028, 0x1053> slope;
        slope.SetFromDataSet(ds);
        slice.slope = slope.GetValue();
        gdcm::Attribute<0x0028, 0x1052> intercept;
        intercept.SetFromDataSet(ds);
        slice.intercept = intercept.GetValue();
        gdcm::Attribute<0x0028, 0x0030> spacing;
        spacing.SetFromDataSet(ds);
        slice.spacing = {spacing.GetValue(0), spacing.GetValue(1)};
        gdcm::Attribute<0x0018, 0x0050> thickness;
        thickness.SetFromDataSet(ds);
        slice.thickness = thickness.GetValue();
    }
    if (has_tag<0x0020, 0x0032>(ds)) {
        gdcm::Attribute<0x0020, 0x0032> pos;
        pos.SetFromDataSet(ds);
        std::array<double, 3> normal{0.0, 0.0, 1.0};
        if (has_tag<0x0020, 0x0037>(ds)) {
            gdcm::Attribute<0x0020, 0x0037> orient;
            orient.SetFromDataSet(ds);
            const double r[3] = {orient.GetValue(0), orient.GetValue(1), orient.GetValue(2)};
            const double c[3] = {orient.GetValue(3), orient.GetValue(4), orient.GetValue(5)};
            normal = {r[1] * c[2] - r[2] * c[1], r[2] * c[0] - r[0] * c[2], r[0] * c[1] - r[1] * c[0]};
        }
        slice.position = normal[0] * pos.GetValue(0) + normal[1] * pos.GetValue(1) +
                         normal[2] * pos.GetValue(2);
    }
    if (has_tag<0x0020, 0x0013>(ds)) {
        gdcm::Attribute<0x0020, 0x0013> instance;
        instance.SetFromDataSet(ds);
        slice.instance = instance.GetValue();
    }

    const gdcm::Image& image = reader.GetImage();
    const int cols = static_cast<int>(image.GetDimension(0));
    const int rows = static_cast<int>(image.GetDimension(1));
    const gdcm::PixelFormat format = image.GetPixelFormat();
    if (format.GetSamplesPerPixel() != 1) {
        fail(ErrorCode::invalid_argument, "'" + file.string() + "' is not single-channel");
    }
    std::vector<char> buffer(image.GetBufferLength());
    if (!image.GetBuffer(buffer.data())) {
        fail(ErrorCode::invalid_argument, "'" + file.string() + "': cannot decode pixel data");
    }
    slice.values = FloatImage(rows, cols);
    const std::size_t count = static_cast<std::size_t>(rows) * cols;
    switch (format.GetScalarType()) {
        case gdcm::PixelFormat::UINT8:
            if (buffer.size() < count) break;
            convert<std::uint8_t>(buffer.data(), slice);
            return slice;
        case gdcm::PixelFormat::INT8:
            if (buffer.size() < count) break;
            convert<std::int8_t>(buffer.data(), slice);
            return slice;
        case gdcm::PixelFormat::UINT16:
            if (buffer.size() < count * 2) break;
            convert<std::uint16_t>(buffer.data(), slice);
            return slice;
        case gdcm::PixelFormat::INT16:
            if (buffer.size() < count * 2) break;
            convert<std::int16_t>(buffer.data(), slice);
            return slice;
        default:
            fail(ErrorCode::invalid_argument,
                 "'" + file.string() + "': unsupported pixel format " + format.GetScalarTypeAsString());
    }
    fail(ErrorCode::invalid_argument, "'" + file.string() + "': pixel data shorter than image extent");
}

}  // namespace

double calibrate(double raw, double slope, double intercept) {
    return std::clamp(slope * raw + intercept, kMinHu, kMaxHu);
}

void CtSeries::validate() const {
    if (!(pixel_spacing_mm[0] > 0.0) || !(pixel_spacing_mm[1] > 0.0) || !(slice_thickness_mm > 0.0)) {
        fail(ErrorCode::invalid_argument, "series '" + patient_id + "' has non-positive geometry");
    }
    for (std::size_t i = 1; i < slices.size(); ++i) {
        if (!slices[i].values.same_shape(slices[0].values)) {
            fail(ErrorCode::invalid_argument,
                 "series '" + patient_id + "': slice " + std::to_string(i) + " is " +
                     slices[i].values.shape_string() + ", expected " + slices[0].values.shape_string());
        }
        if (!(slices[i].position_mm > slices[i - 1].position_mm)) {
            fail(ErrorCode::invalid_argument,
                 "series '" + patient_id + "': slice positions are not strictly increasing");
        }
    }
}

CtSeries load_series(const fs::path& directory, SourceTag tag) {
    if (!fs::is_directory(directory)) {
        fail(ErrorCode::not_found, "series directory '" + directory.string() + "' does not exist");
    }
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(directory)) {
        if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) {
        fail(ErrorCode::invalid_argument, "'" + directory.string() + "' contains no DICOM files");
    }

    std::vector<RawSlice> raw;
    raw.reserve(files.size());
    for (const auto& file : files) raw.push_back(read_slice(file));

    std::set<std::string> uids;
    for (const auto& s : raw) uids.insert(s.series_uid);
    if (uids.size() > 1) {
        std::string listed;
        for (const auto& uid : uids) listed += (listed.empty() ? "" : ", ") + (uid.empty() ? "<none>" : uid);
        fail(ErrorCode::invalid_argument,
             "'" + directory.string() + "' mixes series: " + listed);
    }

    const bool by_position = std::all_of(raw.begin(), raw.end(), [](const RawSlice& s) { return s.position.has_value(); });
    const bool by_instance = std::all_of(raw.begin(), raw.end(), [](const RawSlice& s) { return s.instance.has_value(); });
    if (!by_position && !by_instance) {
        fail(ErrorCode::invalid_argument,
             "'" + directory.string() + "': slices carry neither ImagePositionPatient (0020,0032) "
             "nor InstanceNumber (0020,0013)");
    }
    const auto key = [&](const RawSlice& s) {
        return by_position ? *s.position : static_cast<double>(*s.instance);
    };
    std::stable_sort(raw.begin(), raw.end(), [&](const RawSlice& a, const RawSlice& b) { return key(a) < key(b); });

    CtSeries series;
    series.patient_id = raw.front().patient_id.empty() ? directory.filename().string() : raw.front().patient_id;
    series.series_uid = raw.front().series_uid;
    series.pixel_spacing_mm = raw.front().spacing;
    series.slice_thickness_mm = raw.front().thickness;
    series.source_tag = tag;
    series.slices.reserve(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (i > 0 && !(key(raw[i]) > key(raw[i - 1]))) {
            fail(ErrorCode::invalid_argument,
                 "'" + raw[i].file.string() + "' duplicates the sort position of '" +
                     raw[i - 1].file.string() + "'");
        }
        HuSlice slice;
        slice.values = std::move(raw[i].values);
        slice.index = static_cast<int>(i);
        slice.position_mm = key(raw[i]);
        slice.instance_number = raw[i].instance.value_or(static_cast<int>(i) + 1);
        series.slices.push_back(std::move(slice));
    }
    series.validate();
    return series;
}

std::string_view to_string(SourceTag tag) {
    switch (tag) {
        case SourceTag::standard_corpus: return "standard_corpus";
        case SourceTag::local_corpus: return "local_corpus";
        case SourceTag::phantom: return "phantom";
    }
    return "unknown";
}

SourceTag parse_source_tag(std::string_view name) {
    for (SourceTag tag : {SourceTag::standard_corpus, SourceTag::local_corpus, SourceTag::phantom}) {
        if (to_string(tag) == name) return tag;
    }
    fail(ErrorCode::invalid_argument, "unknown source tag '" + std::string(name) + "'");
}

}  // namespace ctseg
