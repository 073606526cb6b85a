#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ctseg/gan/tensor.hpp"
#include "ctseg/image.hpp"
#include "ctseg/ingest.hpp"
#include "ctseg/organ.hpp"

namespace ctseg {

/// Spatial extent of every model input and target.
inline constexpr int kModelSize = 256;

/// Binary mask, values in {0, 1}.
using MaskImage = Gray8Image;

/// Fixed 256-entry color lookup table used by colorize().
const std::array<std::array<std::uint8_t, 3>, 256>& colormap();

/// Bilinear resize of an 8-bit image (no-op when already at size).
Gray8Image resize_bilinear(const Gray8Image& image, int size = kModelSize);
/// Nearest-neighbour resize; never introduces values absent from the input.
Gray8Image resize_nearest(const Gray8Image& image, int size = kModelSize);

/// Resizes to size x size (bilinear) and maps every gray level through the
/// colormap.
RgbImage colorize(const Gray8Image& gray, int size = kModelSize);

/// The exact source transform shared by training and inference.
RgbImage source_from_hu(const FloatImage& hu, const WindowSpec& window);

enum class TargetMode {
    masked_intensity,  // gray value inside the mask, 0 outside
    constant_label,    // 255 inside the mask, 0 outside
};

std::string_view to_string(TargetMode mode);
TargetMode parse_target_mode(std::string_view name);

/// Throws Error(invalid_argument) if any value is outside {0, 1}.
void check_binary(const MaskImage& mask);

/// Reads a label image; any nonzero pixel is foreground.
MaskImage read_mask(const std::filesystem::path& path);
/// Writes a mask as a 0/255 PNG.
void write_mask(const MaskImage& mask, const std::filesystem::path& path);

/// Grayscale training target at size x size (nearest-neighbour). Shapes of
/// gray and mask must agree.
Gray8Image make_target(const Gray8Image& gray, const MaskImage& mask,
                       TargetMode mode = TargetMode::masked_intensity, int size = kModelSize);

struct PairedSample {
    RgbImage source;    // size x size x 3
    Gray8Image target;  // size x size
    MaskImage mask;     // ground truth at size x size; not stored in archives
    std::string patient_id;
    int slice_index = 0;
    Organ organ = Organ::liver;
};

/// Side-by-side composite (rows x 2*cols x 3): source left, target right
/// (replicated to three channels).
RgbImage concat_pair(const PairedSample& sample);
/// Inverse of concat_pair for the image halves.
void split_composite(const RgbImage& composite, RgbImage& source, Gray8Image& target);

struct DatasetSplit {
    std::vector<std::string> train_patients;  // sorted
    std::vector<std::string> test_patients;   // sorted
    std::uint64_t seed = 0;
};

/// Patient-level 60/40 split: train gets floor(0.6 N) patients chosen by a
/// seeded shuffle of the sorted ids, test the rest.
DatasetSplit split_patients(std::vector<std::string> patients, std::uint64_t seed);

struct ArchiveEntry {
    RgbImage composite;
    std::string patient_id;
    int slice_index = 0;
    Organ organ = Organ::liver;
};

/// Training archive: header "CTSGARC1", a count/shape line, a tab-separated
/// text index, then the raw composites back to back.
void pack_archive(std::span<const PairedSample> pairs, const std::filesystem::path& path);
std::vector<ArchiveEntry> unpack_archive(const std::filesystem::path& path);

struct PairOptions {
    WindowSpec window;
    TargetMode target_mode = TargetMode::masked_intensity;
    /// Keep slices whose mask for the organ is empty.
    bool include_empty_slices = false;
};

/// Label path for one slice inside a corpus directory.
std::filesystem::path label_path(const std::filesystem::path& corpus_root, Organ organ,
                                 const std::string& patient_id, int slice_index);

/// Native-resolution mask for one slice (all zero when no label file exists).
MaskImage load_slice_mask(const std::filesystem::path& corpus_root, Organ organ,
                          const std::string& patient_id, int slice_index, int rows, int cols);

/// Builds paired samples for `organ` from the listed patients of a corpus,
/// ordered by patient (as given) then slice.
std::vector<PairedSample> build_pairs(const std::filesystem::path& corpus_root, Organ organ,
                                      std::span<const std::string> patients, const PairOptions& options);

/// Patient directories under <corpus_root>/images, sorted.
std::vector<std::string> list_patients(const std::filesystem::path& corpus_root);

/// [0,255] -> [-1,1] at the model boundary: v / 127.5 - 1.
gan::Tensor<float> to_tensor(const RgbImage& image);
/// Gray target replicated to three channels, then mapped like to_tensor.
gan::Tensor<float> target_to_tensor(const Gray8Image& target);

}  // namespace ctseg
