#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "satdet/geometry.hpp"
#include "satdet/scenegen.hpp"

namespace satdet {

/// The eight symmetries of the pixel grid. Rotations are clockwise in image
/// coordinates (y down); Rot90 and Rot270 swap width and height.
enum class D4 : std::uint8_t {
    Identity,
    Rot90,
    Rot180,
    Rot270,
    FlipH,         // mirror x
    FlipV,         // mirror y
    Transpose,     // x <-> y
    AntiTranspose, // reflection across the anti-diagonal
};

inline constexpr std::array<D4, 8> kAllD4 = {D4::Identity,  D4::Rot90, D4::Rot180,    D4::Rot270,
                                             D4::FlipH,     D4::FlipV, D4::Transpose, D4::AntiTranspose};

std::string_view to_string(D4 element);

/// Element equivalent to applying `second` after `first`.
D4 compose(D4 second, D4 first);
D4 inverse(D4 element);
bool swaps_axes(D4 element);

/// Maps a continuous point of a width x height frame.
Point2 transform_point(D4 element, Point2 p, int width, int height);
BoundingBox transform_box(D4 element, const BoundingBox& box, int width, int height);
Image16 transform_image(D4 element, const Image16& image);
LabeledFrame transform_d4(const LabeledFrame& frame, D4 element);

/// Eight frames per input, ordered input-major then kAllD4.
std::vector<LabeledFrame> augment_frames_x8(const std::vector<LabeledFrame>& frames);

enum class Split { All, Train, Val };
std::string_view to_string(Split split);
Split parse_split(std::string_view text);

struct AnnotationRecord {
    std::string image_path;  // relative to the manifest's directory
    int width = 0;
    int height = 0;
    std::vector<BoundingBox> boxes;
    TrackingMode tracking_mode = TrackingMode::RateTrack;

    friend bool operator==(const AnnotationRecord&, const AnnotationRecord&) = default;
};

/// `Split::All` marks a freshly generated set that has not been partitioned.
struct DatasetManifest {
    std::vector<AnnotationRecord> records;
    Split split = Split::All;
    bool augmentation_applied = false;

    /// Throws DataError on duplicate image paths or invalid boxes.
    void validate() const;

    friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

std::string manifest_to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const std::string& text);
void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest load_manifest(const std::filesystem::path& path);

/// Deterministic shuffled partition; |train| = round(train_fraction * N),
/// kept within [1, N-1]. Each side preserves the input order.
std::pair<DatasetManifest, DatasetManifest> split_dataset(const std::vector<AnnotationRecord>& records,
                                                          double train_fraction, std::uint64_t seed);

/// Writes the eight transformed copies of every record's image under
/// out_dir and returns the augmented manifest (paths relative to out_dir).
/// Rejects manifests that are already augmented.
DatasetManifest augment_x8(const DatasetManifest& manifest, const std::filesystem::path& image_root,
                           const std::filesystem::path& out_dir);

/// Writes frames as <prefix>NNNNN.png under dir/images and returns the manifest.
DatasetManifest write_frames(const std::vector<LabeledFrame>& frames, const std::filesystem::path& dir,
                             const std::string& prefix = "frame_");

/// Loads every record's image; boxes and mode come from the record.
std::vector<LabeledFrame> load_frames(const DatasetManifest& manifest, const std::filesystem::path& image_root);

/// Rewrites relative image paths from one manifest directory to another.
DatasetManifest rebase_manifest(const DatasetManifest& manifest, const std::filesystem::path& from_dir,
                                const std::filesystem::path& to_dir);

} // namespace satdet
