#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "satdet/geometry.hpp"
#include "satdet/image.hpp"
#include "satdet/rng.hpp"

namespace satdet {

struct MagRange {
    double min = 0.0;
    double max = 0.0;
    friend bool operator==(const MagRange&, const MagRange&) = default;
};

/// Recipe for one synthetic telescope frame.
///
/// In RateTrack mode the telescope follows the RSOs, so they image as points
/// while stars trail into streaks. Sidereal mode swaps the two populations.
struct SceneConfig {
    int width_px = 512;
    int height_px = 512;
    TrackingMode tracking_mode = TrackingMode::RateTrack;
    int star_count = 30;
    MagRange star_mag_range{8.5, 12.5};
    int rso_count = 2;
    MagRange rso_mag_range{10.5, 12.5};
    double streak_length_px = 30.0;
    double streak_angle_rad = 0.35;
    double psf_sigma_px = 1.5;
    double zero_point_mag = 24.0;
    double background_level = 500.0;
    double read_noise_sigma = 8.0;
    bool shot_noise = true;
    std::uint64_t seed = 1;

    /// Throws ConfigError naming the first violated constraint.
    void validate() const;

    friend bool operator==(const SceneConfig&, const SceneConfig&) = default;
};

std::string scene_config_to_json(const SceneConfig& config);
/// Missing keys keep their defaults; unknown keys are rejected.
SceneConfig scene_config_from_json(const std::string& text);

/// A frame with its "satellite" labels. provenance is empty for external imagery.
struct LabeledFrame {
    Image16 pixels;
    std::vector<BoundingBox> boxes;
    TrackingMode tracking_mode = TrackingMode::RateTrack;
    std::optional<SceneConfig> provenance;

    friend bool operator==(const LabeledFrame&, const LabeledFrame&) = default;
};

/// Ground-truth source placement for one frame.
struct SourcePlacement {
    Point2 start;
    Point2 end;  // equal to start for point sources
    double flux = 0.0;
    bool streak = false;
};

struct SceneLayout {
    std::vector<SourcePlacement> stars;
    std::vector<SourcePlacement> rsos;
};

/// 10^(-0.4 (mag - zero_point)).
double mag_to_flux(double mag, double zero_point);

/// Adds a pixel-integrated isotropic Gaussian of total flux `flux`.
void render_point_source(ImageD& canvas, Point2 center, double flux, double sigma);

/// Adds a uniform segment convolved with the Gaussian PSF, realised as
/// ceil(length / (sigma/4)) equal-flux point sources at the midpoints of
/// equal sub-intervals.
void render_streak(ImageD& canvas, Point2 start, Point2 end, double flux, double sigma);

/// Background, optional Poisson shot noise, Gaussian read noise, clamp at 0.
void add_noise(ImageD& image, const SceneConfig& config, Rng& rng);

/// Rounds to the nearest count and saturates to [0, 65535].
Image16 quantize_to_u16(const ImageD& image);

/// Label of one RSO: source support padded by 3 sigma, clamped to the frame.
BoundingBox rso_box(const SourcePlacement& rso, double sigma, int width, int height);

/// Draws a layout for a single frame. All streaking sources point along
/// config.streak_angle_rad. RSO positions are drawn so that their boxes stay
/// inside the frame for `frames` consecutive exposures.
SceneLayout sample_layout(const SceneConfig& config, Rng& rng, int frames = 1);

/// Renders and noises one frame. `frame_index` advances every RSO by
/// streak_length_px along the motion direction per frame.
LabeledFrame render_frame(const SceneConfig& config, const SceneLayout& layout, int frame_index,
                          Rng& rng);

/// Pure function of config (including config.seed).
LabeledFrame generate_scene(const SceneConfig& config);

struct RsoCountRange {
    int min = 0;
    int max = 0;
};

/// n_obs observations of frames_per_obs frames each, in observation-major
/// order. Frame f of observation o uses seed derive_seed(master, o, f); the
/// layout is drawn from frame 0's stream. When rso_counts is given, each
/// observation draws its RSO count uniformly from that range.
std::vector<LabeledFrame> generate_observation_set(const SceneConfig& base, int n_obs,
                                                   int frames_per_obs, std::uint64_t master_seed,
                                                   std::optional<RsoCountRange> rso_counts = {});

} // namespace satdet
