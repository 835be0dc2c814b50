#include "satdet/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include <json.hpp>

#include "satdet/error.hpp"

namespace satdet {
namespace {

using nlohmann::json;

constexpr double kBoxPadSigmas = 3.0;
// Truncation radius of the rendered PSF; the Gaussian tail beyond it is < 1e-9.
constexpr double kRenderReachSigmas = 6.0;

Point2 motion_direction(const SceneConfig& config) {
    return {std::cos(config.streak_angle_rad), std::sin(config.streak_angle_rad)};
}

double draw_uniform(Rng& rng, double lo, double hi) {
    if (lo == hi) {
        return lo;
    }
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

SourcePlacement shifted(const SourcePlacement& s, Point2 delta) {
    SourcePlacement out = s;
    out.start = {s.start.x + delta.x, s.start.y + delta.y};
    out.end = {s.end.x + delta.x, s.end.y + delta.y};
    return out;
}

void render_source(ImageD& canvas, const SourcePlacement& s, double sigma) {
    if (s.streak) {
        render_streak(canvas, s.start, s.end, s.flux, sigma);
    } else {
        render_point_source(canvas, s.start, s.flux, sigma);
    }
}

} // namespace

void SceneConfig::validate() const {
    if (width_px <= 0 || height_px <= 0) {
        throw ConfigError("width_px and height_px must be positive");
    }
    if (star_count < 0 || rso_count < 0) {
        throw ConfigError("star_count and rso_count must be non-negative");
    }
    if (star_mag_range.min > star_mag_range.max) {
        throw ConfigError("star_mag_range: min must not exceed max");
    }
    if (rso_mag_range.min > rso_mag_range.max) {
        throw ConfigError("rso_mag_range: min must not exceed max");
    }
    if (!(psf_sigma_px > 0.0)) {
        throw ConfigError("psf_sigma_px must be positive");
    }
    if (!(streak_length_px >= 0.0)) {
        throw ConfigError("streak_length_px must be non-negative");
    }
    if (!(background_level >= 0.0) || !(read_noise_sigma >= 0.0)) {
        throw ConfigError("background_level and read_noise_sigma must be non-negative");
    }
    const double box_extent = 2.0 * kBoxPadSigmas * psf_sigma_px;
    if (width_px < box_extent || height_px < box_extent) {
        throw ConfigError("frame smaller than the 6-sigma label box");
    }
}

std::string scene_config_to_json(const SceneConfig& c) {
    json j = {
        {"width_px", c.width_px},
        {"height_px", c.height_px},
        {"tracking_mode", std::string(to_string(c.tracking_mode))},
        {"star_count", c.star_count},
        {"star_mag_range", {c.star_mag_range.min, c.star_mag_range.max}},
        {"rso_count", c.rso_count},
        {"rso_mag_range", {c.rso_mag_range.min, c.rso_mag_range.max}},
        {"streak_length_px", c.streak_length_px},
        {"streak_angle_rad", c.streak_angle_rad},
        {"psf_sigma_px", c.psf_sigma_px},
        {"zero_point_mag", c.zero_point_mag},
        {"background_level", c.background_level},
        {"read_noise_sigma", c.read_noise_sigma},
        {"shot_noise", c.shot_noise},
        {"seed", c.seed},
    };
    return j.dump(2);
}

SceneConfig scene_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("scene config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) {
        throw ConfigError("scene config must be a JSON object");
    }
    SceneConfig c;
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "width_px") c.width_px = value.get<int>();
            else if (key == "height_px") c.height_px = value.get<int>();
            else if (key == "tracking_mode") c.tracking_mode = parse_tracking_mode(value.get<std::string>());
            else if (key == "star_count") c.star_count = value.get<int>();
            else if (key == "star_mag_range") c.star_mag_range = {value.at(0).get<double>(), value.at(1).get<double>()};
            else if (key == "rso_count") c.rso_count = value.get<int>();
            else if (key == "rso_mag_range") c.rso_mag_range = {value.at(0).get<double>(), value.at(1).get<double>()};
            else if (key == "streak_length_px") c.streak_length_px = value.get<double>();
            else if (key == "streak_angle_rad") c.streak_angle_rad = value.get<double>();
            else if (key == "psf_sigma_px") c.psf_sigma_px = value.get<double>();
            else if (key == "zero_point_mag") c.zero_point_mag = value.get<double>();
            else if (key == "background_level") c.background_level = value.get<double>();
            else if (key == "read_noise_sigma") c.read_noise_sigma = value.get<double>();
            else if (key == "shot_noise") c.shot_noise = value.get<bool>();
            else if (key == "seed") c.seed = value.get<std::uint64_t>();
            else throw ConfigError("unknown scene config key '" + key + "'");
        } catch (const json::exception& e) {
            throw ConfigError("scene config key '" + key + "': " + e.what());
        }
    }
    c.validate();
    return c;
}

double mag_to_flux(double mag, double zero_point) {
    return std::pow(10.0, -0.4 * (mag - zero_point));
}

void render_point_source(ImageD& canvas, Point2 center, double flux, double sigma) {
    if (flux == 0.0) {
        return;
    }
    const double reach = kRenderReachSigmas * sigma + 1.0;
    const int x0 = std::max(0, static_cast<int>(std::floor(center.x - reach)));
    const int x1 = std::min(canvas.width() - 1, static_cast<int>(std::floor(center.x + reach)));
    const int y0 = std::max(0, static_cast<int>(std::floor(center.y - reach)));
    const int y1 = std::min(canvas.height() - 1, static_cast<int>(std::floor(center.y + reach)));
    if (x0 > x1 || y0 > y1) {
        return;
    }
    // Pixel-integrated profile: the Gaussian is separable, so each pixel
    // receives flux * (CDF difference in x) * (CDF difference in y).
    const double inv = 1.0 / (sigma * std::numbers::sqrt2);
    auto bin_weights = [&](int lo, int hi, double c) {
        std::vector<double> w(static_cast<std::size_t>(hi - lo + 1));
        for (int i = lo; i <= hi; ++i) {
            w[i - lo] = 0.5 * (std::erf((i + 1 - c) * inv) - std::erf((i - c) * inv));
        }
        return w;
    };
    const auto wx = bin_weights(x0, x1, center.x);
    const auto wy = bin_weights(y0, y1, center.y);
    for (int y = y0; y <= y1; ++y) {
        const double fy = flux * wy[y - y0];
        auto row = canvas.row(y);
        for (int x = x0; x <= x1; ++x) {
            row[x] += fy * wx[x - x0];
        }
    }
}

void render_streak(ImageD& canvas, Point2 start, Point2 end, double flux, double sigma) {
    const double dx = end.x - start.x;
    const double dy = end.y - start.y;
    const double length = std::hypot(dx, dy);
    const int n = std::max(1, static_cast<int>(std::ceil(length / (0.25 * sigma))));
    const double share = flux / n;
    for (int k = 0; k < n; ++k) {
        const double t = (k + 0.5) / n;
        render_point_source(canvas, {start.x + t * dx, start.y + t * dy}, share, sigma);
    }
}

void add_noise(ImageD& image, const SceneConfig& config, Rng& rng) {
    std::normal_distribution<double> read(0.0, 1.0);
    for (double& v : image.pixels()) {
        v += config.background_level;
        if (config.shot_noise && v > 0.0) {
            v = static_cast<double>(std::poisson_distribution<long long>(v)(rng));
        }
        if (config.read_noise_sigma > 0.0) {
            v += config.read_noise_sigma * read(rng);
        }
        v = std::max(v, 0.0);
    }
}

Image16 quantize_to_u16(const ImageD& image) {
    Image16 out(image.width(), image.height());
    auto src = image.pixels();
    auto dst = out.pixels();
    for (std::size_t i = 0; i < src.size(); ++i) {
        dst[i] = static_cast<std::uint16_t>(std::lround(std::clamp(src[i], 0.0, 65535.0)));
    }
    return out;
}

BoundingBox rso_box(const SourcePlacement& rso, double sigma, int width, int height) {
    const double pad = kBoxPadSigmas * sigma;
    BoundingBox b;
    b.x_min = std::clamp(std::min(rso.start.x, rso.end.x) - pad, 0.0, static_cast<double>(width));
    b.x_max = std::clamp(std::max(rso.start.x, rso.end.x) + pad, 0.0, static_cast<double>(width));
    b.y_min = std::clamp(std::min(rso.start.y, rso.end.y) - pad, 0.0, static_cast<double>(height));
    b.y_max = std::clamp(std::max(rso.start.y, rso.end.y) + pad, 0.0, static_cast<double>(height));
    return b;
}

SceneLayout sample_layout(const SceneConfig& config, Rng& rng, int frames) {
    config.validate();
    if (frames < 1) {
        throw ConfigError("frames must be at least 1");
    }
    const Point2 dir = motion_direction(config);
    const double half = 0.5 * config.streak_length_px;
    const double zp = config.zero_point_mag;
    const bool stars_streak = config.tracking_mode == TrackingMode::RateTrack;

    SceneLayout layout;
    layout.stars.reserve(static_cast<std::size_t>(config.star_count));
    for (int i = 0; i < config.star_count; ++i) {
        const double x = draw_uniform(rng, 0.0, config.width_px);
        const double y = draw_uniform(rng, 0.0, config.height_px);
        const double mag = draw_uniform(rng, config.star_mag_range.min, config.star_mag_range.max);
        SourcePlacement s;
        s.flux = mag_to_flux(mag, zp);
        s.streak = stars_streak;
        if (stars_streak) {
            s.start = {x - half * dir.x, y - half * dir.y};
            s.end = {x + half * dir.x, y + half * dir.y};
        } else {
            s.start = s.end = {x, y};
        }
        layout.stars.push_back(s);
    }

    // The RSO reference point is the midpoint of its frame-0 exposure; it
    // advances by one streak length per frame. Its whole trajectory, padded
    // like the label box, must stay inside the frame.
    const bool rso_streak = !stars_streak;
    const double pad = kBoxPadSigmas * config.psf_sigma_px;
    const double travel = (frames - 1) * config.streak_length_px;
    auto feasible = [&](double d, double extent) {
        const double seg = rso_streak ? half * std::abs(d) : 0.0;
        const double lo = pad - std::min(0.0, travel * d) + seg;
        const double hi = extent - pad - std::max(0.0, travel * d) - seg;
        return std::pair{lo, hi};
    };
    const auto [xlo, xhi] = feasible(dir.x, config.width_px);
    const auto [ylo, yhi] = feasible(dir.y, config.height_px);
    if (config.rso_count > 0 && (xlo > xhi || ylo > yhi)) {
        throw ConfigError("RSO trajectory does not fit inside the frame");
    }
    layout.rsos.reserve(static_cast<std::size_t>(config.rso_count));
    for (int i = 0; i < config.rso_count; ++i) {
        const double x = draw_uniform(rng, xlo, xhi);
        const double y = draw_uniform(rng, ylo, yhi);
        const double mag = draw_uniform(rng, config.rso_mag_range.min, config.rso_mag_range.max);
        SourcePlacement r;
        r.flux = mag_to_flux(mag, zp);
        r.streak = rso_streak;
        if (rso_streak) {
            r.start = {x - half * dir.x, y - half * dir.y};
            r.end = {x + half * dir.x, y + half * dir.y};
        } else {
            r.start = r.end = {x, y};
        }
        layout.rsos.push_back(r);
    }
    return layout;
}

LabeledFrame render_frame(const SceneConfig& config, const SceneLayout& layout, int frame_index,
                          Rng& rng) {
    config.validate();
    const Point2 dir = motion_direction(config);
    const Point2 delta{frame_index * config.streak_length_px * dir.x,
                       frame_index * config.streak_length_px * dir.y};
    ImageD canvas(config.width_px, config.height_px, 0.0);
    for (const auto& s : layout.stars) {
        render_source(canvas, s, config.psf_sigma_px);
    }
    LabeledFrame frame;
    frame.tracking_mode = config.tracking_mode;
    frame.provenance = config;
    for (const auto& r0 : layout.rsos) {
        const SourcePlacement r = shifted(r0, delta);
        render_source(canvas, r, config.psf_sigma_px);
        frame.boxes.push_back(rso_box(r, config.psf_sigma_px, config.width_px, config.height_px));
    }
    add_noise(canvas, config, rng);
    frame.pixels = quantize_to_u16(canvas);
    return frame;
}

LabeledFrame generate_scene(const SceneConfig& config) {
    Rng rng(config.seed);
    const SceneLayout layout = sample_layout(config, rng, 1);
    return render_frame(config, layout, 0, rng);
}

std::vector<LabeledFrame> generate_observation_set(const SceneConfig& base, int n_obs,
                                                   int frames_per_obs, std::uint64_t master_seed,
                                                   std::optional<RsoCountRange> rso_counts) {
    if (n_obs < 1 || frames_per_obs < 1) {
        throw ConfigError("observation count and frames per observation must be at least 1");
    }
    if (rso_counts && (rso_counts->min < 0 || rso_counts->min > rso_counts->max)) {
        throw ConfigError("invalid RSO count range");
    }
    base.validate();
    constexpr std::uint64_t kCountStream = ~std::uint64_t{0};
    std::vector<LabeledFrame> frames;
    frames.reserve(static_cast<std::size_t>(n_obs) * static_cast<std::size_t>(frames_per_obs));
    for (int o = 0; o < n_obs; ++o) {
        SceneConfig cfg = base;
        if (rso_counts) {
            Rng count_rng(derive_seed(master_seed, static_cast<std::uint64_t>(o), kCountStream));
            cfg.rso_count = std::uniform_int_distribution<int>(rso_counts->min, rso_counts->max)(count_rng);
        }
        cfg.seed = derive_seed(master_seed, static_cast<std::uint64_t>(o), 0);
        Rng layout_rng(cfg.seed);
        const SceneLayout layout = sample_layout(cfg, layout_rng, frames_per_obs);
        for (int f = 0; f < frames_per_obs; ++f) {
            SceneConfig frame_cfg = cfg;
            frame_cfg.seed = derive_seed(master_seed, static_cast<std::uint64_t>(o),
                                         static_cast<std::uint64_t>(f));
            if (f == 0) {
                frames.push_back(render_frame(frame_cfg, layout, f, layout_rng));
            } else {
                Rng frame_rng(frame_cfg.seed);
                frames.push_back(render_frame(frame_cfg, layout, f, frame_rng));
            }
        }
    }
    return frames;
}

} // namespace satdet
