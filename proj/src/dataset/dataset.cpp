#include "satdet/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "satdet/error.hpp"
#include "satdet/imageio.hpp"

namespace satdet {
namespace {

using nlohmann::json;

// Signed permutation acting on frame-centred coordinates (u, v).
struct Mat2 {
    int a, b, c, d;  // [[a, b], [c, d]]
    friend bool operator==(const Mat2&, const Mat2&) = default;
};

constexpr std::array<Mat2, 8> kMatrices = {{
    {1, 0, 0, 1},    // Identity
    {0, -1, 1, 0},   // Rot90
    {-1, 0, 0, -1},  // Rot180
    {0, 1, -1, 0},   // Rot270
    {-1, 0, 0, 1},   // FlipH
    {1, 0, 0, -1},   // FlipV
    {0, 1, 1, 0},    // Transpose
    {0, -1, -1, 0},  // AntiTranspose
}};

const Mat2& matrix(D4 e) { return kMatrices[static_cast<std::size_t>(e)]; }

D4 from_matrix(const Mat2& m) {
    for (D4 e : kAllD4) {
        if (matrix(e) == m) return e;
    }
    throw std::logic_error("matrix is not a D4 element");
}

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

[[noreturn]] void record_error(std::size_t index, const std::string& field, const std::string& what) {
    throw DataError("manifest record " + std::to_string(index) + ", field '" + field + "': " + what);
}

void check_box(std::size_t index, std::size_t box_index, const BoundingBox& b, int width, int height) {
    const std::string field = "boxes[" + std::to_string(box_index) + "]";
    if (!(b.x_min < b.x_max)) {
        record_error(index, field, "x_min must be < x_max");
    }
    if (!(b.y_min < b.y_max)) {
        record_error(index, field, "y_min must be < y_max");
    }
    if (!b.inside(width, height)) {
        record_error(index, field, "box extends outside the image");
    }
}

} // namespace

std::string_view to_string(D4 e) {
    switch (e) {
    case D4::Identity: return "id";
    case D4::Rot90: return "r90";
    case D4::Rot180: return "r180";
    case D4::Rot270: return "r270";
    case D4::FlipH: return "fh";
    case D4::FlipV: return "fv";
    case D4::Transpose: return "tr";
    case D4::AntiTranspose: return "atr";
    }
    return "?";
}

D4 compose(D4 second, D4 first) {
    const Mat2& s = matrix(second);
    const Mat2& f = matrix(first);
    return from_matrix({s.a * f.a + s.b * f.c, s.a * f.b + s.b * f.d, s.c * f.a + s.d * f.c,
                        s.c * f.b + s.d * f.d});
}

D4 inverse(D4 e) {
    for (D4 candidate : kAllD4) {
        if (compose(candidate, e) == D4::Identity) return candidate;
    }
    throw std::logic_error("D4 element without inverse");
}

bool swaps_axes(D4 e) { return matrix(e).a == 0; }

Point2 transform_point(D4 e, Point2 p, int width, int height) {
    const Mat2& m = matrix(e);
    const double u = p.x - 0.5 * width;
    const double v = p.y - 0.5 * height;
    const int out_w = swaps_axes(e) ? height : width;
    const int out_h = swaps_axes(e) ? width : height;
    return {m.a * u + m.b * v + 0.5 * out_w, m.c * u + m.d * v + 0.5 * out_h};
}

BoundingBox transform_box(D4 e, const BoundingBox& box, int width, int height) {
    const Point2 p = transform_point(e, {box.x_min, box.y_min}, width, height);
    const Point2 q = transform_point(e, {box.x_max, box.y_max}, width, height);
    BoundingBox out;
    out.x_min = std::min(p.x, q.x);
    out.x_max = std::max(p.x, q.x);
    out.y_min = std::min(p.y, q.y);
    out.y_max = std::max(p.y, q.y);
    out.class_id = box.class_id;
    return out;
}

Image16 transform_image(D4 e, const Image16& image) {
    const int w = image.width();
    const int h = image.height();
    Image16 out = swaps_axes(e) ? Image16(h, w) : Image16(w, h);
    const Mat2& m = matrix(e);
    // Pixel centres map to pixel centres; work in doubled integer coordinates
    // so the mapping is exact.
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const int u2 = 2 * c + 1 - w;
            const int v2 = 2 * r + 1 - h;
            const int x2 = m.a * u2 + m.b * v2 + out.width();
            const int y2 = m.c * u2 + m.d * v2 + out.height();
            out.at((x2 - 1) / 2, (y2 - 1) / 2) = image.at(c, r);
        }
    }
    return out;
}

LabeledFrame transform_d4(const LabeledFrame& frame, D4 e) {
    LabeledFrame out;
    out.pixels = transform_image(e, frame.pixels);
    out.tracking_mode = frame.tracking_mode;
    out.provenance = frame.provenance;
    out.boxes.reserve(frame.boxes.size());
    for (const auto& b : frame.boxes) {
        out.boxes.push_back(transform_box(e, b, frame.pixels.width(), frame.pixels.height()));
    }
    return out;
}

std::vector<LabeledFrame> augment_frames_x8(const std::vector<LabeledFrame>& frames) {
    std::vector<LabeledFrame> out;
    out.reserve(frames.size() * kAllD4.size());
    for (const auto& f : frames) {
        for (D4 e : kAllD4) {
            out.push_back(transform_d4(f, e));
        }
    }
    return out;
}

std::string_view to_string(Split split) {
    switch (split) {
    case Split::All: return "all";
    case Split::Train: return "train";
    case Split::Val: return "val";
    }
    return "?";
}

Split parse_split(std::string_view text) {
    const std::string s = lower(text);
    if (s == "all") return Split::All;
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    throw DataError("unknown split '" + std::string(text) + "'");
}

void DatasetManifest::validate() const {
    std::set<std::string> seen;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        if (r.image_path.empty()) {
            record_error(i, "image", "empty path");
        }
        if (!seen.insert(r.image_path).second) {
            record_error(i, "image", "duplicate path '" + r.image_path + "'");
        }
        if (r.width <= 0 || r.height <= 0) {
            record_error(i, r.width <= 0 ? "width" : "height", "must be positive");
        }
        for (std::size_t b = 0; b < r.boxes.size(); ++b) {
            check_box(i, b, r.boxes[b], r.width, r.height);
        }
    }
}

std::string manifest_to_json(const DatasetManifest& m) {
    json records = json::array();
    for (const auto& r : m.records) {
        json boxes = json::array();
        for (const auto& b : r.boxes) {
            boxes.push_back({b.x_min, b.y_min, b.x_max, b.y_max});
        }
        records.push_back({{"image", r.image_path},
                           {"width", r.width},
                           {"height", r.height},
                           {"boxes", std::move(boxes)},
                           {"mode", std::string(to_string(r.tracking_mode))}});
    }
    json j = {{"split", std::string(to_string(m.split))},
              {"augmentation_applied", m.augmentation_applied},
              {"records", std::move(records)}};
    return j.dump(1);
}

DatasetManifest manifest_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw DataError(std::string("manifest is not valid JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("records") || !j["records"].is_array()) {
        throw DataError("manifest must be an object with a 'records' array");
    }
    DatasetManifest m;
    try {
        m.split = parse_split(j.value("split", std::string("all")));
        m.augmentation_applied = j.value("augmentation_applied", false);
    } catch (const json::exception& e) {
        throw DataError(std::string("manifest header: ") + e.what());
    }
    const auto& records = j["records"];
    for (std::size_t i = 0; i < records.size(); ++i) {
        const json& rj = records[i];
        AnnotationRecord r;
        std::string field = "image";
        try {
            if (!rj.is_object()) record_error(i, "record", "must be an object");
            r.image_path = rj.at("image").get<std::string>();
            field = "width";
            r.width = rj.at("width").get<int>();
            field = "height";
            r.height = rj.at("height").get<int>();
            field = "mode";
            r.tracking_mode = parse_tracking_mode(rj.at("mode").get<std::string>());
            field = "boxes";
            const json& bj = rj.at("boxes");
            if (!bj.is_array()) record_error(i, field, "must be an array");
            for (std::size_t b = 0; b < bj.size(); ++b) {
                field = "boxes[" + std::to_string(b) + "]";
                const json& one = bj[b];
                if (!one.is_array() || one.size() != 4) record_error(i, field, "expected [x_min, y_min, x_max, y_max]");
                BoundingBox box;
                box.x_min = one[0].get<double>();
                box.y_min = one[1].get<double>();
                box.x_max = one[2].get<double>();
                box.y_max = one[3].get<double>();
                r.boxes.push_back(box);
            }
        } catch (const json::exception& e) {
            record_error(i, field, e.what());
        } catch (const ConfigError& e) {
            record_error(i, field, e.what());
        }
        m.records.push_back(std::move(r));
    }
    m.validate();
    return m;
}

void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
    manifest.validate();
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    if (!out) throw DataError("cannot write manifest '" + path.string() + "'");
    out << manifest_to_json(manifest) << '\n';
    if (!out) throw DataError("write failed for manifest '" + path.string() + "'");
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest '" + path.string() + "'");
    std::stringstream buffer;
    buffer << in.rdbuf();
    try {
        return manifest_from_json(buffer.str());
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

std::pair<DatasetManifest, DatasetManifest> split_dataset(const std::vector<AnnotationRecord>& records,
                                                          double train_fraction, std::uint64_t seed) {
    if (records.empty()) {
        throw DataError("cannot split an empty record list");
    }
    if (records.size() < 2) {
        throw DataError("splitting needs at least 2 records");
    }
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw ConfigError("train_fraction must lie in (0, 1)");
    }
    const std::size_t n = records.size();
    const auto wanted = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
    const std::size_t n_train = std::clamp<std::size_t>(wanted, 1, n - 1);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::size_t> train_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::vector<std::size_t> val_idx(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(val_idx.begin(), val_idx.end());

    DatasetManifest train, val;
    train.split = Split::Train;
    val.split = Split::Val;
    for (auto i : train_idx) train.records.push_back(records[i]);
    for (auto i : val_idx) val.records.push_back(records[i]);
    return {std::move(train), std::move(val)};
}

DatasetManifest augment_x8(const DatasetManifest& manifest, const std::filesystem::path& image_root,
                           const std::filesystem::path& out_dir) {
    if (manifest.augmentation_applied) {
        throw DataError("manifest is already augmented; refusing to augment again");
    }
    manifest.validate();
    const auto image_dir = out_dir / "images";
    std::filesystem::create_directories(image_dir);
    DatasetManifest out;
    out.split = manifest.split;
    out.augmentation_applied = true;
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        const auto& rec = manifest.records[i];
        LabeledFrame frame;
        frame.pixels = read_image16(image_root / rec.image_path);
        if (frame.pixels.width() != rec.width || frame.pixels.height() != rec.height) {
            record_error(i, "width", "does not match image '" + rec.image_path + "'");
        }
        frame.boxes = rec.boxes;
        frame.tracking_mode = rec.tracking_mode;
        const std::string stem = std::filesystem::path(rec.image_path).stem().string();
        for (D4 e : kAllD4) {
            const LabeledFrame t = transform_d4(frame, e);
            const std::string name = stem + "__" + std::string(to_string(e)) + ".png";
            write_image16(image_dir / name, t.pixels);
            out.records.push_back({"images/" + name, t.pixels.width(), t.pixels.height(), t.boxes,
                                   t.tracking_mode});
        }
    }
    out.validate();
    return out;
}

DatasetManifest write_frames(const std::vector<LabeledFrame>& frames, const std::filesystem::path& dir,
                             const std::string& prefix) {
    const auto image_dir = dir / "images";
    std::filesystem::create_directories(image_dir);
    DatasetManifest m;
    char name[64];
    for (std::size_t i = 0; i < frames.size(); ++i) {
        std::snprintf(name, sizeof name, "%05zu.png", i);
        const std::string file = prefix + name;
        write_image16(image_dir / file, frames[i].pixels);
        m.records.push_back({"images/" + file, frames[i].pixels.width(), frames[i].pixels.height(),
                             frames[i].boxes, frames[i].tracking_mode});
    }
    m.validate();
    return m;
}

std::vector<LabeledFrame> load_frames(const DatasetManifest& manifest, const std::filesystem::path& image_root) {
    std::vector<LabeledFrame> frames;
    frames.reserve(manifest.records.size());
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        const auto& rec = manifest.records[i];
        LabeledFrame f;
        f.pixels = read_image16(image_root / rec.image_path);
        if (f.pixels.width() != rec.width || f.pixels.height() != rec.height) {
            record_error(i, "width", "does not match image '" + rec.image_path + "'");
        }
        f.boxes = rec.boxes;
        f.tracking_mode = rec.tracking_mode;
        frames.push_back(std::move(f));
    }
    return frames;
}

DatasetManifest rebase_manifest(const DatasetManifest& manifest, const std::filesystem::path& from_dir,
                                const std::filesystem::path& to_dir) {
    const auto from = std::filesystem::absolute(from_dir).lexically_normal();
    const auto to = std::filesystem::absolute(to_dir).lexically_normal();
    DatasetManifest out = manifest;
    for (auto& r : out.records) {
        r.image_path = (from / r.image_path).lexically_normal().lexically_relative(to).generic_string();
    }
    return out;
}

} // namespace satdet
