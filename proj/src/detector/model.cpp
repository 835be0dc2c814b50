#include "satdet/det/model.hpp"

#include <cmath>
#include <fstream>
#include <string>

#include "satdet/det/sidecar.hpp"
#include "satdet/error.hpp"
#include "satdet/nn/checkpoint.hpp"

namespace satdet::det {

using nlohmann::json;

namespace {

constexpr const char* kSidecarFormat = "satdet-model";
constexpr int kSidecarVersion = 1;

std::string lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

} // namespace

std::string_view to_string(SizeClass size) { return size == SizeClass::Small ? "small" : "large"; }
std::string_view to_string(Precision precision) { return precision == Precision::Float ? "float" : "quantized"; }

SizeClass parse_size_class(std::string_view text) {
    const std::string t = lower(text);
    if (t == "small") return SizeClass::Small;
    if (t == "large") return SizeClass::Large;
    throw ConfigError("unknown model size '" + std::string(text) + "' (expected small or large)");
}

Precision parse_precision(std::string_view text) {
    const std::string t = lower(text);
    if (t == "float") return Precision::Float;
    if (t == "quantized") return Precision::Quantized;
    throw ConfigError("unknown precision '" + std::string(text) + "' (expected float or quantized)");
}

// ---- ModelConfig ----------------------------------------------------------

int ModelConfig::tap_stride(std::size_t head) const {
    int stride = 2;
    for (std::size_t b = 0; b <= head_taps.at(head); ++b) stride *= blocks.at(b).stride;
    return stride;
}

void ModelConfig::validate() const {
    if (input_h <= 0 || input_w <= 0) throw ConfigError("model input size must be positive");
    if (!(input_gain > 0.0)) throw ConfigError("model input_gain must be positive");
    if (stem_channels == 0) throw ConfigError("stem_channels must be >= 1");
    if (blocks.empty()) throw ConfigError("model needs at least one block");
    std::size_t c = stem_channels;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const auto& s = blocks[b];
        if (s.in_channels != c) {
            throw ConfigError("block " + std::to_string(b) + " expects " + std::to_string(s.in_channels) +
                              " input channels but receives " + std::to_string(c));
        }
        if (s.stride != 1 && s.stride != 2) throw ConfigError("block strides must be 1 or 2");
        if (s.expansion < 1) throw ConfigError("block expansion factor must be >= 1");
        c = s.out_channels;
    }
    if (head_taps.empty()) throw ConfigError("model needs at least one head");
    if (head_taps.size() != anchors.feature_map_strides.size()) {
        throw ConfigError("model has " + std::to_string(head_taps.size()) + " heads but the anchor config has " +
                          std::to_string(anchors.feature_map_strides.size()) + " feature maps");
    }
    for (std::size_t i = 0; i < head_taps.size(); ++i) {
        if (head_taps[i] >= blocks.size() || (i > 0 && head_taps[i] <= head_taps[i - 1])) {
            throw ConfigError("head taps must be strictly increasing block indices");
        }
        if (tap_stride(i) != anchors.feature_map_strides[i]) {
            throw ConfigError("head " + std::to_string(i) + " sits at stride " + std::to_string(tap_stride(i)) +
                              " but its anchors assume stride " + std::to_string(anchors.feature_map_strides[i]));
        }
    }
    if (head_taps.back() != blocks.size() - 1) {
        throw ConfigError("the last block must feed a head");
    }
    build_anchors(anchors, input_h, input_w);
}

ModelConfig small_model_config() {
    ModelConfig c;
    c.size_class = SizeClass::Small;
    c.stem_channels = 16;
    c.blocks = {{16, 16, 4, 2}, {16, 24, 4, 2}, {24, 24, 4, 1}, {24, 32, 4, 2}, {32, 48, 4, 1}, {48, 64, 4, 1}};
    c.head_taps = {2, 5};
    c.anchors.feature_map_strides = {8, 16};
    c.anchors.anchor_scales_px = {{6.0, 12.0}, {24.0, 48.0}};
    c.anchors.aspect_ratios = {1.0, 3.0, 1.0 / 3.0};
    return c;
}

ModelConfig large_model_config() {
    ModelConfig c;
    c.size_class = SizeClass::Large;
    c.stem_channels = 32;
    c.blocks = {{32, 32, 6, 2},  {32, 32, 6, 1},   {32, 48, 6, 1},    {48, 48, 6, 2},
                {48, 64, 6, 1},  {64, 64, 6, 1},   {64, 96, 6, 2},    {96, 96, 6, 1},
                {96, 96, 6, 1},  {96, 128, 6, 1},  {128, 128, 6, 1},  {128, 128, 6, 1}};
    c.head_taps = {2, 5, 11};
    c.anchors.feature_map_strides = {4, 8, 16};
    c.anchors.anchor_scales_px = {{5.0, 9.0}, {12.0, 18.0}, {28.0, 48.0}};
    c.anchors.aspect_ratios = {1.0, 3.0, 1.0 / 3.0};
    return c;
}

ModelConfig model_config_for(SizeClass size) {
    return size == SizeClass::Small ? small_model_config() : large_model_config();
}

// ---- DetectorModel --------------------------------------------------------

DetectorModel::DetectorModel(ModelConfig config, TrackingMode mode) : config_(std::move(config)), mode_(mode) {
    config_.validate();
    anchors_ = build_anchors(config_.anchors, config_.input_h, config_.input_w);
    stem_ = nn::Conv2D("stem", 1, config_.stem_channels, 3, 2, nn::Padding::Same, false);
    stem_affine_ = nn::ChannelAffine("stem_affine", config_.stem_channels);
    for (std::size_t b = 0; b < config_.blocks.size(); ++b) {
        blocks_.emplace_back("block" + std::to_string(b), config_.blocks[b]);
    }
    for (std::size_t h = 0; h < config_.head_taps.size(); ++h) {
        const std::size_t cin = config_.blocks[config_.head_taps[h]].out_channels;
        heads_.emplace_back("head" + std::to_string(h), cin, config_.anchors.anchors_per_cell(h) * 5, 3, 1,
                            nn::Padding::Same, true);
    }
}

void DetectorModel::init(std::uint64_t seed) {
    Rng rng(seed);
    stem_.init(rng);
    for (auto& b : blocks_) b.init(rng);
    std::normal_distribution<double> small(0.0, 0.01);
    // Objectness starts at p = 0.01 so the rare positives are not swamped early on.
    const double prior_logit = -std::log(99.0);
    for (auto& head : heads_) {
        for (double& w : head.weight().value.data()) w = small(rng);
        auto& bias = head.bias()->value;
        for (std::size_t c = 0; c < bias.size(); ++c) bias[c] = (c % 5 == 4) ? prior_logit : 0.0;
    }
}

std::vector<nn::Tensor> DetectorModel::forward(const nn::Tensor& x, nn::Tape* tape) const {
    nn::require_rank4(x.shape(), "detector input");
    if (x.dim(1) != 1 || x.dim(2) != static_cast<std::size_t>(config_.input_h) ||
        x.dim(3) != static_cast<std::size_t>(config_.input_w)) {
        throw ShapeError("detector input must be [N, 1, " + std::to_string(config_.input_h) + ", " +
                         std::to_string(config_.input_w) + "], got " + nn::shape_string(x.shape()));
    }
    nn::Tensor scaled = x;
    for (double& v : scaled.data()) v *= config_.input_gain;
    nn::Tensor h = stem_act_.forward(stem_affine_.forward(stem_.forward(scaled, tape), tape), tape);

    std::vector<nn::Tensor> taps;
    std::size_t next_tap = 0;
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        h = blocks_[b].forward(h, tape);
        if (next_tap < config_.head_taps.size() && config_.head_taps[next_tap] == b) {
            taps.push_back(h);
            ++next_tap;
        }
    }
    std::vector<nn::Tensor> out;
    out.reserve(heads_.size());
    for (std::size_t i = 0; i < heads_.size(); ++i) out.push_back(heads_[i].forward(taps[i], tape));
    return out;
}

void DetectorModel::backward(const std::vector<nn::Tensor>& head_grads, nn::Tape& tape) {
    if (head_grads.size() != heads_.size()) {
        throw ShapeError("expected " + std::to_string(heads_.size()) + " head gradients, got " +
                         std::to_string(head_grads.size()));
    }
    std::vector<nn::Tensor> tap_grads(heads_.size());
    for (std::size_t i = heads_.size(); i-- > 0;) tap_grads[i] = heads_[i].backward(head_grads[i], tape);

    nn::Tensor g;
    std::size_t tap = heads_.size();
    for (std::size_t b = blocks_.size(); b-- > 0;) {
        if (tap > 0 && config_.head_taps[tap - 1] == b) {
            --tap;
            if (g.empty()) {
                g = std::move(tap_grads[tap]);
            } else {
                g = nn::add_forward(g, tap_grads[tap]);
            }
        }
        g = blocks_[b].backward(g, tape);
    }
    g = stem_act_.backward(g, tape);
    g = stem_affine_.backward(g, tape);
    stem_.backward(g, tape);
}

std::vector<nn::Param*> DetectorModel::params() {
    std::vector<nn::Param*> out;
    stem_.collect(out);
    stem_affine_.collect(out);
    for (auto& b : blocks_) b.collect(out);
    for (auto& h : heads_) h.collect(out);
    return out;
}

std::vector<const nn::Param*> DetectorModel::params() const {
    auto mutable_params = const_cast<DetectorModel*>(this)->params();
    return {mutable_params.begin(), mutable_params.end()};
}

void DetectorModel::zero_grad() {
    for (auto* p : params()) p->zero_grad();
}

// ---- head layout ----------------------------------------------------------

template <typename T>
std::vector<T> flatten_head_outputs(const std::vector<nn::BasicTensor<T>>& heads, const ModelConfig& config,
                                    std::size_t image) {
    std::vector<T> out;
    for (std::size_t m = 0; m < heads.size(); ++m) {
        const auto& t = heads[m];
        const std::size_t a_per_cell = config.anchors.anchors_per_cell(m);
        const std::size_t fh = t.dim(2), fw = t.dim(3);
        if (t.dim(1) != a_per_cell * 5) throw ShapeError("head channel count does not match its anchors");
        const std::size_t base = out.size();
        out.resize(base + fh * fw * a_per_cell * 5);
        for (std::size_t ch = 0; ch < a_per_cell * 5; ++ch) {
            const std::size_t a = ch / 5, j = ch % 5;
            const T* src = &t.at(image, ch, 0, 0);
            for (std::size_t cell = 0; cell < fh * fw; ++cell) out[base + (cell * a_per_cell + a) * 5 + j] = src[cell];
        }
    }
    return out;
}

template std::vector<float> flatten_head_outputs(const std::vector<nn::TensorF>&, const ModelConfig&, std::size_t);
template std::vector<double> flatten_head_outputs(const std::vector<nn::Tensor>&, const ModelConfig&, std::size_t);

void scatter_head_grads(std::span<const double> flat, const ModelConfig& config, std::size_t image,
                        std::vector<nn::Tensor>& head_grads) {
    std::size_t base = 0;
    for (std::size_t m = 0; m < head_grads.size(); ++m) {
        auto& t = head_grads[m];
        const std::size_t a_per_cell = config.anchors.anchors_per_cell(m);
        const std::size_t cells = t.dim(2) * t.dim(3);
        for (std::size_t ch = 0; ch < a_per_cell * 5; ++ch) {
            const std::size_t a = ch / 5, j = ch % 5;
            double* dst = &t.at(image, ch, 0, 0);
            for (std::size_t cell = 0; cell < cells; ++cell) dst[cell] = flat[base + (cell * a_per_cell + a) * 5 + j];
        }
        base += cells * a_per_cell * 5;
    }
    if (base != flat.size()) throw ShapeError("flattened gradient length does not match the head layout");
}

// ---- persistence ----------------------------------------------------------

json model_config_to_json(const ModelConfig& c) {
    json blocks = json::array();
    for (const auto& b : c.blocks) blocks.push_back({b.in_channels, b.out_channels, b.expansion, b.stride});
    return {
        {"size_class", to_string(c.size_class)},
        {"input_size", {c.input_h, c.input_w}},
        {"input_gain", c.input_gain},
        {"stem_channels", c.stem_channels},
        {"blocks", blocks},
        {"head_taps", c.head_taps},
        {"anchors",
         {{"feature_map_strides", c.anchors.feature_map_strides},
          {"anchor_scales_px", c.anchors.anchor_scales_px},
          {"aspect_ratios", c.anchors.aspect_ratios}}},
    };
}

ModelConfig model_config_from_json(const json& j) {
    auto field = [&](const json& obj, const char* key) -> const json& {
        if (!obj.is_object() || !obj.contains(key)) throw DataError(std::string("model sidecar: missing key '") + key + "'");
        return obj.at(key);
    };
    try {
        ModelConfig c;
        c.size_class = parse_size_class(field(j, "size_class").get<std::string>());
        const auto& size = field(j, "input_size");
        c.input_h = size.at(0).get<int>();
        c.input_w = size.at(1).get<int>();
        c.input_gain = field(j, "input_gain").get<double>();
        c.stem_channels = field(j, "stem_channels").get<std::size_t>();
        for (const auto& b : field(j, "blocks")) {
            c.blocks.push_back({b.at(0).get<std::size_t>(), b.at(1).get<std::size_t>(), b.at(2).get<std::size_t>(),
                                b.at(3).get<int>()});
        }
        c.head_taps = field(j, "head_taps").get<std::vector<std::size_t>>();
        const auto& a = field(j, "anchors");
        c.anchors.feature_map_strides = field(a, "feature_map_strides").get<std::vector<int>>();
        c.anchors.anchor_scales_px = field(a, "anchor_scales_px").get<std::vector<std::vector<double>>>();
        c.anchors.aspect_ratios = field(a, "aspect_ratios").get<std::vector<double>>();
        c.validate();
        return c;
    } catch (const json::exception& e) {
        throw DataError(std::string("model sidecar: ") + e.what());
    } catch (const ConfigError& e) {
        throw DataError(std::string("model sidecar: ") + e.what());
    }
}

std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint) {
    return std::filesystem::path(checkpoint.string() + ".json");
}

void write_sidecar(const std::filesystem::path& checkpoint, const json& j) {
    std::ofstream out(sidecar_path(checkpoint));
    if (!out) throw DataError("cannot write " + sidecar_path(checkpoint).string());
    out << j.dump(2) << '\n';
    if (!out) throw DataError("failed writing " + sidecar_path(checkpoint).string());
}

json read_sidecar(const std::filesystem::path& checkpoint) {
    if (!std::filesystem::exists(checkpoint)) {
        throw DataError("checkpoint not found: " + checkpoint.string());
    }
    const auto path = sidecar_path(checkpoint);
    std::ifstream in(path);
    if (!in) throw DataError("checkpoint sidecar not found: " + path.string());
    try {
        json j = json::parse(in);
        if (!j.is_object() || j.value("format", "") != kSidecarFormat) {
            throw DataError(path.string() + ": not a satdet model sidecar");
        }
        if (j.value("version", 0) != kSidecarVersion) {
            throw DataError(path.string() + ": unsupported sidecar version");
        }
        return j;
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

Precision checkpoint_precision(const std::filesystem::path& checkpoint) {
    const json j = read_sidecar(checkpoint);
    if (!j.contains("precision")) throw DataError(sidecar_path(checkpoint).string() + ": missing key 'precision'");
    try {
        return parse_precision(j.at("precision").get<std::string>());
    } catch (const ConfigError& e) {
        throw DataError(sidecar_path(checkpoint).string() + ": " + e.what());
    }
}

void save_model(const DetectorModel& model, const std::filesystem::path& path) {
    std::vector<nn::StoredTensor> tensors;
    for (const nn::Param* p : model.params()) {
        tensors.push_back({p->name, p->value.shape(), std::vector<double>(p->value.data().begin(), p->value.data().end())});
    }
    nn::write_container(path, tensors);
    json j = {
        {"format", kSidecarFormat},
        {"version", kSidecarVersion},
        {"precision", to_string(Precision::Float)},
        {"tracking_mode", to_string(model.tracking_mode())},
        {"weights", path.filename().string()},
        {"model", model_config_to_json(model.config())},
    };
    write_sidecar(path, j);
}

DetectorModel load_model(const std::filesystem::path& path) {
    const json j = read_sidecar(path);
    if (checkpoint_precision(path) != Precision::Float) {
        throw DataError(path.string() + " holds a quantized model; the float path cannot run it");
    }
    TrackingMode mode;
    try {
        mode = parse_tracking_mode(j.at("tracking_mode").get<std::string>());
    } catch (const std::exception& e) {
        throw DataError(sidecar_path(path).string() + ": bad tracking_mode: " + e.what());
    }
    DetectorModel model(model_config_from_json(j.at("model")), mode);
    const auto tensors = nn::read_container(path);
    auto params = model.params();
    if (tensors.size() != params.size()) {
        throw DataError(path.string() + ": holds " + std::to_string(tensors.size()) + " tensors, model expects " +
                        std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& t = tensors[i];
        if (t.name != params[i]->name || t.shape != params[i]->value.shape()) {
            throw DataError(path.string() + ": tensor '" + t.name + "' " + nn::shape_string(t.shape) +
                            " does not match parameter '" + params[i]->name + "' " +
                            nn::shape_string(params[i]->value.shape()));
        }
        const auto* values = std::get_if<std::vector<double>>(&t.payload);
        if (!values) throw DataError(path.string() + ": tensor '" + t.name + "' is not float64");
        params[i]->value = nn::Tensor(t.shape, *values);
    }
    return model;
}

} // namespace satdet::det
