#include "satdet/quant/quant.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <limits>
#include <sstream>

#if defined(__AVX512VNNI__) && defined(__AVX512BW__)
#include <immintrin.h>
#define SATDET_VNNI 1
#endif

#include "satdet/det/sidecar.hpp"
#include "satdet/error.hpp"
#include "satdet/nn/checkpoint.hpp"
#include "satdet/nn/im2col.hpp"

namespace satdet::quant {

using nlohmann::json;

// ---- scalar mapping -------------------------------------------------------

void QuantParams::validate() const {
    if (!(scale > 0.0) || !std::isfinite(scale)) throw ConfigError("quantization scale must be positive and finite");
    if (zero_point < kQMin || zero_point > kQMax) throw ConfigError("zero point must lie in [-128, 127]");
}

std::int8_t quantize_value(double v, const QuantParams& p) {
    const double q = std::nearbyint(v / p.scale) + p.zero_point;
    return static_cast<std::int8_t>(std::clamp(q, static_cast<double>(kQMin), static_cast<double>(kQMax)));
}

double dequantize_value(std::int8_t q, const QuantParams& p) { return (static_cast<int>(q) - p.zero_point) * p.scale; }

namespace {

template <typename T>
std::vector<std::int8_t> quantize_span(std::span<const T> values, const QuantParams& p) {
    p.validate();
    std::vector<std::int8_t> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = quantize_value(values[i], p);
    return out;
}

} // namespace

std::vector<std::int8_t> quantize_tensor(std::span<const double> values, const QuantParams& p) {
    return quantize_span(values, p);
}
std::vector<std::int8_t> quantize_tensor(std::span<const float> values, const QuantParams& p) {
    return quantize_span(values, p);
}

std::vector<double> dequantize_tensor(std::span<const std::int8_t> payload, const QuantParams& p) {
    std::vector<double> out(payload.size());
    for (std::size_t i = 0; i < payload.size(); ++i) out[i] = dequantize_value(payload[i], p);
    return out;
}

QuantParams activation_params(double min, double max) {
    if (min > max) throw ConfigError("activation range has min > max");
    min = std::min(min, 0.0);
    max = std::max(max, 0.0);
    QuantParams p;
    p.scale = max > min ? (max - min) / (kQMax - kQMin) : kDegenerateScale;
    p.zero_point = static_cast<int>(std::clamp(std::nearbyint(kQMin - min / p.scale), static_cast<double>(kQMin),
                                               static_cast<double>(kQMax)));
    return p;
}

QuantParams weight_params(std::span<const float> weights) {
    double max_abs = 0.0;
    for (float w : weights) max_abs = std::max(max_abs, std::abs(static_cast<double>(w)));
    // An all-zero tensor quantizes to zeros under any scale.
    return {max_abs > 0.0 ? max_abs / kQMax : 1.0, 0};
}

// ---- fixed-point requantization --------------------------------------------

Requant make_requant(double real) {
    if (!(real > 0.0) || !std::isfinite(real)) throw ConfigError("requantization multiplier must be positive");
    int exponent = 0;
    const double frac = std::frexp(real, &exponent);  // real = frac * 2^exponent, frac in [0.5, 1)
    auto m = static_cast<std::int64_t>(std::llround(frac * (1LL << 31)));
    if (m == (1LL << 31)) {
        m /= 2;
        ++exponent;
    }
    Requant r{static_cast<std::int32_t>(m), 31 - exponent};
    if (r.shift > 62) return {0, 1};  // rounds to zero for every int32 accumulator
    return r;
}

std::int32_t apply_requant(std::int64_t acc, const Requant& r) {
    if (r.shift >= 1) {
        const std::int64_t v = (acc * r.multiplier + (std::int64_t{1} << (r.shift - 1))) >> r.shift;
        return static_cast<std::int32_t>(std::clamp<std::int64_t>(v, std::numeric_limits<std::int32_t>::min(),
                                                                  std::numeric_limits<std::int32_t>::max()));
    }
    // Multipliers >= 2^30 only arise from degenerate output ranges.
    const __int128 v = static_cast<__int128>(acc) * r.multiplier * (static_cast<__int128>(1) << -r.shift);
    return static_cast<std::int32_t>(std::clamp<__int128>(v, std::numeric_limits<std::int32_t>::min(),
                                                          std::numeric_limits<std::int32_t>::max()));
}

// ---- calibration ----------------------------------------------------------

void Range::update(std::span<const float> values) {
    if (values.empty()) return;
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    if (!seen) {
        min = *lo;
        max = *hi;
        seen = true;
    } else {
        min = std::min(min, static_cast<double>(*lo));
        max = std::max(max, static_cast<double>(*hi));
    }
}

Calibrator::Calibrator(const det::InferenceGraph& graph) : graph_(&graph) { calib_.ops.resize(graph.ops.size()); }

void Calibrator::add(const Image16& frame) {
    const nn::TensorF x = det::preprocess(frame, graph_->config.input_h, graph_->config.input_w);
    calib_.input.update(x.data());
    det::run_graph(*graph_, x, [&](int op, const nn::TensorF& v) { calib_.ops[static_cast<std::size_t>(op)].update(v.data()); });
    ++calib_.frames;
}

Calibration calibrate(const det::InferenceGraph& graph, std::span<const Image16> frames) {
    if (frames.empty()) throw DataError("calibration needs at least one frame");
    Calibrator c(graph);
    for (const auto& f : frames) c.add(f);
    return c.result();
}

// ---- conversion -----------------------------------------------------------

namespace {

double snr_db(double signal, double noise) {
    if (noise == 0.0) return std::numeric_limits<double>::infinity();
    if (signal == 0.0) return -std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(signal / noise);
}

} // namespace

QuantizedModel convert_model(const det::InferenceGraph& graph, const Calibration& calibration,
                             ConversionReport* report) {
    if (!calibration.input.seen) throw DataError("missing calibration for the graph input");
    if (calibration.ops.size() != graph.ops.size()) {
        throw DataError("calibration covers " + std::to_string(calibration.ops.size()) + " tensors, graph has " +
                        std::to_string(graph.ops.size()));
    }
    QuantizedModel q;
    q.config = graph.config;
    q.tracking_mode = graph.tracking_mode;
    q.input = activation_params(calibration.input.min, calibration.input.max);
    q.outputs = graph.outputs;

    for (std::size_t i = 0; i < graph.ops.size(); ++i) {
        const det::GraphOp& op = graph.ops[i];
        const Range& r = calibration.ops[i];
        if (!r.seen) throw DataError("missing calibration for tensor '" + op.name + "'");
        QuantOp qo;
        qo.kind = op.kind;
        qo.name = op.name;
        qo.input = op.input;
        qo.input2 = op.input2;
        qo.stride = op.stride;
        qo.relu6 = op.relu6;
        qo.out_channels = op.out_channels;
        qo.output = activation_params(r.min, r.max);
        if (op.kind != det::OpKind::Add) {
            const QuantParams in = op.input < 0 ? q.input : q.ops[static_cast<std::size_t>(op.input)].output;
            qo.weight_shape = op.weights.shape();
            qo.weight_params = weight_params(op.weights.data());
            qo.weights = quantize_tensor(op.weights.data(), qo.weight_params);
            const double bias_scale = in.scale * qo.weight_params.scale;
            qo.bias.resize(op.bias.size());
            double bias_signal = 0.0, bias_noise = 0.0, bias_err = 0.0;
            for (std::size_t c = 0; c < op.bias.size(); ++c) {
                const double v = std::clamp(std::nearbyint(op.bias[c] / bias_scale),
                                            static_cast<double>(std::numeric_limits<std::int32_t>::min()),
                                            static_cast<double>(std::numeric_limits<std::int32_t>::max()));
                qo.bias[c] = static_cast<std::int32_t>(v);
                const double e = op.bias[c] - v * bias_scale;
                bias_signal += static_cast<double>(op.bias[c]) * op.bias[c];
                bias_noise += e * e;
                bias_err = std::max(bias_err, std::abs(e));
            }
            if (report) {
                double signal = 0.0, noise = 0.0, max_err = 0.0;
                for (std::size_t k = 0; k < qo.weights.size(); ++k) {
                    const double w = op.weights[k];
                    const double e = w - dequantize_value(qo.weights[k], qo.weight_params);
                    signal += w * w;
                    noise += e * e;
                    max_err = std::max(max_err, std::abs(e));
                }
                report->tensors.push_back({op.name + ".weight", qo.weight_params.scale, 0, snr_db(signal, noise), max_err});
                report->tensors.push_back({op.name + ".bias", bias_scale, 0, snr_db(bias_signal, bias_noise), bias_err});
            }
        }
        q.ops.push_back(std::move(qo));
    }
    return q;
}

std::string conversion_report_table(const ConversionReport& report) {
    std::ostringstream os;
    std::size_t width = 6;
    for (const auto& t : report.tensors) width = std::max(width, t.name.size());
    os << std::left << std::setw(static_cast<int>(width)) << "tensor" << "  " << std::right << std::setw(12) << "scale"
       << "  " << std::setw(10) << "SNR [dB]" << "  " << std::setw(12) << "max |err|" << '\n';
    for (const auto& t : report.tensors) {
        os << std::left << std::setw(static_cast<int>(width)) << t.name << "  " << std::right << std::setw(12)
           << std::setprecision(4) << std::scientific << t.scale << "  " << std::setw(10) << std::fixed
           << std::setprecision(2) << t.snr_db << "  " << std::setw(12) << std::scientific << std::setprecision(3)
           << t.max_abs_error << '\n';
        os.unsetf(std::ios::floatfield);
    }
    return os.str();
}

// ---- integer inference ----------------------------------------------------

namespace {

struct QTensor {
    std::size_t c = 0, h = 0, w = 0;
    std::vector<std::int8_t> data;
};

constexpr std::size_t kTile = 256;

#ifdef SATDET_VNNI

// Weights packed as [M][K4] with K4 = K rounded up to 4, zero padded.
std::vector<std::int8_t> pack_weights(const std::vector<std::int8_t>& w, std::size_t m_rows, std::size_t k_dim,
                                      std::size_t k4) {
    std::vector<std::int8_t> out(m_rows * k4, 0);
    for (std::size_t m = 0; m < m_rows; ++m) std::copy_n(w.data() + m * k_dim, k_dim, out.data() + m * k4);
    return out;
}

// B[K x P] int8 -> [K4/4][P][4] uint8 with +128 offset; padded k rows are 128 (times zero weights).
void pack_activations(const std::int8_t* b, std::size_t k_dim, std::size_t k4, std::size_t p_cols, std::uint8_t* out) {
    for (std::size_t kq = 0; kq < k4 / 4; ++kq) {
        std::uint8_t* dst = out + kq * p_cols * 4;
        for (std::size_t j = 0; j < 4; ++j) {
            const std::size_t k = kq * 4 + j;
            if (k < k_dim) {
                const std::int8_t* row = b + k * p_cols;
                for (std::size_t p = 0; p < p_cols; ++p) dst[p * 4 + j] = static_cast<std::uint8_t>(row[p] ^ 0x80);
            } else {
                for (std::size_t p = 0; p < p_cols; ++p) dst[p * 4 + j] = 0x80;
            }
        }
    }
}

// acc[M x P] += A * (B + 128), A packed by pack_weights, B by pack_activations.
void gemm_vnni(std::size_t m_rows, std::size_t k4, std::size_t p_cols, const std::int8_t* a, const std::uint8_t* b,
               std::int32_t* acc) {
    constexpr std::size_t kMr = 4, kNr = 4;
    const std::size_t kq_n = k4 / 4;
    for (std::size_t p0 = 0; p0 < p_cols; p0 += 16 * kNr) {
        __mmask16 mask[kNr];
        for (std::size_t n = 0; n < kNr; ++n) {
            const std::size_t start = p0 + 16 * n;
            const std::size_t left = start < p_cols ? std::min<std::size_t>(16, p_cols - start) : 0;
            mask[n] = static_cast<__mmask16>((1u << left) - 1u);
        }
        for (std::size_t m0 = 0; m0 < m_rows; m0 += kMr) {
            const std::size_t mr = std::min(kMr, m_rows - m0);
            __m512i c[kMr][kNr];
            for (std::size_t i = 0; i < kMr; ++i)
                for (std::size_t n = 0; n < kNr; ++n)
                    c[i][n] = i < mr ? _mm512_maskz_loadu_epi32(mask[n], acc + (m0 + i) * p_cols + p0 + 16 * n)
                                     : _mm512_setzero_si512();
            for (std::size_t kq = 0; kq < kq_n; ++kq) {
                const std::uint8_t* brow = b + (kq * p_cols + p0) * 4;
                __m512i bv[kNr];
                for (std::size_t n = 0; n < kNr; ++n) bv[n] = _mm512_maskz_loadu_epi32(mask[n], brow + 64 * n);
                for (std::size_t i = 0; i < kMr; ++i) {
                    if (i >= mr) break;
                    std::int32_t quad;
                    std::memcpy(&quad, a + (m0 + i) * k4 + kq * 4, 4);
                    const __m512i av = _mm512_set1_epi32(quad);
                    for (std::size_t n = 0; n < kNr; ++n) c[i][n] = _mm512_dpbusd_epi32(c[i][n], bv[n], av);
                }
            }
            for (std::size_t i = 0; i < mr; ++i)
                for (std::size_t n = 0; n < kNr; ++n)
                    _mm512_mask_storeu_epi32(acc + (m0 + i) * p_cols + p0 + 16 * n, mask[n], c[i][n]);
        }
    }
}

#endif

// acc[M x P] += A[M x K] * B[K x P]. Weights are in [-127, 127], so a pair of
// products fits in int16 and the inner loop runs at 16-bit width.
[[maybe_unused]] void gemm_i8(std::size_t m_rows, std::size_t k_dim, std::size_t p_cols, const std::int8_t* a,
                              const std::int8_t* b, std::int32_t* acc) {
    for (std::size_t p0 = 0; p0 < p_cols; p0 += kTile) {
        const std::size_t pn = std::min(p_cols, p0 + kTile) - p0;
        for (std::size_t m = 0; m < m_rows; ++m) {
            std::int32_t* c = acc + m * p_cols + p0;
            const std::int8_t* arow = a + m * k_dim;
            std::size_t k = 0;
            for (; k + 1 < k_dim; k += 2) {
                const std::int16_t a0 = arow[k], a1 = arow[k + 1];
                const std::int8_t* b0 = b + k * p_cols + p0;
                const std::int8_t* b1 = b0 + p_cols;
                for (std::size_t p = 0; p < pn; ++p) {
                    c[p] += static_cast<std::int16_t>(a0 * b0[p] + a1 * b1[p]);
                }
            }
            if (k < k_dim) {
                const std::int16_t a0 = arow[k];
                const std::int8_t* b0 = b + k * p_cols + p0;
                for (std::size_t p = 0; p < pn; ++p) c[p] += static_cast<std::int16_t>(a0 * b0[p]);
            }
        }
    }
}

// Same result as apply_requant followed by +zp and a clamp to [lo, hi].
void requantize(const std::int32_t* acc, std::size_t n, const Requant& rq, int zp, int lo, int hi, std::int8_t* out) {
    if (rq.shift < 1) {
        for (std::size_t i = 0; i < n; ++i) {
            const std::int32_t v = apply_requant(acc[i], rq) + zp;
            out[i] = static_cast<std::int8_t>(std::clamp(v, lo, hi));
        }
        return;
    }
    const std::int64_t m = rq.multiplier, round = std::int64_t{1} << (rq.shift - 1);
    const int shift = rq.shift;
    const std::int64_t vlo = lo - zp, vhi = hi - zp;
    for (std::size_t i = 0; i < n; ++i) {
        const std::int64_t v = (static_cast<std::int64_t>(acc[i]) * m + round) >> shift;
        out[i] = static_cast<std::int8_t>(std::clamp(v, vlo, vhi) + zp);
    }
}

} // namespace

struct QuantizedDetector::Prepared {
    QuantParams in;
    QuantParams in2;
    std::vector<std::int32_t> bias_eff;
    Requant rq;
    Requant rq1, rq2, rq_out;
    int lo = kQMin;
    int hi = kQMax;
    std::size_t k4 = 0;                 // packed reduction length (conv, VNNI only)
    std::vector<std::int8_t> wpack;
};

QuantizedDetector::~QuantizedDetector() = default;
QuantizedDetector::QuantizedDetector(QuantizedDetector&&) noexcept = default;
QuantizedDetector& QuantizedDetector::operator=(QuantizedDetector&&) noexcept = default;

QuantizedDetector::QuantizedDetector(QuantizedModel model) : model_(std::move(model)) {
    model_.config.validate();
    anchors_ = det::build_anchors(model_.config.anchors, model_.config.input_h, model_.config.input_w);
    last_use_.assign(model_.ops.size(), -1);
    for (std::size_t i = 0; i < model_.ops.size(); ++i) {
        const QuantOp& op = model_.ops[i];
        for (int src : {op.input, op.input2}) {
            if (src >= static_cast<int>(i)) throw DataError("quantized graph is not topologically ordered");
            if (src >= 0) last_use_[static_cast<std::size_t>(src)] = static_cast<int>(i);
        }
    }
    for (int o : model_.outputs) last_use_.at(static_cast<std::size_t>(o)) = static_cast<int>(model_.ops.size());

    auto params_of = [&](int idx) { return idx < 0 ? model_.input : model_.ops[static_cast<std::size_t>(idx)].output; };
    for (const QuantOp& op : model_.ops) {
        Prepared p;
        p.in = params_of(op.input);
        if (op.relu6) {
            p.lo = std::max(kQMin, op.output.zero_point);
            p.hi = static_cast<int>(std::min<double>(kQMax, op.output.zero_point + std::nearbyint(6.0 / op.output.scale)));
        }
        if (op.kind == det::OpKind::Add) {
            p.in2 = params_of(op.input2);
            constexpr int kLeftShift = 20;
            const double twice_max = 2.0 * std::max(p.in.scale, p.in2.scale);
            p.rq1 = make_requant(p.in.scale / twice_max);
            p.rq2 = make_requant(p.in2.scale / twice_max);
            p.rq_out = make_requant(twice_max / (static_cast<double>(1 << kLeftShift) * op.output.scale));
        } else {
            const std::size_t cout = op.weight_shape.at(0);
            const std::size_t per_out = op.weights.size() / cout;
            p.rq = make_requant(p.in.scale * op.weight_params.scale / op.output.scale);
            p.bias_eff = op.bias;
            // Fold -zx * sum(w) into the bias; depthwise subtracts zx up front instead.
            if (op.kind == det::OpKind::Conv) {
#ifdef SATDET_VNNI
                constexpr std::int64_t kOffset = 128;  // the kernel sees activations as x + 128
#else
                constexpr std::int64_t kOffset = 0;
#endif
                for (std::size_t co = 0; co < cout; ++co) {
                    std::int64_t s = 0;
                    for (std::size_t k = 0; k < per_out; ++k) s += op.weights[co * per_out + k];
                    p.bias_eff[co] -= static_cast<std::int32_t>((p.in.zero_point + kOffset) * s);
                }
#ifdef SATDET_VNNI
                p.k4 = (per_out + 3) / 4 * 4;
                p.wpack = pack_weights(op.weights, cout, per_out, p.k4);
#endif
            }
        }
        prepared_.push_back(std::move(p));
    }
}

std::vector<float> QuantizedDetector::predict(const Image16& image) const {
    const auto& cfg = model_.config;
    const nn::TensorF x = det::preprocess(image, cfg.input_h, cfg.input_w);
    QTensor input{1, static_cast<std::size_t>(cfg.input_h), static_cast<std::size_t>(cfg.input_w),
                  quantize_tensor(x.data(), model_.input)};

    std::vector<QTensor> values(model_.ops.size());
    std::vector<std::int8_t> col;
    std::vector<std::int32_t> acc;
    std::vector<std::int16_t> shifted;
    [[maybe_unused]] std::vector<std::uint8_t> packed;
    auto operand = [&](int idx) -> const QTensor& { return idx < 0 ? input : values[static_cast<std::size_t>(idx)]; };

    for (std::size_t i = 0; i < model_.ops.size(); ++i) {
        const QuantOp& op = model_.ops[i];
        const Prepared& pp = prepared_[i];
        const QTensor& a = operand(op.input);
        QTensor y;
        switch (op.kind) {
        case det::OpKind::Conv: {
            const std::size_t cout = op.weight_shape[0], kh = op.weight_shape[2], kw = op.weight_shape[3];
            if (op.weight_shape[1] != a.c) throw ShapeError(op.name + ": input channel mismatch");
            const auto g = nn::conv_geometry(a.h, a.w, kh, kw, op.stride, nn::Padding::Same);
            const std::size_t k_dim = a.c * kh * kw, plane = g.out_h * g.out_w;
            const std::int8_t* src = a.data.data();
            if (!(kh == 1 && kw == 1 && op.stride == 1)) {
                col.resize(k_dim * plane);
                nn::im2col(a.data.data(), a.c, a.h, a.w, kh, kw, op.stride, g,
                           static_cast<std::int8_t>(pp.in.zero_point), col.data());
                src = col.data();
            }
            acc.resize(cout * plane);
            for (std::size_t co = 0; co < cout; ++co) std::fill_n(acc.data() + co * plane, plane, pp.bias_eff[co]);
#ifdef SATDET_VNNI
            packed.resize(pp.k4 * plane);
            pack_activations(src, k_dim, pp.k4, plane, packed.data());
            gemm_vnni(cout, pp.k4, plane, pp.wpack.data(), packed.data(), acc.data());
#else
            gemm_i8(cout, k_dim, plane, op.weights.data(), src, acc.data());
#endif
            y = {cout, g.out_h, g.out_w, std::vector<std::int8_t>(cout * plane)};
            requantize(acc.data(), acc.size(), pp.rq, op.output.zero_point, pp.lo, pp.hi, y.data.data());
            break;
        }
        case det::OpKind::Depthwise: {
            const std::size_t kh = op.weight_shape[2], kw = op.weight_shape[3];
            if (op.weight_shape[0] != a.c) throw ShapeError(op.name + ": channel mismatch");
            const auto g = nn::conv_geometry(a.h, a.w, kh, kw, op.stride, nn::Padding::Same);
            const std::size_t plane = g.out_h * g.out_w;
            y = {a.c, g.out_h, g.out_w, std::vector<std::int8_t>(a.c * plane)};
            shifted.resize(a.h * a.w);
            acc.resize(plane);
            for (std::size_t c = 0; c < a.c; ++c) {
                const std::int8_t* xc = a.data.data() + c * a.h * a.w;
                for (std::size_t k = 0; k < a.h * a.w; ++k) {
                    shifted[k] = static_cast<std::int16_t>(xc[k] - pp.in.zero_point);
                }
                std::fill(acc.begin(), acc.end(), pp.bias_eff[c]);
                const std::int8_t* wc = op.weights.data() + c * kh * kw;
                for (std::size_t ky = 0; ky < kh; ++ky) {
                    for (std::size_t kx = 0; kx < kw; ++kx) {
                        const std::int16_t wv = wc[ky * kw + kx];
                        std::size_t lo = 0, hi = 0;
                        nn::tap_range(kx, g.pad_left, op.stride, a.w, g.out_w, lo, hi);
                        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * op.stride +
                                                      static_cast<std::ptrdiff_t>(ky) -
                                                      static_cast<std::ptrdiff_t>(g.pad_top);
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(a.h)) continue;
                            const std::ptrdiff_t base = iy * static_cast<std::ptrdiff_t>(a.w) +
                                                        static_cast<std::ptrdiff_t>(kx) -
                                                        static_cast<std::ptrdiff_t>(g.pad_left);
                            const std::int16_t* s = shifted.data() + base + static_cast<std::ptrdiff_t>(lo) * op.stride;
                            std::int32_t* d = acc.data() + oy * g.out_w + lo;
                            const std::size_t count = hi - lo;
                            if (op.stride == 1) {
                                for (std::size_t t = 0; t < count; ++t) d[t] += wv * s[t];
                            } else {
                                for (std::size_t t = 0; t < count; ++t) d[t] += wv * s[2 * t];
                            }
                        }
                    }
                }
                requantize(acc.data(), plane, pp.rq, op.output.zero_point, pp.lo, pp.hi, y.data.data() + c * plane);
            }
            break;
        }
        case det::OpKind::Add: {
            const QTensor& b = operand(op.input2);
            if (a.c != b.c || a.h != b.h || a.w != b.w) throw ShapeError(op.name + ": operand shapes differ");
            y = {a.c, a.h, a.w, std::vector<std::int8_t>(a.data.size())};
            if (pp.rq1.shift < 1 || pp.rq2.shift < 1 || pp.rq_out.shift < 1) {
                for (std::size_t k = 0; k < a.data.size(); ++k) {
                    const std::int32_t s1 = apply_requant(static_cast<std::int64_t>(a.data[k] - pp.in.zero_point) << 20, pp.rq1);
                    const std::int32_t s2 = apply_requant(static_cast<std::int64_t>(b.data[k] - pp.in2.zero_point) << 20, pp.rq2);
                    const std::int32_t v = apply_requant(static_cast<std::int64_t>(s1) + s2, pp.rq_out) + op.output.zero_point;
                    y.data[k] = static_cast<std::int8_t>(std::clamp(v, pp.lo, pp.hi));
                }
                break;
            }
            // Inputs are at most 255 << 20 and rq1, rq2 are <= 0.5, so the
            // int32 clamps inside apply_requant never bind on s1, s2.
            const auto rounded = [](std::int64_t v, const Requant& r) {
                return (v * r.multiplier + (std::int64_t{1} << (r.shift - 1))) >> r.shift;
            };
            const std::int64_t vlo = pp.lo - op.output.zero_point, vhi = pp.hi - op.output.zero_point;
            const std::int64_t za = pp.in.zero_point, zb = pp.in2.zero_point;
            for (std::size_t k = 0; k < a.data.size(); ++k) {
                const std::int64_t s1 = rounded((a.data[k] - za) * (std::int64_t{1} << 20), pp.rq1);
                const std::int64_t s2 = rounded((b.data[k] - zb) * (std::int64_t{1} << 20), pp.rq2);
                const std::int64_t v = std::clamp(rounded(s1 + s2, pp.rq_out), vlo, vhi);
                y.data[k] = static_cast<std::int8_t>(v + op.output.zero_point);
            }
            break;
        }
        }
        values[i] = std::move(y);
        for (int src : {op.input, op.input2}) {
            if (src >= 0 && last_use_[static_cast<std::size_t>(src)] == static_cast<int>(i)) {
                values[static_cast<std::size_t>(src)] = QTensor{};
            }
        }
    }

    std::vector<nn::TensorF> heads;
    for (int o : model_.outputs) {
        const QTensor& t = values[static_cast<std::size_t>(o)];
        const QuantParams& p = model_.ops[static_cast<std::size_t>(o)].output;
        nn::TensorF f({1, t.c, t.h, t.w});
        for (std::size_t k = 0; k < t.data.size(); ++k) f[k] = static_cast<float>(dequantize_value(t.data[k], p));
        heads.push_back(std::move(f));
    }
    return det::flatten_head_outputs(heads, cfg, 0);
}

std::vector<Detection> QuantizedDetector::detect(const Image16& image, const det::DetectOptions& options) const {
    return det::decode_detections(predict(image), anchors_, model_.config, image.width(), image.height(), options);
}

// ---- persistence ----------------------------------------------------------

namespace {

std::string_view kind_name(det::OpKind k) {
    switch (k) {
    case det::OpKind::Conv: return "conv";
    case det::OpKind::Depthwise: return "depthwise";
    case det::OpKind::Add: return "add";
    }
    return "conv";
}

det::OpKind parse_kind(const std::string& s) {
    if (s == "conv") return det::OpKind::Conv;
    if (s == "depthwise") return det::OpKind::Depthwise;
    if (s == "add") return det::OpKind::Add;
    throw DataError("unknown op kind '" + s + "'");
}

json params_json(const QuantParams& p) { return {{"scale", p.scale}, {"zero_point", p.zero_point}}; }

QuantParams params_from(const json& j) {
    QuantParams p{j.at("scale").get<double>(), j.at("zero_point").get<int>()};
    try {
        p.validate();
    } catch (const ConfigError& e) {
        throw DataError(e.what());
    }
    return p;
}

} // namespace

void save_quantized(const QuantizedModel& model, const std::filesystem::path& path) {
    std::vector<nn::StoredTensor> tensors;
    json ops = json::array();
    for (const QuantOp& op : model.ops) {
        json o = {{"name", op.name},     {"kind", kind_name(op.kind)}, {"input", op.input},
                  {"input2", op.input2}, {"stride", op.stride},        {"relu6", op.relu6},
                  {"out_channels", op.out_channels}, {"output", params_json(op.output)}};
        if (op.kind != det::OpKind::Add) {
            o["weight"] = params_json(op.weight_params);
            tensors.push_back({op.name + ".weight", op.weight_shape, op.weights});
            tensors.push_back({op.name + ".bias", {op.bias.size()}, op.bias});
        }
        ops.push_back(std::move(o));
    }
    nn::write_container(path, tensors);
    json j = {
        {"format", "satdet-model"},
        {"version", 1},
        {"precision", det::to_string(det::Precision::Quantized)},
        {"tracking_mode", to_string(model.tracking_mode)},
        {"weights", path.filename().string()},
        {"model", det::model_config_to_json(model.config)},
        {"quantization", {{"input", params_json(model.input)}, {"ops", ops}, {"outputs", model.outputs}}},
    };
    det::write_sidecar(path, j);
}

QuantizedModel load_quantized(const std::filesystem::path& path) {
    const json j = det::read_sidecar(path);
    if (det::checkpoint_precision(path) != det::Precision::Quantized) {
        throw DataError(path.string() + " holds a float model; the quantized path cannot run it");
    }
    const std::string where = det::sidecar_path(path).string();
    QuantizedModel q;
    try {
        q.config = det::model_config_from_json(j.at("model"));
        q.tracking_mode = parse_tracking_mode(j.at("tracking_mode").get<std::string>());
        const json& qj = j.at("quantization");
        q.input = params_from(qj.at("input"));
        q.outputs = qj.at("outputs").get<std::vector<int>>();
        for (const json& o : qj.at("ops")) {
            QuantOp op;
            op.name = o.at("name").get<std::string>();
            op.kind = parse_kind(o.at("kind").get<std::string>());
            op.input = o.at("input").get<int>();
            op.input2 = o.at("input2").get<int>();
            op.stride = o.at("stride").get<int>();
            op.relu6 = o.at("relu6").get<bool>();
            op.out_channels = o.at("out_channels").get<std::size_t>();
            op.output = params_from(o.at("output"));
            if (op.kind != det::OpKind::Add) op.weight_params = params_from(o.at("weight"));
            q.ops.push_back(std::move(op));
        }
    } catch (const json::exception& e) {
        throw DataError(where + ": " + e.what());
    } catch (const std::invalid_argument& e) {
        throw DataError(where + ": " + e.what());
    }

    // The topology must match the float graph the config describes.
    const det::InferenceGraph ref = det::fold_model(det::DetectorModel(q.config, q.tracking_mode));
    if (ref.ops.size() != q.ops.size() || ref.outputs != q.outputs) {
        throw DataError(where + ": op list does not match the model config");
    }
    const auto tensors = nn::read_container(path);
    std::size_t t = 0;
    for (std::size_t i = 0; i < q.ops.size(); ++i) {
        QuantOp& op = q.ops[i];
        const det::GraphOp& r = ref.ops[i];
        if (op.name != r.name || op.kind != r.kind || op.input != r.input || op.input2 != r.input2 ||
            op.stride != r.stride || op.relu6 != r.relu6) {
            throw DataError(where + ": op '" + op.name + "' does not match the model config");
        }
        if (op.kind == det::OpKind::Add) continue;
        if (t + 2 > tensors.size()) throw DataError(path.string() + ": too few tensors");
        const auto& w = tensors[t++];
        const auto& b = tensors[t++];
        const auto* wv = std::get_if<std::vector<std::int8_t>>(&w.payload);
        const auto* bv = std::get_if<std::vector<std::int32_t>>(&b.payload);
        if (w.name != op.name + ".weight" || !wv || w.shape != r.weights.shape()) {
            throw DataError(path.string() + ": bad weight tensor for '" + op.name + "'");
        }
        if (b.name != op.name + ".bias" || !bv || bv->size() != r.bias.size()) {
            throw DataError(path.string() + ": bad bias tensor for '" + op.name + "'");
        }
        op.weight_shape = w.shape;
        op.weights = *wv;
        op.bias = *bv;
    }
    if (t != tensors.size()) throw DataError(path.string() + ": unexpected extra tensors");
    return q;
}

} // namespace satdet::quant
