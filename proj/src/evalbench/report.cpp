#include "satdet/eval/report.hpp"

#include <algorithm>
#include <cstdio>
#include <functional>
#include <vector>

namespace satdet::eval {

using nlohmann::json;

json to_json(const MatchResult& m) {
    json pairs = json::array();
    for (const auto& p : m.matched_pairs) pairs.push_back({{"detection", p.detection}, {"ground_truth", p.ground_truth}, {"iou", p.iou}});
    return {{"tp", m.tp}, {"fp", m.fp}, {"fn", m.fn}, {"matched_pairs", pairs}};
}

json to_json(const EvalReport& r) {
    json frames = json::array();
    for (const auto& f : r.frames) frames.push_back({{"id", f.id}, {"tp", f.tp}, {"fp", f.fp}, {"fn", f.fn}});
    return {{"name", r.name},
            {"precision", r.precision},
            {"recall", r.recall},
            {"f1", r.f1},
            {"confidence_threshold", r.confidence_threshold},
            {"iou_match_threshold", r.iou_match_threshold},
            {"tp", r.tp},
            {"fp", r.fp},
            {"fn", r.fn},
            {"n_frames", r.n_frames},
            {"n_targets", r.n_targets},
            {"frames", frames}};
}

json to_json(const LatencyReport& r) {
    return {{"name", r.name}, {"n_images", r.n_images}, {"mean_s", r.mean_s},
            {"std_s", r.std_s}, {"p50_s", r.p50_s},       {"p95_s", r.p95_s}};
}

namespace {

std::string fmt(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

std::string render(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::size_t> width(header.size(), 0);
    auto widen = [&](const std::vector<std::string>& r) {
        for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
    };
    widen(header);
    for (const auto& r : rows) widen(r);
    std::string out;
    auto line = [&](const std::vector<std::string>& r) {
        for (std::size_t i = 0; i < r.size(); ++i) {
            out += i == 0 ? "" : " | ";
            const std::string pad(width[i] - r[i].size(), ' ');
            out += i == 0 ? r[i] + pad : pad + r[i];
        }
        out += '\n';
    };
    line(header);
    std::string rule;
    for (std::size_t i = 0; i < width.size(); ++i) rule += (i ? "-+-" : "") + std::string(width[i], '-');
    out += rule + '\n';
    for (const auto& r : rows) line(r);
    return out;
}

} // namespace

std::string eval_table(std::span<const EvalReport> reports) {
    std::vector<std::string> header{"Model"};
    for (const auto& r : reports) header.push_back(r.name.empty() ? "model" : r.name);
    auto row = [&](std::string label, const std::function<std::string(const EvalReport&)>& f) {
        std::vector<std::string> r{std::move(label)};
        for (const auto& rep : reports) r.push_back(f(rep));
        return r;
    };
    const double thr = reports.empty() ? 0.0 : reports.front().confidence_threshold;
    return render(header,
                  {row("Precision", [](const EvalReport& r) { return fmt("%.4f", r.precision); }),
                   row("Recall", [](const EvalReport& r) { return fmt("%.4f", r.recall); }),
                   row("F1 (threshold = " + fmt("%g", thr) + ")", [](const EvalReport& r) { return fmt("%.4f", r.f1); }),
                   row("TP / FP / FN",
                       [](const EvalReport& r) {
                           return std::to_string(r.tp) + " / " + std::to_string(r.fp) + " / " + std::to_string(r.fn);
                       }),
                   row("Frames / targets", [](const EvalReport& r) {
                       return std::to_string(r.n_frames) + " / " + std::to_string(r.n_targets);
                   })});
}

std::string latency_table(std::span<const LatencyReport> reports) {
    std::vector<std::string> header{"Model"};
    for (const auto& r : reports) header.push_back(r.name.empty() ? "model" : r.name);
    auto row = [&](std::string label, double LatencyReport::*field) {
        std::vector<std::string> r{std::move(label)};
        for (const auto& rep : reports) r.push_back(fmt("%.5f", rep.*field));
        return r;
    };
    std::vector<std::string> count{"Images"};
    for (const auto& rep : reports) count.push_back(std::to_string(rep.n_images));
    return render(header, {row("Average inference time [s]", &LatencyReport::mean_s),
                           row("Std [s]", &LatencyReport::std_s), row("p50 [s]", &LatencyReport::p50_s),
                           row("p95 [s]", &LatencyReport::p95_s), count});
}

} // namespace satdet::eval
