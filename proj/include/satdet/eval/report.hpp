#pragma once

#include <span>
#include <string>

#include <json.hpp>

#include "satdet/eval/latency.hpp"
#include "satdet/eval/metrics.hpp"

namespace satdet::eval {

nlohmann::json to_json(const EvalReport& report);
nlohmann::json to_json(const LatencyReport& report);
nlohmann::json to_json(const MatchResult& match);

/// Models as columns, metrics as rows (precision, recall, F1 at threshold).
std::string eval_table(std::span<const EvalReport> reports);
/// Models as columns; mean, std, p50 and p95 latency as rows.
std::string latency_table(std::span<const LatencyReport> reports);

} // namespace satdet::eval
