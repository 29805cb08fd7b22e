#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "causeq/diagnostics.hpp"
#include "causeq/event_store.hpp"
#include "causeq/hawkes.hpp"
#include "causeq/history.hpp"
#include "causeq/layout.hpp"
#include "causeq/learner.hpp"
#include "causeq/patterns.hpp"

namespace causeq {

using json = nlohmann::json;

// Parse failures throw std::invalid_argument naming the offending key.

// {"V", "mu", "a" (V x V x Z, [effect][cause][z]), "kernels": {"centers", "sigma"}},
// plus "vocabulary" when names are given.
json model_to_json(const HawkesModel& model, const std::vector<std::string>& vocabulary = {});
HawkesModel model_from_json(const json& j);
// Names stored with the model, empty if none.
std::vector<std::string> model_vocabulary(const json& j);

json kernels_to_json(const KernelBank& bank);
KernelBank kernels_from_json(const json& j);

json graph_to_json(const CausalGraph& graph);
CausalGraph graph_from_json(const json& j);

// Missing keys keep their defaults.
json fit_config_to_json(const FitConfig& config);
FitConfig fit_config_from_json(const json& j);

// Pairs as [cause_name, effect_name].
json feedback_to_json(const FeedbackSet& feedback, const std::vector<std::string>& vocabulary);
FeedbackSet feedback_from_json(const json& j, const std::vector<std::string>& vocabulary);

json fit_report_to_json(const FitReport& report);

json diagnostics_to_json(const DiagnosticsRecord& record);
DiagnosticsRecord diagnostics_from_json(const json& j);

json layout_to_json(const LayoutResult& result);
LayoutResult layout_from_json(const json& j);

json patterns_to_json(const PatternSummary& summary, const PatternQuery& q, const std::vector<std::string>& vocabulary);
json path_flow_to_json(const PathFlow& flow, const std::vector<std::string>& vocabulary);

json query_to_json(const Query& q);
Query query_from_json(const json& j);

json coverage_to_json(const std::vector<TypeCoverage>& coverage, const std::vector<std::string>& vocabulary);

json snapshot_to_json(const AnalysisSnapshot& snapshot);
AnalysisSnapshot snapshot_from_json(const json& j);

json comparison_to_json(const Comparison& comparison);

}  // namespace causeq
