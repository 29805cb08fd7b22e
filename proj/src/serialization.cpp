#include "causeq/serialization.hpp"

#include <cmath>
#include <limits>

namespace causeq {

namespace {

const json& field(const json& j, const char* key) {
    if (!j.is_object() || !j.contains(key)) throw std::invalid_argument(std::string("missing key '") + key + "'");
    return j.at(key);
}

template <typename T>
T get(const json& j, const char* key) {
    try {
        return field(j, key).get<T>();
    } catch (const json::exception&) {
        throw std::invalid_argument(std::string("bad value for key '") + key + "'");
    }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.is_object() || !j.contains(key) || j.at(key).is_null()) return fallback;
    return get<T>(j, key);
}

// json has no infinity; null stands in for a non-finite number.
json number(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

double number_from(const json& j, const char* key, double if_null) {
    const json& v = field(j, key);
    if (v.is_null()) return if_null;
    if (!v.is_number()) throw std::invalid_argument(std::string("bad value for key '") + key + "'");
    return v.get<double>();
}

std::string name_of(const std::vector<std::string>& vocabulary, TypeId id) {
    if (id < vocabulary.size()) return vocabulary[id];
    return "e" + std::to_string(id);
}

TypeId id_of(const std::vector<std::string>& vocabulary, const json& name) {
    if (!name.is_string()) throw std::invalid_argument("event names must be strings");
    const auto s = name.get<std::string>();
    for (TypeId v = 0; v < vocabulary.size(); ++v)
        if (vocabulary[v] == s) return v;
    throw std::invalid_argument("unknown event type '" + s + "'");
}

json attribute_to_json(const AttributeValue& value) {
    if (const auto* d = std::get_if<double>(&value)) return *d;
    return std::get<std::string>(value);
}

AttributeValue attribute_from_json(const json& j) {
    if (j.is_number()) return j.get<double>();
    if (j.is_string()) return j.get<std::string>();
    throw std::invalid_argument("attribute values must be numbers or strings");
}

std::set<TypePair> pairs_from_json(const json& j, const char* key, const std::vector<std::string>& vocabulary) {
    std::set<TypePair> out;
    if (!j.contains(key)) return out;
    const json& list = j.at(key);
    if (!list.is_array()) throw std::invalid_argument(std::string("'") + key + "' must be an array");
    for (const auto& pair : list) {
        if (!pair.is_array() || pair.size() != 2)
            throw std::invalid_argument(std::string("'") + key + "' entries must be [cause, effect]");
        out.insert({id_of(vocabulary, pair[0]), id_of(vocabulary, pair[1])});
    }
    return out;
}

}  // namespace

json kernels_to_json(const KernelBank& bank) { return {{"centers", bank.centers}, {"sigma", bank.sigma}}; }

KernelBank kernels_from_json(const json& j) {
    KernelBank bank;
    bank.centers = get<std::vector<double>>(j, "centers");
    bank.sigma = get<double>(j, "sigma");
    bank.validate();
    return bank;
}

json model_to_json(const HawkesModel& model, const std::vector<std::string>& vocabulary) {
    const std::size_t V = model.num_types(), Z = model.num_kernels();
    json a = json::array();
    for (std::size_t e = 0; e < V; ++e) {
        json row = json::array();
        for (std::size_t c = 0; c < V; ++c) {
            const auto g = model.group(e, c);
            row.push_back(std::vector<double>(g.begin(), g.begin() + static_cast<std::ptrdiff_t>(Z)));
        }
        a.push_back(std::move(row));
    }
    json j = {{"V", V}, {"mu", model.baselines()}, {"a", std::move(a)}, {"kernels", kernels_to_json(model.kernels())}};
    if (!vocabulary.empty()) {
        if (vocabulary.size() != V) throw std::invalid_argument("vocabulary size differs from the model");
        j["vocabulary"] = vocabulary;
    }
    return j;
}

HawkesModel model_from_json(const json& j) {
    const auto V = get<std::size_t>(j, "V");
    const KernelBank bank = kernels_from_json(field(j, "kernels"));
    HawkesModel model(V, bank);
    const auto mu = get<std::vector<double>>(j, "mu");
    if (mu.size() != V) throw std::invalid_argument("'mu' must have V entries");
    for (std::size_t v = 0; v < V; ++v) model.mu(v) = mu[v];
    const auto a = get<std::vector<std::vector<std::vector<double>>>>(j, "a");
    if (a.size() != V) throw std::invalid_argument("'a' must be V x V x Z");
    for (std::size_t e = 0; e < V; ++e) {
        if (a[e].size() != V) throw std::invalid_argument("'a' must be V x V x Z");
        for (std::size_t c = 0; c < V; ++c) {
            if (a[e][c].size() != bank.size()) throw std::invalid_argument("'a' must be V x V x Z");
            for (std::size_t z = 0; z < bank.size(); ++z) model.a(e, c, z) = a[e][c][z];
        }
    }
    model.validate();
    if (j.contains("vocabulary") && model_vocabulary(j).size() != V)
        throw std::invalid_argument("'vocabulary' must have V entries");
    return model;
}

std::vector<std::string> model_vocabulary(const json& j) {
    if (!j.contains("vocabulary")) return {};
    return get<std::vector<std::string>>(j, "vocabulary");
}

json graph_to_json(const CausalGraph& graph) {
    json edges = json::array();
    for (const auto& e : graph.edges)
        edges.push_back({{"cause", name_of(graph.nodes, e.cause)},
                         {"effect", name_of(graph.nodes, e.effect)},
                         {"strength", e.strength},
                         {"coverage", e.coverage},
                         {"confirmed", e.confirmed},
                         {"removed", e.removed}});
    return {{"nodes", graph.nodes}, {"edges", std::move(edges)}};
}

CausalGraph graph_from_json(const json& j) {
    CausalGraph graph;
    graph.nodes = get<std::vector<std::string>>(j, "nodes");
    const json& edges = field(j, "edges");
    if (!edges.is_array()) throw std::invalid_argument("'edges' must be an array");
    for (const auto& e : edges) {
        CausalEdge edge;
        edge.cause = id_of(graph.nodes, field(e, "cause"));
        edge.effect = id_of(graph.nodes, field(e, "effect"));
        edge.strength = get<double>(e, "strength");
        edge.coverage = get<double>(e, "coverage");
        edge.confirmed = get_or<bool>(e, "confirmed", false);
        edge.removed = get_or<bool>(e, "removed", false);
        graph.edges.push_back(edge);
    }
    graph.validate();
    return graph;
}

json fit_config_to_json(const FitConfig& config) {
    return {{"alpha", config.alpha},
            {"alpha_u", config.alpha_u},
            {"max_iters", config.max_iters},
            {"tol", config.tol},
            {"seed", config.seed}};
}

FitConfig fit_config_from_json(const json& j) {
    if (!j.is_object()) throw std::invalid_argument("config must be an object");
    FitConfig config;
    config.alpha = get_or<double>(j, "alpha", config.alpha);
    config.alpha_u = get_or<double>(j, "alpha_u", config.alpha_u);
    config.max_iters = get_or<std::size_t>(j, "max_iters", config.max_iters);
    config.tol = get_or<double>(j, "tol", config.tol);
    config.seed = get_or<std::uint64_t>(j, "seed", config.seed);
    config.validate();
    return config;
}

json feedback_to_json(const FeedbackSet& feedback, const std::vector<std::string>& vocabulary) {
    const auto pairs = [&](const std::set<TypePair>& set) {
        json out = json::array();
        for (const auto& [c, e] : set) out.push_back({name_of(vocabulary, c), name_of(vocabulary, e)});
        return out;
    };
    return {{"confirmed", pairs(feedback.confirmed())}, {"removed", pairs(feedback.removed())}};
}

FeedbackSet feedback_from_json(const json& j, const std::vector<std::string>& vocabulary) {
    if (!j.is_object()) throw std::invalid_argument("feedback must be an object");
    return FeedbackSet(pairs_from_json(j, "confirmed", vocabulary), pairs_from_json(j, "removed", vocabulary));
}

json fit_report_to_json(const FitReport& report) {
    json trace = json::array();
    for (double x : report.objective_trace) trace.push_back(number(x));
    return {{"objective_trace", std::move(trace)},
            {"iterations_run", report.iterations_run},
            {"converged", report.converged},
            {"final_nll", number(report.final_nll)},
            {"warnings", report.warnings}};
}

json diagnostics_to_json(const DiagnosticsRecord& record) {
    return {{"iter", record.iteration},
            {"nll_mean", number(record.nll_mean)},
            {"nll_std", number(record.nll_std)},
            {"bic", number(record.bic)},
            {"delta_bic_sign", to_string(record.delta_bic_sign)},
            {"p", number(record.p_value)},
            {"auroc", record.auroc ? json(*record.auroc) : json(nullptr)},
            {"log_likelihood", number(record.log_likelihood)},
            {"num_parameters", record.num_parameters}};
}

DiagnosticsRecord diagnostics_from_json(const json& j) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    DiagnosticsRecord r;
    r.iteration = get<std::size_t>(j, "iter");
    r.nll_mean = number_from(j, "nll_mean", inf);
    r.nll_std = number_from(j, "nll_std", 0.0);
    r.bic = number_from(j, "bic", inf);
    r.delta_bic_sign = bic_change_from_string(get_or<std::string>(j, "delta_bic_sign", "first"));
    r.p_value = number_from(j, "p", 1.0);
    if (j.contains("auroc") && !j.at("auroc").is_null()) r.auroc = get<double>(j, "auroc");
    if (j.contains("log_likelihood")) r.log_likelihood = number_from(j, "log_likelihood", -inf);
    r.num_parameters = get_or<std::size_t>(j, "num_parameters", 0);
    return r;
}

json layout_to_json(const LayoutResult& result) {
    json positions = json::object();
    for (const auto& [name, p] : result.positions) positions[name] = {p.x, p.y};
    json trace = json::array();
    for (double x : result.objective_trace) trace.push_back(number(x));
    return {{"positions", std::move(positions)},
            {"depths", result.depths},
            {"circles", result.circles},
            {"stress", number(result.stress)},
            {"crowded", result.crowded},
            {"objective_trace", std::move(trace)}};
}

LayoutResult layout_from_json(const json& j) {
    LayoutResult result;
    const json& positions = field(j, "positions");
    if (!positions.is_object()) throw std::invalid_argument("'positions' must be an object");
    for (const auto& [name, p] : positions.items()) {
        if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
            throw std::invalid_argument("positions must be [x, y]");
        result.positions[name] = Point{p[0].get<double>(), p[1].get<double>()};
    }
    result.depths = get<std::map<std::string, int>>(j, "depths");
    result.circles = get<std::vector<std::vector<std::string>>>(j, "circles");
    result.stress = get<double>(j, "stress");
    result.crowded = get_or<bool>(j, "crowded", false);
    if (j.contains("objective_trace")) result.objective_trace = get<std::vector<double>>(j, "objective_trace");
    return result;
}

json patterns_to_json(const PatternSummary& summary, const PatternQuery& q, const std::vector<std::string>& vocabulary) {
    std::vector<std::string> potential;
    for (TypeId v : q.potential_causes) potential.push_back(name_of(vocabulary, v));

    json rows = json::array();
    for (const auto& row : summary.rows) {
        json anchors = json::array();
        json times = json::object();
        for (std::size_t k = 0; k < row.anchors.size(); ++k) {
            if (!row.anchors[k]) continue;
            anchors.push_back(potential[k]);
            times[potential[k]] = row.anchor_times[k];
        }
        rows.push_back({{"id", row.sequence_id},
                        {"sequence_index", row.sequence_index},
                        {"category", to_string(row.category)},
                        {"reference_time", row.reference_time},
                        {"anchors", std::move(anchors)},
                        {"anchor_times", std::move(times)}});
    }
    json groups = json::object();
    for (const auto& [category, count] : summary.groups) groups[to_string(category)] = count;
    json aggregates = json::array();
    for (const auto& a : summary.aggregates)
        aggregates.push_back({{"cause", potential.at(a.cause)}, {"row_start", a.row_start}, {"row_end", a.row_end}});
    json columns = json::array();
    for (TypeId k : summary.columns) columns.push_back(potential.at(k));
    json likelihood = json::object();
    for (const auto& [category, score] : summary.group_likelihood) likelihood[to_string(category)] = number(score);

    return {{"cause", name_of(vocabulary, q.cause)},
            {"effect", name_of(vocabulary, q.effect)},
            {"window", q.window},
            {"potential_causes", std::move(potential)},
            {"rows", std::move(rows)},
            {"order", summary.order},
            {"groups", std::move(groups)},
            {"aggregates", std::move(aggregates)},
            {"columns", std::move(columns)},
            {"group_likelihood", std::move(likelihood)}};
}

json path_flow_to_json(const PathFlow& flow, const std::vector<std::string>& vocabulary) {
    json steps = json::array();
    for (const auto& s : flow.steps)
        steps.push_back({{"from", name_of(vocabulary, s.from)},
                         {"to", name_of(vocabulary, s.to)},
                         {"continued", s.continued},
                         {"dropped", s.dropped}});
    return {{"started", flow.started}, {"steps", std::move(steps)}};
}

json query_to_json(const Query& q) {
    json filters = json::array();
    for (const auto& f : q.attribute_filters) {
        json entry = {{"field", f.field}};
        switch (f.op) {
            case AttributeFilter::Op::equals:
                entry["op"] = "equals";
                entry["value"] = f.values.empty() ? json(nullptr) : attribute_to_json(f.values.front());
                break;
            case AttributeFilter::Op::in_set: {
                entry["op"] = "in";
                json values = json::array();
                for (const auto& v : f.values) values.push_back(attribute_to_json(v));
                entry["values"] = std::move(values);
                break;
            }
            case AttributeFilter::Op::numeric_range:
                entry["op"] = "range";
                entry["low"] = f.low;
                entry["high"] = f.high;
                break;
        }
        filters.push_back(std::move(entry));
    }
    return {{"include_events", q.include_events},
            {"exclude_events", q.exclude_events},
            {"attribute_filters", std::move(filters)},
            {"use_major_cluster", q.use_major_cluster}};
}

Query query_from_json(const json& j) {
    if (!j.is_object()) throw std::invalid_argument("query must be an object");
    Query q;
    q.include_events = get_or<std::set<std::string>>(j, "include_events", {});
    q.exclude_events = get_or<std::set<std::string>>(j, "exclude_events", {});
    q.use_major_cluster = get_or<bool>(j, "use_major_cluster", false);
    if (j.contains("attribute_filters")) {
        const json& filters = j.at("attribute_filters");
        if (!filters.is_array()) throw std::invalid_argument("'attribute_filters' must be an array");
        for (const auto& entry : filters) {
            AttributeFilter f;
            f.field = get<std::string>(entry, "field");
            const auto op = get<std::string>(entry, "op");
            if (op == "equals") {
                f.op = AttributeFilter::Op::equals;
                f.values.push_back(attribute_from_json(field(entry, "value")));
            } else if (op == "in") {
                f.op = AttributeFilter::Op::in_set;
                const json& values = field(entry, "values");
                if (!values.is_array()) throw std::invalid_argument("'values' must be an array");
                for (const auto& v : values) f.values.push_back(attribute_from_json(v));
            } else if (op == "range") {
                f.op = AttributeFilter::Op::numeric_range;
                f.low = get<double>(entry, "low");
                f.high = get<double>(entry, "high");
            } else {
                throw std::invalid_argument("unknown filter op '" + op + "'");
            }
            q.attribute_filters.push_back(std::move(f));
        }
    }
    q.validate();
    return q;
}

json coverage_to_json(const std::vector<TypeCoverage>& coverage, const std::vector<std::string>& vocabulary) {
    json out = json::array();
    for (const auto& c : coverage)
        out.push_back({{"type", name_of(vocabulary, c.type)}, {"covered", c.covered}, {"rate", c.rate}});
    return out;
}

json snapshot_to_json(const AnalysisSnapshot& snapshot) {
    json history = json::array();
    for (const auto& f : snapshot.feedback_history) history.push_back(feedback_to_json(f, snapshot.graph.nodes));
    json diagnostics = json::array();
    for (const auto& d : snapshot.diagnostics) diagnostics.push_back(diagnostics_to_json(d));
    return {{"id", snapshot.id},
            {"created_at", snapshot.created_at},
            {"query", query_to_json(snapshot.query)},
            {"graph", graph_to_json(snapshot.graph)},
            {"feedback_history", std::move(history)},
            {"diagnostics", std::move(diagnostics)},
            {"model", model_to_json(snapshot.model, snapshot.graph.nodes)}};
}

AnalysisSnapshot snapshot_from_json(const json& j) {
    AnalysisSnapshot s;
    s.id = get<std::string>(j, "id");
    s.created_at = get<std::int64_t>(j, "created_at");
    s.query = query_from_json(field(j, "query"));
    s.graph = graph_from_json(field(j, "graph"));
    for (const auto& f : field(j, "feedback_history")) s.feedback_history.push_back(feedback_from_json(f, s.graph.nodes));
    for (const auto& d : field(j, "diagnostics")) s.diagnostics.push_back(diagnostics_from_json(d));
    s.model = model_from_json(field(j, "model"));
    s.validate();
    return s;
}

json comparison_to_json(const Comparison& comparison) {
    json cells = json::array();
    for (const auto& c : comparison.cells)
        cells.push_back({{"cause", c.cause},
                         {"effect", c.effect},
                         {"strength_1", c.strength_1},
                         {"strength_2", c.strength_2},
                         {"category", to_string(c.category)}});
    return {{"nodes", comparison.nodes}, {"epsilon", comparison.epsilon}, {"cells", std::move(cells)}};
}

}  // namespace causeq
