#include "causeq/service.hpp"

#include <atomic>
#include <cstdlib>
#include <map>
#include <mutex>
#include <shared_mutex>
#include <sstream>

#include <httplib.h>

#include "causeq/diagnostics.hpp"
#include "causeq/history.hpp"
#include "causeq/layout.hpp"
#include "causeq/patterns.hpp"
#include "causeq/serialization.hpp"

namespace causeq {

namespace {

class HttpError : public std::runtime_error {
public:
    HttpError(int status, const std::string& what) : std::runtime_error(what), status(status) {}
    int status;
};

[[noreturn]] void fail(int status, const std::string& message) { throw HttpError(status, message); }

struct Iteration {
    HawkesModel model;
    CausalGraph graph;
    FeedbackSet feedback;
};

struct Session {
    std::string id;
    // Post-query data; immutable after creation.
    Dataset data;
    Query query;
    FitConfig config;
    double window{0.0};

    mutable std::shared_mutex mutex;
    std::atomic<bool> refitting{false};

    HawkesModel model;
    CausalGraph graph;
    FeedbackSet feedback;
    std::vector<FeedbackSet> feedback_history;
    std::vector<DiagnosticsRecord> diagnostics;
    std::map<std::size_t, Iteration> iterations;
    std::size_t current{0};
    std::set<TypeId> explored;

    std::optional<CausalGraph> layout_graph;
    Canvas layout_canvas;
    std::optional<LayoutResult> layout;
};

void send_json(httplib::Response& res, const json& body, int status = 200) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    try {
        return json::parse(req.body);
    } catch (const json::exception& e) {
        fail(400, std::string("malformed json body: ") + e.what());
    }
}

double number_param(const httplib::Request& req, const char* key, double fallback) {
    if (!req.has_param(key) || req.get_param_value(key).empty()) return fallback;
    const std::string text = req.get_param_value(key);
    try {
        std::size_t used = 0;
        const double value = std::stod(text, &used);
        if (used != text.size() || !std::isfinite(value)) throw std::invalid_argument(text);
        return value;
    } catch (const std::exception&) {
        fail(400, std::string("parameter '") + key + "' must be a number");
    }
}

std::string string_param(const httplib::Request& req, const char* key) {
    if (!req.has_param(key) || req.get_param_value(key).empty())
        fail(400, std::string("missing parameter '") + key + "'");
    return req.get_param_value(key);
}

TypeId type_param(const Dataset& data, const std::string& name) {
    const auto id = data.find_type(name);
    if (!id) fail(400, "unknown event type '" + name + "'");
    return *id;
}

std::vector<std::string> split(const std::string& text, char sep) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(text);
    while (std::getline(in, item, sep)) out.push_back(item);
    return out;
}

CausalGraph derive_graph(const HawkesModel& model, const Dataset& data, const FeedbackSet& feedback, double window) {
    CausalGraph graph = extract_graph(model, data, kDefaultStrengthThreshold, window);
    apply_feedback(graph, feedback, model, data, window);
    return graph;
}

GraphView view_from(const httplib::Request& req, const Dataset& data) {
    GraphView view;
    if (req.has_param("outcome") && !req.get_param_value("outcome").empty())
        view.outcome = type_param(data, req.get_param_value("outcome"));
    view.strength_min = number_param(req, "strength_min", 0.0);
    view.coverage_min = number_param(req, "coverage_min", 0.0);
    return view;
}

Canvas canvas_from(const httplib::Request& req) {
    Canvas canvas;
    canvas.width = number_param(req, "width", canvas.width);
    canvas.height = number_param(req, "height", canvas.height);
    return canvas;
}

const DiagnosticsRecord* record_for(const Session& s, std::size_t iteration) {
    for (const auto& r : s.diagnostics)
        if (r.iteration == iteration) return &r;
    return nullptr;
}

// Layout of `graph`, anchored on the previous one; an unchanged graph and
// canvas return the cached result. Caller holds the session exclusively.
LayoutResult stable_layout(Session& s, const CausalGraph& graph, const Canvas& canvas) {
    if (s.layout && s.layout_graph && *s.layout_graph == graph && s.layout_canvas.width == canvas.width &&
        s.layout_canvas.height == canvas.height)
        return *s.layout;
    LayoutInput input;
    input.graph = graph;
    input.canvas = canvas;
    if (s.layout) input.previous_positions = s.layout->positions;
    LayoutResult result = layout(input);
    s.layout_graph = graph;
    s.layout_canvas = canvas;
    s.layout = result;
    return result;
}

}  // namespace

ServiceOptions ServiceOptions::from_environment() {
    ServiceOptions options;
    if (const char* dir = std::getenv("CAUSEQ_DATA"); dir && *dir) options.data_dir = dir;
    return options;
}

int port_from_environment() {
    const char* text = std::getenv("CAUSEQ_PORT");
    if (!text || !*text) return kDefaultPort;
    try {
        const int port = std::stoi(text);
        if (port > 0 && port < 65536) return port;
    } catch (const std::exception&) {
    }
    throw std::invalid_argument("CAUSEQ_PORT must be a port number");
}

CausalGraph visible_graph(const CausalGraph& graph, const GraphView& view, const std::set<TypeId>& explored) {
    std::set<TypeId> targets = explored;
    if (view.outcome) targets.insert(*view.outcome);
    const bool everything = targets.empty();

    std::vector<const CausalEdge*> kept;
    std::vector<char> shown(graph.nodes.size(), everything ? 1 : 0);
    for (TypeId t : targets)
        if (t < shown.size()) shown[t] = 1;
    for (const auto& e : graph.edges) {
        if (!everything && !targets.count(e.effect)) continue;
        if (e.strength < view.strength_min || e.coverage < view.coverage_min) continue;
        kept.push_back(&e);
        shown[e.cause] = shown[e.effect] = 1;
    }
    CausalGraph out;
    std::vector<TypeId> remap(graph.nodes.size(), 0);
    for (TypeId v = 0; v < graph.nodes.size(); ++v) {
        if (!shown[v]) continue;
        remap[v] = out.nodes.size();
        out.nodes.push_back(graph.nodes[v]);
    }
    for (const CausalEdge* e : kept) {
        CausalEdge copy = *e;
        copy.cause = remap[e->cause];
        copy.effect = remap[e->effect];
        out.edges.push_back(copy);
    }
    return out;
}

struct Service::Impl {
    explicit Impl(ServiceOptions opts) : options(std::move(opts)), store(options.data_dir) {}

    ServiceOptions options;
    SnapshotStore store;

    std::shared_mutex registry_mutex;
    std::map<std::string, std::shared_ptr<const Dataset>> datasets;
    std::map<std::string, std::shared_ptr<Session>> sessions;
    std::size_t next_dataset{1};
    std::size_t next_session{1};

    std::shared_ptr<const Dataset> dataset(const std::string& id) {
        std::shared_lock lock(registry_mutex);
        const auto it = datasets.find(id);
        if (it == datasets.end()) fail(404, "unknown dataset '" + id + "'");
        return it->second;
    }

    std::shared_ptr<Session> session(const std::string& id) {
        std::shared_lock lock(registry_mutex);
        const auto it = sessions.find(id);
        if (it == sessions.end()) fail(404, "unknown session '" + id + "'");
        return it->second;
    }

    static void require_idle(const Session& s) {
        if (s.refitting.load()) fail(409, "a refit is in progress for this session");
    }

    void post_dataset(const httplib::Request& req, httplib::Response& res) {
        const json body = parse_body(req);
        if (!body.contains("content") || !body["content"].is_string()) fail(400, "body needs a 'content' string");
        const std::string format = body.value("format", "jsonl");
        InputFormat fmt;
        if (format == "jsonl")
            fmt = InputFormat::jsonl;
        else if (format == "csv")
            fmt = InputFormat::csv;
        else
            fail(400, "format must be 'jsonl' or 'csv'");
        Sidecar sidecar;
        if (body.contains("sidecar") && !body["sidecar"].is_null()) {
            std::istringstream in(body["sidecar"].dump());
            sidecar = parse_sidecar(in);
        }
        std::istringstream in(body["content"].get<std::string>());
        auto data = std::make_shared<const Dataset>(ingest(in, fmt, sidecar));
        std::string id;
        {
            std::unique_lock lock(registry_mutex);
            id = "ds-" + std::to_string(next_dataset++);
            datasets[id] = data;
        }
        send_json(res,
                  {{"id", id},
                   {"vocabulary", data->vocabulary},
                   {"num_sequences", data->sequences.size()},
                   {"num_events", data->num_events()}},
                  201);
    }

    void get_coverage(const httplib::Request& req, httplib::Response& res) {
        const auto data = dataset(req.matches[1]);
        send_json(res, coverage_to_json(coverage(*data), data->vocabulary));
    }

    void post_session(const httplib::Request& req, httplib::Response& res) {
        const json body = parse_body(req);
        if (!body.contains("dataset") || !body["dataset"].is_string()) fail(400, "body needs a 'dataset' id");
        const auto source = dataset(body["dataset"].get<std::string>());
        const Query q = body.contains("query") ? query_from_json(body["query"]) : Query{};
        FitConfig config = body.contains("config") ? fit_config_from_json(body["config"]) : options.default_config;
        config.validate();

        auto result = query(*source, q);
        if (result.empty) fail(400, "the query matches no sequence");
        auto s = std::make_shared<Session>();
        s->data = std::move(result.dataset);
        s->query = q;
        s->config = config;
        const KernelBank kernels =
            body.contains("kernels") ? kernels_from_json(body["kernels"]) : default_kernel_bank(s->data);
        s->window = default_coverage_window(kernels);

        const FitResult fitted = fit(s->data, config, kernels);
        s->model = fitted.model;
        s->graph = derive_graph(s->model, s->data, s->feedback, s->window);
        s->diagnostics.push_back(evaluate(s->model, s->data));
        s->iterations[0] = {s->model, s->graph, s->feedback};
        {
            std::unique_lock lock(registry_mutex);
            s->id = "session-" + std::to_string(next_session++);
            sessions[s->id] = s;
        }
        send_json(res,
                  {{"id", s->id},
                   {"vocabulary", s->data.vocabulary},
                   {"num_sequences", s->data.sequences.size()},
                   {"config", fit_config_to_json(config)},
                   {"diagnostics", diagnostics_to_json(s->diagnostics.front())},
                   {"report", fit_report_to_json(fitted.report)},
                   {"graph", graph_to_json(s->graph)}},
                  201);
    }

    void get_session(const httplib::Request& req, httplib::Response& res) {
        const auto s = session(req.matches[1]);
        std::shared_lock lock(s->mutex);
        std::vector<std::string> explored;
        for (TypeId v : s->explored) explored.push_back(s->data.vocabulary[v]);
        send_json(res, {{"id", s->id},
                        {"vocabulary", s->data.vocabulary},
                        {"query", query_to_json(s->query)},
                        {"config", fit_config_to_json(s->config)},
                        {"iteration", s->current},
                        {"explored", explored},
                        {"feedback", feedback_to_json(s->feedback, s->data.vocabulary)},
                        {"model", model_to_json(s->model, s->data.vocabulary)},
                        {"refitting", s->refitting.load()}});
    }

    void get_graph(const httplib::Request& req, httplib::Response& res) {
        const auto s = session(req.matches[1]);
        const GraphView view = view_from(req, s->data);
        std::shared_lock lock(s->mutex);
        send_json(res, graph_to_json(visible_graph(s->graph, view, s->explored)));
    }

    void post_expand(const httplib::Request& req, httplib::Response& res) {
        const auto s = session(req.matches[1]);
        const json body = parse_body(req);
        if (!body.contains("event") || !body["event"].is_string()) fail(400, "body needs an 'event' name");
        const TypeId event = type_param(s->data, body["event"].get<std::string>());
        std::unique_lock lock(s->mutex);
        require_idle(*s);
        const CausalGraph before = s->explored.empty() ? CausalGraph{} : visible_graph(s->graph, {}, s->explored);
        s->explored.insert(event);
        const CausalGraph after = visible_graph(s->graph, {}, s->explored);

        std::set<std::string> old_nodes(before.nodes.begin(), before.nodes.end());
        std::set<std::pair<std::string, std::string>> old_edges;
        for (const auto& e : before.edges) old_edges.insert({before.nodes[e.cause], before.nodes[e.effect]});
        json new_nodes = json::array();
        for (const auto& name : after.nodes)
            if (!old_nodes.count(name)) new_nodes.push_back(name);
        CausalGraph delta{after.nodes, {}};
        for (const auto& e : after.edges)
            if (!old_edges.count({after.nodes[e.cause], after.nodes[e.effect]})) delta.edges.push_back(e);
        std::vector<std::string> explored;
        for (TypeId v : s->explored) explored.push_back(s->data.vocabulary[v]);
        send_json(res, {{"event", s->data.vocabulary[event]},
                        {"explored", explored},
                        {"new_nodes", std::move(new_nodes)},
                        {"new_edges", graph_to_json(delta)["edges"]},
                        {"graph", graph_to_json(after)}});
    }

    void post_feedback(const httplib::Request& req, httplib::Response& res) {
        const auto s = session(req.matches[1]);
        const FeedbackSet incoming = feedback_from_json(parse_body(req), s->data.vocabulary);
        std::unique_lock lock(s->mutex);
        require_idle(*s);
        FeedbackSet merged = s->feedback;
        merged.merge(incoming);
        s->graph = derive_graph(s->model, s->data, merged, s->window);
        s->feedback = std::move(merged);
        send_json(res, {{"feedback", feedback_to_json(s->feedback, s->data.vocabulary)},
                        {"graph", graph_to_json(s->graph)}});
    }

    void post_refit(const httplib::Request& req, httplib::Response& res) {
        const auto s = session(req.matches[1]);
        if (s->refitting.exchange(true)) fail(409, "a refit is already in progress for this session");
        struct Release {
            std::atomic<bool>& flag;
            ~Release() { flag = false; }
        } release{s->refitting};

        HawkesModel prior;
        FeedbackSet feedback;
        DiagnosticsRecord previous;
        std::size_t next = 0;
        {
            std::shared_lock lock(s->mutex);
            prior = s->model;
            feedback = s->feedback;
            if (const auto* r = record_for(*s, s->current)) previous = *r;
            next = s->diagnostics.back().iteration + 1;
        }
        const FitResult refitted = refit_with_feedback(s->data, prior, feedback, s->config);
        DiagnosticsRecord record = evaluate(refitted.model, s->data, previous);
        record.iteration = next;
        CausalGraph graph = derive_graph(refitted.model, s->data, feedback, s->window);

        std::unique_lock lock(s->mutex);
        const LayoutResult placed = stable_layout(*s, visible_graph(graph, {}, s->explored), s->layout_canvas);
        s->model = refitted.model;
        s->graph = graph;
        s->diagnostics.push_back(record);
        s->feedback_history.push_back(feedback);
        s->iterations[next] = {s->model, s->graph, feedback};
        s->current = next;
        send_json(res, {{"iteration", next},
                        {"diagnostics", diagnostics_to_json(record)},
                        {"report", fit_report_to_json(refitted.report)},
                        {"graph", graph_to_json(s->graph)},
                        {"layout", layout_to_json(placed)}});
    }

    void post_revert(const httplib::Request& req, httplib::Response& res) {
        const auto s = session(req.matches[1]);
        const json body = parse_body(req);
        if (!body.contains("iteration") || !body["iteration"].is_number_unsigned())
            fail(400, "body needs a non-negative 'iteration'");
        const auto iteration = body["iteration"].get<std::size_t>();
        std::unique_lock lock(s->mutex);
        require_idle(*s);
        const auto it = s->iterations.find(iteration);
        if (it == s->iterations.end()) fail(404, "unknown iteration " + std::to_string(iteration));
        s->model = it->second.model;
        s->graph = it->second.graph;
        s->feedback = it->second.feedback;
        s->current = iteration;
        send_json(res, {{"iteration", iteration},
                        {"feedback", feedback_to_json(s->feedback, s->data.vocabulary)},
                        {"graph", graph_to_json(s->graph)}});
    }

    void get_layout(const httplib::Request& req, httplib::Response& res) {
        const auto s = session(req.matches[1]);
        const GraphView view = view_from(req, s->data);
        const Canvas canvas = canvas_from(req);
        if (!(canvas.width > 0.0) || !(canvas.height > 0.0)) fail(400, "canvas size must be positive");
        std::unique_lock lock(s->mutex);
        send_json(res, layout_to_json(stable_layout(*s, visible_graph(s->graph, view, s->explored), canvas)));
    }

    void get_patterns(const httplib::Request& req, httplib::Response& res) {
        const auto s = session(req.matches[1]);
        PatternQuery q;
        q.cause = type_param(s->data, string_param(req, "cause"));
        q.effect = type_param(s->data, string_param(req, "effect"));
        q.window = number_param(req, "window", s->window);
        HawkesModel model;
        {
            std::shared_lock lock(s->mutex);
            model = s->model;
            for (const auto& e : s->graph.edges)
                if (e.effect == q.effect && !e.removed && e.cause != q.cause && e.cause != q.effect)
                    q.potential_causes.push_back(e.cause);
        }
        std::sort(q.potential_causes.begin(), q.potential_causes.end());
        q.validate();
        const PatternSummary summary = summarize_patterns(model, s->data, q, s->config.seed);
        send_json(res, patterns_to_json(summary, q, s->data.vocabulary));
    }

    void get_path_flow(const httplib::Request& req, httplib::Response& res) {
        const auto s = session(req.matches[1]);
        std::vector<TypeId> path;
        for (const auto& name : split(string_param(req, "path"), ',')) path.push_back(type_param(s->data, name));
        const double window = number_param(req, "window", s->window);
        send_json(res, path_flow_to_json(causal_path_flow(s->data, path, window), s->data.vocabulary));
    }

    void get_diagnostics(const httplib::Request& req, httplib::Response& res) {
        const auto s = session(req.matches[1]);
        std::shared_lock lock(s->mutex);
        json out = json::array();
        for (const auto& r : s->diagnostics) out.push_back(diagnostics_to_json(r));
        send_json(res, out);
    }

    void post_snapshot(const httplib::Request& req, httplib::Response& res) {
        const auto s = session(req.matches[1]);
        AnalysisSnapshot snapshot;
        {
            std::shared_lock lock(s->mutex);
            snapshot.query = s->query;
            snapshot.graph = s->graph;
            snapshot.feedback_history = s->feedback_history;
            snapshot.diagnostics = s->diagnostics;
            snapshot.model = s->model;
        }
        send_json(res, snapshot_to_json(store.save(std::move(snapshot))), 201);
    }

    void get_snapshots(const httplib::Request&, httplib::Response& res) {
        json out = json::array();
        for (const auto& id : store.list()) {
            const auto snapshot = store.load(id);
            out.push_back({{"id", id}, {"created_at", snapshot.created_at}, {"nodes", snapshot.graph.nodes}});
        }
        send_json(res, out);
    }

    void get_compare(const httplib::Request& req, httplib::Response& res) {
        const auto first = store.load(string_param(req, "a"));
        const auto second = store.load(string_param(req, "b"));
        const double epsilon = number_param(req, "epsilon", kDefaultSameStrengthTolerance);
        send_json(res, comparison_to_json(compare(first, second, epsilon)));
    }
};

Service::Service(ServiceOptions options) : impl_(std::make_unique<Impl>(std::move(options))) {}

Service::~Service() = default;

void Service::register_routes(httplib::Server& server) {
    using Member = void (Impl::*)(const httplib::Request&, httplib::Response&);
    Impl* impl = impl_.get();
    const auto wrap = [impl](Member member) {
        return [impl, member](const httplib::Request& req, httplib::Response& res) {
            try {
                (impl->*member)(req, res);
            } catch (const HttpError& e) {
                send_json(res, {{"error", e.what()}}, e.status);
            } catch (const SnapshotNotFound& e) {
                send_json(res, {{"error", e.what()}}, 404);
            } catch (const IngestError& e) {
                send_json(res, {{"error", e.what()}, {"row", e.row()}}, 400);
            } catch (const std::invalid_argument& e) {
                send_json(res, {{"error", e.what()}}, 400);
            } catch (const json::exception& e) {
                send_json(res, {{"error", e.what()}}, 400);
            } catch (const std::exception& e) {
                send_json(res, {{"error", e.what()}}, 500);
            }
        };
    };

    server.set_default_headers({{"Access-Control-Allow-Origin", impl->options.cors_origin},
                                {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                                {"Access-Control-Allow-Headers", "Content-Type"}});
    server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    server.Post("/datasets", wrap(&Impl::post_dataset));
    server.Get(R"(/datasets/([^/]+)/coverage)", wrap(&Impl::get_coverage));
    server.Post("/sessions", wrap(&Impl::post_session));
    server.Get(R"(/sessions/([^/]+))", wrap(&Impl::get_session));
    server.Get(R"(/sessions/([^/]+)/graph)", wrap(&Impl::get_graph));
    server.Post(R"(/sessions/([^/]+)/expand)", wrap(&Impl::post_expand));
    server.Post(R"(/sessions/([^/]+)/feedback)", wrap(&Impl::post_feedback));
    server.Post(R"(/sessions/([^/]+)/refit)", wrap(&Impl::post_refit));
    server.Post(R"(/sessions/([^/]+)/revert)", wrap(&Impl::post_revert));
    server.Get(R"(/sessions/([^/]+)/layout)", wrap(&Impl::get_layout));
    server.Get(R"(/sessions/([^/]+)/patterns)", wrap(&Impl::get_patterns));
    server.Get(R"(/sessions/([^/]+)/path-flow)", wrap(&Impl::get_path_flow));
    server.Get(R"(/sessions/([^/]+)/diagnostics)", wrap(&Impl::get_diagnostics));
    server.Post(R"(/sessions/([^/]+)/snapshot)", wrap(&Impl::post_snapshot));
    server.Get("/snapshots", wrap(&Impl::get_snapshots));
    server.Get("/compare", wrap(&Impl::get_compare));
}

void Service::listen(const std::string& host, int port) {
    httplib::Server server;
    register_routes(server);
    if (!server.listen(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
}

}  // namespace causeq
