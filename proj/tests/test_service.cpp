#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <filesystem>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "causeq/diagnostics.hpp"
#include "causeq/serialization.hpp"
#include "causeq/service.hpp"
#include "fixtures.hpp"

using namespace causeq;
namespace fs = std::filesystem;

namespace {

struct Running {
    httplib::Server server;
    Service service;
    std::thread thread;
    int port{0};

    explicit Running(ServiceOptions options) : service(std::move(options)) {
        service.register_routes(server);
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~Running() {
        server.stop();
        thread.join();
    }
    httplib::Client client() const {
        httplib::Client c("127.0.0.1", port);
        c.set_read_timeout(120, 0);
        return c;
    }
};

struct Reply {
    int status{0};
    json body;
    httplib::Headers headers;
};

Reply to_reply(const httplib::Result& r) {
    REQUIRE(r);
    Reply out;
    out.status = r->status;
    out.headers = r->headers;
    out.body = r->body.empty() ? json() : json::parse(r->body);
    return out;
}

Reply get(httplib::Client& c, const std::string& path) { return to_reply(c.Get(path)); }
Reply post(httplib::Client& c, const std::string& path, const json& body) {
    return to_reply(c.Post(path, body.dump(), "application/json"));
}

std::string dataset_text(const Dataset& d) {
    std::ostringstream out;
    export_jsonl(d, out);
    return out.str();
}

json sidecar_json(const Dataset& d) {
    std::ostringstream out;
    write_sidecar(make_sidecar(d), out);
    return json::parse(out.str());
}

fs::path fresh_directory() {
    return fs::temp_directory_path() /
           ("causeq-service-" + std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()));
}

json pairs(const std::vector<std::pair<std::string, std::string>>& list) {
    json out = json::array();
    for (const auto& [cause, effect] : list) out.push_back(json::array({cause, effect}));
    return out;
}

const json* find_edge(const json& graph, const std::string& cause, const std::string& effect) {
    for (const auto& e : graph.at("edges"))
        if (e.at("cause") == cause && e.at("effect") == effect) return &e;
    return nullptr;
}

}  // namespace

TEST_CASE("visible_graph") {
    CausalGraph g;
    g.nodes = {"A", "B", "C", "D"};
    g.edges = {{0, 1, 0.5, 0.4, false, false}, {2, 1, 0.1, 0.9, false, false}, {1, 3, 0.3, 0.2, false, false}};
    CHECK(visible_graph(g, {}, {}) == g);

    GraphView view;
    view.outcome = 1;
    auto v = visible_graph(g, view, {});
    CHECK(v.nodes == std::vector<std::string>{"A", "B", "C"});
    CHECK(v.edges.size() == 2);

    view.strength_min = 0.2;
    v = visible_graph(g, view, {});
    CHECK(v.nodes == std::vector<std::string>{"A", "B"});
    REQUIRE(v.edges.size() == 1);
    CHECK(v.edges[0].cause == 0);
    CHECK(v.edges[0].effect == 1);

    view.strength_min = 0.0;
    view.coverage_min = 0.95;
    v = visible_graph(g, view, {});
    CHECK(v.nodes == std::vector<std::string>{"B"});
    CHECK(v.edges.empty());

    v = visible_graph(g, {}, {3});
    CHECK(v.nodes == std::vector<std::string>{"B", "D"});
    REQUIRE(v.edges.size() == 1);
    CHECK(v.edges[0].cause == 0);
    CHECK(v.edges[0].effect == 1);
}

TEST_CASE("service end to end") {
    const auto dir = fresh_directory();
    ServiceOptions options;
    options.data_dir = dir;
    Running running(options);
    auto c = running.client();

    const auto data = simulate(fixture::planted_five(), 150, 50.0, 3, fixture::planted_names());

    // Datasets.
    auto r = to_reply(c.Post("/datasets", "{not json", "application/json"));
    CHECK(r.status == 400);
    r = post(c, "/datasets", {{"format", "jsonl"}, {"content", "{\"id\": \"x\", \"events\": [[\"A\", -1]]}\n"}});
    CHECK(r.status == 400);
    CHECK(r.body.at("row") == 1);
    r = post(c, "/datasets", {{"format", "xml"}, {"content", ""}});
    CHECK(r.status == 400);
    r = post(c, "/datasets", {{"format", "jsonl"}, {"content", dataset_text(data)}, {"sidecar", sidecar_json(data)}});
    REQUIRE(r.status == 201);
    const std::string dataset = r.body.at("id");
    CHECK(r.body.at("vocabulary") == json(fixture::planted_names()));
    CHECK(r.body.at("num_sequences") == 150);
    CHECK(r.body.at("num_events") == data.num_events());

    r = get(c, "/datasets/" + dataset + "/coverage");
    CHECK(r.status == 200);
    CHECK(r.body.size() == 5);
    CHECK(r.body[0].contains("rate"));
    CHECK(get(c, "/datasets/ds-99/coverage").status == 404);

    // Sessions.
    const json config = fit_config_to_json(fixture::planted_config());
    r = post(c, "/sessions", {{"dataset", dataset}, {"query", {{"include_events", {"Z"}}}}, {"config", config}});
    CHECK(r.status == 400);
    r = post(c, "/sessions", {{"dataset", "ds-99"}});
    CHECK(r.status == 404);
    r = post(c, "/sessions", {{"dataset", dataset}, {"config", {{"alpha", -1.0}}}});
    CHECK(r.status == 400);
    r = post(c, "/sessions", {{"dataset", dataset}, {"config", config}});
    REQUIRE(r.status == 201);
    const std::string sid = r.body.at("id");
    const std::string base = "/sessions/" + sid;
    const json initial_graph = r.body.at("graph");
    CHECK(r.body.at("diagnostics").at("iter") == 0);
    CHECK(r.body.at("diagnostics").at("delta_bic_sign") == "first");
    CHECK(r.body.at("report").contains("objective_trace"));
    REQUIRE(find_edge(initial_graph, "A", "B") != nullptr);

    r = get(c, base);
    CHECK(r.status == 200);
    CHECK(r.body.at("iteration") == 0);
    CHECK(r.body.at("model").at("V") == 5);
    CHECK(get(c, "/sessions/session-99").status == 404);

    // Graph views.
    r = get(c, base + "/graph");
    CHECK(r.body == initial_graph);
    r = get(c, base + "/graph?outcome=B");
    for (const auto& e : r.body.at("edges")) CHECK(e.at("effect") == "B");
    CHECK(find_edge(r.body, "A", "B") != nullptr);
    r = get(c, base + "/graph?outcome=B&strength_min=1e9");
    CHECK(r.body.at("edges").empty());
    CHECK(r.body.at("nodes") == json::array({"B"}));
    r = get(c, base + "/graph?coverage_min=2");
    CHECK(r.body.at("edges").empty());
    CHECK(r.body.at("nodes").size() == 5);
    CHECK(get(c, base + "/graph?outcome=Q").status == 400);
    CHECK(get(c, base + "/graph?strength_min=abc").status == 400);

    // Expansion from the outcome upward.
    r = post(c, base + "/expand", {{"event", "B"}});
    CHECK(r.status == 200);
    CHECK(r.body.at("explored") == json::array({"B"}));
    const auto first_new = r.body.at("new_nodes");
    CHECK(std::find(first_new.begin(), first_new.end(), "B") != first_new.end());
    CHECK(std::find(first_new.begin(), first_new.end(), "A") != first_new.end());
    for (const auto& e : r.body.at("new_edges")) CHECK(e.at("effect") == "B");
    r = post(c, base + "/expand", {{"event", "A"}});
    for (const auto& name : r.body.at("new_nodes")) CHECK(std::find(first_new.begin(), first_new.end(), name) == first_new.end());
    for (const auto& e : r.body.at("new_edges")) CHECK(e.at("effect") == "A");
    CHECK(find_edge(r.body.at("graph"), "A", "B") != nullptr);
    CHECK(post(c, base + "/expand", {{"event", "Q"}}).status == 400);
    CHECK(post(c, base + "/expand", json::object()).status == 400);

    // Layout is cached for an unchanged graph and canvas.
    r = get(c, base + "/layout?width=900&height=500");
    REQUIRE(r.status == 200);
    const json first_layout = r.body;
    CHECK(first_layout.at("positions").contains("A"));
    CHECK(first_layout.at("positions").contains("B"));
    CHECK(get(c, base + "/layout?width=900&height=500").body == first_layout);
    CHECK(get(c, base + "/layout?width=0").status == 400);

    // Feedback is staged, refit applies it.
    r = post(c, base + "/feedback", {{"removed", pairs({{"A", "B"}})}, {"confirmed", pairs({{"E", "A"}})}});
    CHECK(r.status == 200);
    CHECK(r.body.at("feedback").at("removed") == json::array({json::array({"A", "B"})}));
    CHECK(find_edge(r.body.at("graph"), "A", "B")->at("removed") == true);
    CHECK(post(c, base + "/feedback", {{"removed", pairs({{"A", "Q"}})}}).status == 400);

    r = post(c, base + "/refit", json::object());
    REQUIRE(r.status == 200);
    CHECK(r.body.at("iteration") == 1);
    CHECK(r.body.at("diagnostics").at("iter") == 1);
    CHECK(r.body.at("layout").contains("positions"));
    const json model = get(c, base).body.at("model");
    for (double x : model.at("a")[1][0]) CHECK(x == 0.0);
    const json refit_graph = get(c, base + "/graph").body;
    const auto* confirmed = find_edge(refit_graph, "E", "A");
    REQUIRE(confirmed != nullptr);
    CHECK(confirmed->at("confirmed") == true);

    r = get(c, base + "/diagnostics");
    REQUIRE(r.body.size() == 2);
    CHECK(r.body[0].at("iter") == 0);
    CHECK(r.body[1].at("iter") == 1);
    CHECK(r.body[1].at("delta_bic_sign") != "first");

    // Revert restores the stored iteration; numbering keeps growing.
    CHECK(post(c, base + "/revert", {{"iteration", 7}}).status == 404);
    CHECK(post(c, base + "/revert", {{"iteration", "x"}}).status == 400);
    r = post(c, base + "/revert", {{"iteration", 0}});
    CHECK(r.status == 200);
    CHECK(r.body.at("graph") == initial_graph);
    CHECK(get(c, base).body.at("iteration") == 0);
    r = post(c, base + "/refit", json::object());
    CHECK(r.body.at("iteration") == 2);
    CHECK(get(c, base + "/diagnostics").body.size() == 3);

    // Patterns and path flow.
    r = get(c, base + "/patterns?cause=C&effect=D&window=2");
    REQUIRE(r.status == 200);
    CHECK(r.body.at("cause") == "C");
    CHECK(r.body.at("window") == 2.0);
    for (const auto& p : r.body.at("potential_causes")) {
        CHECK(p != "C");
        CHECK(p != "D");
    }
    std::size_t total = 0;
    for (const auto& [name, count] : r.body.at("groups").items()) total += count.get<std::size_t>();
    CHECK(total == r.body.at("rows").size());
    CHECK(get(c, base + "/patterns?effect=D").status == 400);
    CHECK(get(c, base + "/patterns?cause=C&effect=D&window=-1").status == 400);

    r = get(c, base + "/path-flow?path=A,B,C&window=3");
    REQUIRE(r.status == 200);
    CHECK(r.body.at("steps").size() == 2);
    const auto started = r.body.at("started").get<std::size_t>();
    const auto& step = r.body.at("steps")[0];
    CHECK(step.at("continued").get<std::size_t>() + step.at("dropped").get<std::size_t>() == started);
    CHECK(get(c, base + "/path-flow?path=A").status == 400);
    CHECK(get(c, base + "/path-flow").status == 400);

    // Snapshots and comparison.
    r = post(c, base + "/snapshot", json::object());
    REQUIRE(r.status == 201);
    const std::string snap_a = r.body.at("id");
    CHECK(r.body.at("diagnostics").size() == 3);
    post(c, base + "/revert", {{"iteration", 1}});
    r = post(c, base + "/snapshot", json::object());
    const std::string snap_b = r.body.at("id");
    r = get(c, "/snapshots");
    REQUIRE(r.body.size() == 2);
    CHECK(r.body[0].at("id") == snap_a);
    CHECK(r.body[1].at("nodes").size() == 5);
    r = get(c, "/compare?a=" + snap_a + "&b=" + snap_b + "&epsilon=0.1");
    REQUIRE(r.status == 200);
    CHECK(r.body.at("cells").size() == 25);
    CHECK(r.body.at("epsilon") == 0.1);
    for (const auto& cell : r.body.at("cells"))
        if (cell.at("cause") == "A" && cell.at("effect") == "B") CHECK(cell.at("category") == "only_first");
    CHECK(get(c, "/compare?a=" + snap_a + "&b=999999").status == 404);
    CHECK(get(c, "/compare?a=" + snap_a).status == 400);
    CHECK(get(c, "/compare?a=" + snap_a + "&b=" + snap_b + "&epsilon=x").status == 400);

    // CORS preflight.
    auto options_reply = c.Options(base + "/refit");
    REQUIRE(options_reply);
    CHECK(options_reply->status == 204);
    CHECK(options_reply->get_header_value("Access-Control-Allow-Origin") == "*");
    fs::remove_all(dir);
}

TEST_CASE("writes are rejected while a refit runs, and readers see the old state") {
    const auto dir = fresh_directory();
    ServiceOptions options;
    options.data_dir = dir;
    Running running(options);
    auto c = running.client();

    const auto data = simulate(fixture::planted_five(), 400, 50.0, 4, fixture::planted_names());
    auto r = post(c, "/datasets", {{"content", dataset_text(data)}, {"sidecar", sidecar_json(data)}});
    REQUIRE(r.status == 201);
    auto config = fixture::planted_config();
    config.tol = 1e-12;
    config.max_iters = 400;
    r = post(c, "/sessions", {{"dataset", r.body.at("id")}, {"config", fit_config_to_json(config)}});
    REQUIRE(r.status == 201);
    const std::string base = "/sessions/" + r.body.at("id").get<std::string>();
    post(c, base + "/feedback", {{"confirmed", pairs({{"A", "B"}})}});
    const json before = get(c, base + "/graph").body;

    bool observed = false;
    for (int attempt = 0; attempt < 5 && !observed; ++attempt) {
        Reply refit_reply;
        std::thread worker([&] {
            auto own = running.client();
            refit_reply = post(own, base + "/refit", json::object());
        });
        for (int poll = 0; poll < 2000 && !observed; ++poll) {
            const auto state = get(c, base);
            if (state.body.at("refitting") == true) {
                const std::size_t iteration = state.body.at("iteration");
                CHECK(post(c, base + "/refit", json::object()).status == 409);
                CHECK(post(c, base + "/feedback", {{"removed", pairs({{"C", "D"}})}}).status == 409);
                CHECK(post(c, base + "/revert", {{"iteration", 0}}).status == 409);
                CHECK(post(c, base + "/expand", {{"event", "B"}}).status == 409);
                const auto during = get(c, base);
                if (during.body.at("refitting") == true) {
                    CHECK(during.body.at("iteration") == iteration);
                    if (iteration == 0) CHECK(get(c, base + "/graph").body == before);
                }
                observed = true;
            }
        }
        worker.join();
        CHECK(refit_reply.status == 200);
    }
    CHECK(observed);
    CHECK(get(c, base).body.at("refitting") == false);
    CHECK(post(c, base + "/feedback", {{"removed", pairs({{"C", "D"}})}}).status == 200);
    fs::remove_all(dir);
}
