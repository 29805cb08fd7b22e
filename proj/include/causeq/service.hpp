#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <set>
#include <string>

#include "causeq/hawkes.hpp"
#include "causeq/learner.hpp"

namespace httplib {
class Server;
}

namespace causeq {

inline constexpr int kDefaultPort = 8700;

struct ServiceOptions {
    // Workspace holding the snapshot files.
    std::filesystem::path data_dir{"causeq-data"};
    // Used when POST /sessions carries no config.
    FitConfig default_config;
    std::string cors_origin{"*"};

    // CAUSEQ_DATA overrides data_dir.
    static ServiceOptions from_environment();
};

// CAUSEQ_PORT, or kDefaultPort.
int port_from_environment();

struct GraphView {
    // Outcome event whose causes are shown; none shows every node.
    std::optional<TypeId> outcome;
    double strength_min{0.0};
    double coverage_min{0.0};
};

// Subgraph shown to the client. With no outcome and nothing explored, every
// node is shown. Otherwise only edges into the outcome or an explored event
// are kept, and nodes are the events they touch plus the targets themselves,
// renumbered in vocabulary order. Thresholds drop edges only.
CausalGraph visible_graph(const CausalGraph& graph, const GraphView& view, const std::set<TypeId>& explored);

// Session state and HTTP routes. Route handlers are safe to run concurrently.
class Service {
public:
    explicit Service(ServiceOptions options);
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    void register_routes(httplib::Server& server);
    // Blocks until the server stops.
    void listen(const std::string& host, int port);

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace causeq
