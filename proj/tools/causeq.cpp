#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "causeq/diagnostics.hpp"
#include "causeq/event_store.hpp"
#include "causeq/hawkes.hpp"
#include "causeq/history.hpp"
#include "causeq/layout.hpp"
#include "causeq/learner.hpp"
#include "causeq/patterns.hpp"
#include "causeq/serialization.hpp"
#include "causeq/service.hpp"

using namespace causeq;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::stringstream text;
    text << in.rdbuf();
    return text.str();
}

json read_json(const std::string& path) {
    try {
        return json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw std::invalid_argument(path + ": " + e.what());
    }
}

// "-" or empty writes to stdout.
void write_text(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text;
}

void write_json(const std::string& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

InputFormat parse_format(const std::string& text) {
    if (text == "jsonl") return InputFormat::jsonl;
    if (text == "csv") return InputFormat::csv;
    throw std::invalid_argument("format must be jsonl or csv");
}

Dataset load_dataset(const std::string& path, const std::string& format, const std::string& sidecar_path) {
    Sidecar sidecar;
    if (!sidecar_path.empty()) {
        std::ifstream in(sidecar_path, std::ios::binary);
        if (!in) throw std::runtime_error("cannot read " + sidecar_path);
        sidecar = parse_sidecar(in);
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path);
    return ingest(in, parse_format(format), sidecar);
}

void save_dataset(const Dataset& data, const std::string& path, const std::string& sidecar_path) {
    std::ostringstream events;
    export_jsonl(data, events);
    write_text(path, events.str());
    if (!sidecar_path.empty()) {
        std::ostringstream side;
        write_sidecar(make_sidecar(data), side);
        write_text(sidecar_path, side.str());
    }
}

// Model names must match the dataset vocabulary when both are known.
HawkesModel load_model(const std::string& path, const Dataset* data) {
    const json j = read_json(path);
    HawkesModel model = model_from_json(j);
    const auto names = model_vocabulary(j);
    if (data && !names.empty() && names != data->vocabulary)
        throw std::invalid_argument("model vocabulary does not match the dataset");
    if (data && model.num_types() != data->num_types())
        throw std::invalid_argument("model size does not match the dataset");
    return model;
}

// "A,B" -> (A, B)
TypePair parse_pair(const Dataset& data, const std::string& text) {
    const auto comma = text.find(',');
    if (comma == std::string::npos || text.find(',', comma + 1) != std::string::npos)
        throw std::invalid_argument("pairs are written cause,effect: '" + text + "'");
    return {data.type_id(text.substr(0, comma)), data.type_id(text.substr(comma + 1))};
}

std::vector<TypeId> parse_names(const Dataset& data, const std::string& text) {
    std::vector<TypeId> out;
    std::istringstream in(text);
    std::string name;
    while (std::getline(in, name, ',')) out.push_back(data.type_id(name));
    return out;
}

struct DataOptions {
    std::string path;
    std::string format{"jsonl"};
    std::string sidecar;

    void add(CLI::App* cmd, bool required = true) {
        auto* opt = cmd->add_option("--data", path, "Event file");
        if (required) opt->required();
        cmd->add_option("--format", format, "jsonl or csv");
        cmd->add_option("--sidecar", sidecar, "Sidecar json (vocabulary, attributes, horizons)");
    }
    Dataset load() const { return load_dataset(path, format, sidecar); }
};

struct ConfigOptions {
    std::string file;
    std::optional<double> alpha;
    std::optional<double> alpha_u;
    std::optional<std::size_t> max_iters;
    std::optional<double> tol;
    std::optional<std::uint64_t> seed;

    void add(CLI::App* cmd) {
        cmd->add_option("--config", file, "FitConfig json");
        cmd->add_option("--alpha", alpha, "Sparsity weight of the initial fit");
        cmd->add_option("--alpha-u", alpha_u, "Sparsity weight of feedback refits");
        cmd->add_option("--max-iters", max_iters, "Iteration cap");
        cmd->add_option("--tol", tol, "Relative stopping tolerance");
        cmd->add_option("--seed", seed, "Seed");
    }
    FitConfig load() const {
        FitConfig config = file.empty() ? FitConfig{} : fit_config_from_json(read_json(file));
        if (alpha) config.alpha = *alpha;
        if (alpha_u) config.alpha_u = *alpha_u;
        if (max_iters) config.max_iters = *max_iters;
        if (tol) config.tol = *tol;
        if (seed) config.seed = *seed;
        config.validate();
        return config;
    }
};

void print_error(const std::string& kind, const std::string& message, const json& extra = json::object()) {
    json j = {{"error", message}, {"kind", kind}};
    j.update(extra);
    std::cerr << j.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Granger causality analysis of event sequences"};
    app.require_subcommand(1);

    // ingest
    auto* ingest_cmd = app.add_subcommand("ingest", "Validate an event file and write it in canonical jsonl");
    DataOptions ingest_data;
    std::string ingest_out, ingest_sidecar_out, ingest_query;
    ingest_data.add(ingest_cmd);
    ingest_cmd->add_option("--query", ingest_query, "Query json applied before writing");
    ingest_cmd->add_option("--output", ingest_out, "Canonical jsonl output")->required();
    ingest_cmd->add_option("--sidecar-out", ingest_sidecar_out, "Sidecar output");
    ingest_cmd->callback([&] {
        Dataset data = ingest_data.load();
        if (!ingest_query.empty()) {
            auto result = query(data, query_from_json(read_json(ingest_query)));
            if (result.empty) throw std::invalid_argument("the query matches no sequence");
            data = std::move(result.dataset);
        }
        save_dataset(data, ingest_out, ingest_sidecar_out);
        write_json("-", {{"vocabulary", data.vocabulary},
                         {"num_sequences", data.sequences.size()},
                         {"num_events", data.num_events()},
                         {"coverage", coverage_to_json(coverage(data), data.vocabulary)}});
    });

    // fit
    auto* fit_cmd = app.add_subcommand("fit", "Fit a sparse Hawkes model");
    DataOptions fit_data;
    ConfigOptions fit_config;
    std::string fit_out, fit_report, fit_kernels, fit_query;
    fit_data.add(fit_cmd);
    fit_config.add(fit_cmd);
    fit_cmd->add_option("--kernels", fit_kernels, "Kernel bank json {centers, sigma}");
    fit_cmd->add_option("--query", fit_query, "Query json applied before fitting");
    fit_cmd->add_option("--output", fit_out, "Model json")->required();
    fit_cmd->add_option("--report", fit_report, "Fit report json");
    fit_cmd->callback([&] {
        Dataset data = fit_data.load();
        if (!fit_query.empty()) {
            auto result = query(data, query_from_json(read_json(fit_query)));
            if (result.empty) throw std::invalid_argument("the query matches no sequence");
            data = std::move(result.dataset);
        }
        const KernelBank kernels = fit_kernels.empty() ? default_kernel_bank(data) : kernels_from_json(read_json(fit_kernels));
        const FitResult result = fit(data, fit_config.load(), kernels);
        write_json(fit_out, model_to_json(result.model, data.vocabulary));
        if (!fit_report.empty()) write_json(fit_report, fit_report_to_json(result.report));
    });

    // refit
    auto* refit_cmd = app.add_subcommand("refit", "Retrain a model under confirm/remove feedback");
    DataOptions refit_data;
    ConfigOptions refit_config;
    std::string refit_model, refit_out, refit_report, refit_feedback;
    std::vector<std::string> refit_confirm, refit_remove;
    refit_data.add(refit_cmd);
    refit_config.add(refit_cmd);
    refit_cmd->add_option("--model", refit_model, "Prior model json")->required();
    refit_cmd->add_option("--feedback", refit_feedback, "FeedbackSet json");
    refit_cmd->add_option("--confirm", refit_confirm, "cause,effect pair to confirm (repeatable)");
    refit_cmd->add_option("--remove", refit_remove, "cause,effect pair to remove (repeatable)");
    refit_cmd->add_option("--output", refit_out, "Model json")->required();
    refit_cmd->add_option("--report", refit_report, "Fit report json");
    refit_cmd->callback([&] {
        const Dataset data = refit_data.load();
        const HawkesModel prior = load_model(refit_model, &data);
        FeedbackSet feedback =
            refit_feedback.empty() ? FeedbackSet{} : feedback_from_json(read_json(refit_feedback), data.vocabulary);
        std::set<TypePair> confirmed, removed;
        for (const auto& p : refit_confirm) confirmed.insert(parse_pair(data, p));
        for (const auto& p : refit_remove) removed.insert(parse_pair(data, p));
        feedback.merge(FeedbackSet(confirmed, removed));
        const FitResult result = refit_with_feedback(data, prior, feedback, refit_config.load());
        write_json(refit_out, model_to_json(result.model, data.vocabulary));
        if (!refit_report.empty()) write_json(refit_report, fit_report_to_json(result.report));
    });

    // graph
    auto* graph_cmd = app.add_subcommand("graph", "Extract the causal graph of a model");
    DataOptions graph_data;
    std::string graph_model, graph_out, graph_feedback;
    double graph_threshold = kDefaultStrengthThreshold;
    double graph_window = 0.0;
    graph_data.add(graph_cmd);
    graph_cmd->add_option("--model", graph_model, "Model json")->required();
    graph_cmd->add_option("--feedback", graph_feedback, "FeedbackSet json overlaid on the graph");
    graph_cmd->add_option("--threshold", graph_threshold, "Strength threshold");
    graph_cmd->add_option("--window", graph_window, "Coverage window (default from the kernels)");
    graph_cmd->add_option("--output", graph_out, "Graph json (default stdout)");
    graph_cmd->callback([&] {
        const Dataset data = graph_data.load();
        const HawkesModel model = load_model(graph_model, &data);
        const double window = graph_window > 0.0 ? graph_window : default_coverage_window(model.kernels());
        CausalGraph graph = extract_graph(model, data, graph_threshold, window);
        if (!graph_feedback.empty())
            apply_feedback(graph, feedback_from_json(read_json(graph_feedback), data.vocabulary), model, data, window);
        write_json(graph_out, graph_to_json(graph));
    });

    // layout
    auto* layout_cmd = app.add_subcommand("layout", "Lay out a causal graph");
    std::string layout_graph, layout_previous, layout_out;
    LayoutInput layout_input;
    layout_cmd->add_option("--graph", layout_graph, "Graph json")->required();
    layout_cmd->add_option("--previous", layout_previous, "Earlier layout json to stabilize against");
    layout_cmd->add_option("--width", layout_input.canvas.width, "Canvas width");
    layout_cmd->add_option("--height", layout_input.canvas.height, "Canvas height");
    layout_cmd->add_option("--radius", layout_input.node_radius, "Node radius");
    layout_cmd->add_option("--output", layout_out, "Layout json (default stdout)");
    layout_cmd->callback([&] {
        layout_input.graph = graph_from_json(read_json(layout_graph));
        if (!layout_previous.empty()) layout_input.previous_positions = layout_from_json(read_json(layout_previous)).positions;
        write_json(layout_out, layout_to_json(layout(layout_input)));
    });

    // patterns
    auto* patterns_cmd = app.add_subcommand("patterns", "Summarize the sequences around one causal edge");
    DataOptions patterns_data;
    std::string patterns_model, patterns_cause, patterns_effect, patterns_potential, patterns_out;
    double patterns_window = 0.0;
    std::uint64_t patterns_seed = 0;
    patterns_data.add(patterns_cmd);
    patterns_cmd->add_option("--model", patterns_model, "Model json")->required();
    patterns_cmd->add_option("--cause", patterns_cause, "Cause event")->required();
    patterns_cmd->add_option("--effect", patterns_effect, "Effect event")->required();
    patterns_cmd->add_option("--window", patterns_window, "Time window (default from the kernels)");
    patterns_cmd->add_option("--potential", patterns_potential, "Comma-separated anchor events (default: other causes)");
    patterns_cmd->add_option("--seed", patterns_seed, "Seed of the row ordering");
    patterns_cmd->add_option("--output", patterns_out, "Pattern json (default stdout)");
    patterns_cmd->callback([&] {
        const Dataset data = patterns_data.load();
        const HawkesModel model = load_model(patterns_model, &data);
        PatternQuery q;
        q.cause = data.type_id(patterns_cause);
        q.effect = data.type_id(patterns_effect);
        q.window = patterns_window > 0.0 ? patterns_window : default_coverage_window(model.kernels());
        if (!patterns_potential.empty()) {
            q.potential_causes = parse_names(data, patterns_potential);
        } else {
            for (const auto& e : extract_graph(model, data).edges)
                if (e.effect == q.effect && e.cause != q.cause && e.cause != q.effect) q.potential_causes.push_back(e.cause);
        }
        q.validate();
        write_json(patterns_out, patterns_to_json(summarize_patterns(model, data, q, patterns_seed), q, data.vocabulary));
    });

    // compare
    auto* compare_cmd = app.add_subcommand("compare", "Compare two snapshots (or graphs)");
    std::string compare_a, compare_b, compare_out;
    double compare_epsilon = kDefaultSameStrengthTolerance;
    compare_cmd->add_option("--a", compare_a, "First snapshot or graph json")->required();
    compare_cmd->add_option("--b", compare_b, "Second snapshot or graph json")->required();
    compare_cmd->add_option("--epsilon", compare_epsilon, "Relative tolerance for equal strengths");
    compare_cmd->add_option("--output", compare_out, "Comparison json (default stdout)");
    compare_cmd->callback([&] {
        const auto graph_of = [](const std::string& path) {
            const json j = read_json(path);
            return graph_from_json(j.contains("graph") ? j.at("graph") : j);
        };
        write_json(compare_out, comparison_to_json(compare(graph_of(compare_a), graph_of(compare_b), compare_epsilon)));
    });

    // simulate
    auto* simulate_cmd = app.add_subcommand("simulate", "Sample sequences from a model");
    std::string simulate_truth, simulate_out, simulate_sidecar_out;
    std::size_t simulate_n = 100;
    double simulate_horizon = 50.0;
    std::uint64_t simulate_seed = 0;
    simulate_cmd->add_option("--truth", simulate_truth, "Model json")->required();
    simulate_cmd->add_option("--n", simulate_n, "Number of sequences");
    simulate_cmd->add_option("--horizon", simulate_horizon, "Observation window per sequence");
    simulate_cmd->add_option("--seed", simulate_seed, "Seed");
    simulate_cmd->add_option("--output", simulate_out, "Canonical jsonl output")->required();
    simulate_cmd->add_option("--sidecar-out", simulate_sidecar_out, "Sidecar output (vocabulary, horizons)");
    simulate_cmd->callback([&] {
        const json j = read_json(simulate_truth);
        const Dataset data =
            simulate(model_from_json(j), simulate_n, simulate_horizon, simulate_seed, model_vocabulary(j));
        save_dataset(data, simulate_out, simulate_sidecar_out);
    });

    // experiment
    auto* experiment_cmd = app.add_subcommand("experiment", "Scripted feedback experiment against a known truth");
    DataOptions experiment_data;
    ConfigOptions experiment_config;
    std::string experiment_truth, experiment_out, experiment_kernels, experiment_format = "json";
    std::size_t experiment_iters = 5, experiment_n = 300;
    double experiment_horizon = 50.0;
    std::uint64_t experiment_data_seed = 1;
    experiment_data.add(experiment_cmd, false);
    experiment_config.add(experiment_cmd);
    experiment_cmd->add_option("--truth", experiment_truth, "Ground-truth model json")->required();
    experiment_cmd->add_option("--iters", experiment_iters, "Number of feedback rounds");
    experiment_cmd->add_option("--kernels", experiment_kernels, "Kernel bank json for the fits");
    experiment_cmd->add_option("--n", experiment_n, "Sequences to simulate when --data is absent");
    experiment_cmd->add_option("--horizon", experiment_horizon, "Horizon to simulate when --data is absent");
    experiment_cmd->add_option("--data-seed", experiment_data_seed, "Simulation seed when --data is absent");
    experiment_cmd->add_option("--table", experiment_format, "json or tsv")->check(CLI::IsMember({"json", "tsv"}));
    experiment_cmd->add_option("--output", experiment_out, "Diagnostics output (default stdout)");
    experiment_cmd->callback([&] {
        const json j = read_json(experiment_truth);
        const HawkesModel truth = model_from_json(j);
        const Dataset data = experiment_data.path.empty()
                                 ? simulate(truth, experiment_n, experiment_horizon, experiment_data_seed, model_vocabulary(j))
                                 : experiment_data.load();
        if (data.num_types() != truth.num_types()) throw std::invalid_argument("truth size does not match the dataset");
        std::optional<KernelBank> kernels;
        if (!experiment_kernels.empty()) kernels = kernels_from_json(read_json(experiment_kernels));
        const auto records = scripted_feedback_experiment(data, GroundTruthGraph::from_model(truth),
                                                          experiment_config.load(), experiment_iters, kernels);
        if (experiment_format == "tsv") {
            std::ostringstream out;
            out << "iter\tnll_mean\tnll_std\tbic\tdelta_bic_sign\tp\tauroc\n";
            out.precision(10);
            for (const auto& r : records) {
                out << r.iteration << '\t' << r.nll_mean << '\t' << r.nll_std << '\t' << r.bic << '\t'
                    << to_string(r.delta_bic_sign) << '\t' << r.p_value << '\t';
                if (r.auroc)
                    out << *r.auroc;
                else
                    out << "NA";
                out << '\n';
            }
            write_text(experiment_out, out.str());
        } else {
            json out = json::array();
            for (const auto& r : records) out.push_back(diagnostics_to_json(r));
            write_json(experiment_out, out);
        }
    });

    // serve
    auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP API");
    std::string serve_host = "127.0.0.1", serve_dir;
    std::optional<int> serve_port;
    serve_cmd->add_option("--host", serve_host, "Bind address");
    serve_cmd->add_option("--port", serve_port, "Port (default CAUSEQ_PORT or 8700)");
    serve_cmd->add_option("--data-dir", serve_dir, "Snapshot workspace (default CAUSEQ_DATA)");
    serve_cmd->callback([&] {
        ServiceOptions options = ServiceOptions::from_environment();
        if (!serve_dir.empty()) options.data_dir = serve_dir;
        const int port = serve_port ? *serve_port : port_from_environment();
        Service service(options);
        std::cerr << json{{"listening", serve_host + ":" + std::to_string(port)}}.dump() << '\n';
        service.listen(serve_host, port);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        print_error("usage", e.what());
        return 2;
    } catch (const IngestError& e) {
        print_error("ingest", e.what(), {{"row", e.row()}});
        return 1;
    } catch (const UnstableModelError& e) {
        print_error("unstable_model", e.what(), {{"spectral_radius", e.spectral_radius()}});
        return 1;
    } catch (const std::invalid_argument& e) {
        print_error("invalid_argument", e.what());
        return 1;
    } catch (const std::exception& e) {
        print_error("runtime", e.what());
        return 1;
    }
    return 0;
}
