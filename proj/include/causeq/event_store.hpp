#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace causeq {

using TypeId = std::size_t;

// A scalar sequence attribute (age, gender, ...).
using AttributeValue = std::variant<double, std::string>;

enum class AttributeKind { categorical, numeric };

// One row of an input stream.
struct EventRecord {
    std::string sequence_id;
    TypeId type{0};
    double timestamp{0.0};
};

struct Event {
    TypeId type{0};
    double time{0.0};

    friend bool operator==(const Event&, const Event&) = default;
};

struct EventSequence {
    std::string id;
    // Sorted by time; ties keep ingestion order.
    std::vector<Event> events;
    // Observation window [0, horizon]; never earlier than the last event.
    double horizon{0.0};
    std::map<std::string, AttributeValue> metadata;

    bool contains(TypeId type) const;

    friend bool operator==(const EventSequence&, const EventSequence&) = default;
};

struct Dataset {
    std::vector<std::string> vocabulary;
    std::vector<EventSequence> sequences;
    std::map<std::string, AttributeKind> attribute_schema;
    std::string time_unit;

    std::size_t num_types() const { return vocabulary.size(); }
    std::size_t num_events() const;
    // Sum of sequence horizons.
    double total_time() const;
    std::optional<TypeId> find_type(const std::string& name) const;
    // Throws std::invalid_argument for unknown names.
    TypeId type_id(const std::string& name) const;

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

// Rejected input. `row` is the 1-based line number of the offending row
// (header included for csv), 0 when the problem is not tied to a row.
class IngestError : public std::runtime_error {
public:
    IngestError(std::size_t row, const std::string& what);
    std::size_t row() const { return row_; }

private:
    std::size_t row_;
};

enum class InputFormat { jsonl, csv };

// Optional per-dataset side information.
struct Sidecar {
    std::vector<std::string> vocabulary;
    std::map<std::string, std::map<std::string, AttributeValue>> attributes;
    std::map<std::string, double> horizons;
    std::string time_unit;
};

Sidecar parse_sidecar(std::istream& in);
void write_sidecar(const Sidecar& sidecar, std::ostream& out);
// Sidecar that carries everything export_jsonl drops (vocabulary, metadata, horizons).
Sidecar make_sidecar(const Dataset& dataset);

Dataset ingest(std::istream& source, InputFormat format, const Sidecar& sidecar = {});
// Canonical jsonl: {"seq":..,"type":..,"t":..} per event, sequences in dataset order.
void export_jsonl(const Dataset& dataset, std::ostream& out);

struct TypeCoverage {
    TypeId type{0};
    std::size_t covered{0};
    double rate{0.0};
};

// Per-type share of sequences containing the type, highest rate first.
std::vector<TypeCoverage> coverage(const Dataset& dataset);

struct AttributeFilter {
    enum class Op { equals, in_set, numeric_range };

    std::string field;
    Op op{Op::equals};
    // equals uses values[0]; in_set uses all of them.
    std::vector<AttributeValue> values;
    double low{0.0};
    double high{0.0};

    bool matches(const AttributeValue& value) const;
};

struct Query {
    std::set<std::string> include_events;
    std::set<std::string> exclude_events;
    std::vector<AttributeFilter> attribute_filters;
    bool use_major_cluster{false};

    // Throws std::invalid_argument when include and exclude overlap.
    void validate() const;
};

struct QueryResult {
    Dataset dataset;
    // Set when no sequence passed; callers must not fit a model on it.
    bool empty{false};
};

QueryResult query(const Dataset& dataset, const Query& q);

// Edit distance over type-id strings divided by the longer length.
double normalized_levenshtein(const std::vector<TypeId>& a, const std::vector<TypeId>& b);

// Indices of the sequences in the largest complete-linkage cluster cut at
// `cut_distance`. Ties go to the cluster holding the earliest sequence.
std::vector<std::size_t> major_cluster(const Dataset& dataset, double cut_distance = 0.5);

// Fraction of sequences with a `cause` event followed by an `effect` event
// no later than `window` after it. Throws std::invalid_argument if window <= 0.
double event_coverage_for_edge(const Dataset& dataset, TypeId cause, TypeId effect, double window);

}  // namespace causeq
