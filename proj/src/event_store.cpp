#include "causeq/event_store.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <unordered_map>

#include <json.hpp>

namespace causeq {

using nlohmann::json;

namespace {

AttributeValue attribute_from_json(const json& value) {
    if (value.is_number()) return value.get<double>();
    if (value.is_string()) return value.get<std::string>();
    if (value.is_boolean()) return std::string(value.get<bool>() ? "true" : "false");
    throw std::invalid_argument("attribute values must be scalars");
}

json attribute_to_json(const AttributeValue& value) {
    if (const auto* number = std::get_if<double>(&value)) return *number;
    return std::get<std::string>(value);
}

std::string trim(std::string_view text) {
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = text.find_last_not_of(" \t\r\n");
    return std::string(text.substr(first, last - first + 1));
}

// Minimal RFC 4180 field splitter: quoted fields may contain commas and "" escapes.
std::vector<std::string> split_csv(const std::string& line, std::size_t row) {
    std::vector<std::string> fields;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(trim(field));
            field.clear();
        } else {
            field.push_back(c);
        }
    }
    if (quoted) throw IngestError(row, "unterminated quote");
    fields.push_back(trim(field));
    return fields;
}

double parse_number(const std::string& text, std::size_t row) {
    double value = 0.0;
    const char* begin = text.data();
    const char* end = begin + text.size();
    if (!text.empty() && *begin == '+') ++begin;
    const auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc() || ptr != end || text.empty())
        throw IngestError(row, "timestamp is not a number: '" + text + "'");
    return value;
}

struct RawRow {
    std::string seq;
    std::string type;
    double t;
    std::size_t row;
};

class DatasetBuilder {
public:
    explicit DatasetBuilder(const Sidecar& sidecar) : sidecar_(sidecar) {
        for (const auto& name : sidecar.vocabulary) {
            if (type_index_.count(name)) throw IngestError(0, "duplicate vocabulary entry '" + name + "'");
            type_index_.emplace(name, vocabulary_.size());
            vocabulary_.push_back(name);
        }
        fixed_vocabulary_ = !sidecar.vocabulary.empty();
    }

    void add(const RawRow& raw) {
        if (!std::isfinite(raw.t)) throw IngestError(raw.row, "timestamp is not finite");
        if (raw.t < 0.0) throw IngestError(raw.row, "negative timestamp");
        if (raw.seq.empty()) throw IngestError(raw.row, "empty sequence id");
        if (raw.type.empty()) throw IngestError(raw.row, "empty event type");
        TypeId type = 0;
        if (auto it = type_index_.find(raw.type); it != type_index_.end()) {
            type = it->second;
        } else if (fixed_vocabulary_) {
            throw IngestError(raw.row, "event type '" + raw.type + "' is not in the vocabulary");
        } else {
            type = vocabulary_.size();
            type_index_.emplace(raw.type, type);
            vocabulary_.push_back(raw.type);
        }
        auto [it, inserted] = sequence_index_.try_emplace(raw.seq, sequences_.size());
        if (inserted) {
            sequences_.emplace_back();
            sequences_.back().id = raw.seq;
        }
        sequences_[it->second].events.push_back({type, raw.t});
    }

    Dataset finish() {
        Dataset dataset;
        dataset.vocabulary = std::move(vocabulary_);
        dataset.time_unit = sidecar_.time_unit;
        for (auto& sequence : sequences_) {
            std::stable_sort(sequence.events.begin(), sequence.events.end(),
                             [](const Event& a, const Event& b) { return a.time < b.time; });
            const double last = sequence.events.empty() ? 0.0 : sequence.events.back().time;
            sequence.horizon = last;
            if (auto it = sidecar_.horizons.find(sequence.id); it != sidecar_.horizons.end()) {
                if (!(it->second >= last) || !std::isfinite(it->second))
                    throw IngestError(0, "horizon of sequence '" + sequence.id + "' precedes its last event");
                sequence.horizon = it->second;
            }
            if (auto it = sidecar_.attributes.find(sequence.id); it != sidecar_.attributes.end())
                sequence.metadata = it->second;
        }
        std::map<std::string, bool> all_numeric;
        for (const auto& sequence : sequences_) {
            for (const auto& [field, value] : sequence.metadata) {
                auto [it, inserted] = all_numeric.try_emplace(field, true);
                it->second = it->second && std::holds_alternative<double>(value);
            }
        }
        for (const auto& [field, numeric] : all_numeric)
            dataset.attribute_schema[field] = numeric ? AttributeKind::numeric : AttributeKind::categorical;
        dataset.sequences = std::move(sequences_);
        return dataset;
    }

private:
    const Sidecar& sidecar_;
    bool fixed_vocabulary_{false};
    std::vector<std::string> vocabulary_;
    std::unordered_map<std::string, TypeId> type_index_;
    std::vector<EventSequence> sequences_;
    std::unordered_map<std::string, std::size_t> sequence_index_;
};

}  // namespace

IngestError::IngestError(std::size_t row, const std::string& what)
    : std::runtime_error(row == 0 ? what : "row " + std::to_string(row) + ": " + what), row_(row) {}

bool EventSequence::contains(TypeId type) const {
    return std::any_of(events.begin(), events.end(), [type](const Event& e) { return e.type == type; });
}

std::size_t Dataset::num_events() const {
    std::size_t total = 0;
    for (const auto& sequence : sequences) total += sequence.events.size();
    return total;
}

double Dataset::total_time() const {
    double total = 0.0;
    for (const auto& sequence : sequences) total += sequence.horizon;
    return total;
}

std::optional<TypeId> Dataset::find_type(const std::string& name) const {
    const auto it = std::find(vocabulary.begin(), vocabulary.end(), name);
    if (it == vocabulary.end()) return std::nullopt;
    return static_cast<TypeId>(it - vocabulary.begin());
}

TypeId Dataset::type_id(const std::string& name) const {
    if (auto id = find_type(name)) return *id;
    throw std::invalid_argument("unknown event type '" + name + "'");
}

Sidecar parse_sidecar(std::istream& in) {
    Sidecar sidecar;
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw IngestError(0, std::string("sidecar is not valid json: ") + e.what());
    }
    if (!doc.is_object()) throw IngestError(0, "sidecar must be a json object");
    try {
        if (doc.contains("vocabulary")) sidecar.vocabulary = doc.at("vocabulary").get<std::vector<std::string>>();
        if (doc.contains("time_unit")) sidecar.time_unit = doc.at("time_unit").get<std::string>();
        if (doc.contains("horizons")) sidecar.horizons = doc.at("horizons").get<std::map<std::string, double>>();
        if (doc.contains("attributes")) {
            for (const auto& [seq, fields] : doc.at("attributes").items()) {
                auto& target = sidecar.attributes[seq];
                for (const auto& [field, value] : fields.items()) target[field] = attribute_from_json(value);
            }
        }
    } catch (const std::exception& e) {
        throw IngestError(0, std::string("malformed sidecar: ") + e.what());
    }
    return sidecar;
}

void write_sidecar(const Sidecar& sidecar, std::ostream& out) {
    json doc = json::object();
    doc["vocabulary"] = sidecar.vocabulary;
    if (!sidecar.time_unit.empty()) doc["time_unit"] = sidecar.time_unit;
    if (!sidecar.horizons.empty()) doc["horizons"] = sidecar.horizons;
    if (!sidecar.attributes.empty()) {
        json attributes = json::object();
        for (const auto& [seq, fields] : sidecar.attributes) {
            json entry = json::object();
            for (const auto& [field, value] : fields) entry[field] = attribute_to_json(value);
            attributes[seq] = std::move(entry);
        }
        doc["attributes"] = std::move(attributes);
    }
    out << doc.dump(2) << '\n';
}

Sidecar make_sidecar(const Dataset& dataset) {
    Sidecar sidecar;
    sidecar.vocabulary = dataset.vocabulary;
    sidecar.time_unit = dataset.time_unit;
    for (const auto& sequence : dataset.sequences) {
        sidecar.horizons[sequence.id] = sequence.horizon;
        if (!sequence.metadata.empty()) sidecar.attributes[sequence.id] = sequence.metadata;
    }
    return sidecar;
}

Dataset ingest(std::istream& source, InputFormat format, const Sidecar& sidecar) {
    DatasetBuilder builder(sidecar);
    std::string line;
    std::size_t row = 0;
    bool header_seen = false;
    while (std::getline(source, line)) {
        ++row;
        if (trim(line).empty()) continue;
        if (format == InputFormat::jsonl) {
            json doc;
            try {
                doc = json::parse(line);
            } catch (const json::exception&) {
                throw IngestError(row, "not valid json");
            }
            if (!doc.is_object() || !doc.contains("seq") || !doc.contains("type") || !doc.contains("t"))
                throw IngestError(row, "expected an object with fields seq, type, t");
            const auto& seq = doc["seq"];
            const auto& type = doc["type"];
            const auto& t = doc["t"];
            if (!seq.is_string() || !type.is_string())
                throw IngestError(row, "seq and type must be strings");
            if (!t.is_number()) throw IngestError(row, "t must be a number");
            builder.add({seq.get<std::string>(), type.get<std::string>(), t.get<double>(), row});
        } else {
            auto fields = split_csv(line, row);
            if (!header_seen) {
                if (fields != std::vector<std::string>{"seq", "type", "t"})
                    throw IngestError(row, "csv header must be 'seq,type,t'");
                header_seen = true;
                continue;
            }
            if (fields.size() != 3) throw IngestError(row, "expected 3 fields");
            builder.add({fields[0], fields[1], parse_number(fields[2], row), row});
        }
    }
    return builder.finish();
}

void export_jsonl(const Dataset& dataset, std::ostream& out) {
    for (const auto& sequence : dataset.sequences) {
        const std::string seq = json(sequence.id).dump();
        for (const auto& event : sequence.events) {
            out << "{\"seq\":" << seq << ",\"type\":" << json(dataset.vocabulary.at(event.type)).dump()
                << ",\"t\":" << json(event.time).dump() << "}\n";
        }
    }
}

std::vector<TypeCoverage> coverage(const Dataset& dataset) {
    if (dataset.sequences.empty()) throw std::invalid_argument("coverage of an empty dataset");
    std::vector<TypeCoverage> result(dataset.num_types());
    for (TypeId v = 0; v < result.size(); ++v) result[v].type = v;
    std::vector<char> seen(dataset.num_types());
    for (const auto& sequence : dataset.sequences) {
        std::fill(seen.begin(), seen.end(), 0);
        for (const auto& event : sequence.events) seen[event.type] = 1;
        for (TypeId v = 0; v < seen.size(); ++v) result[v].covered += seen[v];
    }
    const double total = static_cast<double>(dataset.sequences.size());
    for (auto& entry : result) entry.rate = static_cast<double>(entry.covered) / total;
    std::stable_sort(result.begin(), result.end(),
                     [](const TypeCoverage& a, const TypeCoverage& b) { return a.rate > b.rate; });
    return result;
}

bool AttributeFilter::matches(const AttributeValue& value) const {
    switch (op) {
        case Op::equals:
            return !values.empty() && value == values.front();
        case Op::in_set:
            return std::find(values.begin(), values.end(), value) != values.end();
        case Op::numeric_range: {
            const auto* number = std::get_if<double>(&value);
            return number && *number >= low && *number <= high;
        }
    }
    return false;
}

void Query::validate() const {
    for (const auto& name : include_events) {
        if (exclude_events.count(name))
            throw std::invalid_argument("event '" + name + "' is both included and excluded");
    }
}

double normalized_levenshtein(const std::vector<TypeId>& a, const std::vector<TypeId>& b) {
    const std::size_t longest = std::max(a.size(), b.size());
    if (longest == 0) return 0.0;
    std::vector<std::size_t> previous(b.size() + 1), current(b.size() + 1);
    std::iota(previous.begin(), previous.end(), std::size_t{0});
    for (std::size_t i = 1; i <= a.size(); ++i) {
        current[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const std::size_t substitution = previous[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            current[j] = std::min({previous[j] + 1, current[j - 1] + 1, substitution});
        }
        std::swap(previous, current);
    }
    return static_cast<double>(previous[b.size()]) / static_cast<double>(longest);
}

std::vector<std::size_t> major_cluster(const Dataset& dataset, double cut_distance) {
    const std::size_t n = dataset.sequences.size();
    if (n == 0) return {};
    std::vector<std::vector<TypeId>> strings(n);
    for (std::size_t i = 0; i < n; ++i)
        for (const auto& event : dataset.sequences[i].events) strings[i].push_back(event.type);

    // Complete linkage via Lance-Williams: d(k, i+j) = max(d(k,i), d(k,j)).
    std::vector<std::vector<double>> distance(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            distance[i][j] = distance[j][i] = normalized_levenshtein(strings[i], strings[j]);

    std::vector<std::vector<std::size_t>> members(n);
    for (std::size_t i = 0; i < n; ++i) members[i] = {i};
    std::vector<char> alive(n, 1);
    for (;;) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_i = n, best_j = n;
        for (std::size_t i = 0; i < n; ++i) {
            if (!alive[i]) continue;
            for (std::size_t j = i + 1; j < n; ++j) {
                if (alive[j] && distance[i][j] < best) {
                    best = distance[i][j];
                    best_i = i;
                    best_j = j;
                }
            }
        }
        if (best_i == n || best > cut_distance) break;
        members[best_i].insert(members[best_i].end(), members[best_j].begin(), members[best_j].end());
        members[best_j].clear();
        alive[best_j] = 0;
        for (std::size_t k = 0; k < n; ++k) {
            if (!alive[k] || k == best_i) continue;
            distance[best_i][k] = distance[k][best_i] = std::max(distance[best_i][k], distance[best_j][k]);
        }
    }

    std::size_t chosen = n;
    for (std::size_t i = 0; i < n; ++i) {
        if (!alive[i]) continue;
        if (chosen == n || members[i].size() > members[chosen].size()) chosen = i;
        // Equal sizes: the cluster rooted at the lower index already holds the earlier sequence.
    }
    auto result = members[chosen];
    std::sort(result.begin(), result.end());
    return result;
}

QueryResult query(const Dataset& dataset, const Query& q) {
    q.validate();
    std::vector<TypeId> include_ids;
    for (const auto& name : q.include_events) include_ids.push_back(dataset.type_id(name));
    std::vector<TypeId> exclude_ids;
    for (const auto& name : q.exclude_events)
        if (auto id = dataset.find_type(name)) exclude_ids.push_back(*id);
    for (const auto& filter : q.attribute_filters) {
        if (!dataset.attribute_schema.count(filter.field))
            throw std::invalid_argument("unknown attribute field '" + filter.field + "'");
    }

    Dataset selected;
    selected.attribute_schema = dataset.attribute_schema;
    selected.time_unit = dataset.time_unit;
    selected.vocabulary = dataset.vocabulary;
    for (const auto& sequence : dataset.sequences) {
        const bool has_all = std::all_of(include_ids.begin(), include_ids.end(),
                                         [&](TypeId v) { return sequence.contains(v); });
        const bool has_none = std::none_of(exclude_ids.begin(), exclude_ids.end(),
                                           [&](TypeId v) { return sequence.contains(v); });
        const bool attributes_pass =
            std::all_of(q.attribute_filters.begin(), q.attribute_filters.end(), [&](const AttributeFilter& f) {
                const auto it = sequence.metadata.find(f.field);
                return it != sequence.metadata.end() && f.matches(it->second);
            });
        if (has_all && has_none && attributes_pass) selected.sequences.push_back(sequence);
    }

    if (q.use_major_cluster && !selected.sequences.empty()) {
        std::vector<EventSequence> kept;
        for (std::size_t index : major_cluster(selected)) kept.push_back(selected.sequences[index]);
        selected.sequences = std::move(kept);
    }

    // Re-project the vocabulary onto the types that still occur.
    std::vector<char> used(dataset.num_types(), 0);
    for (const auto& sequence : selected.sequences)
        for (const auto& event : sequence.events) used[event.type] = 1;
    std::vector<TypeId> remap(dataset.num_types(), 0);
    std::vector<std::string> vocabulary;
    for (TypeId v = 0; v < dataset.num_types(); ++v) {
        if (!used[v]) continue;
        remap[v] = vocabulary.size();
        vocabulary.push_back(dataset.vocabulary[v]);
    }
    for (auto& sequence : selected.sequences)
        for (auto& event : sequence.events) event.type = remap[event.type];
    selected.vocabulary = std::move(vocabulary);

    QueryResult result;
    result.empty = selected.sequences.empty();
    result.dataset = std::move(selected);
    return result;
}

double event_coverage_for_edge(const Dataset& dataset, TypeId cause, TypeId effect, double window) {
    if (!(window > 0.0)) throw std::invalid_argument("coverage window must be positive");
    if (dataset.sequences.empty()) return 0.0;
    std::size_t hits = 0;
    for (const auto& sequence : dataset.sequences) {
        const auto& events = sequence.events;
        bool found = false;
        for (std::size_t i = 0; i < events.size() && !found; ++i) {
            if (events[i].type != cause) continue;
            const double t_cause = events[i].time;
            for (std::size_t j = i + 1; j < events.size(); ++j) {
                const double gap = events[j].time - t_cause;
                if (gap > window) break;
                if (events[j].type == effect && gap > 0.0) {
                    found = true;
                    break;
                }
            }
        }
        hits += found ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(dataset.sequences.size());
}

}  // namespace causeq
