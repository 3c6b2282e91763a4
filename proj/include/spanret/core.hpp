#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "spanret/error.hpp"

namespace spanret {

using json = nlohmann::json;

enum class Task { Slot, Intent };

inline const char* task_name(Task t) { return t == Task::Slot ? "slot" : "intent"; }

inline Task parse_task(const std::string& s) {
    if (s == "slot") return Task::Slot;
    if (s == "intent") return Task::Intent;
    throw DataError("unknown task '" + s + "' (expected slot|intent)");
}

// Token span, half-open: [start, end).
struct LabeledSpan {
    std::size_t start = 0;
    std::size_t end = 0;
    std::string label;

    bool operator==(const LabeledSpan&) const = default;
    auto operator<=>(const LabeledSpan&) const = default;
};

inline bool spans_overlap(const LabeledSpan& a, const LabeledSpan& b) {
    return a.start < b.end && b.start < a.end;
}

struct Utterance {
    std::string id;
    std::vector<std::string> tokens;

    bool operator==(const Utterance&) const = default;
};

// One annotated utterance. `intent` is meaningful for intent datasets,
// `spans` for slot datasets; `category` is optional intent metadata.
struct Example {
    Utterance utterance;
    std::string intent;
    std::string category;
    std::vector<LabeledSpan> spans;

    bool operator==(const Example&) const = default;
};

namespace detail {

inline bool has_whitespace(const std::string& s) {
    for (unsigned char c : s)
        if (std::isspace(c)) return true;
    return false;
}

inline void validate_utterance(const Utterance& u) {
    if (u.id.empty()) throw DataError("utterance with empty id");
    if (u.tokens.empty()) throw DataError("utterance '" + u.id + "': empty token list");
    for (const auto& t : u.tokens)
        if (t.empty() || has_whitespace(t))
            throw DataError("utterance '" + u.id + "': token '" + t +
                            "' is empty or contains whitespace");
}

// Sorts spans by start and rejects overlap and out-of-range spans.
inline void validate_spans(const Utterance& u, std::vector<LabeledSpan>& spans) {
    const std::size_t n = u.tokens.size();
    for (const auto& s : spans) {
        if (s.start >= s.end || s.end > n)
            throw DataError("example '" + u.id + "': span [" + std::to_string(s.start) +
                            "," + std::to_string(s.end) + ") out of range for " +
                            std::to_string(n) + " tokens");
        if (s.label.empty())
            throw DataError("example '" + u.id + "': span with empty label");
    }
    std::sort(spans.begin(), spans.end());
    for (std::size_t i = 1; i < spans.size(); ++i)
        if (spans[i - 1].end > spans[i].start)
            throw DataError("example '" + u.id + "': overlapping spans");
}

}  // namespace detail

inline Example make_intent_example(Utterance utt, std::string intent,
                                   std::string category = "") {
    detail::validate_utterance(utt);
    if (intent.empty()) throw DataError("example '" + utt.id + "': empty intent label");
    Example e;
    e.utterance = std::move(utt);
    e.intent = std::move(intent);
    e.category = std::move(category);
    return e;
}

inline Example make_slot_example(Utterance utt, std::vector<LabeledSpan> spans) {
    detail::validate_utterance(utt);
    detail::validate_spans(utt, spans);
    Example e;
    e.utterance = std::move(utt);
    e.spans = std::move(spans);
    return e;
}

struct Dataset {
    Task task = Task::Slot;
    std::vector<Example> examples;

    bool operator==(const Dataset&) const = default;

    std::set<std::string> label_set() const {
        std::set<std::string> out;
        for (const auto& e : examples) {
            if (task == Task::Intent) {
                out.insert(e.intent);
            } else {
                for (const auto& s : e.spans) out.insert(s.label);
            }
        }
        return out;
    }

    // Annotation instances per label: span occurrences for slot data,
    // examples for intent data.
    std::map<std::string, std::size_t> label_instance_counts() const {
        std::map<std::string, std::size_t> out;
        for (const auto& e : examples) {
            if (task == Task::Intent) {
                ++out[e.intent];
            } else {
                for (const auto& s : e.spans) ++out[s.label];
            }
        }
        return out;
    }
};

struct FewShotSplit {
    Dataset source;
    Dataset target_train;
    Dataset target_test;
    std::size_t k = 1;
};

enum class Severity { Info, Warn };

struct Diagnostic {
    Severity severity;
    std::string message;

    bool operator==(const Diagnostic&) const = default;
};

inline bool has_warnings(const std::vector<Diagnostic>& ds) {
    return std::any_of(ds.begin(), ds.end(),
                       [](const Diagnostic& d) { return d.severity == Severity::Warn; });
}

// Shortfalls against k are warnings (annotated with source coverage);
// labels shared between source and target get an informational note.
inline std::vector<Diagnostic> validate_split(const FewShotSplit& split) {
    std::vector<Diagnostic> out;
    const auto counts = split.target_train.label_instance_counts();
    const auto source_labels = split.source.label_set();

    std::set<std::string> target_labels = split.target_train.label_set();
    for (const auto& l : split.target_test.label_set()) target_labels.insert(l);

    for (const auto& label : target_labels) {
        auto it = counts.find(label);
        const std::size_t count = it == counts.end() ? 0 : it->second;
        if (count < split.k) {
            std::string msg = "target label '" + label + "': " + std::to_string(count) +
                              " instance(s) in target_train, k=" + std::to_string(split.k);
            if (!source_labels.count(label)) msg += ", unseen in source";
            out.push_back({Severity::Warn, std::move(msg)});
        }
        if (source_labels.count(label))
            out.push_back({Severity::Info,
                           "shared label '" + label + "' appears in both source and target"});
    }
    return out;
}

// ---- JSONL I/O ----

namespace detail {

inline json parse_line(const std::string& path, std::size_t lineno, const std::string& line) {
    try {
        json j = json::parse(line);
        if (!j.is_object())
            throw DataError(path + ":" + std::to_string(lineno) + ": expected a JSON object");
        return j;
    } catch (const json::parse_error& e) {
        throw DataError(path + ":" + std::to_string(lineno) +
                        ": malformed JSON line: " + e.what());
    }
}

template <typename T>
T get_field(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) throw DataError(where + ": missing field '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw DataError(where + ": bad field '" + key + "': " + e.what());
    }
}

inline bool blank(const std::string& line) {
    return std::all_of(line.begin(), line.end(),
                       [](unsigned char c) { return std::isspace(c); });
}

}  // namespace detail

inline Dataset load_jsonl(const std::string& path, Task task) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");

    Dataset ds;
    ds.task = task;
    std::set<std::string> seen_ids;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::blank(line)) continue;
        const std::string where = path + ":" + std::to_string(lineno);
        json j = detail::parse_line(path, lineno, line);

        Utterance utt;
        utt.id = detail::get_field<std::string>(j, "id", where);
        utt.tokens = detail::get_field<std::vector<std::string>>(j, "tokens", where);

        Example ex;
        if (task == Task::Intent) {
            ex = make_intent_example(std::move(utt),
                                     detail::get_field<std::string>(j, "intent", where),
                                     j.contains("category") && j["category"].is_string()
                                         ? j["category"].get<std::string>()
                                         : "");
        } else {
            std::vector<LabeledSpan> spans;
            if (!j.contains("spans")) throw DataError(where + ": missing field 'spans'");
            if (!j["spans"].is_array()) throw DataError(where + ": 'spans' must be an array");
            for (const auto& sj : j["spans"]) {
                LabeledSpan s;
                s.start = detail::get_field<std::size_t>(sj, "start", where);
                s.end = detail::get_field<std::size_t>(sj, "end", where);
                s.label = detail::get_field<std::string>(sj, "label", where);
                spans.push_back(std::move(s));
            }
            ex = make_slot_example(std::move(utt), std::move(spans));
        }
        if (!seen_ids.insert(ex.utterance.id).second)
            throw DataError(where + ": duplicate example id '" + ex.utterance.id + "'");
        ds.examples.push_back(std::move(ex));
    }
    return ds;
}

// Lenient reader for prediction inputs: only id and tokens are required.
inline std::vector<Utterance> load_utterances(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::vector<Utterance> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::blank(line)) continue;
        const std::string where = path + ":" + std::to_string(lineno);
        json j = detail::parse_line(path, lineno, line);
        Utterance utt;
        utt.id = detail::get_field<std::string>(j, "id", where);
        utt.tokens = detail::get_field<std::vector<std::string>>(j, "tokens", where);
        detail::validate_utterance(utt);
        out.push_back(std::move(utt));
    }
    return out;
}

inline json example_to_json(const Example& e, Task task) {
    json j;
    j["id"] = e.utterance.id;
    j["tokens"] = e.utterance.tokens;
    if (task == Task::Intent) {
        j["intent"] = e.intent;
        if (!e.category.empty()) j["category"] = e.category;
    } else {
        json spans = json::array();
        for (const auto& s : e.spans)
            spans.push_back({{"start", s.start}, {"end", s.end}, {"label", s.label}});
        j["spans"] = std::move(spans);
    }
    return j;
}

inline void save_jsonl(const Dataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path + "'");
    for (const auto& e : ds.examples) out << example_to_json(e, ds.task).dump() << '\n';
    if (!out) throw DataError("write failure on '" + path + "'");
}

// ---- Prediction artifacts ----

struct ScoredSpan {
    std::size_t start = 0;
    std::size_t end = 0;
    std::string label;
    double score = 0.0;

    bool operator==(const ScoredSpan&) const = default;
};

struct SlotPrediction {
    std::string id;
    std::vector<ScoredSpan> spans;

    bool operator==(const SlotPrediction&) const = default;
};

struct IntentPrediction {
    std::string id;
    std::string label;
    double score = 0.0;

    bool operator==(const IntentPrediction&) const = default;
};

inline void save_slot_predictions(const std::vector<SlotPrediction>& preds,
                                  const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path + "'");
    for (const auto& p : preds) {
        json spans = json::array();
        for (const auto& s : p.spans)
            spans.push_back({{"start", s.start},
                             {"end", s.end},
                             {"label", s.label},
                             {"score", s.score}});
        out << json{{"id", p.id}, {"spans", std::move(spans)}}.dump() << '\n';
    }
    if (!out) throw DataError("write failure on '" + path + "'");
}

inline std::vector<SlotPrediction> load_slot_predictions(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::vector<SlotPrediction> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::blank(line)) continue;
        const std::string where = path + ":" + std::to_string(lineno);
        json j = detail::parse_line(path, lineno, line);
        SlotPrediction p;
        p.id = detail::get_field<std::string>(j, "id", where);
        if (!j.contains("spans") || !j["spans"].is_array())
            throw DataError(where + ": missing 'spans' array");
        for (const auto& sj : j["spans"]) {
            ScoredSpan s;
            s.start = detail::get_field<std::size_t>(sj, "start", where);
            s.end = detail::get_field<std::size_t>(sj, "end", where);
            s.label = detail::get_field<std::string>(sj, "label", where);
            s.score = sj.contains("score") ? sj["score"].get<double>() : 0.0;
            p.spans.push_back(std::move(s));
        }
        out.push_back(std::move(p));
    }
    return out;
}

inline void save_intent_predictions(const std::vector<IntentPrediction>& preds,
                                    const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path + "'");
    for (const auto& p : preds)
        out << json{{"id", p.id}, {"intent", p.label}, {"score", p.score}}.dump() << '\n';
    if (!out) throw DataError("write failure on '" + path + "'");
}

inline std::vector<IntentPrediction> load_intent_predictions(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::vector<IntentPrediction> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::blank(line)) continue;
        const std::string where = path + ":" + std::to_string(lineno);
        json j = detail::parse_line(path, lineno, line);
        IntentPrediction p;
        p.id = detail::get_field<std::string>(j, "id", where);
        p.label = detail::get_field<std::string>(j, "intent", where);
        p.score = j.contains("score") ? j["score"].get<double>() : 0.0;
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace spanret
