#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "spanret/eval.hpp"
#include "spanret/proto.hpp"
#include "spanret/synth.hpp"
#include "spanret/train.hpp"

namespace fs = std::filesystem;
using namespace spanret;

namespace {

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw DataError(path + ": " + e.what());
    }
}

void write_json_file(const std::string& path, const json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << j.dump(2) << '\n';
    if (!out) throw DataError("write failure on '" + path + "'");
}

// Replay record next to each artifact: the fully-resolved inputs of
// the run, no timestamps, so identical flags rewrite identical bytes.
void write_sidecar(const std::string& out_path, json j) {
    write_json_file(out_path + ".run.json", std::move(j));
}

Dataset merge_datasets(const std::vector<std::string>& paths, Task task) {
    Dataset out;
    out.task = task;
    std::set<std::string> ids;
    for (const auto& p : paths) {
        Dataset d = load_jsonl(p, task);
        for (auto& ex : d.examples) {
            if (!ids.insert(ex.utterance.id).second)
                throw DataError("duplicate example id '" + ex.utterance.id +
                                "' across input files");
            out.examples.push_back(std::move(ex));
        }
    }
    return out;
}

// ---- shared flag groups ----

struct EncoderFlags {
    std::string model;
    bool frozen = false;
    std::size_t buckets = kDefaultVocabBuckets;
    std::size_t dim = kDefaultDim;
};

void add_encoder_flags(CLI::App* cmd, EncoderFlags& f) {
    auto* m = cmd->add_option("--model", f.model, "trained encoder file");
    auto* z = cmd->add_flag("--frozen", f.frozen, "use the untrained deterministic encoder");
    cmd->add_option("--buckets", f.buckets, "hash buckets for --frozen")
        ->capture_default_str();
    cmd->add_option("--dim", f.dim, "embedding width for --frozen")->capture_default_str();
    m->excludes(z);
    z->excludes(m);
}

Encoder resolve_encoder(const EncoderFlags& f) {
    if (!f.model.empty()) return load_model(f.model);
    if (f.frozen) return Encoder::frozen(f.buckets, f.dim);
    throw CLI::RequiredError("--model or --frozen");
}

json encoder_flags_to_json(const EncoderFlags& f) {
    if (!f.model.empty()) return json{{"model", f.model}};
    return json{{"frozen", true}, {"buckets", f.buckets}, {"dim", f.dim}};
}

struct DecodeFlags {
    std::string config_file;
    std::size_t max_span_len = 7;
    double tau = 0.85;
    double delta = 0.05;
    std::size_t steps = 10;
    std::size_t beam = 10;
    double lambda = 0.99;
    CLI::Option* o_config = nullptr;
    CLI::Option* o_max = nullptr;
    CLI::Option* o_tau = nullptr;
    CLI::Option* o_delta = nullptr;
    CLI::Option* o_steps = nullptr;
    CLI::Option* o_beam = nullptr;
    CLI::Option* o_lambda = nullptr;
};

void add_decode_flags(CLI::App* cmd, DecodeFlags& f) {
    f.o_config = cmd->add_option("--config", f.config_file,
                                 "JSON file with decoding parameters (flags win)");
    f.o_max = cmd->add_option("--max-span-len", f.max_span_len, "longest candidate span")
                  ->capture_default_str();
    f.o_tau = cmd->add_option("--tau", f.tau, "base retrieval threshold")
                  ->capture_default_str();
    f.o_delta = cmd->add_option("--delta", f.delta, "threshold decrement per retry")
                    ->capture_default_str();
    f.o_steps = cmd->add_option("--dyn-steps", f.steps, "threshold retries")
                    ->capture_default_str();
    f.o_beam = cmd->add_option("--beam", f.beam, "beam width")->capture_default_str();
    f.o_lambda = cmd->add_option("--lambda", f.lambda, "span merge threshold")
                     ->capture_default_str();
}

DecodeConfig decode_config_from_json(const json& j, const std::string& where) {
    if (!j.is_object()) throw DataError(where + ": expected a JSON object");
    static const std::set<std::string> known = {"max_span_len", "base_threshold",
                                                "dyn_decrement", "dyn_steps",
                                                "beam_size",    "merge_threshold"};
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!known.count(key)) throw DataError(where + ": unknown decode option '" + key + "'");
    }
    DecodeConfig cfg;
    try {
        if (j.contains("max_span_len")) cfg.max_span_len = j.at("max_span_len").get<std::size_t>();
        if (j.contains("base_threshold")) cfg.base_threshold = j.at("base_threshold").get<double>();
        if (j.contains("dyn_decrement")) cfg.dyn_decrement = j.at("dyn_decrement").get<double>();
        if (j.contains("dyn_steps")) cfg.dyn_steps = j.at("dyn_steps").get<std::size_t>();
        if (j.contains("beam_size")) cfg.beam_size = j.at("beam_size").get<std::size_t>();
        if (j.contains("merge_threshold"))
            cfg.merge_threshold = j.at("merge_threshold").get<double>();
    } catch (const json::exception& e) {
        throw DataError(where + ": bad decode option: " + e.what());
    }
    return cfg;
}

DecodeConfig resolve_decode(const DecodeFlags& f) {
    DecodeConfig cfg;
    if (f.o_config->count()) cfg = decode_config_from_json(read_json_file(f.config_file),
                                                           f.config_file);
    if (f.o_max->count()) cfg.max_span_len = f.max_span_len;
    if (f.o_tau->count()) cfg.base_threshold = f.tau;
    if (f.o_delta->count()) cfg.dyn_decrement = f.delta;
    if (f.o_steps->count()) cfg.dyn_steps = f.steps;
    if (f.o_beam->count()) cfg.beam_size = f.beam;
    if (f.o_lambda->count()) cfg.merge_threshold = f.lambda;
    validate_config(cfg);
    return cfg;
}

// The decode block of a sidecar doubles as a --config file.
json decode_config_to_json(const DecodeConfig& c) {
    return json{{"max_span_len", c.max_span_len},   {"base_threshold", c.base_threshold},
                {"dyn_decrement", c.dyn_decrement}, {"dyn_steps", c.dyn_steps},
                {"beam_size", c.beam_size},         {"merge_threshold", c.merge_threshold}};
}

// ---- prediction/gold alignment ----

template <typename Pred>
std::vector<Pred> align_by_id(const Dataset& gold, std::vector<Pred> preds,
                              const std::string& pred_path) {
    std::map<std::string, std::size_t> by_id;
    for (std::size_t i = 0; i < preds.size(); ++i)
        if (!by_id.emplace(preds[i].id, i).second)
            throw DataError(pred_path + ": duplicate prediction id '" + preds[i].id + "'");
    std::vector<Pred> aligned;
    aligned.reserve(gold.examples.size());
    for (const auto& ex : gold.examples) {
        auto it = by_id.find(ex.utterance.id);
        if (it == by_id.end())
            throw DataError(pred_path + ": no prediction for example '" + ex.utterance.id + "'");
        aligned.push_back(preds[it->second]);
    }
    if (preds.size() != gold.examples.size())
        throw DataError(pred_path + ": " + std::to_string(preds.size()) +
                        " predictions for " + std::to_string(gold.examples.size()) +
                        " gold examples");
    return aligned;
}

// ---- BIO ingestion ----

struct BioToken {
    std::string token;
    std::string tag;
    std::size_t lineno = 0;
};

std::vector<LabeledSpan> bio_to_spans(const std::vector<BioToken>& sent,
                                      const std::string& path) {
    std::vector<LabeledSpan> spans;
    bool open = false;
    for (std::size_t i = 0; i < sent.size(); ++i) {
        const std::string& tag = sent[i].tag;
        const std::string where = path + ":" + std::to_string(sent[i].lineno);
        if (tag == "O") {
            open = false;
            continue;
        }
        if (tag.size() < 3 || tag[1] != '-' || (tag[0] != 'B' && tag[0] != 'I'))
            throw DataError(where + ": bad BIO tag '" + tag + "'");
        const std::string label = tag.substr(2);
        // stray I- (no matching open span) starts a fresh span
        if (tag[0] == 'I' && open && spans.back().label == label && spans.back().end == i) {
            spans.back().end = i + 1;
        } else {
            spans.push_back({i, i + 1, label});
            open = true;
        }
    }
    return spans;
}

Dataset load_bio(const std::string& path, const std::string& id_prefix) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    Dataset ds;
    ds.task = Task::Slot;
    std::vector<BioToken> sent;
    std::size_t lineno = 0, sentno = 0;

    auto flush = [&] {
        if (sent.empty()) return;
        Utterance utt;
        utt.id = id_prefix + "-" + std::to_string(sentno++);
        for (const auto& t : sent) utt.tokens.push_back(t.token);
        ds.examples.push_back(make_slot_example(std::move(utt), bio_to_spans(sent, path)));
        sent.clear();
    };

    std::string line;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream fields(line);
        std::vector<std::string> parts;
        std::string part;
        while (fields >> part) parts.push_back(part);
        if (parts.empty()) {
            flush();
            continue;
        }
        if (parts.size() < 2)
            throw DataError(path + ":" + std::to_string(lineno) +
                            ": expected 'token ... TAG'");
        sent.push_back({parts.front(), parts.back(), lineno});
    }
    flush();
    if (ds.examples.empty()) throw DataError(path + ": no sentences found");
    return ds;
}

// ---- commands ----

struct SynthArgs {
    std::string out_dir;
    std::string grammar_file;
    std::uint64_t seed = 1;
    std::size_t source_labels = 5, dev_labels = 2, target_labels = 3;
    std::string target_prefix = "tgt";
    std::size_t source_pool = 6, target_pool = 2;
    std::size_t source_instances = 100, dev_instances = 25;
    std::size_t target_train = 30, target_test = 20;
    std::size_t min_len = 6, max_len = 10;
};

void run_synth(const SynthArgs& a, bool custom_grammar) {
    SynthGrammar g;
    if (custom_grammar) {
        g = grammar_from_json(read_json_file(a.grammar_file));
    } else {
        g = default_grammar(a.source_labels, a.dev_labels, a.target_labels, a.target_prefix,
                            a.source_pool, a.target_pool);
        g.source_instances = a.source_instances;
        g.dev_instances = a.dev_instances;
        g.target_train_instances = a.target_train;
        g.target_test_instances = a.target_test;
        g.min_len = a.min_len;
        g.max_len = a.max_len;
        validate_grammar(g);
    }

    const SynthCorpus c = generate_corpus(g, a.seed);
    fs::create_directories(a.out_dir);
    const std::vector<std::pair<std::string, const Dataset*>> files = {
        {"slot_source.jsonl", &c.slot_source},
        {"slot_dev.jsonl", &c.slot_dev},
        {"slot_target_train.jsonl", &c.slot_target_train},
        {"slot_target_test.jsonl", &c.slot_target_test},
        {"intent_source.jsonl", &c.intent_source},
        {"intent_dev.jsonl", &c.intent_dev},
        {"intent_target_train.jsonl", &c.intent_target_train},
        {"intent_target_test.jsonl", &c.intent_target_test},
    };
    json file_map;
    for (const auto& [name, ds] : files) {
        save_jsonl(*ds, (fs::path(a.out_dir) / name).string());
        file_map[name.substr(0, name.size() - 6)] = name;
    }
    write_json_file((fs::path(a.out_dir) / "manifest.json").string(),
                    json{{"command", "synth"},
                         {"seed", a.seed},
                         {"grammar", grammar_to_json(g)},
                         {"files", file_map}});
    std::cout << "wrote 8 datasets + manifest.json to " << a.out_dir << '\n';
}

struct TrainArgs {
    std::string task;
    std::vector<std::string> train_files;
    std::string dev_file;
    std::string out;
    std::string init_model;
    std::string reduction = "max";
    std::size_t batch = 5;
    double lr = 0.1;
    std::size_t steps = 4000;
    std::size_t eval_interval = 20;
    std::size_t patience = 50;
    std::uint64_t seed = 13;
    EncoderFlags init_size;  // buckets/dim reused for fresh init
};

void run_train(const TrainArgs& a, const DecodeFlags& df) {
    const Task task = parse_task(a.task);
    const Dataset source = merge_datasets(a.train_files, task);
    Dataset dev;
    dev.task = task;
    if (!a.dev_file.empty()) dev = load_jsonl(a.dev_file, task);

    Encoder enc = a.init_model.empty()
                      ? Encoder::fresh(a.init_size.buckets, a.init_size.dim, a.seed)
                      : load_model(a.init_model);

    TrainConfig tc;
    tc.reduction = parse_reduction(a.reduction);
    tc.per_class_batch = a.batch;
    tc.learning_rate = a.lr;
    tc.max_steps = a.steps;
    tc.eval_interval = a.eval_interval;
    tc.early_stop_patience = a.patience;
    tc.seed = a.seed;
    const DecodeConfig dc = resolve_decode(df);

    const TrainResult r = train(tc, source, dev, std::move(enc), dc);
    save_model(r.encoder, a.out);

    json log = json::array();
    for (const auto& e : r.log)
        log.push_back({{"step", e.step}, {"loss", e.loss}, {"dev_metric", e.dev_metric}});
    json init = a.init_model.empty()
                    ? json{{"buckets", a.init_size.buckets}, {"dim", a.init_size.dim}}
                    : json{{"model", a.init_model}};
    write_sidecar(a.out, json{{"command", "train"},
                              {"task", a.task},
                              {"train", a.train_files},
                              {"dev", a.dev_file},
                              {"out", a.out},
                              {"init", init},
                              {"reduction", a.reduction},
                              {"per_class_batch", a.batch},
                              {"learning_rate", a.lr},
                              {"max_steps", a.steps},
                              {"eval_interval", a.eval_interval},
                              {"early_stop_patience", a.patience},
                              {"seed", a.seed},
                              {"decode", decode_config_to_json(dc)},
                              {"log", log},
                              {"best_dev_metric", r.best_dev_metric},
                              {"best_step", r.best_step}});
    std::cout << "wrote " << a.out;
    if (!a.dev_file.empty())
        std::cout << " (best dev " << r.best_dev_metric << " @ step " << r.best_step << ")";
    std::cout << '\n';
}

struct IndexArgs {
    std::string task;
    std::vector<std::string> support_files;
    std::vector<std::string> source_files;
    std::string out;
    std::string variant = "all";
    std::size_t k = 5;
    std::uint64_t seed = 1;
};

void run_build_index(const IndexArgs& a, const EncoderFlags& ef) {
    const Task task = parse_task(a.task);
    const Encoder enc = resolve_encoder(ef);

    std::vector<Dataset> targets, sources;
    for (const auto& p : a.support_files) targets.push_back(load_jsonl(p, task));
    for (const auto& p : a.source_files) sources.push_back(load_jsonl(p, task));
    std::vector<const Dataset*> tptrs, sptrs;
    for (const auto& d : targets) tptrs.push_back(&d);
    for (const auto& d : sources) sptrs.push_back(&d);

    SupportSetSpec spec{parse_support_variant(a.variant), a.k, a.seed};
    const RetrievalIndex index =
        build_index(tptrs, sptrs, enc, spec,
                    task == Task::Slot ? IndexKind::Slot : IndexKind::Intent);
    save_index(index, a.out);
    write_sidecar(a.out, json{{"command", "build-index"},
                              {"task", a.task},
                              {"support", a.support_files},
                              {"source", a.source_files},
                              {"out", a.out},
                              {"variant", a.variant},
                              {"k", a.k},
                              {"seed", a.seed},
                              {"encoder", encoder_flags_to_json(ef)}});
    std::cout << "wrote " << a.out << " (" << index.entries.size() << " entries)\n";
}

struct ProtoArgs {
    std::string task;
    std::vector<std::string> support_files;
    std::string out;
};

void run_build_proto(const ProtoArgs& a, const EncoderFlags& ef) {
    const Task task = parse_task(a.task);
    const Encoder enc = resolve_encoder(ef);
    const Dataset support = merge_datasets(a.support_files, task);
    const PrototypeTable table = build_prototypes(
        support, enc, task == Task::Slot ? IndexKind::Slot : IndexKind::Intent);
    save_prototypes(table, a.out);
    write_sidecar(a.out, json{{"command", "build-proto"},
                              {"task", a.task},
                              {"support", a.support_files},
                              {"out", a.out},
                              {"encoder", encoder_flags_to_json(ef)}});
    std::cout << "wrote " << a.out << " (" << table.entries.size() << " prototypes)\n";
}

struct PredictArgs {
    std::string task;
    std::string input;
    std::string out;
    std::string index_file;
    std::string proto_file;
};

void run_predict(const PredictArgs& a, const EncoderFlags& ef, const DecodeFlags& df) {
    const Task task = parse_task(a.task);
    const Encoder enc = resolve_encoder(ef);
    const DecodeConfig cfg = resolve_decode(df);
    const std::vector<Utterance> utts = load_utterances(a.input);

    RetrievalIndex index;
    if (!a.index_file.empty()) {
        index = load_index(a.index_file);
    } else if (!a.proto_file.empty()) {
        index = to_index(load_prototypes(a.proto_file));
    } else {
        throw CLI::RequiredError("--index or --proto");
    }

    if (task == Task::Slot) {
        std::vector<SlotPrediction> preds;
        for (const auto& u : utts) {
            const DecodeResult res = decode(u, index, enc, cfg);
            SlotPrediction p;
            p.id = u.id;
            for (const auto& c : res.spans) p.spans.push_back({c.start, c.end, c.label, c.score});
            preds.push_back(std::move(p));
        }
        save_slot_predictions(preds, a.out);
    } else {
        std::vector<IntentPrediction> preds;
        for (const auto& u : utts) preds.push_back(predict_intent(u, index, enc));
        save_intent_predictions(preds, a.out);
    }

    json source = a.index_file.empty() ? json{{"proto", a.proto_file}}
                                       : json{{"index", a.index_file}};
    write_sidecar(a.out, json{{"command", "predict"},
                              {"task", a.task},
                              {"input", a.input},
                              {"out", a.out},
                              {"candidates", source},
                              {"encoder", encoder_flags_to_json(ef)},
                              {"decode", decode_config_to_json(cfg)}});
    std::cout << "wrote " << a.out << " (" << utts.size() << " predictions)\n";
}

struct EvalArgs {
    std::string task;
    std::string gold_file;
    std::string pred_file;
    std::string out;
    std::vector<std::string> target_labels;
};

void run_eval(const EvalArgs& a) {
    const Task task = parse_task(a.task);
    const Dataset gold = load_jsonl(a.gold_file, task);

    json report;
    std::string summary;
    if (task == Task::Slot) {
        auto preds = align_by_id(gold, load_slot_predictions(a.pred_file), a.pred_file);
        std::vector<std::vector<LabeledSpan>> g, p;
        for (const auto& ex : gold.examples) g.push_back(ex.spans);
        for (const auto& pr : preds) {
            std::vector<LabeledSpan> spans;
            for (const auto& s : pr.spans) spans.push_back({s.start, s.end, s.label});
            p.push_back(std::move(spans));
        }
        const SpanF1Report r = span_f1(g, p);
        report = json{{"task", "slot"},
                      {"true_positives", r.true_positives},
                      {"predicted_count", r.predicted_count},
                      {"gold_count", r.gold_count},
                      {"precision", r.precision},
                      {"recall", r.recall},
                      {"f1", r.f1}};
        summary = "f1 " + std::to_string(r.f1);
    } else {
        auto preds = align_by_id(gold, load_intent_predictions(a.pred_file), a.pred_file);
        std::vector<std::string> g, p;
        for (const auto& ex : gold.examples) g.push_back(ex.intent);
        for (const auto& pr : preds) p.push_back(pr.label);
        const std::set<std::string> targets(a.target_labels.begin(), a.target_labels.end());
        const AccuracyReport r = intent_accuracy(g, p, targets);
        json per_label;
        for (const auto& [label, counts] : r.per_label)
            per_label[label] = {{"correct", counts.first}, {"total", counts.second}};
        report = json{{"task", "intent"},
                      {"avg", r.avg},
                      {"tgt", r.tgt ? json(*r.tgt) : json(nullptr)},
                      {"src", r.src ? json(*r.src) : json(nullptr)},
                      {"per_label", per_label}};
        summary = "avg accuracy " + std::to_string(r.avg);
    }
    write_json_file(a.out, report);
    write_sidecar(a.out, json{{"command", "eval"},
                              {"task", a.task},
                              {"gold", a.gold_file},
                              {"pred", a.pred_file},
                              {"out", a.out},
                              {"target_labels", a.target_labels}});
    std::cout << summary << ", wrote " << a.out << '\n';
}

struct EpisodeArgs {
    std::string task;
    std::string data_file;
    std::string out;
    std::size_t episodes = 100;
    std::size_t queries = 10;
    std::size_t k = 5;
    std::uint64_t seed = 1;
};

void run_episodes_cmd(const EpisodeArgs& a, const EncoderFlags& ef, const DecodeFlags& df) {
    const Task task = parse_task(a.task);
    const Encoder enc = resolve_encoder(ef);
    const DecodeConfig cfg = resolve_decode(df);
    const Dataset data = load_jsonl(a.data_file, task);

    EpisodeSpec spec;
    spec.n_episodes = a.episodes;
    spec.queries_per_episode = a.queries;
    spec.k = a.k;
    spec.seed = a.seed;
    const EpisodeReport r = run_episodes(data, spec, enc, cfg);

    write_json_file(a.out, json{{"task", a.task},
                                {"per_episode", r.per_episode},
                                {"mean", r.mean},
                                {"std", r.stddev},
                                {"seeds", r.episode_seeds}});
    write_sidecar(a.out, json{{"command", "episodes"},
                              {"task", a.task},
                              {"data", a.data_file},
                              {"out", a.out},
                              {"episodes", a.episodes},
                              {"queries", a.queries},
                              {"k", a.k},
                              {"seed", a.seed},
                              {"encoder", encoder_flags_to_json(ef)},
                              {"decode", decode_config_to_json(cfg)}});
    std::cout << "mean " << r.mean << " +- " << r.stddev << " over " << a.episodes
              << " episodes, wrote " << a.out << '\n';
}

struct SweepArgs {
    std::string dev_file;
    std::string index_file;
    std::string out;
    double grid_start = 0.85;
    double grid_stop = 0.97;
    double grid_step = 0.05;
};

void run_sweep(const SweepArgs& a, const EncoderFlags& ef, const DecodeFlags& df) {
    const Encoder enc = resolve_encoder(ef);
    const DecodeConfig base = resolve_decode(df);
    const Dataset dev = load_jsonl(a.dev_file, Task::Slot);
    const RetrievalIndex index = load_index(a.index_file);

    const SweepResult r =
        sweep_threshold(dev, index, enc, base, a.grid_start, a.grid_stop, a.grid_step);
    json points = json::array();
    for (const auto& p : r.points) points.push_back({{"tau", p.tau}, {"f1", p.f1}});
    write_json_file(a.out, json{{"points", points}, {"best_tau", r.best_tau}});
    write_sidecar(a.out, json{{"command", "sweep-threshold"},
                              {"dev", a.dev_file},
                              {"index", a.index_file},
                              {"out", a.out},
                              {"grid_start", a.grid_start},
                              {"grid_stop", a.grid_stop},
                              {"grid_step", a.grid_step},
                              {"encoder", encoder_flags_to_json(ef)},
                              {"decode", decode_config_to_json(base)}});
    std::cout << "best tau " << r.best_tau << ", wrote " << a.out << '\n';
}

struct BioArgs {
    std::string in_file;
    std::string out;
    std::string id_prefix = "bio";
};

void run_convert_bio(const BioArgs& a) {
    const Dataset ds = load_bio(a.in_file, a.id_prefix);
    save_jsonl(ds, a.out);
    write_sidecar(a.out, json{{"command", "convert-bio"},
                              {"in", a.in_file},
                              {"out", a.out},
                              {"id_prefix", a.id_prefix}});
    std::cout << "wrote " << a.out << " (" << ds.examples.size() << " examples)\n";
}

struct SampleArgs {
    std::string data_file;
    std::string out_dir;
    std::size_t categories = 2;
    std::size_t intents = 3;
    std::uint64_t seed = 1;
};

void run_sample_domains(const SampleArgs& a) {
    if (a.categories == 0 || a.intents == 0)
        throw DataError("--categories and --intents must be positive");
    const Dataset data = load_jsonl(a.data_file, Task::Intent);

    std::map<std::string, std::set<std::string>> cat_intents;
    for (const auto& ex : data.examples) {
        if (ex.category.empty())
            throw DataError("example '" + ex.utterance.id +
                            "' has no category metadata; sample-domains needs it");
        cat_intents[ex.category].insert(ex.intent);
    }
    std::vector<std::string> cats;
    for (const auto& [c, unused] : cat_intents) {
        (void)unused;
        cats.push_back(c);
    }
    if (a.categories > cats.size())
        throw DataError("asked for " + std::to_string(a.categories) + " categories, only " +
                        std::to_string(cats.size()) + " available");

    fs::create_directories(a.out_dir);
    json resamples = json::array();
    for (std::uint64_t r = 0; r < 3; ++r) {
        Rng rng(derive_seed(a.seed, r));
        std::vector<std::string> cpool = cats;
        rng.shuffle(cpool);
        cpool.resize(a.categories);
        std::sort(cpool.begin(), cpool.end());

        std::set<std::pair<std::string, std::string>> chosen;
        json chosen_json;
        for (const auto& cat : cpool) {
            std::vector<std::string> ipool(cat_intents[cat].begin(), cat_intents[cat].end());
            if (a.intents > ipool.size())
                throw DataError("category '" + cat + "' has " + std::to_string(ipool.size()) +
                                " intents, asked for " + std::to_string(a.intents));
            rng.shuffle(ipool);
            ipool.resize(a.intents);
            std::sort(ipool.begin(), ipool.end());
            for (const auto& i : ipool) chosen.insert({cat, i});
            chosen_json[cat] = ipool;
        }

        Dataset out;
        out.task = Task::Intent;
        for (const auto& ex : data.examples)
            if (chosen.count({ex.category, ex.intent})) out.examples.push_back(ex);
        const std::string name = "resample-" + std::to_string(r) + ".jsonl";
        save_jsonl(out, (fs::path(a.out_dir) / name).string());
        resamples.push_back(
            {{"file", name}, {"chosen", chosen_json}, {"examples", out.examples.size()}});
    }
    write_json_file((fs::path(a.out_dir) / "manifest.json").string(),
                    json{{"command", "sample-domains"},
                         {"data", a.data_file},
                         {"seed", a.seed},
                         {"categories", a.categories},
                         {"intents", a.intents},
                         {"resamples", resamples}});
    std::cout << "wrote 3 resamples + manifest.json to " << a.out_dir << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"retrieval-based few-shot intent classification and slot filling"};
    app.require_subcommand(1);

    const auto task_check = CLI::IsMember({"slot", "intent"});

    SynthArgs synth;
    auto* c_synth = app.add_subcommand("synth", "generate a synthetic few-shot corpus");
    c_synth->add_option("--out-dir", synth.out_dir, "output directory")->required();
    auto* o_grammar = c_synth->add_option("--grammar", synth.grammar_file,
                                          "grammar JSON (overrides shaping flags)");
    c_synth->add_option("--seed", synth.seed, "generation seed")->capture_default_str();
    for (auto* opt : {c_synth->add_option("--source-labels", synth.source_labels),
                      c_synth->add_option("--dev-labels", synth.dev_labels),
                      c_synth->add_option("--target-labels", synth.target_labels),
                      c_synth->add_option("--target-prefix", synth.target_prefix),
                      c_synth->add_option("--source-pool", synth.source_pool),
                      c_synth->add_option("--target-pool", synth.target_pool),
                      c_synth->add_option("--source-instances", synth.source_instances),
                      c_synth->add_option("--dev-instances", synth.dev_instances),
                      c_synth->add_option("--target-train-instances", synth.target_train),
                      c_synth->add_option("--target-test-instances", synth.target_test),
                      c_synth->add_option("--min-len", synth.min_len),
                      c_synth->add_option("--max-len", synth.max_len)})
        opt->capture_default_str()->excludes(o_grammar);
    c_synth->callback([&] { run_synth(synth, o_grammar->count() > 0); });

    TrainArgs train_args;
    DecodeFlags train_decode;
    auto* c_train = app.add_subcommand("train", "train the encoder with the batch objective");
    c_train->add_option("--task", train_args.task, "slot|intent")
        ->required()
        ->check(task_check);
    c_train->add_option("--train", train_args.train_files, "training JSONL (repeatable)")
        ->required();
    c_train->add_option("--dev", train_args.dev_file, "dev JSONL for early stopping");
    c_train->add_option("--out", train_args.out, "model output file")->required();
    c_train->add_option("--reduction", train_args.reduction, "mean|max|minmax")
        ->capture_default_str()
        ->check(CLI::IsMember({"mean", "max", "minmax"}));
    c_train->add_option("--B", train_args.batch, "samples per class per batch")
        ->capture_default_str();
    c_train->add_option("--lr", train_args.lr, "learning rate")->capture_default_str();
    c_train->add_option("--steps", train_args.steps, "max gradient steps")
        ->capture_default_str();
    c_train->add_option("--eval-interval", train_args.eval_interval, "steps between dev evals")
        ->capture_default_str();
    c_train->add_option("--patience", train_args.patience, "stale dev evals before stopping")
        ->capture_default_str();
    c_train->add_option("--seed", train_args.seed, "init + batch sampling seed")
        ->capture_default_str();
    auto* o_init = c_train->add_option("--init-model", train_args.init_model,
                                       "warm-start from an existing model");
    c_train->add_option("--buckets", train_args.init_size.buckets, "hash buckets for fresh init")
        ->capture_default_str()
        ->excludes(o_init);
    c_train->add_option("--dim", train_args.init_size.dim, "embedding width for fresh init")
        ->capture_default_str()
        ->excludes(o_init);
    add_decode_flags(c_train, train_decode);
    c_train->callback([&] { run_train(train_args, train_decode); });

    IndexArgs index_args;
    EncoderFlags index_enc;
    auto* c_index = app.add_subcommand("build-index", "embed support sets into an index");
    c_index->add_option("--task", index_args.task, "slot|intent")
        ->required()
        ->check(task_check);
    c_index->add_option("--support", index_args.support_files,
                        "target support JSONL (repeatable)")
        ->required();
    c_index->add_option("--source", index_args.source_files,
                        "source JSONL (dropped by --variant tgt, repeatable)");
    c_index->add_option("--out", index_args.out, "index output file")->required();
    c_index->add_option("--variant", index_args.variant, "all|balance|tgt")
        ->capture_default_str()
        ->check(CLI::IsMember({"all", "balance", "tgt"}));
    c_index->add_option("--k", index_args.k, "per-label cap for --variant balance")
        ->capture_default_str();
    c_index->add_option("--seed", index_args.seed, "balance subsampling seed")
        ->capture_default_str();
    add_encoder_flags(c_index, index_enc);
    c_index->callback([&] { run_build_index(index_args, index_enc); });

    ProtoArgs proto_args;
    EncoderFlags proto_enc;
    auto* c_proto = app.add_subcommand("build-proto", "build per-label prototype vectors");
    c_proto->add_option("--task", proto_args.task, "slot|intent")
        ->required()
        ->check(task_check);
    c_proto->add_option("--support", proto_args.support_files, "support JSONL (repeatable)")
        ->required();
    c_proto->add_option("--out", proto_args.out, "prototype output file")->required();
    add_encoder_flags(c_proto, proto_enc);
    c_proto->callback([&] { run_build_proto(proto_args, proto_enc); });

    PredictArgs predict_args;
    EncoderFlags predict_enc;
    DecodeFlags predict_decode;
    auto* c_predict = app.add_subcommand("predict", "decode spans or classify intents");
    c_predict->add_option("--task", predict_args.task, "slot|intent")
        ->required()
        ->check(task_check);
    c_predict->add_option("--input", predict_args.input, "utterances JSONL")->required();
    c_predict->add_option("--out", predict_args.out, "predictions JSONL")->required();
    auto* o_pred_index = c_predict->add_option("--index", predict_args.index_file,
                                               "retrieval index file");
    c_predict->add_option("--proto", predict_args.proto_file, "prototype table file")
        ->excludes(o_pred_index);
    add_encoder_flags(c_predict, predict_enc);
    add_decode_flags(c_predict, predict_decode);
    c_predict->callback([&] { run_predict(predict_args, predict_enc, predict_decode); });

    EvalArgs eval_args;
    auto* c_eval = app.add_subcommand("eval", "score predictions against gold data");
    c_eval->add_option("--task", eval_args.task, "slot|intent")->required()->check(task_check);
    c_eval->add_option("--gold", eval_args.gold_file, "gold JSONL")->required();
    c_eval->add_option("--pred", eval_args.pred_file, "predictions JSONL")->required();
    c_eval->add_option("--out", eval_args.out, "report JSON output")->required();
    c_eval->add_option("--target-label", eval_args.target_labels,
                       "labels for the tgt accuracy split (repeatable)");
    c_eval->callback([&] { run_eval(eval_args); });

    EpisodeArgs episode_args;
    EncoderFlags episode_enc;
    DecodeFlags episode_decode;
    auto* c_episodes = app.add_subcommand("episodes", "run seeded few-shot episodes");
    c_episodes->add_option("--task", episode_args.task, "slot|intent")
        ->required()
        ->check(task_check);
    c_episodes->add_option("--data", episode_args.data_file, "domain JSONL")->required();
    c_episodes->add_option("--out", episode_args.out, "report JSON output")->required();
    c_episodes->add_option("--episodes", episode_args.episodes, "episode count")
        ->capture_default_str();
    c_episodes->add_option("--queries", episode_args.queries, "queries per episode")
        ->capture_default_str();
    c_episodes->add_option("--k", episode_args.k, "support shots per label")
        ->capture_default_str();
    c_episodes->add_option("--seed", episode_args.seed, "episode sampling seed")
        ->capture_default_str();
    add_encoder_flags(c_episodes, episode_enc);
    add_decode_flags(c_episodes, episode_decode);
    c_episodes->callback([&] { run_episodes_cmd(episode_args, episode_enc, episode_decode); });

    SweepArgs sweep_args;
    EncoderFlags sweep_enc;
    DecodeFlags sweep_decode;
    auto* c_sweep = app.add_subcommand("sweep-threshold",
                                       "grid-search the retrieval threshold on dev F1");
    c_sweep->add_option("--dev", sweep_args.dev_file, "slot dev JSONL")->required();
    c_sweep->add_option("--index", sweep_args.index_file, "retrieval index file")->required();
    c_sweep->add_option("--out", sweep_args.out, "report JSON output")->required();
    c_sweep->add_option("--grid-start", sweep_args.grid_start)->capture_default_str();
    c_sweep->add_option("--grid-stop", sweep_args.grid_stop)->capture_default_str();
    c_sweep->add_option("--grid-step", sweep_args.grid_step)->capture_default_str();
    add_encoder_flags(c_sweep, sweep_enc);
    add_decode_flags(c_sweep, sweep_decode);
    c_sweep->callback([&] { run_sweep(sweep_args, sweep_enc, sweep_decode); });

    BioArgs bio_args;
    auto* c_bio = app.add_subcommand("convert-bio", "convert BIO-tagged text to span JSONL");
    c_bio->add_option("--in", bio_args.in_file, "BIO input (token ... TAG per line)")
        ->required();
    c_bio->add_option("--out", bio_args.out, "slot JSONL output")->required();
    c_bio->add_option("--id-prefix", bio_args.id_prefix, "example id prefix")
        ->capture_default_str();
    c_bio->callback([&] { run_convert_bio(bio_args); });

    SampleArgs sample_args;
    auto* c_sample = app.add_subcommand("sample-domains",
                                        "draw three seeded category/intent resamples");
    c_sample->add_option("--data", sample_args.data_file, "intent JSONL with categories")
        ->required();
    c_sample->add_option("--out-dir", sample_args.out_dir, "output directory")->required();
    c_sample->add_option("--categories", sample_args.categories, "categories per resample")
        ->capture_default_str();
    c_sample->add_option("--intents", sample_args.intents, "intents per category")
        ->capture_default_str();
    c_sample->add_option("--seed", sample_args.seed, "resampling seed")->capture_default_str();
    c_sample->callback([&] { run_sample_domains(sample_args); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return 3;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
