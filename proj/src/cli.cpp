#include "deci/cli.hpp"

#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

namespace deci {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Field {
    std::string key;
    bool is_path = false;
    std::function<ordered_json(const RunConfig&)> get;
    std::function<void(RunConfig&, const json&)> set;
};

[[noreturn]] void bad_type(const std::string& key, const char* expected) {
    throw ConfigError("config key " + key + " expects " + expected);
}

template <typename T>
Field count_field(std::string key, T RunConfig::*section, std::size_t T::*member) {
    return {key, false, [=](const RunConfig& c) { return ordered_json((c.*section).*member); },
            [=](RunConfig& c, const json& v) {
                if (!v.is_number_unsigned()) bad_type(key, "a non-negative integer");
                (c.*section).*member = v.get<std::size_t>();
            }};
}

template <typename T>
Field real_field(std::string key, T RunConfig::*section, double T::*member) {
    return {key, false, [=](const RunConfig& c) { return ordered_json((c.*section).*member); },
            [=](RunConfig& c, const json& v) {
                if (!v.is_number()) bad_type(key, "a number");
                (c.*section).*member = v.get<double>();
            }};
}

template <typename T>
Field seed_field(std::string key, T RunConfig::*section, std::uint64_t T::*member) {
    return {key, false, [=](const RunConfig& c) { return ordered_json((c.*section).*member); },
            [=](RunConfig& c, const json& v) {
                if (!v.is_number_unsigned()) bad_type(key, "a non-negative integer");
                (c.*section).*member = v.get<std::uint64_t>();
            }};
}

Field path_field(std::string key, std::string RunPaths::*member) {
    return {key, true, [=](const RunConfig& c) { return ordered_json(c.paths.*member); },
            [=](RunConfig& c, const json& v) {
                if (!v.is_string()) bad_type(key, "a string");
                c.paths.*member = v.get<std::string>();
            }};
}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = [] {
        std::vector<Field> f;
        using S = SyntheticConfig;
        using M = ModelConfig;
        using T = TrainConfig;
        f.push_back(count_field("data.n_labels", &RunConfig::data, &S::n_labels));
        f.push_back(count_field("data.vocab_size", &RunConfig::data, &S::vocab_size));
        f.push_back(count_field("data.n_train", &RunConfig::data, &S::n_train));
        f.push_back(count_field("data.n_dev", &RunConfig::data, &S::n_dev));
        f.push_back(count_field("data.n_test", &RunConfig::data, &S::n_test));
        f.push_back(count_field("data.doc_len", &RunConfig::data, &S::doc_len));
        f.push_back(count_field("data.keywords_per_label", &RunConfig::data, &S::keywords_per_label));
        f.push_back(count_field("data.confounded_label", &RunConfig::data, &S::confounded_label));
        f.push_back({"data.confound_min_age", false,
                     [](const RunConfig& c) { return ordered_json(c.data.confound_min_age); },
                     [](RunConfig& c, const json& v) {
                         if (!v.is_number_integer()) bad_type("data.confound_min_age", "an integer");
                         c.data.confound_min_age = v.get<int>();
                     }});
        f.push_back(real_field("data.p_conf_train", &RunConfig::data, &S::p_conf_train));
        f.push_back(real_field("data.p_conf_test", &RunConfig::data, &S::p_conf_test));
        f.push_back(real_field("data.noise_rate", &RunConfig::data, &S::noise_rate));
        f.push_back(seed_field("data.seed", &RunConfig::data, &S::seed));

        f.push_back(count_field("model.d_e", &RunConfig::model, &M::d_e));
        f.push_back(count_field("model.d_h", &RunConfig::model, &M::d_h));
        f.push_back(count_field("model.n_experts", &RunConfig::model, &M::n_experts));
        f.push_back(count_field("model.max_len", &RunConfig::model, &M::max_len));
        f.push_back({"model.gating", false,
                     [](const RunConfig& c) { return ordered_json(std::string(to_string(c.model.gating))); },
                     [](RunConfig& c, const json& v) {
                         if (!v.is_string()) bad_type("model.gating", "a string");
                         c.model.gating = parse_gating_mode(v.get<std::string>());
                     }});

        f.push_back(real_field("train.alpha", &RunConfig::train, &T::alpha));
        f.push_back(real_field("train.beta", &RunConfig::train, &T::beta));
        f.push_back(real_field("train.learning_rate", &RunConfig::train, &T::learning_rate));
        f.push_back(count_field("train.epochs", &RunConfig::train, &T::epochs));
        f.push_back(count_field("train.batch_size", &RunConfig::train, &T::batch_size));
        f.push_back(seed_field("train.seed", &RunConfig::train, &T::seed));
        f.push_back(real_field("train.adam_beta1", &RunConfig::train, &T::adam_beta1));
        f.push_back(real_field("train.adam_beta2", &RunConfig::train, &T::adam_beta2));
        f.push_back(real_field("train.adam_eps", &RunConfig::train, &T::adam_eps));
        f.push_back({"train.grad_clip_norm", false,
                     [](const RunConfig& c) {
                         return c.train.grad_clip_norm ? ordered_json(*c.train.grad_clip_norm)
                                                       : ordered_json(nullptr);
                     },
                     [](RunConfig& c, const json& v) {
                         if (v.is_null()) {
                             c.train.grad_clip_norm.reset();
                         } else if (v.is_number()) {
                             c.train.grad_clip_norm = v.get<double>();
                         } else {
                             bad_type("train.grad_clip_norm", "a number or null");
                         }
                     }});
        f.push_back({"train.stop_bias_gradients", false,
                     [](const RunConfig& c) { return ordered_json(c.train.stop_bias_gradients); },
                     [](RunConfig& c, const json& v) {
                         if (!v.is_boolean()) bad_type("train.stop_bias_gradients", "a boolean");
                         c.train.stop_bias_gradients = v.get<bool>();
                     }});

        f.push_back({"eval.ks", false, [](const RunConfig& c) { return ordered_json(c.ks); },
                     [](RunConfig& c, const json& v) {
                         if (v.is_number_unsigned()) {
                             c.ks = {v.get<std::size_t>()};
                             return;
                         }
                         if (!v.is_array()) bad_type("eval.ks", "an array of positive integers");
                         std::vector<std::size_t> ks;
                         for (const auto& k : v) {
                             if (!k.is_number_unsigned()) bad_type("eval.ks", "an array of positive integers");
                             ks.push_back(k.get<std::size_t>());
                         }
                         c.ks = std::move(ks);
                     }});
        f.push_back({"eval.mode", false,
                     [](const RunConfig& c) { return ordered_json(std::string(to_string(c.mode))); },
                     [](RunConfig& c, const json& v) {
                         if (!v.is_string()) bad_type("eval.mode", "a string");
                         c.mode = parse_inference_mode(v.get<std::string>());
                     }});
        f.push_back({"eval.split", false, [](const RunConfig& c) { return ordered_json(c.split); },
                     [](RunConfig& c, const json& v) {
                         if (!v.is_string()) bad_type("eval.split", "a string");
                         c.split = v.get<std::string>();
                     }});

        f.push_back(path_field("paths.data_dir", &RunPaths::data_dir));
        f.push_back(path_field("paths.checkpoint", &RunPaths::checkpoint));
        f.push_back(path_field("paths.epoch_log", &RunPaths::epoch_log));
        f.push_back(path_field("paths.report", &RunPaths::report));
        f.push_back(path_field("paths.scores", &RunPaths::scores));
        f.push_back(path_field("paths.input", &RunPaths::input));
        f.push_back(path_field("paths.output", &RunPaths::output));
        return f;
    }();
    return table;
}

const Field& find_field(const std::string& key) {
    for (const auto& f : fields()) {
        if (f.key == key) return f;
    }
    throw ConfigError("unknown config key: " + key);
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_text(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << content;
    if (!out) throw DataError("write failed for " + path.string());
}

void require_file(const fs::path& path) {
    if (!fs::is_regular_file(path)) throw DataError("missing file: " + path.string());
}

std::string pretty(const ordered_json& j) { return j.dump(2) + "\n"; }

DeciModel load_model(const RunConfig& cfg) {
    require_file(cfg.paths.checkpoint);
    return load_checkpoint(cfg.paths.checkpoint).model;
}

ordered_json metrics_json(const DevMetrics& m) {
    EpochRecord r;
    r.dev = m;
    return to_json(r)["dev_metrics"];
}

// ---- subcommands -----------------------------------------------------------

int cmd_gen_data(const RunConfig& cfg, std::ostream& out) {
    cfg.data.validate();
    const fs::path dir = cfg.paths.data_dir;
    SyntheticCorpus corpus = generate_synthetic(cfg.data);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw DataError("cannot create output directory " + dir.string());

    write_text(dir / "train.jsonl", to_jsonl(corpus.train));
    write_text(dir / "dev.jsonl", to_jsonl(corpus.dev));
    write_text(dir / "test.jsonl", to_jsonl(corpus.test));
    std::string labels;
    for (const auto& l : corpus.labels.labels()) labels += l + "\n";
    write_text(dir / "labels.txt", labels);

    ordered_json manifest;
    manifest["seed"] = cfg.data.seed;
    manifest["counts"] = {{"train", corpus.train.size()},
                          {"dev", corpus.dev.size()},
                          {"test", corpus.test.size()}};
    manifest["confounded_label"] = corpus.labels.label(cfg.data.confounded_label);
    manifest["config"] = cfg.to_json(false);
    write_text(dir / "manifest.json", pretty(manifest));
    out << "wrote " << corpus.train.size() << "/" << corpus.dev.size() << "/" << corpus.test.size()
        << " train/dev/test documents to " << dir.string() << "\n";
    return exit_code::kOk;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
    const fs::path dir = cfg.paths.data_dir;
    for (const char* name : {"labels.txt", "train.jsonl", "dev.jsonl"}) require_file(dir / name);
    const LabelSpace labels = load_label_file(dir / "labels.txt");
    const Corpus train_docs = load_jsonl(dir / "train.jsonl", {&labels, true});
    const Corpus dev_docs = load_jsonl(dir / "dev.jsonl", {&labels, true});

    Rng init(cfg.train.seed);
    DeciModel model = DeciModel::create(cfg.model, Vocabulary::build(train_docs), labels, init);

    const fs::path ckpt = cfg.paths.checkpoint;
    if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
    fs::path log_path = cfg.paths.epoch_log;
    if (log_path.empty()) {
        log_path = ckpt;
        log_path += ".epochs.jsonl";
    }
    std::ofstream log(log_path, std::ios::binary | std::ios::trunc);
    if (!log) throw DataError("cannot write " + log_path.string());

    TrainResult result = train(model, train_docs, dev_docs, cfg.train, [&](const EpochRecord& r) {
        log << to_json(r).dump() << "\n";
        log.flush();
    });

    const ordered_json echo = cfg.to_json(false);
    save_checkpoint(ckpt, model, echo);
    ordered_json manifest;
    manifest["checkpoint"] = ckpt.filename().string();
    manifest["best_epoch"] = result.best_epoch;
    manifest["config"] = echo;
    fs::path manifest_path = ckpt;
    manifest_path += ".manifest.json";
    write_text(manifest_path, pretty(manifest));

    ordered_json summary;
    summary["best_epoch"] = result.best_epoch;
    summary["dev_metrics"] = metrics_json(result.log.at(result.best_epoch - 1).dev);
    out << summary.dump() << "\n";
    return exit_code::kOk;
}

Corpus eval_documents(const RunConfig& cfg, const LabelSpace& labels) {
    const fs::path dir = cfg.paths.data_dir;
    const fs::path label_file = dir / "labels.txt";
    if (fs::is_regular_file(label_file) && !(load_label_file(label_file) == labels)) {
        throw DataError("label space in " + label_file.string() + " does not match the checkpoint");
    }
    fs::path path = cfg.paths.input.empty() ? dir / (cfg.split + ".jsonl") : fs::path(cfg.paths.input);
    require_file(path);
    return load_jsonl(path, {&labels, true});
}

std::string ablation_table(const std::vector<AblationRow>& rows, const LabelSpace& labels,
                           std::size_t k) {
    std::ostringstream os;
    os << std::left << std::setw(16) << "mode" << std::right;
    for (const char* h : {"macroAUC", "microAUC", "macroF1", "microF1"}) os << std::setw(10) << h;
    os << std::setw(10) << ("P@" + std::to_string(k)) << std::setw(12) << "conf.F1"
       << std::setw(10) << "FPRgap" << "\n";
    os << std::fixed << std::setprecision(4);
    for (const auto& row : rows) {
        const auto& r = row.report;
        os << std::left << std::setw(16) << to_string(row.mode) << std::right << std::setw(10)
           << r.macro_auc << std::setw(10) << r.micro_auc << std::setw(10) << r.macro_f1
           << std::setw(10) << r.micro_f1 << std::setw(10) << r.p_at_k.at(k) << std::setw(12)
           << row.confounded_f1 << std::setw(10);
        if (r.disparity && r.disparity->gap) {
            os << *r.disparity->gap;
        } else {
            os << "n/a";
        }
        os << "\n";
    }
    os << "confounded label: " << labels.label(rows.front().report.disparity->label) << "\n";
    return os.str();
}

int cmd_eval(const RunConfig& cfg, bool ablate_all, std::ostream& out) {
    const DeciModel model = load_model(cfg);
    const Corpus docs = eval_documents(cfg, model.labels);
    if (docs.empty()) throw DataError("no documents to evaluate");
    if (cfg.data.confounded_label >= model.labels.size()) {
        throw ConfigError("data.confounded_label is outside the checkpoint's label space");
    }
    for (std::size_t k : cfg.ks) {
        if (k == 0 || k > model.labels.size()) throw ConfigError("eval.ks entries must lie in [1, N_L]");
    }
    const auto scores = score_corpus(model, docs);
    const Matrix gold = gold_matrix(model.labels, docs);
    const ConfoundSpec confound{cfg.data.confounded_label, cfg.data.confound_min_age};

    ordered_json report;
    report["config"] = cfg.to_json(false);
    report["n_docs"] = docs.size();
    std::string table;
    if (ablate_all) {
        auto rows = ablate(scores, docs, gold, cfg.ks, confound);
        report["ablation"] = to_json(rows, model.labels);
        table = ablation_table(rows, model.labels, cfg.ks.empty() ? 5 : cfg.ks.front());
    } else {
        EvalReport r = evaluate_scores(scores, gold, cfg.mode, cfg.ks);
        r.disparity = disparity(scores, docs, gold, confound, cfg.mode);
        report["report"] = to_json(r, model.labels);
        report["bias_audit"] = {
            {"deci", to_json(disparity(scores, docs, gold, confound, InferenceMode::Deci), model.labels)},
            {"naive", to_json(disparity(scores, docs, gold, confound, InferenceMode::Naive), model.labels)}};
    }
    if (!cfg.paths.scores.empty()) write_text(cfg.paths.scores, score_dump_jsonl(docs, scores, cfg.mode));
    if (cfg.paths.report.empty()) {
        out << pretty(report);
    } else {
        write_text(cfg.paths.report, pretty(report));
        if (!table.empty()) out << table;
    }
    return exit_code::kOk;
}

int cmd_predict(const RunConfig& cfg, std::ostream& out) {
    const DeciModel model = load_model(cfg);
    if (cfg.paths.input.empty()) throw ConfigError("predict needs --input");
    require_file(cfg.paths.input);
    const Corpus docs = load_jsonl(cfg.paths.input, {nullptr, false});
    std::string lines;
    for (const auto& doc : docs) {
        const PathwayScores s = forward(model, doc);
        const Vector dec = decision_scores(s, cfg.mode);
        ordered_json j;
        j["doc_id"] = doc.id;
        json codes = json::array();
        for (std::size_t l = 0; l < dec.size(); ++l) {
            if (dec[l] > 0.0) codes.push_back(model.labels.label(l));
        }
        j["codes"] = codes;
        j["scores"] = sigmoid(dec);
        lines += j.dump() + "\n";
    }
    if (cfg.paths.output.empty()) {
        out << lines;
    } else {
        write_text(cfg.paths.output, lines);
    }
    return exit_code::kOk;
}

}  // namespace

ordered_json RunConfig::to_json(bool include_paths) const {
    ordered_json j = ordered_json::object();
    for (const auto& f : fields()) {
        if (f.is_path && !include_paths) continue;
        j[f.key] = f.get(*this);
    }
    return j;
}

namespace {

// Enum parsers throw std::invalid_argument; report those as config errors
// naming the key.
void set_field(RunConfig& cfg, const std::string& key, const json& value) {
    const Field& f = find_field(key);
    try {
        f.set(cfg, value);
    } catch (const ConfigError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw ConfigError(key + ": " + e.what());
    }
}

}  // namespace

void RunConfig::apply(const json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [key, value] : j.items()) set_field(*this, key, value);
}

void RunConfig::set(const std::string& key, const std::string& value) {
    json parsed = json::parse(value, nullptr, false);
    set_field(*this, key, parsed.is_discarded() ? json(value) : parsed);
}

void RunConfig::validate() const {
    data.validate();
    train.validate();
    if (model.n_experts == 0 || model.d_e == 0 || model.d_h == 0) {
        throw ConfigError("model dimensions and n_experts must be positive");
    }
    if (model.max_len < 2) throw ConfigError("model.max_len must be at least 2");
    for (std::size_t k : ks) {
        if (k == 0) throw ConfigError("eval.ks entries must be positive");
    }
}

RunConfig load_run_config(const std::string& path) {
    RunConfig cfg;
    std::string text;
    try {
        text = read_text(path);
    } catch (const DataError&) {
        throw ConfigError("cannot read config file " + path);
    }
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config file " + path + " is not valid JSON");
    cfg.apply(j);
    return cfg;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"DECI: debiased multi-label coding with counterfactual pathway subtraction", "deci"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_path, data_dir, checkpoint, input;
    std::vector<std::string> overrides;
    app.add_option("--config", config_path, "JSON config with flat dotted keys");
    app.add_option("--seed", seed, "Seed for data generation and training");
    app.add_option("--out", out_path,
                   "Output: data dir (gen-data), checkpoint (train), report (eval), predictions (predict)");
    app.add_option("--data", data_dir, "Dataset directory");
    app.add_option("--checkpoint", checkpoint, "Checkpoint path");
    app.add_option("--set", overrides, "Override any config key: KEY=VALUE")->take_all();

    auto* gen = app.add_subcommand("gen-data", "Generate the synthetic confounded corpus");
    auto* trn = app.add_subcommand("train", "Train a model and write a checkpoint");
    std::optional<double> alpha, beta, lr;
    std::optional<std::size_t> epochs;
    trn->add_option("--alpha", alpha, "Weight of the demographic pathway loss");
    trn->add_option("--beta", beta, "Weight of the uniform-expert pathway loss");
    trn->add_option("--epochs", epochs, "Training epochs");
    trn->add_option("--lr", lr, "Adam learning rate");

    auto* evl = app.add_subcommand("eval", "Evaluate a checkpoint");
    std::string mode, split;
    bool ablate_all = false;
    evl->add_option("--mode", mode, "deci, naive, knowledge-only, wo-zd or wo-ze");
    evl->add_flag("--ablate", ablate_all, "Evaluate all five inference modes");
    evl->add_option("--split", split, "Dataset split file to evaluate (train, dev, test)");
    evl->add_option("--input", input, "Explicit JSONL file to evaluate");
    std::string scores_path;
    evl->add_option("--scores", scores_path, "Write per-document scores as JSONL");

    auto* pred = app.add_subcommand("predict", "Predict codes for a JSONL file of documents");
    pred->add_option("--input", input, "JSONL documents (codes optional)")->required();
    pred->add_option("--mode", mode, "Inference mode (default deci)");

    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? exit_code::kOk : exit_code::kUsage;
    }

    try {
        RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
        for (const auto& o : overrides) {
            auto eq = o.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects KEY=VALUE, got " + o);
            cfg.set(o.substr(0, eq), o.substr(eq + 1));
        }
        if (seed) cfg.data.seed = cfg.train.seed = *seed;
        if (!data_dir.empty()) cfg.paths.data_dir = data_dir;
        if (!checkpoint.empty()) cfg.paths.checkpoint = checkpoint;
        if (!input.empty()) cfg.paths.input = input;
        if (alpha) cfg.train.alpha = *alpha;
        if (beta) cfg.train.beta = *beta;
        if (epochs) cfg.train.epochs = *epochs;
        if (lr) cfg.train.learning_rate = *lr;
        if (!mode.empty()) {
            try {
                cfg.mode = parse_inference_mode(mode);
            } catch (const std::invalid_argument& e) {
                throw ConfigError(e.what());
            }
        }
        if (!split.empty()) cfg.split = split;
        if (!scores_path.empty()) cfg.paths.scores = scores_path;
        if (!out_path.empty()) {
            if (gen->parsed()) cfg.paths.data_dir = out_path;
            if (trn->parsed()) cfg.paths.checkpoint = out_path;
            if (evl->parsed()) cfg.paths.report = out_path;
            if (pred->parsed()) cfg.paths.output = out_path;
        }
        cfg.validate();

        if (gen->parsed()) return cmd_gen_data(cfg, out);
        if (trn->parsed()) return cmd_train(cfg, out);
        if (evl->parsed()) return cmd_eval(cfg, ablate_all, out);
        return cmd_predict(cfg, out);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return exit_code::kUsage;
    } catch (const NumericalError& e) {
        err << "numerical failure: " << e.what() << "\n";
        return exit_code::kNumerical;
    } catch (const EvaluationError& e) {
        err << "numerical failure: " << e.what() << "\n";
        return exit_code::kNumerical;
    } catch (const FormatError& e) {
        err << "bad checkpoint: " << e.what() << "\n";
        return exit_code::kData;
    } catch (const ParseError& e) {
        err << "parse error: " << e.what() << "\n";
        return exit_code::kData;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_code::kData;
    }
}

}  // namespace deci
