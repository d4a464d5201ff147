#include "fcc/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>

#include "fcc/eval.hpp"
#include "fcc/gradsuite.hpp"
#include "fcc/image.hpp"
#include "fcc/inspect.hpp"
#include "fcc/model.hpp"
#include "fcc/train.hpp"

namespace fcc::cli {

namespace {

namespace fs = std::filesystem;

struct Options {
    std::string manifest;
    std::string embeddings_word, embeddings_lemma, embeddings_concept;
    std::string mode = "a";
    std::string combine = "concat";
    std::string config_file;
    std::string out_dir;
    std::string checkpoint;
    std::string branch = "vision";
    std::string scorer = "fusion";
    std::string source = "random";
    std::int64_t seed = -1;  // mandatory
    double lr = 1e-4;
    double weight_decay = 1e-5;
    std::int64_t batch = 32;
    std::int64_t epochs = 20;
    std::int64_t folds = 10;
    std::int64_t patience = 10;
    double target_train_acc = 2.0;
    std::int64_t feature = -1;
    std::int64_t top_k = 4;
    std::int64_t seeds = 20;
    double threshold = 0.325;
    bool trainable = false;
    bool bypass = false;
    bool float64 = false;
};

// option name -> setter; drives both config-file merging and validation
struct Binding {
    std::function<void(const std::string&)> set;
};

std::map<std::string, Binding> bindings(Options& o) {
    auto str = [](std::string& dst) {
        return Binding{[&dst](const std::string& v) { dst = v; }};
    };
    auto num = [](std::int64_t& dst) {
        return Binding{[&dst](const std::string& v) { dst = std::stoll(v); }};
    };
    auto dbl = [](double& dst) {
        return Binding{[&dst](const std::string& v) { dst = std::stod(v); }};
    };
    auto boolean = [](bool& dst) {
        return Binding{[&dst](const std::string& v) {
            if (v == "true" || v == "1") {
                dst = true;
            } else if (v == "false" || v == "0") {
                dst = false;
            } else {
                throw ValidationError("boolean key must be true|false, got '" + v + "'");
            }
        }};
    };
    return {
        {"manifest", str(o.manifest)},
        {"embeddings-word", str(o.embeddings_word)},
        {"embeddings-lemma", str(o.embeddings_lemma)},
        {"embeddings-concept", str(o.embeddings_concept)},
        {"mode", str(o.mode)},
        {"combine", str(o.combine)},
        {"out", str(o.out_dir)},
        {"checkpoint", str(o.checkpoint)},
        {"branch", str(o.branch)},
        {"scorer", str(o.scorer)},
        {"source", str(o.source)},
        {"seed", num(o.seed)},
        {"lr", dbl(o.lr)},
        {"weight-decay", dbl(o.weight_decay)},
        {"batch", num(o.batch)},
        {"epochs", num(o.epochs)},
        {"folds", num(o.folds)},
        {"patience", num(o.patience)},
        {"target-train-acc", dbl(o.target_train_acc)},
        {"feature", num(o.feature)},
        {"top-k", num(o.top_k)},
        {"seeds", num(o.seeds)},
        {"threshold", dbl(o.threshold)},
        {"trainable", boolean(o.trainable)},
        {"bypass", boolean(o.bypass)},
        {"float64", boolean(o.float64)},
    };
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return "";
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

std::map<std::string, std::string> load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ValidationError("cannot open config file: " + path);
    }
    std::map<std::string, std::string> out;
    std::string line;
    std::int64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ValidationError(path + ":" + std::to_string(line_no) +
                                  ": expected 'key = value'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw ValidationError(path + ":" + std::to_string(line_no) + ": empty key");
        }
        if (!out.emplace(key, value).second) {
            throw ValidationError(path + ":" + std::to_string(line_no) + ": duplicate key '" +
                                  key + "'");
        }
    }
    return out;
}

namespace {

void require_file(const std::string& path, const char* what) {
    if (path.empty()) {
        throw ValidationError(std::string("missing required --") + what);
    }
    if (!fs::exists(path)) {
        throw ValidationError(std::string(what) + " file does not exist: " + path);
    }
}

void require_seed(const Options& o) {
    if (o.seed < 0) {
        throw ValidationError("--seed is mandatory (non-negative integer)");
    }
}

// mode-driven table loading, validated before any compute
struct Tables {
    std::optional<EmbeddingTable> word, lemma, concepts;

    const EmbeddingTable* word_ptr() const { return word ? &*word : nullptr; }
    const EmbeddingTable* lemma_ptr() const { return lemma ? &*lemma : nullptr; }
    const EmbeddingTable* concept_ptr() const { return concepts ? &*concepts : nullptr; }
};

Tables load_tables(const Options& o, CombinerMode mode) {
    Tables t;
    if (mode == CombinerMode::b) {
        if (o.embeddings_word.empty()) {
            throw ValidationError("mode b requires --embeddings-word");
        }
    }
    if (mode == CombinerMode::c) {
        if (o.embeddings_lemma.empty() || o.embeddings_concept.empty()) {
            throw ValidationError("mode c requires --embeddings-lemma and --embeddings-concept");
        }
    }
    if (!o.embeddings_word.empty()) {
        require_file(o.embeddings_word, "embeddings-word");
        t.word = EmbeddingTable::load(o.embeddings_word, EmbeddingTable::Kind::word);
    }
    if (!o.embeddings_lemma.empty()) {
        require_file(o.embeddings_lemma, "embeddings-lemma");
        t.lemma = EmbeddingTable::load(o.embeddings_lemma, EmbeddingTable::Kind::lemma);
    }
    if (!o.embeddings_concept.empty()) {
        require_file(o.embeddings_concept, "embeddings-concept");
        t.concepts = EmbeddingTable::load(o.embeddings_concept, EmbeddingTable::Kind::concept_id);
    }
    return t;
}

TrainConfig train_config(const Options& o) {
    TrainConfig c;
    c.learning_rate = o.lr;
    c.weight_decay = o.weight_decay;
    c.batch_size = o.batch;
    c.epochs = o.epochs;
    c.seed = static_cast<std::uint64_t>(o.seed);
    c.fold_count = o.folds;
    c.combiner.mode = parse_combiner_mode(o.mode);
    c.combiner.op = parse_combine_op(o.combine);
    c.early_stop_patience = o.patience;
    c.target_train_accuracy = o.target_train_acc;
    c.vision_bypass = o.bypass;
    c.out_dir = o.out_dir;
    return c;
}

void echo_config(const Options& o, const std::string& command) {
    if (o.out_dir.empty()) {
        return;
    }
    fs::create_directories(o.out_dir);
    std::ofstream out(o.out_dir + "/config.resolved.txt");
    out << "command = " << command << "\n"
        << "manifest = " << o.manifest << "\n"
        << "embeddings-word = " << o.embeddings_word << "\n"
        << "embeddings-lemma = " << o.embeddings_lemma << "\n"
        << "embeddings-concept = " << o.embeddings_concept << "\n"
        << "mode = " << o.mode << "\n"
        << "combine = " << o.combine << "\n"
        << "checkpoint = " << o.checkpoint << "\n"
        << "branch = " << o.branch << "\n"
        << "scorer = " << o.scorer << "\n"
        << "source = " << o.source << "\n"
        << "seed = " << o.seed << "\n"
        << "lr = " << o.lr << "\n"
        << "weight-decay = " << o.weight_decay << "\n"
        << "batch = " << o.batch << "\n"
        << "epochs = " << o.epochs << "\n"
        << "folds = " << o.folds << "\n"
        << "patience = " << o.patience << "\n"
        << "target-train-acc = " << o.target_train_acc << "\n"
        << "feature = " << o.feature << "\n"
        << "top-k = " << o.top_k << "\n"
        << "threshold = " << o.threshold << "\n"
        << "trainable = " << (o.trainable ? "true" : "false") << "\n"
        << "bypass = " << (o.bypass ? "true" : "false") << "\n";
}

std::vector<std::int32_t> all_indices(std::int64_t n) {
    std::vector<std::int32_t> idxs(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        idxs[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(i);
    }
    return idxs;
}

int cmd_train(const Options& o) {
    require_seed(o);
    require_file(o.manifest, "manifest");
    if (o.out_dir.empty()) {
        throw ValidationError("train requires --out");
    }
    const auto mode = parse_combiner_mode(o.mode);
    auto tables = load_tables(o, mode);
    auto records = load_manifest(o.manifest);
    echo_config(o, "train");

    auto result = train_fcc(records, train_config(o), tables.word_ptr(), tables.lemma_ptr(),
                            tables.concept_ptr());
    save_checkpoint(result.model, o.out_dir + "/best.fcck");
    std::cout << "mean validation accuracy: " << result.log.mean_val_accuracy << "\n"
              << "best fold: " << result.log.best_fold << "\n"
              << "checkpoint: " << o.out_dir << "/best.fcck\n";
    return 0;
}

int cmd_eval_fcc(const Options& o) {
    require_seed(o);
    require_file(o.manifest, "manifest");
    require_file(o.checkpoint, "checkpoint");
    auto records = load_manifest(o.manifest);
    Tables tables;
    {
        // tables must match the checkpoint's stored mode
        std::ifstream probe(o.checkpoint, std::ios::binary);
        tables = load_tables(o, CombinerMode::a);  // loads whatever paths were given
    }
    auto model = load_checkpoint(o.checkpoint, tables.word_ptr(), tables.lemma_ptr(),
                                 tables.concept_ptr());
    Vocab vocab = build_vocab(records);
    CorpusRuntime corpus(records, vocab, model.word_table(), model.lemma_table(),
                         model.concept_table());
    echo_config(o, "eval-fcc");
    const double acc = eval_fcc_accuracy(model, corpus, all_indices(corpus.size()),
                                         static_cast<std::uint64_t>(o.seed), nullptr, o.bypass);
    EvalReport report;
    report.task = "fcc-accuracy";
    report.metrics["accuracy"] = acc;
    report.checkpoint_id = o.checkpoint;
    report.split = "manifest";
    if (!o.out_dir.empty()) {
        report.write(o.out_dir + "/eval_fcc.json");
    }
    std::cout << report.to_json() << "\n";
    return 0;
}

int cmd_retrieve(const Options& o) {
    require_seed(o);
    require_file(o.manifest, "manifest");
    require_file(o.checkpoint, "checkpoint");
    auto records = load_manifest(o.manifest);
    auto tables = load_tables(o, CombinerMode::a);
    auto model = load_checkpoint(o.checkpoint, tables.word_ptr(), tables.lemma_ptr(),
                                 tables.concept_ptr());
    Vocab vocab = build_vocab(records);
    CorpusRuntime corpus(records, vocab, model.word_table(), model.lemma_table(),
                         model.concept_table());
    echo_config(o, "retrieve");
    auto split = make_retrieval_split(corpus.size(), static_cast<std::uint64_t>(o.seed));
    auto report = eval_bidirectional_retrieval(model, corpus, split.test, {1, 5, 10}, o.scorer,
                                               o.bypass);
    report.checkpoint_id = o.checkpoint;
    report.split = "retrieval(test=" + std::to_string(split.test.size()) + ")";
    if (!o.out_dir.empty()) {
        report.write(o.out_dir + "/retrieval.json");
    }
    std::cout << report.to_json() << "\n";
    return 0;
}

int cmd_classify(const Options& o) {
    require_seed(o);
    require_file(o.manifest, "manifest");
    auto records = load_manifest(o.manifest);

    TransferConfig tc;
    tc.branch = o.branch == "text" ? "language" : o.branch;
    tc.trainable = o.trainable;
    tc.folds = o.folds;
    tc.epochs = o.epochs;
    tc.seed = static_cast<std::uint64_t>(o.seed);

    std::optional<FccModel> model;
    Tables tables;
    if (o.source == "random") {
        tc.source = TrunkSource::random;
    } else if (o.source == "fcc") {
        require_file(o.checkpoint, "checkpoint");
        tables = load_tables(o, CombinerMode::a);
        model.emplace(load_checkpoint(o.checkpoint, tables.word_ptr(), tables.lemma_ptr(),
                                      tables.concept_ptr()));
        tc.source = TrunkSource::fcc_checkpoint;
        tc.fcc_model = &*model;
    } else if (o.source == "external") {
        tc.source = TrunkSource::external_features;
    } else {
        throw ValidationError("--source must be random|fcc|external, got '" + o.source + "'");
    }
    echo_config(o, "classify");
    auto report = eval_transfer_classification(records, tc);
    report.checkpoint_id = o.checkpoint;
    if (!o.out_dir.empty()) {
        report.write(o.out_dir + "/classify.json");
    }
    std::cout << report.to_json() << "\n";
    return 0;
}

int cmd_inspect(const Options& o) {
    require_seed(o);
    require_file(o.manifest, "manifest");
    require_file(o.checkpoint, "checkpoint");
    if (o.out_dir.empty()) {
        throw ValidationError("inspect requires --out");
    }
    auto records = load_manifest(o.manifest);
    auto tables = load_tables(o, CombinerMode::a);
    auto model = load_checkpoint(o.checkpoint, tables.word_ptr(), tables.lemma_ptr(),
                                 tables.concept_ptr());
    Vocab vocab = build_vocab(records);
    CorpusRuntime corpus(records, vocab, model.word_table(), model.lemma_table(),
                         model.concept_table());
    echo_config(o, "inspect");
    fs::create_directories(o.out_dir);

    const std::string branch = o.branch == "language" ? "text" : o.branch;
    auto idxs = all_indices(corpus.size());
    auto profiles = rank_features(model, corpus, idxs, branch, o.top_k);

    nlohmann::json jprofiles = nlohmann::json::array();
    for (const auto& p : profiles) {
        nlohmann::json j{{"branch", p.branch},
                         {"feature", p.feature},
                         {"prominence", p.prominence},
                         {"top_ids", p.top_ids}};
        if (p.specificity >= 0) {
            j["specificity"] = p.specificity;
        }
        jprofiles.push_back(std::move(j));
    }
    {
        std::ofstream out(o.out_dir + "/profiles.json");
        out << jprofiles.dump(2) << "\n";
    }

    std::vector<std::int64_t> selected;
    if (o.feature >= 0) {
        selected.push_back(o.feature);
    } else {
        for (std::size_t i = 0; i < std::min<std::size_t>(6, profiles.size()); ++i) {
            selected.push_back(profiles[i].feature);
        }
    }
    for (auto f : selected) {
        auto top = top_activating(model, corpus, idxs, branch, f, 1);
        if (top.empty()) {
            continue;
        }
        std::int64_t rec_idx = -1;
        for (std::int64_t i = 0; i < corpus.size(); ++i) {
            if (corpus.record(i).id == top[0].first) {
                rec_idx = i;
                break;
            }
        }
        const std::string stem = o.out_dir + "/feature_" + std::to_string(f);
        if (branch == "vision") {
            auto hm = vision_heatmap(model, corpus.figure(rec_idx), f);
            write_heatmap_csv(hm, stem + ".csv");
            write_heatmap_overlay_png(hm, corpus.figure(rec_idx), stem + ".png");
        } else {
            auto scores = text_heatmap(model, corpus, rec_idx, {f});
            write_token_scores_csv(scores, stem + ".csv");
            write_token_scores_html(scores, stem + ".html");
        }
    }
    std::cout << "inspection artifacts under " << o.out_dir << "\n";
    return 0;
}

int cmd_export_features(const Options& o) {
    require_file(o.manifest, "manifest");
    require_file(o.checkpoint, "checkpoint");
    if (o.out_dir.empty()) {
        throw ValidationError("export-features requires --out");
    }
    auto records = load_manifest(o.manifest);
    auto tables = load_tables(o, CombinerMode::a);
    auto model = load_checkpoint(o.checkpoint, tables.word_ptr(), tables.lemma_ptr(),
                                 tables.concept_ptr());
    Vocab vocab = build_vocab(records);
    CorpusRuntime corpus(records, vocab, model.word_table(), model.lemma_table(),
                         model.concept_table());
    echo_config(o, "export-features");
    fs::create_directories(o.out_dir);
    const std::string branch = o.branch == "text" ? "language" : o.branch;
    const std::string path = o.out_dir + "/features_" + branch + ".txt";
    export_features(model, corpus, branch, path, o.bypass);
    std::cout << "features written to " << path << "\n";
    return 0;
}

int cmd_gradcheck(const Options& o) {
    require_seed(o);
    auto result = run_gradient_suite(static_cast<std::uint64_t>(o.seed),
                                     static_cast<int>(o.seeds), o.float64);
    std::map<std::string, std::pair<double, bool>> by_case;  // worst error, pass
    for (const auto& e : result.entries) {
        const auto slash = e.case_name.find('/');
        const std::string key = e.case_name.substr(slash + 1);
        auto& agg = by_case.try_emplace(key, 0.0, true).first->second;
        agg.first = std::max(agg.first, e.max_rel_error);
        agg.second = agg.second && e.pass;
    }
    for (const auto& [name, agg] : by_case) {
        std::cout << (agg.second ? "[PASS] " : "[FAIL] ") << name << "  max rel err "
                  << agg.first << "\n";
    }
    std::cout << (result.pass() ? "gradient check PASSED" : "gradient check FAILED") << " ("
              << result.entries.size() << " checks, worst " << result.worst() << ", tolerance "
              << result.tolerance << ", " << result.seconds << "s)\n";
    return result.pass() ? 0 : 2;
}

}  // namespace

int dispatch(const std::vector<std::string>& args) {
    CLI::App app{"figure-caption correspondence toolkit"};
    app.require_subcommand(1);

    Options o;
    std::vector<CLI::App*> subs;
    for (const char* name : {"train", "eval-fcc", "retrieve", "classify", "inspect",
                             "export-features", "gradcheck"}) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--manifest", o.manifest);
        sub->add_option("--embeddings-word", o.embeddings_word);
        sub->add_option("--embeddings-lemma", o.embeddings_lemma);
        sub->add_option("--embeddings-concept", o.embeddings_concept);
        sub->add_option("--mode", o.mode)->check(CLI::IsMember({"a", "b", "c"}));
        sub->add_option("--combine", o.combine)->check(CLI::IsMember({"concat", "add"}));
        sub->add_option("--config", o.config_file);
        sub->add_option("--out", o.out_dir);
        sub->add_option("--seed", o.seed);
        sub->add_option("--checkpoint", o.checkpoint);
        sub->add_option("--branch", o.branch)->check(CLI::IsMember({"vision", "language", "text"}));
        sub->add_option("--scorer", o.scorer)->check(CLI::IsMember({"fusion", "dot"}));
        sub->add_option("--source", o.source);
        sub->add_option("--lr", o.lr);
        sub->add_option("--weight-decay", o.weight_decay);
        sub->add_option("--batch", o.batch);
        sub->add_option("--epochs", o.epochs);
        sub->add_option("--folds", o.folds);
        sub->add_option("--patience", o.patience);
        sub->add_option("--target-train-acc", o.target_train_acc);
        sub->add_option("--feature", o.feature);
        sub->add_option("--top-k", o.top_k);
        sub->add_option("--seeds", o.seeds);
        sub->add_option("--threshold", o.threshold);
        sub->add_flag("--trainable", o.trainable);
        sub->add_flag("--bypass", o.bypass);
        sub->add_flag("--float64", o.float64);
        subs.push_back(sub);
    }

    std::vector<const char*> argv;
    argv.push_back("fcc");
    for (const auto& a : args) {
        argv.push_back(a.c_str());
    }
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        CLI::App* active = app.get_subcommands().front();

        // config file fills every option the command line left untouched
        if (!o.config_file.empty()) {
            auto kv = load_config(o.config_file);
            auto binds = bindings(o);
            for (const auto& [key, value] : kv) {
                auto it = binds.find(key);
                if (it == binds.end()) {
                    throw ValidationError("unknown config key '" + key + "'");
                }
                const std::string flag = "--" + key;
                if (active->count(flag) == 0) {
                    try {
                        it->second.set(value);
                    } catch (const ValidationError&) {
                        throw;
                    } catch (const std::exception&) {
                        throw ValidationError("config key '" + key + "' has invalid value '" +
                                              value + "'");
                    }
                }
            }
        }

        const std::string command = active->get_name();
        if (command == "train") return cmd_train(o);
        if (command == "eval-fcc") return cmd_eval_fcc(o);
        if (command == "retrieve") return cmd_retrieve(o);
        if (command == "classify") return cmd_classify(o);
        if (command == "inspect") return cmd_inspect(o);
        if (command == "export-features") return cmd_export_features(o);
        if (command == "gradcheck") return cmd_gradcheck(o);
        throw ContractError("unhandled command " + command);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const SplitError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const Error& e) {
        std::cerr << "runtime error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace fcc::cli
