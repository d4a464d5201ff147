#include "fcc/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace fcc {

namespace {

double now_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
    std::uint64_t h = base ^ 0x9e3779b97f4a7c15ULL;
    h ^= a + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    h ^= b + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    return h;
}

// copy parameter values (not trainability) between models by name
void copy_params_by_name(const ParamRefs<float>& src, const ParamRefs<float>& dst) {
    std::unordered_map<std::string, const ParamT<float>*> by_name;
    for (const auto* p : src) {
        by_name.emplace(p->name, p);
    }
    for (auto* d : dst) {
        auto it = by_name.find(d->name);
        if (it == by_name.end()) {
            continue;
        }
        if (it->second->value.shape() != d->value.shape()) {
            throw ContractError("parameter '" + d->name + "' shape mismatch while copying trunks");
        }
        std::copy(it->second->value.data().begin(), it->second->value.data().end(),
                  d->value.data().begin());
    }
}

double batch_accuracy(const Tensor& probabilities, const std::vector<bool>& labels) {
    std::int64_t correct = 0;
    for (std::int64_t i = 0; i < probabilities.dim(0); ++i) {
        const bool predicted = probabilities.data()[i * 2 + 1] > probabilities.data()[i * 2 + 0];
        if (predicted == labels[static_cast<std::size_t>(i)]) {
            ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(probabilities.dim(0));
}

}  // namespace

void TrainConfig::validate() const {
    if (learning_rate <= 0 || weight_decay < 0) {
        throw ConfigError("learning rate must be positive and weight decay non-negative");
    }
    if (fold_count < 2) {
        throw ConfigError("fold count must be >= 2");
    }
    if (batch_size < 2 || batch_size % 2 != 0) {
        throw ConfigError("batch size must be even and >= 2");
    }
    if (epochs < 1) {
        throw ConfigError("epochs must be >= 1");
    }
}

std::string RunLog::to_jsonl(bool include_timing) const {
    std::ostringstream out;
    for (const auto& fold : folds) {
        for (const auto& e : fold.epochs) {
            nlohmann::json j{{"fold", fold.fold},          {"epoch", e.epoch},
                             {"train_loss", e.train_loss}, {"train_accuracy", e.train_accuracy}};
            if (include_timing) {
                j["seconds"] = e.seconds;
            }
            if (e.val_accuracy >= 0) {
                j["val_loss"] = e.val_loss;
                j["val_accuracy"] = e.val_accuracy;
            }
            out << j.dump() << "\n";
        }
        nlohmann::json summary{{"fold", fold.fold}, {"final_val_accuracy", fold.final_val_accuracy}};
        out << summary.dump() << "\n";
    }
    if (!folds.empty()) {
        out << nlohmann::json{{"mean_val_accuracy", mean_val_accuracy}, {"best_fold", best_fold}}.dump()
            << "\n";
    }
    return out.str();
}

void RunLog::write(const std::string& path) const {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write run log: " + path);
    }
    out << to_jsonl();
}

PairForward forward_pair_batch(FccModel& model, const CorpusRuntime& corpus, const PairBatch& batch,
                               Tape<float>* tape, ops::BnMode bn_mode, bool vision_bypass) {
    if (batch.items.empty()) {
        throw ContractError("empty pair batch");
    }
    const std::int64_t diff = batch.positives() - batch.negatives();
    if (diff < -1 || diff > 1) {
        throw ContractError("pair batch violates the positive/negative balance");
    }

    // encode each distinct figure and caption once; route rows by gather
    std::vector<std::int32_t> fig_unique, cap_unique;
    std::vector<std::int32_t> fig_slot(batch.items.size()), cap_slot(batch.items.size());
    {
        std::unordered_map<std::int32_t, std::int32_t> fig_map, cap_map;
        for (std::size_t i = 0; i < batch.items.size(); ++i) {
            const auto& it = batch.items[i];
            auto [fit, fnew] = fig_map.emplace(it.figure, static_cast<std::int32_t>(fig_unique.size()));
            if (fnew) {
                fig_unique.push_back(it.figure);
            }
            fig_slot[i] = fit->second;
            auto [cit, cnew] = cap_map.emplace(it.caption, static_cast<std::int32_t>(cap_unique.size()));
            if (cnew) {
                cap_unique.push_back(it.caption);
            }
            cap_slot[i] = cit->second;
        }
    }

    Tensor v_unique;
    if (vision_bypass) {
        v_unique = batch_vision_features(model, corpus, fig_unique, true);
    } else {
        auto images = corpus.figures_tensor(fig_unique);
        v_unique = model.vision_forward(tape, images, bn_mode);
    }

    std::vector<const EncodedCaption*> caps;
    caps.reserve(cap_unique.size());
    for (auto idx : cap_unique) {
        caps.push_back(&corpus.caption(idx));
    }
    auto combined = model.combine_embeddings(tape, caps);
    auto t_unique = model.language_forward(tape, combined);

    const Shape rows{static_cast<std::int64_t>(batch.items.size())};
    auto v = ops::embedding_lookup(tape, v_unique, fig_slot, rows);
    auto t = ops::embedding_lookup(tape, t_unique, cap_slot, rows);

    PairForward out;
    out.logits = model.fusion_logits(tape, v, t);
    out.probabilities = softmax_probabilities(out.logits);
    out.labels.reserve(batch.items.size());
    for (const auto& it : batch.items) {
        out.labels.push_back(it.positive);
    }
    out.accuracy = batch_accuracy(out.probabilities, out.labels);
    return out;
}

namespace {

// forward-only balanced-pair metrics on a record subset
std::pair<double, double> evaluate_pairs(FccModel& model, const CorpusRuntime& corpus,
                                         const std::vector<std::int32_t>& idxs, std::uint64_t seed,
                                         bool vision_bypass) {
    // sample balanced pairs within the subset by index remapping
    PairSampler sampler(static_cast<std::int64_t>(idxs.size()), seed);
    double loss_sum = 0.0, acc_sum = 0.0;
    std::int64_t items = 0;
    for (auto& batch : sampler.epoch(0)) {
        for (auto& item : batch.items) {
            item.figure = idxs[static_cast<std::size_t>(item.figure)];
            item.caption = idxs[static_cast<std::size_t>(item.caption)];
        }
        auto fwd = forward_pair_batch(model, corpus, batch, nullptr, ops::BnMode::infer,
                                      vision_bypass);
        const auto b = static_cast<double>(batch.items.size());
        loss_sum += static_cast<double>(fcc_loss(fwd.probabilities, fwd.labels).item()) * b;
        acc_sum += fwd.accuracy * b;
        items += batch.items.size();
    }
    return {loss_sum / static_cast<double>(items), acc_sum / static_cast<double>(items)};
}

}  // namespace

FoldLog train_fcc_single(FccModel& model, const CorpusRuntime& corpus,
                         std::vector<std::int32_t> train_idx, std::vector<std::int32_t> val_idx,
                         const TrainConfig& config, std::int64_t fold_index) {
    config.validate();
    FoldLog log;
    log.fold = fold_index;

    Adam optimizer(AdamConfig{config.learning_rate, config.weight_decay});
    auto trainable = model.trainable_params();

    PairSampler sampler(static_cast<std::int64_t>(train_idx.size()),
                        derive_seed(config.seed, static_cast<std::uint64_t>(fold_index)),
                        config.batch_size);

    const std::string last_good = config.out_dir.empty()
                                      ? ""
                                      : config.out_dir + "/fold" + std::to_string(fold_index) +
                                            "_last.fcck";

    double best_val = -1.0;
    std::int64_t since_best = 0;
    for (std::int64_t epoch = 0; epoch < config.epochs; ++epoch) {
        const double t0 = now_seconds();
        double loss_sum = 0.0, acc_sum = 0.0;
        std::int64_t items = 0;
        for (auto& batch : sampler.epoch(epoch)) {
            for (auto& item : batch.items) {  // subset indices -> corpus indices
                item.figure = train_idx[static_cast<std::size_t>(item.figure)];
                item.caption = train_idx[static_cast<std::size_t>(item.caption)];
            }
            Tape<float> tape;
            PairForward fwd;
            Tensor loss;
            try {
                fwd = forward_pair_batch(model, corpus, batch, &tape, ops::BnMode::train,
                                         config.vision_bypass);
                loss = fcc_training_loss(&tape, fwd.logits, fwd.labels);
            } catch (const NumericError& e) {
                throw NumericError(std::string("training diverged: ") + e.what() +
                                   (last_good.empty() ? "" : "; last good checkpoint: " + last_good));
            }
            const auto b = static_cast<double>(batch.items.size());
            loss_sum += static_cast<double>(loss.item()) * b;
            acc_sum += fwd.accuracy * b;
            items += batch.items.size();
            tape.backward(loss);
            optimizer.step(trainable);
            optimizer.zero_grad(trainable);
        }

        EpochLog e;
        e.epoch = epoch;
        e.train_loss = loss_sum / static_cast<double>(items);
        e.train_accuracy = acc_sum / static_cast<double>(items);
        if (val_idx.size() >= 2) {  // a single held-out record admits no negative pair
            auto [vl, va] = evaluate_pairs(model, corpus, val_idx,
                                           derive_seed(config.seed, static_cast<std::uint64_t>(fold_index),
                                                       static_cast<std::uint64_t>(epoch) + 1),
                                           config.vision_bypass);
            e.val_loss = vl;
            e.val_accuracy = va;
        }
        e.seconds = now_seconds() - t0;
        log.epochs.push_back(e);

        if (!last_good.empty()) {
            save_checkpoint(model, last_good);
        }
        if (e.train_accuracy >= config.target_train_accuracy) {
            break;
        }
        if (val_idx.size() >= 2 && config.early_stop_patience > 0) {
            if (e.val_accuracy > best_val) {
                best_val = e.val_accuracy;
                since_best = 0;
            } else if (++since_best >= config.early_stop_patience) {
                break;
            }
        }
    }
    if (!log.epochs.empty()) {
        log.final_val_accuracy = log.epochs.back().val_accuracy;
    }
    return log;
}

TrainFccResult train_fcc(const std::vector<CorpusRecord>& records, const TrainConfig& config,
                         const EmbeddingTable* word_table, const EmbeddingTable* lemma_table,
                         const EmbeddingTable* concept_table) {
    config.validate();
    Vocab vocab = build_vocab(records, config.vocab_max_size, config.vocab_min_count);
    CorpusRuntime corpus(records, vocab,
                         config.combiner.mode == CombinerMode::b ? word_table : nullptr,
                         config.combiner.mode == CombinerMode::c ? lemma_table : nullptr,
                         config.combiner.mode == CombinerMode::c ? concept_table : nullptr);

    if (!config.out_dir.empty()) {
        std::filesystem::create_directories(config.out_dir);
    }

    auto splits = make_kfold_splits(corpus.size(), config.fold_count, config.seed);

    RunLog log;
    std::optional<FccModel> best;
    double best_acc = -2.0;
    std::int64_t best_fold = 0;
    double acc_sum = 0.0;
    for (std::int64_t fold = 0; fold < config.fold_count; ++fold) {
        std::vector<std::int32_t> val = splits.folds[static_cast<std::size_t>(fold)];
        std::vector<std::int32_t> train;
        for (std::int64_t f = 0; f < config.fold_count; ++f) {
            if (f == fold) {
                continue;
            }
            const auto& part = splits.folds[static_cast<std::size_t>(f)];
            train.insert(train.end(), part.begin(), part.end());
        }

        FccModelConfig mc;
        mc.vocab_size = vocab.size();
        mc.combiner = config.combiner;
        mc.init_seed = static_cast<std::uint32_t>(derive_seed(config.seed, 77, static_cast<std::uint64_t>(fold)));
        FccModel model(mc, corpus.word_table(), corpus.lemma_table(), corpus.concept_table());

        auto fold_log = train_fcc_single(model, corpus, train, val, config, fold);
        acc_sum += fold_log.final_val_accuracy;
        if (!config.out_dir.empty()) {
            save_checkpoint(model, config.out_dir + "/fold" + std::to_string(fold) + ".fcck");
        }
        if (fold_log.final_val_accuracy > best_acc) {
            best_acc = fold_log.final_val_accuracy;
            best_fold = fold;
            best.emplace(std::move(model));
        }
        log.folds.push_back(std::move(fold_log));
    }
    log.mean_val_accuracy = acc_sum / static_cast<double>(config.fold_count);
    log.best_fold = best_fold;
    if (!config.out_dir.empty()) {
        log.write(config.out_dir + "/runlog.jsonl");
    }
    return {std::move(*best), std::move(log), std::move(vocab)};
}

// ----------------------------------------------------------------------------
// Supervised baselines
// ----------------------------------------------------------------------------

std::vector<std::string> label_taxonomy(const std::vector<CorpusRecord>& records) {
    std::set<std::string> labels;
    for (const auto& r : records) {
        if (!r.label.has_value()) {
            throw ConfigError("record '" + r.id + "' has no label");
        }
        labels.insert(*r.label);
    }
    if (labels.size() < 2) {
        throw ConfigError("classification requires at least 2 classes, corpus has " +
                          std::to_string(labels.size()));
    }
    return {labels.begin(), labels.end()};
}

ClassifierModel::ClassifierModel(const std::string& branch, std::int64_t vocab_size,
                                 std::int64_t n_classes, std::uint32_t init_seed,
                                 std::int64_t max_seq_len)
    : branch_(branch), max_seq_len_(max_seq_len) {
    if (branch != "vision" && branch != "language") {
        throw ConfigError("branch must be vision|language, got '" + branch + "'");
    }
    if (n_classes < 2) {
        throw ConfigError("classifier requires at least 2 classes");
    }
    std::mt19937 rng(init_seed);
    if (branch == "vision") {
        const std::int64_t widths[5] = {3, 64, 128, 256, 512};
        vision_blocks.resize(4);
        for (int i = 0; i < 4; ++i) {
            vision_blocks[static_cast<std::size_t>(i)].init(
                widths[i], widths[i + 1], i == 3, "vision.block" + std::to_string(i + 1), rng);
        }
    } else {
        embedding.init(vocab_size, CombinerConfig::kOutputDim, "language.embedding", rng);
        language_blocks.resize(3);
        language_blocks[0].init(CombinerConfig::kOutputDim, kFeatureDim, 5, false, "language.block1", rng);
        language_blocks[1].init(kFeatureDim, kFeatureDim, 5, false, "language.block2", rng);
        language_blocks[2].init(kFeatureDim, kFeatureDim, 5, true, "language.block3", rng);
    }
    head_hidden.init(kFeatureDim, kFusionHidden, "head.hidden", rng);
    head_out.init(kFusionHidden, n_classes, "head.out", rng);
}

void ClassifierModel::set_classes(std::vector<std::string> classes) {
    if (static_cast<std::int64_t>(classes.size()) != head_out.w.value.dim(1)) {
        throw ConfigError("class count " + std::to_string(classes.size()) +
                          " does not match the head width " +
                          std::to_string(head_out.w.value.dim(1)));
    }
    classes_ = std::move(classes);
}

Tensor ClassifierModel::logits(Tape<float>* tape, const CorpusRuntime& corpus,
                               std::span<const std::int32_t> idxs, ops::BnMode bn_mode) const {
    Tensor feats;
    if (branch_ == "vision") {
        Tensor h = corpus.figures_tensor(idxs);
        for (const auto& b : vision_blocks) {
            h = b.forward(tape, h, bn_mode);
        }
        feats = h;
    } else {
        std::vector<std::int32_t> ids;
        ids.reserve(idxs.size() * static_cast<std::size_t>(max_seq_len_));
        for (auto idx : idxs) {
            const auto& cap = corpus.caption(idx);
            ids.insert(ids.end(), cap.word_ids.begin(), cap.word_ids.end());
        }
        Tensor h = embedding.forward(tape, ids, {static_cast<std::int64_t>(idxs.size()), max_seq_len_});
        for (const auto& b : language_blocks) {
            h = b.forward(tape, h);
        }
        feats = h;
    }
    return head_logits(tape, feats);
}

Tensor ClassifierModel::head_logits(Tape<float>* tape, const Tensor& features) const {
    auto hidden = ops::relu(tape, head_hidden.forward(tape, features));
    return head_out.forward(tape, hidden);
}

Tensor ClassifierModel::features(const CorpusRuntime& corpus,
                                 std::span<const std::int32_t> idxs) const {
    const std::int64_t chunk = branch_ == "vision" ? 8 : 16;
    Tensor out({static_cast<std::int64_t>(idxs.size()), kFeatureDim});
    for (std::size_t begin = 0; begin < idxs.size(); begin += static_cast<std::size_t>(chunk)) {
        const std::size_t end = std::min(idxs.size(), begin + static_cast<std::size_t>(chunk));
        auto part = idxs.subspan(begin, end - begin);
        Tensor h;
        if (branch_ == "vision") {
            h = corpus.figures_tensor(part);
            for (const auto& b : vision_blocks) {
                h = b.forward(nullptr, h, ops::BnMode::infer);
            }
        } else {
            std::vector<std::int32_t> ids;
            for (auto idx : part) {
                const auto& cap = corpus.caption(idx);
                ids.insert(ids.end(), cap.word_ids.begin(), cap.word_ids.end());
            }
            h = embedding.forward(nullptr, ids, {static_cast<std::int64_t>(part.size()), max_seq_len_});
            for (const auto& b : language_blocks) {
                h = b.forward(nullptr, h);
            }
        }
        std::copy(h.data().begin(), h.data().end(),
                  out.data().begin() + static_cast<std::int64_t>(begin) * kFeatureDim);
    }
    return out;
}

ParamRefs<float> ClassifierModel::trunk_params() {
    ParamRefs<float> out;
    if (branch_ == "vision") {
        for (auto& b : vision_blocks) {
            for (auto* p : b.params()) out.push_back(p);
        }
    } else {
        for (auto* p : embedding.params()) out.push_back(p);
        for (auto& b : language_blocks) {
            for (auto* p : b.params()) out.push_back(p);
        }
    }
    return out;
}

ParamRefs<float> ClassifierModel::head_params() {
    ParamRefs<float> out;
    for (auto* p : head_hidden.params()) out.push_back(p);
    for (auto* p : head_out.params()) out.push_back(p);
    return out;
}

ParamRefs<float> ClassifierModel::params() {
    auto out = trunk_params();
    for (auto* p : head_params()) {
        out.push_back(p);
    }
    return out;
}

ClassifierResult train_supervised_classifier(const std::vector<CorpusRecord>& records,
                                             const std::string& branch, const TrainConfig& config) {
    auto classes = label_taxonomy(records);
    std::unordered_map<std::string, std::int32_t> class_index;
    for (std::size_t i = 0; i < classes.size(); ++i) {
        class_index.emplace(classes[i], static_cast<std::int32_t>(i));
    }

    Vocab vocab = build_vocab(records, config.vocab_max_size, config.vocab_min_count);
    CorpusRuntime corpus(records, vocab);

    ClassifierModel model(branch, vocab.size(), static_cast<std::int64_t>(classes.size()),
                          static_cast<std::uint32_t>(derive_seed(config.seed, 13)));
    model.set_classes(classes);

    Adam optimizer(AdamConfig{config.learning_rate, config.weight_decay});
    auto trainable = model.params();

    std::vector<std::int32_t> labels(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        labels[i] = class_index.at(*records[i].label);
    }

    RunLog log;
    FoldLog fold_log;
    double last_acc = 0.0;
    std::mt19937_64 rng(derive_seed(config.seed, 29));
    std::vector<std::int32_t> order(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        order[i] = static_cast<std::int32_t>(i);
    }

    for (std::int64_t epoch = 0; epoch < config.epochs; ++epoch) {
        const double t0 = now_seconds();
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        std::int64_t correct = 0;
        std::size_t begin = 0;
        while (begin < order.size()) {
            std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(config.batch_size));
            // batchnorm cannot normalize a single image; fold a trailing
            // singleton into the previous batch
            if (branch == "vision" && order.size() - end == 1) {
                end = order.size();
            }
            std::span<const std::int32_t> idxs(order.data() + begin, end - begin);
            std::vector<std::int32_t> batch_labels;
            batch_labels.reserve(idxs.size());
            for (auto idx : idxs) {
                batch_labels.push_back(labels[static_cast<std::size_t>(idx)]);
            }
            Tape<float> tape;
            auto logits = model.logits(&tape, corpus, idxs,
                                       idxs.size() > 1 ? ops::BnMode::train : ops::BnMode::infer);
            auto loss = ops::nll_loss(&tape, ops::log_softmax(&tape, logits), batch_labels);
            loss_sum += static_cast<double>(loss.item()) * static_cast<double>(idxs.size());
            auto probs = softmax_probabilities(logits);
            for (std::size_t i = 0; i < idxs.size(); ++i) {
                std::int64_t arg = 0;
                for (std::int64_t c = 1; c < probs.dim(1); ++c) {
                    if (probs.data()[static_cast<std::int64_t>(i) * probs.dim(1) + c] >
                        probs.data()[static_cast<std::int64_t>(i) * probs.dim(1) + arg]) {
                        arg = c;
                    }
                }
                if (arg == batch_labels[i]) {
                    ++correct;
                }
            }
            tape.backward(loss);
            optimizer.step(trainable);
            optimizer.zero_grad(trainable);
            begin = end;
        }
        EpochLog e;
        e.epoch = epoch;
        e.train_loss = loss_sum / static_cast<double>(order.size());
        e.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
        e.seconds = now_seconds() - t0;
        last_acc = e.train_accuracy;
        fold_log.epochs.push_back(e);
        if (e.train_accuracy >= config.target_train_accuracy) {
            break;
        }
    }
    log.folds.push_back(std::move(fold_log));
    return {std::move(model), std::move(log), std::move(vocab), last_acc};
}

std::pair<bool, double> DirectCombination::score(const Tensor& vision_probs,
                                                 const Tensor& text_probs, std::int64_t row_v,
                                                 std::int64_t row_t) const {
    const std::int64_t c = vision_probs.dim(1);
    double dot = 0.0;
    for (std::int64_t j = 0; j < c; ++j) {
        dot += static_cast<double>(vision_probs.data()[row_v * c + j]) *
               static_cast<double>(text_probs.data()[row_t * c + j]);
    }
    return {dot > threshold, dot};
}

std::vector<std::pair<bool, double>> baseline_direct_combination(
    const ClassifierModel& vision_cls, const ClassifierModel& text_cls, const CorpusRuntime& corpus,
    const std::vector<PairItem>& pairs, double threshold) {
    if (vision_cls.classes() != text_cls.classes()) {
        throw ConfigError("direct combination requires classifiers trained on one label taxonomy");
    }
    std::vector<std::int32_t> idxs(static_cast<std::size_t>(corpus.size()));
    for (std::size_t i = 0; i < idxs.size(); ++i) {
        idxs[i] = static_cast<std::int32_t>(i);
    }
    auto v_logits = vision_cls.head_logits(nullptr, vision_cls.features(corpus, idxs));
    auto t_logits = text_cls.head_logits(nullptr, text_cls.features(corpus, idxs));
    auto v_probs = softmax_probabilities(v_logits);
    auto t_probs = softmax_probabilities(t_logits);

    DirectCombination dc{threshold};
    std::vector<std::pair<bool, double>> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) {
        out.push_back(dc.score(v_probs, t_probs, p.figure, p.caption));
    }
    return out;
}

PretrainBaselineResult baseline_supervised_pretrain(ClassifierModel& vision_cls,
                                                    ClassifierModel& text_cls,
                                                    const CorpusRuntime& corpus,
                                                    const TrainConfig& config) {
    config.validate();
    FccModelConfig mc;
    mc.vocab_size = corpus.vocab().size();
    mc.combiner = config.combiner;
    if (mc.combiner.mode != CombinerMode::a) {
        throw ConfigError("supervised pre-training uses learnt word embeddings only (mode a)");
    }
    mc.init_seed = static_cast<std::uint32_t>(derive_seed(config.seed, 31));
    FccModel model(mc);
    copy_params_by_name(vision_cls.trunk_params(), model.vision_params());
    copy_params_by_name(text_cls.trunk_params(), model.language_params());
    set_trainable(model.vision_params(), false);
    set_trainable(model.language_params(), false);

    // frozen trunks in inference mode produce constant per-record features, so
    // encode each record once and train the fusion layers on the cache
    std::vector<std::int32_t> all(static_cast<std::size_t>(corpus.size()));
    for (std::size_t i = 0; i < all.size(); ++i) {
        all[i] = static_cast<std::int32_t>(i);
    }
    Tensor v_feats = batch_vision_features(model, corpus, all, false);
    Tensor t_feats = batch_language_features(model, corpus, all);

    Adam optimizer(AdamConfig{config.learning_rate, config.weight_decay});
    auto fusion = model.fusion_params();
    PairSampler sampler(corpus.size(), derive_seed(config.seed, 37), config.batch_size);

    RunLog log;
    FoldLog fold_log;
    for (std::int64_t epoch = 0; epoch < config.epochs; ++epoch) {
        const double t0 = now_seconds();
        double loss_sum = 0.0, acc_sum = 0.0;
        std::int64_t items = 0;
        for (const auto& batch : sampler.epoch(epoch)) {
            std::vector<std::int32_t> fig_rows, cap_rows;
            std::vector<bool> labels;
            for (const auto& it : batch.items) {
                fig_rows.push_back(it.figure);
                cap_rows.push_back(it.caption);
                labels.push_back(it.positive);
            }
            Tape<float> tape;
            const Shape rows{static_cast<std::int64_t>(batch.items.size())};
            auto v = ops::embedding_lookup(&tape, v_feats, fig_rows, rows);
            auto t = ops::embedding_lookup(&tape, t_feats, cap_rows, rows);
            auto logits = model.fusion_logits(&tape, v, t);
            auto loss = fcc_training_loss(&tape, logits, labels);
            auto probs = softmax_probabilities(logits);
            const auto b = static_cast<double>(batch.items.size());
            loss_sum += static_cast<double>(loss.item()) * b;
            acc_sum += batch_accuracy(probs, labels) * b;
            items += batch.items.size();
            tape.backward(loss);
            optimizer.step(fusion);
            optimizer.zero_grad(fusion);
        }
        EpochLog e;
        e.epoch = epoch;
        e.train_loss = loss_sum / static_cast<double>(items);
        e.train_accuracy = acc_sum / static_cast<double>(items);
        e.seconds = now_seconds() - t0;
        fold_log.epochs.push_back(e);
        if (e.train_accuracy >= config.target_train_accuracy) {
            break;
        }
    }
    log.folds.push_back(std::move(fold_log));
    return {std::move(model), std::move(log)};
}

}  // namespace fcc
