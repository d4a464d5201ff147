#include "fcc/eval.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <unordered_set>

#include <json.hpp>

namespace fcc {

std::string EvalReport::to_json() const {
    nlohmann::json j;
    j["task"] = task;
    j["metrics"] = metrics;
    j["split"] = split;
    j["checkpoint_id"] = checkpoint_id;
    return j.dump(2);
}

void EvalReport::write(const std::string& path) const {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write eval report: " + path);
    }
    out << to_json() << "\n";
}

double eval_fcc_accuracy(FccModel& model, const CorpusRuntime& corpus,
                         const std::vector<std::int32_t>& test_idx, std::uint64_t seed,
                         const std::vector<std::int32_t>* train_idx, bool vision_bypass) {
    if (train_idx != nullptr) {
        std::unordered_set<std::int32_t> train_set(train_idx->begin(), train_idx->end());
        for (auto idx : test_idx) {
            if (train_set.count(idx) != 0) {
                throw ContractError("test record index " + std::to_string(idx) +
                                    " overlaps the training split");
            }
        }
    }
    PairSampler sampler(static_cast<std::int64_t>(test_idx.size()), seed);
    double acc_sum = 0.0;
    std::int64_t items = 0;
    for (auto& batch : sampler.epoch(0)) {
        for (auto& item : batch.items) {
            item.figure = test_idx[static_cast<std::size_t>(item.figure)];
            item.caption = test_idx[static_cast<std::size_t>(item.caption)];
        }
        auto fwd = forward_pair_batch(model, corpus, batch, nullptr, ops::BnMode::infer,
                                      vision_bypass);
        acc_sum += fwd.accuracy * static_cast<double>(batch.items.size());
        items += batch.items.size();
    }
    return acc_sum / static_cast<double>(items);
}

EvalReport eval_bidirectional_retrieval(const PairScorer& scorer,
                                        const std::vector<std::int32_t>& test_idx,
                                        const std::vector<std::int64_t>& ks) {
    const std::int64_t m = static_cast<std::int64_t>(test_idx.size());
    std::int64_t max_k = 0;
    for (auto k : ks) {
        max_k = std::max(max_k, k);
    }
    if (m < max_k) {
        throw ConfigError("retrieval test set of " + std::to_string(m) +
                          " is smaller than the largest k " + std::to_string(max_k));
    }

    // scores[f][c]: figure f (row) against caption c (column)
    std::vector<std::vector<double>> scores(static_cast<std::size_t>(m),
                                            std::vector<double>(static_cast<std::size_t>(m)));
    for (std::int64_t f = 0; f < m; ++f) {
        for (std::int64_t c = 0; c < m; ++c) {
            scores[static_cast<std::size_t>(f)][static_cast<std::size_t>(c)] =
                scorer(test_idx[static_cast<std::size_t>(f)], test_idx[static_cast<std::size_t>(c)]);
        }
    }

    // rank of the true candidate for one query: 1 + number of candidates that
    // strictly beat it, plus earlier-indexed ties
    auto rank_of_true = [&](std::int64_t query, bool caption_to_figure) {
        const double true_score = scores[static_cast<std::size_t>(query)][static_cast<std::size_t>(query)];
        std::int64_t rank = 1;
        for (std::int64_t cand = 0; cand < m; ++cand) {
            if (cand == query) {
                continue;
            }
            const double s = caption_to_figure
                                 ? scores[static_cast<std::size_t>(cand)][static_cast<std::size_t>(query)]
                                 : scores[static_cast<std::size_t>(query)][static_cast<std::size_t>(cand)];
            if (s > true_score || (s == true_score && cand < query)) {
                ++rank;
            }
        }
        return rank;
    };

    EvalReport report;
    report.task = "bidirectional-retrieval";
    report.metrics["test_size"] = static_cast<double>(m);
    for (const bool cap_to_fig : {true, false}) {
        std::vector<std::int64_t> ranks;
        ranks.reserve(static_cast<std::size_t>(m));
        for (std::int64_t q = 0; q < m; ++q) {
            ranks.push_back(rank_of_true(q, cap_to_fig));
        }
        const std::string prefix = cap_to_fig ? "caption_to_figure_R" : "figure_to_caption_R";
        for (auto k : ks) {
            std::int64_t hits = 0;
            for (auto r : ranks) {
                if (r <= k) {
                    ++hits;
                }
            }
            report.metrics[prefix + std::to_string(k)] =
                static_cast<double>(hits) / static_cast<double>(m);
        }
    }
    return report;
}

PairScorer fusion_probability_scorer(FccModel& model, const CorpusRuntime& corpus,
                                     const std::vector<std::int32_t>& test_idx,
                                     bool vision_bypass) {
    auto v = std::make_shared<Tensor>(batch_vision_features(model, corpus, test_idx, vision_bypass));
    auto t = std::make_shared<Tensor>(batch_language_features(model, corpus, test_idx));
    std::unordered_map<std::int32_t, std::int64_t> row_of;
    for (std::size_t i = 0; i < test_idx.size(); ++i) {
        row_of.emplace(test_idx[i], static_cast<std::int64_t>(i));
    }
    // score the full grid in one shot; the closure then just looks rows up
    const std::int64_t m = static_cast<std::int64_t>(test_idx.size());
    auto grid = std::make_shared<std::vector<double>>(static_cast<std::size_t>(m * m));
    for (std::int64_t f = 0; f < m; ++f) {
        Tensor vf({m, kFeatureDim});
        for (std::int64_t c = 0; c < m; ++c) {
            std::copy(v->data().begin() + f * kFeatureDim, v->data().begin() + (f + 1) * kFeatureDim,
                      vf.data().begin() + c * kFeatureDim);
        }
        auto probs = model.fuse_and_classify(vf, *t);
        for (std::int64_t c = 0; c < m; ++c) {
            (*grid)[static_cast<std::size_t>(f * m + c)] =
                static_cast<double>(probs.data()[c * 2 + 1]);
        }
    }
    return [row_of, grid, m](std::int32_t fig, std::int32_t cap) {
        return (*grid)[static_cast<std::size_t>(row_of.at(fig) * m + row_of.at(cap))];
    };
}

PairScorer feature_dot_scorer(FccModel& model, const CorpusRuntime& corpus,
                              const std::vector<std::int32_t>& test_idx, bool vision_bypass) {
    auto v = std::make_shared<Tensor>(batch_vision_features(model, corpus, test_idx, vision_bypass));
    auto t = std::make_shared<Tensor>(batch_language_features(model, corpus, test_idx));
    std::unordered_map<std::int32_t, std::int64_t> row_of;
    for (std::size_t i = 0; i < test_idx.size(); ++i) {
        row_of.emplace(test_idx[i], static_cast<std::int64_t>(i));
    }
    return [v, t, row_of](std::int32_t fig, std::int32_t cap) {
        const auto rf = row_of.at(fig);
        const auto rc = row_of.at(cap);
        double dot = 0.0;
        for (std::int64_t j = 0; j < kFeatureDim; ++j) {
            dot += static_cast<double>(v->data()[rf * kFeatureDim + j]) *
                   static_cast<double>(t->data()[rc * kFeatureDim + j]);
        }
        return dot;
    };
}

EvalReport eval_bidirectional_retrieval(FccModel& model, const CorpusRuntime& corpus,
                                        const std::vector<std::int32_t>& test_idx,
                                        const std::vector<std::int64_t>& ks,
                                        const std::string& scorer, bool vision_bypass) {
    PairScorer s;
    if (scorer == "fusion") {
        s = fusion_probability_scorer(model, corpus, test_idx, vision_bypass);
    } else if (scorer == "dot") {
        s = feature_dot_scorer(model, corpus, test_idx, vision_bypass);
    } else {
        throw ConfigError("retrieval scorer must be fusion|dot, got '" + scorer + "'");
    }
    auto report = eval_bidirectional_retrieval(s, test_idx, ks);
    report.metrics["scorer_is_fusion"] = scorer == "fusion" ? 1.0 : 0.0;
    return report;
}

// ----------------------------------------------------------------------------
// Transfer classification
// ----------------------------------------------------------------------------

namespace {

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t a) {
    return base * 0x9e3779b97f4a7c15ULL + a + 0x7f4a7c15ULL;
}

}  // namespace

EvalReport eval_transfer_classification(const std::vector<CorpusRecord>& records,
                                        const TransferConfig& config) {
    auto classes = label_taxonomy(records);
    std::unordered_map<std::string, std::int32_t> class_index;
    for (std::size_t i = 0; i < classes.size(); ++i) {
        class_index.emplace(classes[i], static_cast<std::int32_t>(i));
    }
    if (config.source == TrunkSource::fcc_checkpoint && config.fcc_model == nullptr) {
        throw ConfigError("transfer from an FCC checkpoint requires the model");
    }
    if (config.source == TrunkSource::external_features) {
        if (config.branch != "vision") {
            throw ConfigError("external features substitute the vision branch only");
        }
        for (const auto& r : records) {
            if (!r.visual_feature.has_value()) {
                throw ConfigError("record '" + r.id + "' has no stored visual feature");
            }
        }
        if (config.trainable) {
            throw ConfigError("external features cannot be fine-tuned");
        }
    }

    Vocab vocab = build_vocab(records);
    CorpusRuntime corpus(records, vocab);
    auto splits = make_kfold_splits(corpus.size(), config.folds, config.seed);

    std::vector<std::int32_t> labels(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        labels[i] = class_index.at(*records[i].label);
    }

    // section-4.4 hyperparameters per branch
    const double lr = config.branch == "language" ? 1e-3 : 1e-4;
    const double wd = config.branch == "language" ? 0.0 : 1e-5;
    const std::int64_t batch = config.branch == "language" ? 128 : 32;

    double acc_sum = 0.0;
    for (std::int64_t fold = 0; fold < config.folds; ++fold) {
        const auto& test = splits.folds[static_cast<std::size_t>(fold)];
        std::vector<std::int32_t> train;
        for (std::int64_t f = 0; f < config.folds; ++f) {
            if (f != fold) {
                const auto& part = splits.folds[static_cast<std::size_t>(f)];
                train.insert(train.end(), part.begin(), part.end());
            }
        }

        ClassifierModel cls(config.branch, vocab.size(), static_cast<std::int64_t>(classes.size()),
                            static_cast<std::uint32_t>(mix_seed(config.seed, 101 + static_cast<std::uint64_t>(fold))));
        cls.set_classes(classes);
        if (config.source == TrunkSource::fcc_checkpoint) {
            if (config.branch == "vision") {
                auto src = config.fcc_model->vision_params();
                auto dst = cls.trunk_params();
                std::unordered_map<std::string, ParamT<float>*> by_name;
                for (auto* p : dst) by_name.emplace(p->name, p);
                for (auto* p : src) {
                    auto it = by_name.find(p->name);
                    if (it != by_name.end() && it->second->value.shape() == p->value.shape()) {
                        std::copy(p->value.data().begin(), p->value.data().end(),
                                  it->second->value.data().begin());
                    }
                }
            } else {
                // the FCC learnt embedding matches only in mode (a); copy what aligns
                auto src = config.fcc_model->language_params();
                auto dst = cls.trunk_params();
                std::unordered_map<std::string, ParamT<float>*> by_name;
                for (auto* p : dst) by_name.emplace(p->name, p);
                for (auto* p : src) {
                    auto it = by_name.find(p->name);
                    if (it != by_name.end() && it->second->value.shape() == p->value.shape()) {
                        std::copy(p->value.data().begin(), p->value.data().end(),
                                  it->second->value.data().begin());
                    }
                }
            }
        }

        Adam optimizer(AdamConfig{lr, wd});
        ParamRefs<float> to_train = config.trainable ? cls.params() : cls.head_params();
        if (!config.trainable) {
            set_trainable(cls.trunk_params(), false);
        }

        std::mt19937_64 rng(mix_seed(config.seed, 211 + static_cast<std::uint64_t>(fold)));
        std::vector<std::int32_t> order = train;

        // frozen trunks (or external features) admit a feature cache
        Tensor cached_train, cached_test;
        if (!config.trainable) {
            if (config.source == TrunkSource::external_features) {
                auto fill = [&](const std::vector<std::int32_t>& idxs) {
                    Tensor out({static_cast<std::int64_t>(idxs.size()), kFeatureDim});
                    for (std::size_t i = 0; i < idxs.size(); ++i) {
                        const auto& f = *records[static_cast<std::size_t>(idxs[i])].visual_feature;
                        std::copy(f.begin(), f.end(),
                                  out.data().begin() + static_cast<std::int64_t>(i) * kFeatureDim);
                    }
                    return out;
                };
                cached_train = fill(train);
                cached_test = fill(test);
            } else {
                cached_train = cls.features(corpus, train);
                cached_test = cls.features(corpus, test);
            }
        }

        for (std::int64_t epoch = 0; epoch < config.epochs; ++epoch) {
            std::vector<std::int32_t> perm(order.size());
            std::iota(perm.begin(), perm.end(), 0);
            std::shuffle(perm.begin(), perm.end(), rng);
            std::size_t begin = 0;
            while (begin < perm.size()) {
                std::size_t end = std::min(perm.size(), begin + static_cast<std::size_t>(batch));
                if (config.branch == "vision" && config.trainable && perm.size() - end == 1) {
                    end = perm.size();
                }
                std::vector<std::int32_t> batch_labels;
                Tape<float> tape;
                Tensor logits;
                if (!config.trainable) {
                    std::vector<std::int32_t> rows;
                    for (std::size_t i = begin; i < end; ++i) {
                        rows.push_back(perm[i]);
                        batch_labels.push_back(labels[static_cast<std::size_t>(order[static_cast<std::size_t>(perm[i])])]);
                    }
                    auto feats = ops::embedding_lookup<float>(nullptr, cached_train, rows,
                                                              {static_cast<std::int64_t>(rows.size())});
                    logits = cls.head_logits(&tape, feats);
                } else {
                    std::vector<std::int32_t> idxs;
                    for (std::size_t i = begin; i < end; ++i) {
                        idxs.push_back(order[static_cast<std::size_t>(perm[i])]);
                        batch_labels.push_back(labels[static_cast<std::size_t>(order[static_cast<std::size_t>(perm[i])])]);
                    }
                    logits = cls.logits(&tape, corpus, idxs,
                                        idxs.size() > 1 ? ops::BnMode::train : ops::BnMode::infer);
                }
                auto loss = ops::nll_loss(&tape, ops::log_softmax(&tape, logits), batch_labels);
                tape.backward(loss);
                optimizer.step(to_train);
                optimizer.zero_grad(to_train);
                begin = end;
            }
        }

        // fold accuracy on the held-out records
        Tensor test_logits;
        if (!config.trainable) {
            test_logits = cls.head_logits(nullptr, cached_test);
        } else {
            test_logits = cls.logits(nullptr, corpus, test, ops::BnMode::infer);
        }
        auto probs = softmax_probabilities(test_logits);
        std::int64_t correct = 0;
        for (std::size_t i = 0; i < test.size(); ++i) {
            std::int64_t arg = 0;
            for (std::int64_t c = 1; c < probs.dim(1); ++c) {
                if (probs.data()[static_cast<std::int64_t>(i) * probs.dim(1) + c] >
                    probs.data()[static_cast<std::int64_t>(i) * probs.dim(1) + arg]) {
                    arg = c;
                }
            }
            if (arg == labels[static_cast<std::size_t>(test[i])]) {
                ++correct;
            }
        }
        acc_sum += static_cast<double>(correct) / static_cast<double>(test.size());
    }

    EvalReport report;
    report.task = "transfer-classification";
    report.split = std::to_string(config.folds) + "-fold";
    report.metrics["accuracy"] = acc_sum / static_cast<double>(config.folds);
    report.metrics["classes"] = static_cast<double>(classes.size());
    report.metrics["trainable"] = config.trainable ? 1.0 : 0.0;
    return report;
}

}  // namespace fcc
