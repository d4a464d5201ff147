#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "fcc/train.hpp"

namespace fcc {

struct EvalReport {
    std::string task;
    std::map<std::string, double> metrics;
    std::string split;
    std::string checkpoint_id;

    std::string to_json() const;
    void write(const std::string& path) const;
};

// Accuracy of the 2-way decision on balanced positive/negative pairs sampled
// from the test records. train_idx, when given, is checked for overlap with
// the test set (ContractError on contamination).
double eval_fcc_accuracy(FccModel& model, const CorpusRuntime& corpus,
                         const std::vector<std::int32_t>& test_idx, std::uint64_t seed,
                         const std::vector<std::int32_t>* train_idx = nullptr,
                         bool vision_bypass = false);

// figure index x caption index -> compatibility score (higher = better)
using PairScorer = std::function<double(std::int32_t, std::int32_t)>;

// Bidirectional recall@k over an M-record test set: each caption queries all
// M figures and vice versa; ranking descends by score with ties broken by
// ascending record index. Exactly one true match exists per query.
EvalReport eval_bidirectional_retrieval(const PairScorer& scorer,
                                        const std::vector<std::int32_t>& test_idx,
                                        const std::vector<std::int64_t>& ks = {1, 5, 10});

// Scorer backed by the trained fusion head (probability of "correspond").
PairScorer fusion_probability_scorer(FccModel& model, const CorpusRuntime& corpus,
                                     const std::vector<std::int32_t>& test_idx,
                                     bool vision_bypass = false);

// Secondary scorer: dot product of the two 512-D branch features.
PairScorer feature_dot_scorer(FccModel& model, const CorpusRuntime& corpus,
                              const std::vector<std::int32_t>& test_idx,
                              bool vision_bypass = false);

EvalReport eval_bidirectional_retrieval(FccModel& model, const CorpusRuntime& corpus,
                                        const std::vector<std::int32_t>& test_idx,
                                        const std::vector<std::int64_t>& ks = {1, 5, 10},
                                        const std::string& scorer = "fusion",
                                        bool vision_bypass = false);

// ----------------------------------------------------------------------------
// Transfer classification (frozen vs trainable trunks)
// ----------------------------------------------------------------------------

enum class TrunkSource { fcc_checkpoint, random, external_features };

struct TransferConfig {
    std::string branch = "language";        // vision | language
    TrunkSource source = TrunkSource::random;
    bool trainable = false;                  // false: head only, trunk frozen
    std::int64_t folds = 10;
    std::int64_t epochs = 10;
    std::uint64_t seed = 0;
    FccModel* fcc_model = nullptr;           // required for fcc_checkpoint
};

// Trains the 128-ReLU-softmax head (plus the trunk when trainable) on
// category labels per fold and reports the fold-mean accuracy.
EvalReport eval_transfer_classification(const std::vector<CorpusRecord>& records,
                                        const TransferConfig& config);

}  // namespace fcc
