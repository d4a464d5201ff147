#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fcc/model.hpp"

namespace fcc {

struct TrainConfig {
    double learning_rate = 1e-4;
    double weight_decay = 1e-5;
    std::int64_t batch_size = 32;
    std::int64_t epochs = 20;
    std::uint64_t seed = 0;
    std::int64_t fold_count = 10;
    CombinerConfig combiner;
    std::int64_t early_stop_patience = 10;   // on validation accuracy; <= 0 disables
    double target_train_accuracy = 2.0;      // stop once reached; > 1 disables
    std::int64_t vocab_max_size = 0;
    std::int64_t vocab_min_count = 1;
    bool vision_bypass = false;              // use stored visual features instead of the trunk
    std::string out_dir;                     // run directory for fold checkpoints and logs

    void validate() const;
};

struct EpochLog {
    std::int64_t epoch = 0;
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double val_loss = -1.0;      // -1 when no validation split
    double val_accuracy = -1.0;
    double seconds = 0.0;
};

struct FoldLog {
    std::int64_t fold = 0;
    std::vector<EpochLog> epochs;
    double final_val_accuracy = -1.0;
};

struct RunLog {
    std::vector<FoldLog> folds;
    double mean_val_accuracy = -1.0;
    std::int64_t best_fold = 0;

    // include_timing=false drops wall-clock fields (for determinism checks)
    std::string to_jsonl(bool include_timing = true) const;
    void write(const std::string& path) const;
};

// Forward pass over one pair batch. Figures and captions repeated within the
// batch are encoded once and routed to their pair rows by a differentiable
// gather, so batch-level duplicates cost a single trunk pass.
struct PairForward {
    Tensor logits;         // [B,2]
    Tensor probabilities;  // [B,2], detached
    std::vector<bool> labels;
    double accuracy = 0.0;
};

PairForward forward_pair_batch(FccModel& model, const CorpusRuntime& corpus, const PairBatch& batch,
                               Tape<float>* tape, ops::BnMode bn_mode, bool vision_bypass);

// One training pass over the given record indices (no cross-validation):
// epochs of balanced batches, Adam updates, per-epoch metrics. Validation
// metrics are produced when val_idx is non-empty. Divergence (non-finite
// loss) aborts with NumericError after writing last_good.fcck to out_dir.
FoldLog train_fcc_single(FccModel& model, const CorpusRuntime& corpus,
                         std::vector<std::int32_t> train_idx, std::vector<std::int32_t> val_idx,
                         const TrainConfig& config, std::int64_t fold_index = 0);

struct TrainFccResult {
    FccModel model;       // best fold by validation accuracy (ties to lower fold)
    RunLog log;
    Vocab vocab;
};

// Cross-validated FCC training per the configured fold count. Returns the
// best-fold model; deterministic given the seed.
TrainFccResult train_fcc(const std::vector<CorpusRecord>& records, const TrainConfig& config,
                         const EmbeddingTable* word_table = nullptr,
                         const EmbeddingTable* lemma_table = nullptr,
                         const EmbeddingTable* concept_table = nullptr);

// ----------------------------------------------------------------------------
// Supervised baselines
// ----------------------------------------------------------------------------

// Trunk + dense(128)/ReLU + dense(n_classes) softmax classifier over category
// labels. Caption task defaults: lr 1e-3, batch 128; figure task: lr 1e-4,
// weight decay 1e-5, batch 32.
class ClassifierModel {
  public:
    ClassifierModel(const std::string& branch, std::int64_t vocab_size, std::int64_t n_classes,
                    std::uint32_t init_seed, std::int64_t max_seq_len = 1000);

    const std::string& branch() const { return branch_; }
    const std::vector<std::string>& classes() const { return classes_; }
    void set_classes(std::vector<std::string> classes);

    // trunk feature [N,512] for records (inference mode)
    Tensor features(const CorpusRuntime& corpus, std::span<const std::int32_t> idxs) const;

    // taped trunk+head forward on a batch of record indices
    Tensor logits(Tape<float>* tape, const CorpusRuntime& corpus,
                  std::span<const std::int32_t> idxs, ops::BnMode bn_mode) const;

    // head only, from precomputed features
    Tensor head_logits(Tape<float>* tape, const Tensor& features) const;

    ParamRefs<float> trunk_params();
    ParamRefs<float> head_params();
    ParamRefs<float> params();

    Embedding embedding;               // language branch only
    std::vector<ConvBlock1d> language_blocks;
    std::vector<ConvBlock2d> vision_blocks;
    Dense head_hidden;  // 512 -> 128
    Dense head_out;     // 128 -> n_classes

  private:
    std::string branch_;
    std::int64_t max_seq_len_;
    std::vector<std::string> classes_;
};

struct ClassifierResult {
    ClassifierModel model;
    RunLog log;
    Vocab vocab;
    double train_accuracy = 0.0;
};

ClassifierResult train_supervised_classifier(const std::vector<CorpusRecord>& records,
                                             const std::string& branch, const TrainConfig& config);

// Correspondence decision as the scalar product of the two classifiers'
// softmax outputs against a fixed threshold.
struct DirectCombination {
    double threshold = 0.325;

    std::pair<bool, double> score(const Tensor& vision_probs, const Tensor& text_probs,
                                  std::int64_t row_v, std::int64_t row_t) const;
};

// Scores every pair in `batch`; classifiers must share a label taxonomy.
std::vector<std::pair<bool, double>> baseline_direct_combination(
    const ClassifierModel& vision_cls, const ClassifierModel& text_cls,
    const CorpusRuntime& corpus, const std::vector<PairItem>& pairs, double threshold = 0.325);

// Freezes both classifier trunks inside a fresh FCC model and trains only the
// fusion layers on correspondence pairs.
struct PretrainBaselineResult {
    FccModel model;
    RunLog log;
};

PretrainBaselineResult baseline_supervised_pretrain(ClassifierModel& vision_cls,
                                                    ClassifierModel& text_cls,
                                                    const CorpusRuntime& corpus,
                                                    const TrainConfig& config);

// Sorted unique labels of a fully labeled corpus (>= 2 classes).
std::vector<std::string> label_taxonomy(const std::vector<CorpusRecord>& records);

}  // namespace fcc
