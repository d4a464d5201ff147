#pragma once

#include <memory>
#include <string>
#include <vector>

#include "fcc/corpus.hpp"
#include "fcc/layers.hpp"
#include "fcc/optim.hpp"

namespace fcc {

enum class CombinerMode { a, b, c };     // word-only | word+pretrained-word | word+lemma+concept
enum class CombineOp { concatenate, add };

CombinerMode parse_combiner_mode(const std::string& s);
CombineOp parse_combine_op(const std::string& s);
std::string to_string(CombinerMode m);
std::string to_string(CombineOp o);

// Per-token combination of learnt and pretrained sub-vectors. The combined
// vector is always 300-D; concatenation shrinks the learnt part to make room
// (300 / 150 / 100), addition keeps every source at 300.
struct CombinerConfig {
    CombinerMode mode = CombinerMode::a;
    CombineOp op = CombineOp::concatenate;

    static constexpr std::int64_t kOutputDim = 300;

    std::int64_t learnt_dim() const {
        if (op == CombineOp::add || mode == CombinerMode::a) {
            return 300;
        }
        return mode == CombinerMode::b ? 150 : 100;
    }
    // per pretrained source; 0 when mode (a) has none
    std::int64_t pretrained_dim() const {
        if (mode == CombinerMode::a) {
            return 0;
        }
        if (op == CombineOp::add) {
            return 300;
        }
        return mode == CombinerMode::b ? 150 : 100;
    }
};

struct FccModelConfig {
    std::int64_t vocab_size = 2;  // includes padding + unknown
    CombinerConfig combiner;
    std::int64_t max_seq_len = 1000;
    std::uint32_t init_seed = 0;
};

constexpr std::int64_t kFeatureDim = 512;
constexpr std::int64_t kFusionHidden = 128;

// The two-branch correspondence network: vision trunk (4 VGG-style blocks),
// language trunk (embedding combiner + 3 conv blocks), and the fusion
// classifier over the elementwise product of the 512-D branch features.
class FccModel {
  public:
    FccModel(FccModelConfig config, const EmbeddingTable* word_table = nullptr,
             const EmbeddingTable* lemma_table = nullptr,
             const EmbeddingTable* concept_table = nullptr);

    const FccModelConfig& config() const { return config_; }

    // Eq.-style combiner: [N,T] id rows -> [N,T,300]. Gradient flows only
    // into the learnt sub-vectors; pretrained entries are constants and
    // absent entries contribute zero sub-vectors.
    Tensor combine_embeddings(Tape<float>* tape, const std::vector<const EncodedCaption*>& captions) const;

    // [N,3,224,224] -> [N,512]
    Tensor vision_forward(Tape<float>* tape, const Tensor& images, ops::BnMode bn_mode) const;

    // precomputed-feature substitution for the visual branch
    static Tensor vision_bypass(const std::vector<std::span<const float>>& features);

    // [N,1000,300] -> [N,512]
    Tensor language_forward(Tape<float>* tape, const Tensor& combined) const;

    // elementwise product -> dense(128)+ReLU -> dense(2); returns logits
    Tensor fusion_logits(Tape<float>* tape, const Tensor& visual, const Tensor& text) const;

    // softmax probabilities [N,2]; class 1 = "correspond" (no gradient path)
    Tensor fuse_and_classify(const Tensor& visual, const Tensor& text) const;

    // visual features plus the last vision block's pre-pool activation map
    std::pair<Tensor, Tensor> vision_forward_with_prepool(const Tensor& images) const;

    ParamRefs<float> params();                 // includes running statistics
    ParamRefs<float> trainable_params();
    ParamRefs<float> vision_params();
    ParamRefs<float> language_params();        // learnt embedding + conv blocks
    ParamRefs<float> fusion_params();

    const EmbeddingTable* word_table() const { return word_table_; }
    const EmbeddingTable* lemma_table() const { return lemma_table_; }
    const EmbeddingTable* concept_table() const { return concept_table_; }

    Embedding learnt_embedding;
    ConvBlock2d vision_blocks[4];
    ConvBlock1d language_blocks[3];
    Dense fusion_hidden;  // 512 -> 128
    Dense fusion_out;     // 128 -> 2

  private:
    FccModelConfig config_;
    const EmbeddingTable* word_table_ = nullptr;
    const EmbeddingTable* lemma_table_ = nullptr;
    const EmbeddingTable* concept_table_ = nullptr;
};

// Softmax probabilities from logits without touching any tape.
Tensor softmax_probabilities(const Tensor& logits);

// Mean negative log probability of the labeled class, over probabilities.
// Training uses the taped log-softmax + nll path on logits, which computes
// the same quantity.
Tensor fcc_loss(const Tensor& probabilities, const std::vector<bool>& labels);

// Taped training loss on fusion logits (labels: true = "correspond").
Tensor fcc_training_loss(Tape<float>* tape, const Tensor& logits, const std::vector<bool>& labels);

// ----------------------------------------------------------------------------
// Checkpoints: "FCCK" container, bitwise round-trip of all parameters.
// ----------------------------------------------------------------------------

void save_checkpoint(FccModel& model, const std::string& path);

// Tables must match the stored combiner mode. Passing expected_mode asserts
// the checkpoint was trained under that mode (ConfigError otherwise).
FccModel load_checkpoint(const std::string& path, const EmbeddingTable* word_table = nullptr,
                         const EmbeddingTable* lemma_table = nullptr,
                         const EmbeddingTable* concept_table = nullptr,
                         const CombinerMode* expected_mode = nullptr);

// ----------------------------------------------------------------------------
// Corpus runtime: records + vocab + tables, with cached images and encodings.
// ----------------------------------------------------------------------------

class CorpusRuntime {
  public:
    CorpusRuntime(std::vector<CorpusRecord> records, Vocab vocab,
                  const EmbeddingTable* word_table = nullptr,
                  const EmbeddingTable* lemma_table = nullptr,
                  const EmbeddingTable* concept_table = nullptr, std::int64_t max_seq_len = 1000);

    std::int64_t size() const { return static_cast<std::int64_t>(records_.size()); }
    const CorpusRecord& record(std::int64_t idx) const { return records_.at(static_cast<std::size_t>(idx)); }
    const std::vector<CorpusRecord>& records() const { return records_; }
    const Vocab& vocab() const { return vocab_; }
    const EncodedCaption& caption(std::int64_t idx) const { return encoded_.at(static_cast<std::size_t>(idx)); }

    // cached preprocessed figure [3,224,224]
    const Tensor& figure(std::int64_t idx) const;
    Tensor figures_tensor(std::span<const std::int32_t> idxs) const;  // [N,3,224,224]

    const EmbeddingTable* word_table() const { return word_table_; }
    const EmbeddingTable* lemma_table() const { return lemma_table_; }
    const EmbeddingTable* concept_table() const { return concept_table_; }
    std::int64_t max_seq_len() const { return max_seq_len_; }

  private:
    std::vector<CorpusRecord> records_;
    Vocab vocab_;
    const EmbeddingTable* word_table_;
    const EmbeddingTable* lemma_table_;
    const EmbeddingTable* concept_table_;
    std::int64_t max_seq_len_;
    std::vector<EncodedCaption> encoded_;
    mutable std::unordered_map<std::int64_t, Tensor> figure_cache_;
};

// Branch features for a set of records, inference mode. Vision uses the
// stored visual_feature when bypass is set and the record carries one.
Tensor batch_vision_features(const FccModel& model, const CorpusRuntime& corpus,
                             std::span<const std::int32_t> idxs, bool bypass = false);
Tensor batch_language_features(const FccModel& model, const CorpusRuntime& corpus,
                               std::span<const std::int32_t> idxs);

// id -> 512-float vectors in the embedding-table text format.
void export_features(FccModel& model, const CorpusRuntime& corpus, const std::string& branch,
                     const std::string& path, bool bypass = false);

}  // namespace fcc
