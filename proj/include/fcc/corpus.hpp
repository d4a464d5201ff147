#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "fcc/tensor.hpp"

namespace fcc {

// One figure/caption pair. Annotations are optional and, when present,
// align 1:1 with tokens.
struct CorpusRecord {
    std::string id;
    std::string image_path;
    std::vector<std::string> tokens;
    std::optional<std::vector<std::string>> lemmas;
    std::optional<std::vector<std::vector<std::string>>> concepts;  // >= 0 ids per token
    std::optional<std::string> label;
    std::optional<std::vector<float>> visual_feature;  // 512 floats
};

// Line-delimited JSON, one record per line. Malformed lines report their
// line number; invariant violations report the record id.
std::vector<CorpusRecord> load_manifest(const std::string& path);

// Reference tokenization used to produce manifests from raw text: lowercase,
// split on whitespace and punctuation (digits and letters kept together).
std::vector<std::string> tokenize(const std::string& text);

// Word -> index map. Index 0 is padding, 1 is unknown; the rest are assigned
// by descending frequency, ties broken lexicographically.
class Vocab {
  public:
    static constexpr std::int32_t kPadding = 0;
    static constexpr std::int32_t kUnknown = 1;

    Vocab() = default;

    std::int32_t lookup(const std::string& token) const {
        auto it = index_.find(token);
        return it == index_.end() ? kUnknown : it->second;
    }

    bool contains(const std::string& token) const { return index_.count(token) != 0; }

    // Total size including the two reserved indices.
    std::int64_t size() const { return static_cast<std::int64_t>(index_.size()) + 2; }

    const std::string& token_at(std::int32_t idx) const;  // idx >= 2

    const std::unordered_map<std::string, std::int32_t>& entries() const { return index_; }

  private:
    friend Vocab build_vocab(const std::vector<CorpusRecord>&, std::int64_t, std::int64_t);
    std::unordered_map<std::string, std::int32_t> index_;
    std::vector<std::string> tokens_;  // by index - 2
};

// max_size caps the total vocabulary (including the 2 reserved slots);
// 0 means unlimited. Tokens rarer than min_count map to the unknown index.
Vocab build_vocab(const std::vector<CorpusRecord>& records, std::int64_t max_size = 0,
                  std::int64_t min_count = 1);

// key -> fixed-dimension vector table in word2vec text format:
// first line "count dim", then "key v1 ... v_dim" per line.
class EmbeddingTable {
  public:
    enum class Kind { word, lemma, concept_id };

    static EmbeddingTable load(const std::string& path, Kind kind);
    static EmbeddingTable from_rows(Kind kind, std::int64_t dim,
                                    const std::vector<std::pair<std::string, std::vector<float>>>& rows);

    Kind kind() const { return kind_; }
    std::int64_t dim() const { return dim_; }
    std::int64_t size() const { return static_cast<std::int64_t>(keys_.size()); }

    // Row index of a key, or -1 when absent (absent keys resolve to the
    // all-zero padding vector at lookup time, never an error).
    std::int32_t row_of(const std::string& key) const {
        auto it = index_.find(key);
        return it == index_.end() ? -1 : it->second;
    }

    // idx == -1 yields the zero padding vector.
    std::span<const float> row(std::int32_t idx) const {
        if (idx < 0) {
            return {zero_.data(), zero_.size()};
        }
        return {data_.data() + static_cast<std::size_t>(idx) * static_cast<std::size_t>(dim_),
                static_cast<std::size_t>(dim_)};
    }

    const std::vector<float>& raw_data() const { return data_; }
    const std::vector<std::string>& keys() const { return keys_; }

  private:
    Kind kind_ = Kind::word;
    std::int64_t dim_ = 0;
    std::vector<std::string> keys_;
    std::unordered_map<std::string, std::int32_t> index_;
    std::vector<float> data_;
    std::vector<float> zero_;
};

// Per-token id rows, truncated/padded to max_len. word_ids index the learnt
// vocabulary; the *_rows index pretrained tables (-1 = absent or padding).
struct EncodedCaption {
    std::vector<std::int32_t> word_ids;
    std::vector<std::int32_t> pretrained_word_rows;
    std::vector<std::int32_t> lemma_rows;
    std::vector<std::int32_t> concept_rows;
    std::int64_t length = 0;  // real tokens kept (after truncation)
};

EncodedCaption encode_caption(const CorpusRecord& record, const Vocab& vocab,
                              const EmbeddingTable* word_table, const EmbeddingTable* lemma_table,
                              const EmbeddingTable* concept_table, std::int64_t max_len = 1000);

// ----------------------------------------------------------------------------
// Pair sampling
// ----------------------------------------------------------------------------

struct PairItem {
    std::int32_t figure;   // record index owning the figure
    std::int32_t caption;  // record index owning the caption
    bool positive;
};

struct PairBatch {
    std::vector<PairItem> items;  // positives and negatives interleaved

    std::int64_t positives() const {
        std::int64_t p = 0;
        for (const auto& it : items) {
            p += it.positive ? 1 : 0;
        }
        return p;
    }
    std::int64_t negatives() const { return static_cast<std::int64_t>(items.size()) - positives(); }
};

// Balanced positive/negative pair stream. Every epoch visits each record once
// as a positive; its figure is re-paired with a caption drawn uniformly from
// the other records (re-drawn each epoch). Batches hold batch_size/2
// positives and negatives each; the final partial batch keeps the balance.
class PairSampler {
  public:
    PairSampler(std::int64_t n_records, std::uint64_t seed, std::int64_t batch_size = 32);

    std::vector<PairBatch> epoch(std::int64_t epoch_index) const;

    std::int64_t batches_per_epoch() const;

  private:
    std::int64_t n_ = 0;
    std::uint64_t seed_ = 0;
    std::int64_t batch_ = 32;
};

// ----------------------------------------------------------------------------
// Splits
// ----------------------------------------------------------------------------

struct SplitDescriptor {
    std::vector<std::vector<std::int32_t>> folds;  // k-fold mode
    std::vector<std::int32_t> train;               // retrieval mode
    std::vector<std::int32_t> test;
};

// Deterministic shuffle by seed; fold sizes differ by at most 1.
SplitDescriptor make_kfold_splits(std::int64_t n_records, std::int64_t folds, std::uint64_t seed);

// Holds out min(1000, 20% of corpus) records.
SplitDescriptor make_retrieval_split(std::int64_t n_records, std::uint64_t seed);

}  // namespace fcc
