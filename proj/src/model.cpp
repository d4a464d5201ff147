#include "fcc/model.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "fcc/image.hpp"

namespace fcc {

CombinerMode parse_combiner_mode(const std::string& s) {
    if (s == "a") return CombinerMode::a;
    if (s == "b") return CombinerMode::b;
    if (s == "c") return CombinerMode::c;
    throw ConfigError("combiner mode must be one of a|b|c, got '" + s + "'");
}

CombineOp parse_combine_op(const std::string& s) {
    if (s == "concat" || s == "concatenate") return CombineOp::concatenate;
    if (s == "add") return CombineOp::add;
    throw ConfigError("combine op must be concat|add, got '" + s + "'");
}

std::string to_string(CombinerMode m) {
    switch (m) {
        case CombinerMode::a: return "a";
        case CombinerMode::b: return "b";
        default: return "c";
    }
}

std::string to_string(CombineOp o) {
    return o == CombineOp::concatenate ? "concat" : "add";
}

namespace {

void check_table(const EmbeddingTable* table, const char* name, std::int64_t want_dim) {
    if (table == nullptr) {
        throw ConfigError(std::string("combiner mode requires a registered ") + name + " table");
    }
    if (table->dim() != want_dim) {
        throw ConfigError(std::string(name) + " table dim " + std::to_string(table->dim()) +
                          " does not match the configured sub-vector dim " +
                          std::to_string(want_dim));
    }
}

}  // namespace

FccModel::FccModel(FccModelConfig config, const EmbeddingTable* word_table,
                   const EmbeddingTable* lemma_table, const EmbeddingTable* concept_table)
    : config_(config),
      word_table_(word_table),
      lemma_table_(lemma_table),
      concept_table_(concept_table) {
    const auto& cc = config_.combiner;
    if (cc.mode == CombinerMode::b) {
        check_table(word_table_, "pretrained-word", cc.pretrained_dim());
    } else if (cc.mode == CombinerMode::c) {
        check_table(lemma_table_, "lemma", cc.pretrained_dim());
        check_table(concept_table_, "concept", cc.pretrained_dim());
    }
    if (config_.vocab_size < 2) {
        throw ConfigError("vocab size must include the padding and unknown slots");
    }

    std::mt19937 rng(config_.init_seed);
    learnt_embedding.init(config_.vocab_size, cc.learnt_dim(), "language.embedding", rng);
    const std::int64_t widths[5] = {3, 64, 128, 256, 512};
    for (int i = 0; i < 4; ++i) {
        vision_blocks[i].init(widths[i], widths[i + 1], i == 3,
                              "vision.block" + std::to_string(i + 1), rng);
    }
    language_blocks[0].init(CombinerConfig::kOutputDim, kFeatureDim, 5, false, "language.block1", rng);
    language_blocks[1].init(kFeatureDim, kFeatureDim, 5, false, "language.block2", rng);
    language_blocks[2].init(kFeatureDim, kFeatureDim, 5, true, "language.block3", rng);
    fusion_hidden.init(kFeatureDim, kFusionHidden, "fusion.hidden", rng);
    fusion_out.init(kFusionHidden, 2, "fusion.out", rng);
}

Tensor FccModel::combine_embeddings(Tape<float>* tape,
                                    const std::vector<const EncodedCaption*>& captions) const {
    if (captions.empty()) {
        throw ContractError("combine_embeddings requires at least one caption");
    }
    const std::int64_t n = static_cast<std::int64_t>(captions.size());
    const std::int64_t t = config_.max_seq_len;
    const auto& cc = config_.combiner;

    std::vector<std::int32_t> word_ids;
    word_ids.reserve(static_cast<std::size_t>(n * t));
    for (const auto* cap : captions) {
        if (static_cast<std::int64_t>(cap->word_ids.size()) != t) {
            throw DimensionError("caption id row length " + std::to_string(cap->word_ids.size()) +
                                 " does not match sequence axis " + std::to_string(t));
        }
        word_ids.insert(word_ids.end(), cap->word_ids.begin(), cap->word_ids.end());
    }
    Tensor learnt = learnt_embedding.forward(tape, word_ids, {n, t});
    if (cc.mode == CombinerMode::a) {
        return learnt;
    }

    auto gather_rows = [&](const EmbeddingTable* table,
                           const std::vector<std::int32_t> EncodedCaption::*field) {
        Tensor out({n, t, table->dim()});
        auto dst = out.data();
        std::int64_t at = 0;
        for (const auto* cap : captions) {
            for (std::int64_t i = 0; i < t; ++i) {
                const auto row = table->row((cap->*field)[static_cast<std::size_t>(i)]);
                std::copy(row.begin(), row.end(), dst.begin() + at);
                at += table->dim();
            }
        }
        return out;  // constant: no gradient ever flows into pretrained tables
    };

    std::vector<Tensor> parts = {learnt};
    if (cc.mode == CombinerMode::b) {
        parts.push_back(gather_rows(word_table_, &EncodedCaption::pretrained_word_rows));
    } else {
        parts.push_back(gather_rows(lemma_table_, &EncodedCaption::lemma_rows));
        parts.push_back(gather_rows(concept_table_, &EncodedCaption::concept_rows));
    }
    if (cc.op == CombineOp::concatenate) {
        return ops::concat(tape, parts, 2);
    }
    Tensor acc = parts[0];
    for (std::size_t i = 1; i < parts.size(); ++i) {
        acc = ops::add(tape, acc, parts[i]);
    }
    return acc;
}

Tensor FccModel::vision_forward(Tape<float>* tape, const Tensor& images,
                                ops::BnMode bn_mode) const {
    if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != kImageSize ||
        images.dim(3) != kImageSize) {
        throw DimensionError("vision input must be [N,3,224,224], got " + shape_str(images.shape()));
    }
    Tensor h = images;
    for (const auto& block : vision_blocks) {
        h = block.forward(tape, h, bn_mode);
    }
    return h;
}

Tensor FccModel::vision_bypass(const std::vector<std::span<const float>>& features) {
    Tensor out({static_cast<std::int64_t>(features.size()), kFeatureDim});
    auto dst = out.data();
    std::int64_t at = 0;
    for (const auto& f : features) {
        if (static_cast<std::int64_t>(f.size()) != kFeatureDim) {
            throw DimensionError("bypass feature must be 512-D");
        }
        std::copy(f.begin(), f.end(), dst.begin() + at);
        at += kFeatureDim;
    }
    return out;
}

Tensor FccModel::language_forward(Tape<float>* tape, const Tensor& combined) const {
    if (combined.rank() != 3 || combined.dim(1) != config_.max_seq_len ||
        combined.dim(2) != CombinerConfig::kOutputDim) {
        throw DimensionError("language input must be [N," + std::to_string(config_.max_seq_len) +
                             ",300], got " + shape_str(combined.shape()));
    }
    Tensor h = combined;
    for (const auto& block : language_blocks) {
        h = block.forward(tape, h);
    }
    return h;
}

Tensor FccModel::fusion_logits(Tape<float>* tape, const Tensor& visual, const Tensor& text) const {
    if (visual.rank() != 2 || visual.dim(1) != kFeatureDim || text.rank() != 2 ||
        text.dim(1) != kFeatureDim) {
        throw DimensionError("fusion expects [N,512] features, got " + shape_str(visual.shape()) +
                             " and " + shape_str(text.shape()));
    }
    auto fused = ops::elementwise_mul(tape, visual, text);
    auto hidden = ops::relu(tape, fusion_hidden.forward(tape, fused));
    return fusion_out.forward(tape, hidden);
}

Tensor FccModel::fuse_and_classify(const Tensor& visual, const Tensor& text) const {
    return softmax_probabilities(fusion_logits(nullptr, visual, text));
}

std::pair<Tensor, Tensor> FccModel::vision_forward_with_prepool(const Tensor& images) const {
    Tensor h = images;
    for (int i = 0; i < 3; ++i) {
        h = vision_blocks[i].forward(nullptr, h, ops::BnMode::infer);
    }
    const auto& b4 = vision_blocks[3];
    h = ops::relu<float>(nullptr, b4.bn1.forward(nullptr, b4.conv1.forward(nullptr, h), ops::BnMode::infer));
    h = ops::relu<float>(nullptr, b4.bn2.forward(nullptr, b4.conv2.forward(nullptr, h), ops::BnMode::infer));
    Tensor pooled = ops::global_maxpool2d<float>(nullptr, h);
    return {pooled, h};
}

ParamRefs<float> FccModel::params() {
    ParamRefs<float> out;
    for (auto* p : language_params()) out.push_back(p);
    for (auto* p : vision_params()) out.push_back(p);
    for (auto* p : fusion_params()) out.push_back(p);
    return out;
}

ParamRefs<float> FccModel::trainable_params() {
    ParamRefs<float> out;
    for (auto* p : params()) {
        if (p->trainable) {
            out.push_back(p);
        }
    }
    return out;
}

ParamRefs<float> FccModel::vision_params() {
    ParamRefs<float> out;
    for (auto& b : vision_blocks) {
        for (auto* p : b.params()) {
            out.push_back(p);
        }
    }
    return out;
}

ParamRefs<float> FccModel::language_params() {
    ParamRefs<float> out;
    for (auto* p : learnt_embedding.params()) out.push_back(p);
    for (auto& b : language_blocks) {
        for (auto* p : b.params()) {
            out.push_back(p);
        }
    }
    return out;
}

ParamRefs<float> FccModel::fusion_params() {
    ParamRefs<float> out;
    for (auto* p : fusion_hidden.params()) out.push_back(p);
    for (auto* p : fusion_out.params()) out.push_back(p);
    return out;
}

Tensor softmax_probabilities(const Tensor& logits) {
    Tensor logp = ops::log_softmax<float>(nullptr, logits);
    Tensor out(logp.shape());
    for (std::int64_t i = 0; i < logp.numel(); ++i) {
        out.data()[i] = std::exp(logp.data()[i]);
    }
    return out;
}

Tensor fcc_loss(const Tensor& probabilities, const std::vector<bool>& labels) {
    if (probabilities.rank() != 2 || probabilities.dim(1) != 2) {
        throw DimensionError("fcc_loss expects [N,2] probabilities, got " +
                             shape_str(probabilities.shape()));
    }
    if (static_cast<std::int64_t>(labels.size()) != probabilities.dim(0)) {
        throw DimensionError("fcc_loss labels do not match the batch axis");
    }
    double acc = 0.0;
    for (std::int64_t i = 0; i < probabilities.dim(0); ++i) {
        const float p = probabilities.data()[i * 2 + (labels[static_cast<std::size_t>(i)] ? 1 : 0)];
        acc -= std::log(static_cast<double>(p));
    }
    return Tensor::scalar(static_cast<float>(acc / static_cast<double>(labels.size())));
}

Tensor fcc_training_loss(Tape<float>* tape, const Tensor& logits, const std::vector<bool>& labels) {
    std::vector<std::int32_t> classes(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        classes[i] = labels[i] ? 1 : 0;
    }
    return ops::nll_loss(tape, ops::log_softmax(tape, logits), classes);
}

// ----------------------------------------------------------------------------
// CorpusRuntime
// ----------------------------------------------------------------------------

CorpusRuntime::CorpusRuntime(std::vector<CorpusRecord> records, Vocab vocab,
                             const EmbeddingTable* word_table, const EmbeddingTable* lemma_table,
                             const EmbeddingTable* concept_table, std::int64_t max_seq_len)
    : records_(std::move(records)),
      vocab_(std::move(vocab)),
      word_table_(word_table),
      lemma_table_(lemma_table),
      concept_table_(concept_table),
      max_seq_len_(max_seq_len) {
    encoded_.reserve(records_.size());
    for (const auto& r : records_) {
        encoded_.push_back(
            encode_caption(r, vocab_, word_table_, lemma_table_, concept_table_, max_seq_len_));
    }
}

const Tensor& CorpusRuntime::figure(std::int64_t idx) const {
    auto it = figure_cache_.find(idx);
    if (it == figure_cache_.end()) {
        it = figure_cache_.emplace(idx, load_image(records_.at(static_cast<std::size_t>(idx)).image_path)).first;
    }
    return it->second;
}

Tensor CorpusRuntime::figures_tensor(std::span<const std::int32_t> idxs) const {
    Tensor out({static_cast<std::int64_t>(idxs.size()), 3, kImageSize, kImageSize});
    const std::int64_t per = 3 * kImageSize * kImageSize;
    for (std::size_t i = 0; i < idxs.size(); ++i) {
        const Tensor& img = figure(idxs[i]);
        std::copy(img.data().begin(), img.data().end(), out.data().begin() + static_cast<std::int64_t>(i) * per);
    }
    return out;
}

Tensor batch_vision_features(const FccModel& model, const CorpusRuntime& corpus,
                             std::span<const std::int32_t> idxs, bool bypass) {
    if (bypass) {
        std::vector<std::span<const float>> feats;
        feats.reserve(idxs.size());
        for (auto idx : idxs) {
            const auto& r = corpus.record(idx);
            if (!r.visual_feature.has_value()) {
                throw ConfigError("record '" + r.id + "' has no stored visual feature for bypass");
            }
            feats.emplace_back(r.visual_feature->data(), r.visual_feature->size());
        }
        return FccModel::vision_bypass(feats);
    }
    // bounded sub-batches keep activation memory flat in inference
    constexpr std::int64_t kChunk = 8;
    Tensor out({static_cast<std::int64_t>(idxs.size()), kFeatureDim});
    for (std::size_t begin = 0; begin < idxs.size(); begin += kChunk) {
        const std::size_t end = std::min(idxs.size(), begin + kChunk);
        auto part = corpus.figures_tensor(idxs.subspan(begin, end - begin));
        auto feats = model.vision_forward(nullptr, part, ops::BnMode::infer);
        std::copy(feats.data().begin(), feats.data().end(),
                  out.data().begin() + static_cast<std::int64_t>(begin) * kFeatureDim);
    }
    return out;
}

Tensor batch_language_features(const FccModel& model, const CorpusRuntime& corpus,
                               std::span<const std::int32_t> idxs) {
    constexpr std::int64_t kChunk = 16;
    Tensor out({static_cast<std::int64_t>(idxs.size()), kFeatureDim});
    for (std::size_t begin = 0; begin < idxs.size(); begin += kChunk) {
        const std::size_t end = std::min(idxs.size(), begin + kChunk);
        std::vector<const EncodedCaption*> caps;
        for (std::size_t i = begin; i < end; ++i) {
            caps.push_back(&corpus.caption(idxs[i]));
        }
        auto combined = model.combine_embeddings(nullptr, caps);
        auto feats = model.language_forward(nullptr, combined);
        std::copy(feats.data().begin(), feats.data().end(),
                  out.data().begin() + static_cast<std::int64_t>(begin) * kFeatureDim);
    }
    return out;
}

void export_features(FccModel& model, const CorpusRuntime& corpus, const std::string& branch,
                     const std::string& path, bool bypass) {
    if (branch != "vision" && branch != "language") {
        throw ConfigError("branch must be vision|language, got '" + branch + "'");
    }
    std::vector<std::int32_t> idxs(static_cast<std::size_t>(corpus.size()));
    for (std::size_t i = 0; i < idxs.size(); ++i) {
        idxs[i] = static_cast<std::int32_t>(i);
    }
    Tensor feats = branch == "vision" ? batch_vision_features(model, corpus, idxs, bypass)
                                      : batch_language_features(model, corpus, idxs);
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write feature file: " + path);
    }
    out << corpus.size() << " " << kFeatureDim << "\n";
    char buf[32];
    for (std::int64_t i = 0; i < corpus.size(); ++i) {
        out << corpus.record(i).id;
        for (std::int64_t j = 0; j < kFeatureDim; ++j) {
            std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(feats.data()[i * kFeatureDim + j]));
            out << ' ' << buf;
        }
        out << '\n';
    }
}

}  // namespace fcc
