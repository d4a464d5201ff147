#pragma once

#include <string>
#include <vector>

#include "fcc/model.hpp"

namespace fcc {

struct FeatureProfile {
    std::string branch;  // "vision" | "text"
    std::int64_t feature = 0;
    double prominence = 0.0;            // max activation / (mean activation + eps)
    std::vector<std::string> top_ids;   // by descending activation, ties by id
    double specificity = -1.0;          // filled when concept annotations exist
};

// Branch activations [M,512] for the given records, inference mode.
Tensor branch_activations(FccModel& model, const CorpusRuntime& corpus,
                          const std::vector<std::int32_t>& idxs, const std::string& branch);

// Ranking math over a precomputed [M,512] activation matrix (row i belongs to
// record_ids[i]); profiles sorted by descending prominence, stable by feature.
std::vector<FeatureProfile> rank_features_from_activations(
    const Tensor& activations, const std::vector<std::string>& record_ids,
    const std::string& branch, std::int64_t top_samples = 4);

// All 512 final-block features ranked by descending prominence.
std::vector<FeatureProfile> rank_features(FccModel& model, const CorpusRuntime& corpus,
                                          const std::vector<std::int32_t>& idxs,
                                          const std::string& branch, std::int64_t top_samples = 4);

// Top-k records by one feature's activation; k beyond the corpus clips with a
// warning. Ties order by ascending record id.
std::vector<std::pair<std::string, float>> top_activating(FccModel& model,
                                                          const CorpusRuntime& corpus,
                                                          const std::vector<std::int32_t>& idxs,
                                                          const std::string& branch,
                                                          std::int64_t feature, std::int64_t k);

struct VisionHeatmap {
    std::int64_t height = 0, width = 0;
    std::vector<float> raw;         // pre-pool activation of the feature's channel
    std::vector<float> normalized;  // min-max to [0,1]; constant maps render as zeros
};

// The feature's channel of the last conv block's pre-pool activation.
VisionHeatmap vision_heatmap(FccModel& model, const Tensor& image, std::int64_t feature);

void write_heatmap_csv(const VisionHeatmap& hm, const std::string& path);

// normalized map bilinearly upsampled to 224x224 and alpha-blended over the input
void write_heatmap_overlay_png(const VisionHeatmap& hm, const Tensor& image,
                               const std::string& path);

// Per-token gradient saliency of the selected features' sum w.r.t. the
// embedding layer input, min-max normalized; padding positions score 0.
std::vector<std::pair<std::string, float>> text_heatmap(FccModel& model,
                                                        const CorpusRuntime& corpus,
                                                        std::int64_t record_idx,
                                                        const std::vector<std::int64_t>& features);

void write_token_scores_csv(const std::vector<std::pair<std::string, float>>& scores,
                            const std::string& path);
void write_token_scores_html(const std::vector<std::pair<std::string, float>>& scores,
                             const std::string& path);

// tf-idf over per-feature pseudo-documents (one per feature, pooled concept
// ids). tf = in-document frequency / document length; idf = ln(#features /
// #documents containing the concept); a feature's raw score is the mean
// tf-idf over its distinct concepts. Returned scores are rescaled by the
// maximum to [0,1] (all-zero stays zero).
std::vector<double> concept_tfidf_scores(const std::vector<std::vector<std::string>>& pseudo_docs);

// Concept tf-idf specificity per feature, rescaled by the corpus-wide maximum
// to [0,1]. Pseudo-documents pool the concept annotations of each feature's
// top-k activating captions.
std::vector<double> semantic_specificity_all(FccModel& model, const CorpusRuntime& corpus,
                                             const std::vector<std::int32_t>& idxs,
                                             const std::string& branch, std::int64_t top_k = 4);

double semantic_specificity(FccModel& model, const CorpusRuntime& corpus,
                            const std::vector<std::int32_t>& idxs, const std::string& branch,
                            std::int64_t feature, std::int64_t top_k = 4);

}  // namespace fcc
