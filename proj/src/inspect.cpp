#include "fcc/inspect.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include "fcc/image.hpp"

namespace fcc {

namespace {

constexpr double kProminenceEps = 1e-8;

std::string normalize_branch(const std::string& branch) {
    if (branch == "vision") {
        return "vision";
    }
    if (branch == "text" || branch == "language") {
        return "text";
    }
    throw ConfigError("branch must be vision|text, got '" + branch + "'");
}

void check_feature(std::int64_t feature) {
    if (feature < 0 || feature >= kFeatureDim) {
        throw ContractError("feature index " + std::to_string(feature) + " outside [0,512)");
    }
}

// rows sorted by one feature column: activation descending, id ascending
std::vector<std::int64_t> order_by_activation(const Tensor& acts,
                                              const std::vector<std::string>& record_ids,
                                              std::int64_t feature) {
    std::vector<std::int64_t> order(record_ids.size());
    for (std::size_t i = 0; i < record_ids.size(); ++i) {
        order[i] = static_cast<std::int64_t>(i);
    }
    std::sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
        const float va = acts.data()[a * kFeatureDim + feature];
        const float vb = acts.data()[b * kFeatureDim + feature];
        if (va != vb) {
            return va > vb;
        }
        return record_ids[static_cast<std::size_t>(a)] < record_ids[static_cast<std::size_t>(b)];
    });
    return order;
}

std::vector<std::string> ids_of(const CorpusRuntime& corpus, const std::vector<std::int32_t>& idxs) {
    std::vector<std::string> ids;
    ids.reserve(idxs.size());
    for (auto idx : idxs) {
        ids.push_back(corpus.record(idx).id);
    }
    return ids;
}

}  // namespace

Tensor branch_activations(FccModel& model, const CorpusRuntime& corpus,
                          const std::vector<std::int32_t>& idxs, const std::string& branch) {
    return normalize_branch(branch) == "vision" ? batch_vision_features(model, corpus, idxs)
                                                : batch_language_features(model, corpus, idxs);
}

std::vector<FeatureProfile> rank_features_from_activations(
    const Tensor& activations, const std::vector<std::string>& record_ids,
    const std::string& branch, std::int64_t top_samples) {
    const std::string br = normalize_branch(branch);
    const std::int64_t m = activations.dim(0);
    if (m != static_cast<std::int64_t>(record_ids.size())) {
        throw ContractError("one record id per activation row required");
    }
    std::vector<FeatureProfile> profiles;
    profiles.reserve(kFeatureDim);
    for (std::int64_t f = 0; f < kFeatureDim; ++f) {
        FeatureProfile p;
        p.branch = br;
        p.feature = f;
        double mx = -1e30, sum = 0.0;
        for (std::int64_t i = 0; i < m; ++i) {
            const double v = activations.data()[i * kFeatureDim + f];
            mx = std::max(mx, v);
            sum += v;
        }
        p.prominence = mx / (sum / static_cast<double>(m) + kProminenceEps);
        auto order = order_by_activation(activations, record_ids, f);
        const auto keep = std::min<std::int64_t>(top_samples, m);
        for (std::int64_t i = 0; i < keep; ++i) {
            p.top_ids.push_back(record_ids[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
        }
        profiles.push_back(std::move(p));
    }
    std::stable_sort(profiles.begin(), profiles.end(),
                     [](const FeatureProfile& a, const FeatureProfile& b) {
                         return a.prominence > b.prominence;
                     });
    return profiles;
}

std::vector<FeatureProfile> rank_features(FccModel& model, const CorpusRuntime& corpus,
                                          const std::vector<std::int32_t>& idxs,
                                          const std::string& branch, std::int64_t top_samples) {
    const std::string br = normalize_branch(branch);
    Tensor acts = branch_activations(model, corpus, idxs, br);
    auto profiles = rank_features_from_activations(acts, ids_of(corpus, idxs), br, top_samples);

    bool any_concepts = false;
    for (auto idx : idxs) {
        if (corpus.record(idx).concepts.has_value()) {
            any_concepts = true;
            break;
        }
    }
    if (any_concepts) {
        auto specificity = semantic_specificity_all(model, corpus, idxs, br, top_samples);
        for (auto& p : profiles) {
            p.specificity = specificity[static_cast<std::size_t>(p.feature)];
        }
    }
    return profiles;
}

std::vector<std::pair<std::string, float>> top_activating(FccModel& model,
                                                          const CorpusRuntime& corpus,
                                                          const std::vector<std::int32_t>& idxs,
                                                          const std::string& branch,
                                                          std::int64_t feature, std::int64_t k) {
    check_feature(feature);
    if (k > static_cast<std::int64_t>(idxs.size())) {
        std::cerr << "warning: top-k " << k << " clipped to corpus size " << idxs.size() << "\n";
        k = static_cast<std::int64_t>(idxs.size());
    }
    Tensor acts = branch_activations(model, corpus, idxs, branch);
    auto ids = ids_of(corpus, idxs);
    auto order = order_by_activation(acts, ids, feature);
    std::vector<std::pair<std::string, float>> out;
    for (std::int64_t i = 0; i < k; ++i) {
        const auto row = order[static_cast<std::size_t>(i)];
        out.emplace_back(ids[static_cast<std::size_t>(row)], acts.data()[row * kFeatureDim + feature]);
    }
    return out;
}

VisionHeatmap vision_heatmap(FccModel& model, const Tensor& image, std::int64_t feature) {
    check_feature(feature);
    Tensor batch({1, 3, kImageSize, kImageSize});
    if (image.shape() != batch.shape() && image.shape() != Shape{3, kImageSize, kImageSize}) {
        throw DimensionError("heatmap input must be a single 3x224x224 image");
    }
    std::copy(image.data().begin(), image.data().end(), batch.data().begin());
    auto [feats, prepool] = model.vision_forward_with_prepool(batch);
    (void)feats;

    VisionHeatmap hm;
    hm.height = prepool.dim(2);
    hm.width = prepool.dim(3);
    const std::int64_t hw = hm.height * hm.width;
    hm.raw.resize(static_cast<std::size_t>(hw));
    const float* src = prepool.data().data() + feature * hw;
    std::copy(src, src + hw, hm.raw.begin());

    float lo = hm.raw[0], hi = hm.raw[0];
    for (float v : hm.raw) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    hm.normalized.assign(hm.raw.size(), 0.0f);
    if (hi > lo) {  // constant maps render as zeros
        for (std::size_t i = 0; i < hm.raw.size(); ++i) {
            hm.normalized[i] = (hm.raw[i] - lo) / (hi - lo);
        }
    }
    return hm;
}

void write_heatmap_csv(const VisionHeatmap& hm, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write heatmap CSV: " + path);
    }
    for (std::int64_t y = 0; y < hm.height; ++y) {
        for (std::int64_t x = 0; x < hm.width; ++x) {
            if (x > 0) {
                out << ',';
            }
            out << hm.raw[static_cast<std::size_t>(y * hm.width + x)];
        }
        out << '\n';
    }
}

void write_heatmap_overlay_png(const VisionHeatmap& hm, const Tensor& image,
                               const std::string& path) {
    cv::Mat map(static_cast<int>(hm.height), static_cast<int>(hm.width), CV_32FC1,
                const_cast<float*>(hm.normalized.data()));
    cv::Mat up;
    cv::resize(map, up, cv::Size(kImageSize, kImageSize), 0, 0, cv::INTER_LINEAR);

    Tensor overlay({3, kImageSize, kImageSize});
    const std::int64_t hw = kImageSize * kImageSize;
    auto src = image.data();
    auto dst = overlay.data();
    for (std::int64_t p = 0; p < hw; ++p) {
        const float a = 0.65f * up.at<float>(static_cast<int>(p / kImageSize),
                                             static_cast<int>(p % kImageSize));
        // red overlay, alpha proportional to the normalized activation
        dst[0 * hw + p] = (1 - a) * src[0 * hw + p] + a * 1.0f;
        dst[1 * hw + p] = (1 - a) * src[1 * hw + p];
        dst[2 * hw + p] = (1 - a) * src[2 * hw + p];
    }
    write_png(path, overlay);
}

std::vector<std::pair<std::string, float>> text_heatmap(FccModel& model,
                                                        const CorpusRuntime& corpus,
                                                        std::int64_t record_idx,
                                                        const std::vector<std::int64_t>& features) {
    for (auto f : features) {
        check_feature(f);
    }
    const auto& record = corpus.record(record_idx);
    const auto& encoded = corpus.caption(record_idx);
    const std::int64_t t = corpus.max_seq_len();

    // saliency w.r.t. the embedding layer input: detach the combined rows
    // into a leaf and pull the selected features' sum back onto it
    Tensor combined = model.combine_embeddings(nullptr, {&encoded});
    Tensor leaf = combined.clone();
    leaf.set_requires_grad(true);

    Tape<float> tape;
    auto feats = model.language_forward(&tape, leaf);
    Tensor mask({kFeatureDim, 1});
    for (auto f : features) {
        mask.data()[f] = 1.0f;
    }
    auto selected = ops::matmul(&tape, feats, mask);
    auto loss = ops::mean(&tape, selected);
    tape.backward(loss);

    const std::int64_t dim = CombinerConfig::kOutputDim;
    auto g = leaf.grad();
    std::vector<float> norms(static_cast<std::size_t>(t), 0.0f);
    for (std::int64_t i = 0; i < t; ++i) {
        double acc = 0.0;
        for (std::int64_t j = 0; j < dim; ++j) {
            const double v = g[i * dim + j];
            acc += v * v;
        }
        norms[static_cast<std::size_t>(i)] = static_cast<float>(std::sqrt(acc));
    }

    // min-max over the real tokens; padding positions are forced to zero
    float lo = 0.0f, hi = 0.0f;
    if (encoded.length > 0) {
        lo = hi = norms[0];
        for (std::int64_t i = 1; i < encoded.length; ++i) {
            lo = std::min(lo, norms[static_cast<std::size_t>(i)]);
            hi = std::max(hi, norms[static_cast<std::size_t>(i)]);
        }
    }
    std::vector<std::pair<std::string, float>> out(static_cast<std::size_t>(t));
    for (std::int64_t i = 0; i < t; ++i) {
        if (i < encoded.length) {
            const float score = hi > lo ? (norms[static_cast<std::size_t>(i)] - lo) / (hi - lo) : 0.0f;
            out[static_cast<std::size_t>(i)] = {record.tokens[static_cast<std::size_t>(i)], score};
        } else {
            out[static_cast<std::size_t>(i)] = {"", 0.0f};
        }
    }
    return out;
}

void write_token_scores_csv(const std::vector<std::pair<std::string, float>>& scores,
                            const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write token scores: " + path);
    }
    out << "token,score\n";
    for (const auto& [token, score] : scores) {
        if (token.empty()) {
            continue;
        }
        out << token << ',' << score << '\n';
    }
}

void write_token_scores_html(const std::vector<std::pair<std::string, float>>& scores,
                             const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write token scores: " + path);
    }
    out << "<html><body><p style=\"font-family:serif;font-size:18px\">\n";
    for (const auto& [token, score] : scores) {
        if (token.empty()) {
            continue;
        }
        const int shade = static_cast<int>(255 - score * 170);
        out << "<span style=\"background-color:rgb(255," << shade << "," << shade << ")\">" << token
            << "</span> ";
    }
    out << "\n</p></body></html>\n";
}

// ----------------------------------------------------------------------------
// Semantic specificity
// ----------------------------------------------------------------------------

std::vector<double> semantic_specificity_all(FccModel& model, const CorpusRuntime& corpus,
                                             const std::vector<std::int32_t>& idxs,
                                             const std::string& branch, std::int64_t top_k) {
    bool any_concepts = false;
    for (auto idx : idxs) {
        if (corpus.record(idx).concepts.has_value() && !corpus.record(idx).concepts->empty()) {
            any_concepts = true;
            break;
        }
    }
    if (!any_concepts) {
        throw ConfigError("semantic specificity requires concept annotations");
    }

    Tensor acts = branch_activations(model, corpus, idxs, branch);
    const std::int64_t m = acts.dim(0);
    const auto keep = std::min<std::int64_t>(top_k, m);
    auto ids = ids_of(corpus, idxs);

    // pseudo-document per feature: pooled concept ids of its top-k captions
    std::vector<std::vector<std::string>> docs(kFeatureDim);
    for (std::int64_t f = 0; f < kFeatureDim; ++f) {
        auto order = order_by_activation(acts, ids, f);
        auto& doc = docs[static_cast<std::size_t>(f)];
        for (std::int64_t i = 0; i < keep; ++i) {
            const auto& rec = corpus.record(idxs[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
            if (!rec.concepts.has_value()) {
                continue;
            }
            for (const auto& per_token : *rec.concepts) {
                for (const auto& concept_id : per_token) {
                    doc.push_back(concept_id);
                }
            }
        }
    }
    return concept_tfidf_scores(docs);
}

std::vector<double> concept_tfidf_scores(const std::vector<std::vector<std::string>>& pseudo_docs) {
    const auto n_features = static_cast<std::int64_t>(pseudo_docs.size());
    if (n_features == 0) {
        return {};
    }
    std::map<std::string, std::int64_t> doc_frequency;
    std::vector<std::map<std::string, std::int64_t>> counts(pseudo_docs.size());
    for (std::size_t f = 0; f < pseudo_docs.size(); ++f) {
        for (const auto& concept_id : pseudo_docs[f]) {
            ++counts[f][concept_id];
        }
        for (const auto& [concept_id, count] : counts[f]) {
            (void)count;
            ++doc_frequency[concept_id];
        }
    }

    std::vector<double> raw(pseudo_docs.size(), 0.0);
    for (std::size_t f = 0; f < pseudo_docs.size(); ++f) {
        const auto& doc = counts[f];
        if (doc.empty()) {
            continue;
        }
        double sum = 0.0;
        for (const auto& [concept_id, count] : doc) {
            const double tf =
                static_cast<double>(count) / static_cast<double>(pseudo_docs[f].size());
            const double idf = std::log(static_cast<double>(n_features) /
                                        static_cast<double>(doc_frequency.at(concept_id)));
            sum += tf * idf;
        }
        raw[f] = sum / static_cast<double>(doc.size());
    }

    double mx = 0.0;
    for (double v : raw) {
        mx = std::max(mx, v);
    }
    if (mx > 0.0) {
        for (auto& v : raw) {
            v /= mx;
        }
    }
    return raw;
}

double semantic_specificity(FccModel& model, const CorpusRuntime& corpus,
                            const std::vector<std::int32_t>& idxs, const std::string& branch,
                            std::int64_t feature, std::int64_t top_k) {
    check_feature(feature);
    auto all = semantic_specificity_all(model, corpus, idxs, branch, top_k);
    return all[static_cast<std::size_t>(feature)];
}

}  // namespace fcc
