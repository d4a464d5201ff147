#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "fcc/image.hpp"
#include "fcc/inspect.hpp"
#include "support/synthetic.hpp"

using namespace fcc;
namespace ts = fcc::testsupport;

namespace {

// activation matrix with controlled columns
Tensor acts_with(std::int64_t m, std::function<float(std::int64_t row, std::int64_t feature)> f) {
    Tensor acts({m, kFeatureDim});
    for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t j = 0; j < kFeatureDim; ++j) {
            acts.data()[i * kFeatureDim + j] = f(i, j);
        }
    }
    return acts;
}

FccModel tiny_model(std::int64_t vocab = 16) {
    FccModelConfig c;
    c.vocab_size = vocab;
    c.init_seed = 5;
    return FccModel(c);
}

}  // namespace

TEST_CASE("prominence: a constant feature scores about 1 and ranks last") {
    // feature 0 fires on exactly one sample; feature 1 is constant
    auto acts = acts_with(3, [](std::int64_t i, std::int64_t j) {
        if (j == 0) {
            return i == 1 ? 5.0f : 0.0f;
        }
        return 2.0f;
    });
    auto profiles = rank_features_from_activations(acts, {"a", "b", "c"}, "text");
    REQUIRE(profiles.size() == 512);
    CHECK(profiles.front().feature == 0);
    // hand computation: max 5, mean 5/3 -> prominence 3
    CHECK(profiles.front().prominence == doctest::Approx(3.0).epsilon(1e-6));
    CHECK(profiles.front().top_ids.front() == "b");
    CHECK(profiles.back().prominence == doctest::Approx(1.0).epsilon(1e-6));

    // deterministic across calls
    auto again = rank_features_from_activations(acts, {"a", "b", "c"}, "text");
    for (std::size_t i = 0; i < profiles.size(); ++i) {
        CHECK(profiles[i].feature == again[i].feature);
    }
}

TEST_CASE("top samples order ties by ascending record id") {
    auto acts = acts_with(4, [](std::int64_t, std::int64_t) { return 1.5f; });
    auto profiles = rank_features_from_activations(acts, {"r3", "r1", "r2", "r0"}, "text", 4);
    CHECK(profiles[0].top_ids == std::vector<std::string>{"r0", "r1", "r2", "r3"});
}

TEST_CASE("top_activating clips oversized k and matches recorded maxima") {
    auto dir = ts::temp_dir("inspect_top");
    auto corpus_files = ts::make_shapes_corpus(dir + "/shapes", {5, 3, 3});
    Vocab vocab = build_vocab(corpus_files.records);
    CorpusRuntime corpus(corpus_files.records, vocab);
    auto model = tiny_model(vocab.size());
    std::vector<std::int32_t> idxs = {0, 1, 2, 3, 4};

    auto top = top_activating(model, corpus, idxs, "text", 7, 99);
    CHECK(top.size() == 5);
    for (std::size_t i = 1; i < top.size(); ++i) {
        CHECK(top[i - 1].second >= top[i].second);
    }
    auto profiles = rank_features(model, corpus, idxs, "text", 3);
    for (const auto& p : profiles) {
        if (p.feature == 7) {
            CHECK(p.top_ids.front() == top[0].first);
        }
    }
    CHECK_THROWS_AS(top_activating(model, corpus, idxs, "text", 512, 2), ContractError);
}

TEST_CASE("heatmap: degenerate constant maps render as zeros") {
    auto model = tiny_model();
    // zero final-conv weights and neutral bn give a constant pre-pool map
    auto& b4 = model.vision_blocks[3];
    std::fill(b4.conv2.w.value.data().begin(), b4.conv2.w.value.data().end(), 0.0f);
    std::fill(b4.conv2.b.value.data().begin(), b4.conv2.b.value.data().end(), 0.0f);
    Tensor white({3, 224, 224}, 1.0f);
    auto hm = vision_heatmap(model, white, 3);
    CHECK(hm.height == 28);
    CHECK(hm.width == 28);
    for (auto v : hm.normalized) {
        CHECK(v == 0.0f);
    }
}

TEST_CASE("heatmap: the raw map's maximum is the pooled activation argmax") {
    auto dir = ts::temp_dir("inspect_hm");
    auto corpus_files = ts::make_shapes_corpus(dir + "/shapes", {2, 9, 2});
    auto model = tiny_model();
    auto img = load_image(corpus_files.records[0].image_path);
    const std::int64_t feature = 11;
    auto hm = vision_heatmap(model, img, feature);

    Tensor batch({1, 3, 224, 224});
    std::copy(img.data().begin(), img.data().end(), batch.data().begin());
    auto feats = model.vision_forward(nullptr, batch, ops::BnMode::infer);
    float raw_max = hm.raw[0];
    for (auto v : hm.raw) {
        raw_max = std::max(raw_max, v);
    }
    CHECK(raw_max == doctest::Approx(feats.data()[feature]).epsilon(1e-6));
    // normalized map peaks at exactly the argmax cell
    std::size_t arg_raw = 0, arg_norm = 0;
    for (std::size_t i = 0; i < hm.raw.size(); ++i) {
        if (hm.raw[i] > hm.raw[arg_raw]) {
            arg_raw = i;
        }
        if (hm.normalized[i] > hm.normalized[arg_norm]) {
            arg_norm = i;
        }
    }
    CHECK(arg_raw == arg_norm);
    CHECK(hm.normalized[arg_norm] == doctest::Approx(1.0f));
}

TEST_CASE("heatmap: a 16px shift moves the peak by two cells (8px granularity)") {
    auto model = tiny_model();
    auto blob_at = [](int cx) {
        Tensor img({3, 224, 224}, 1.0f);
        for (int y = 92; y < 132; ++y) {
            for (int x = cx - 20; x < cx + 20; ++x) {
                for (int c = 0; c < 3; ++c) {
                    img.data()[(c * 224 + y) * 224 + x] = 0.0f;
                }
            }
        }
        return img;
    };
    auto img1 = blob_at(104);
    auto img2 = blob_at(120);

    // pick the feature with the strongest response to the first blob
    Tensor batch({1, 3, 224, 224});
    std::copy(img1.data().begin(), img1.data().end(), batch.data().begin());
    auto feats = model.vision_forward(nullptr, batch, ops::BnMode::infer);
    std::int64_t feature = 0;
    for (std::int64_t j = 1; j < 512; ++j) {
        if (feats.data()[j] > feats.data()[feature]) {
            feature = j;
        }
    }

    auto peak_of = [&](const Tensor& img) {
        auto hm = vision_heatmap(model, img, feature);
        std::size_t arg = 0;
        for (std::size_t i = 0; i < hm.raw.size(); ++i) {
            if (hm.raw[i] > hm.raw[arg]) {
                arg = i;
            }
        }
        return std::pair<int, int>{static_cast<int>(arg % 28), static_cast<int>(arg / 28)};
    };
    auto [x1, y1] = peak_of(img1);
    auto [x2, y2] = peak_of(img2);
    CHECK(std::abs(x2 - x1 - 2) <= 1);
    CHECK(std::abs(y2 - y1) <= 1);
}

TEST_CASE("heatmap files: CSV raw map and PNG overlay") {
    auto dir = ts::temp_dir("inspect_files");
    auto model = tiny_model();
    Tensor img({3, 224, 224}, 0.8f);
    img.data()[224 * 100 + 100] = 0.0f;
    auto hm = vision_heatmap(model, img, 0);
    write_heatmap_csv(hm, dir + "/map.csv");
    write_heatmap_overlay_png(hm, img, dir + "/map.png");
    std::ifstream csv(dir + "/map.csv");
    std::string line;
    int rows = 0;
    while (std::getline(csv, line)) {
        ++rows;
    }
    CHECK(rows == 28);
    CHECK(std::filesystem::file_size(dir + "/map.png") > 0);
    // overlay values stay in range
    for (auto v : hm.normalized) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("text heatmap: padding scores zero, duplicates agree") {
    auto dir = ts::temp_dir("inspect_text");
    auto corpus_files = ts::make_shapes_corpus(dir + "/shapes", {4, 31, 2});
    Vocab vocab = build_vocab(corpus_files.records);
    CorpusRuntime corpus(corpus_files.records, vocab);
    auto model = tiny_model(vocab.size());

    auto scores = text_heatmap(model, corpus, 0, {3, 17});
    REQUIRE(scores.size() == 1000);
    const auto len = corpus.caption(0).length;
    for (std::int64_t i = len; i < 1000; ++i) {
        CHECK(scores[static_cast<std::size_t>(i)].first.empty());
        CHECK(scores[static_cast<std::size_t>(i)].second == 0.0f);
    }
    for (std::int64_t i = 0; i < len; ++i) {
        CHECK(scores[static_cast<std::size_t>(i)].second >= 0.0f);
        CHECK(scores[static_cast<std::size_t>(i)].second <= 1.0f);
    }
    auto again = text_heatmap(model, corpus, 0, {3, 17});
    CHECK(scores == again);

    write_token_scores_csv(scores, dir + "/tokens.csv");
    write_token_scores_html(scores, dir + "/tokens.html");
    CHECK(std::filesystem::file_size(dir + "/tokens.csv") > 0);
    CHECK(std::filesystem::file_size(dir + "/tokens.html") > 0);
}

TEST_CASE("tf-idf: hand-built three-document oracle") {
    // docs: f0 = {A, A, B}, f1 = {A, B}, f2 = {C}; 509 empty documents
    std::vector<std::vector<std::string>> docs(512);
    docs[0] = {"A", "A", "B"};
    docs[1] = {"A", "B"};
    docs[2] = {"C"};
    auto scores = concept_tfidf_scores(docs);

    const double idf_a = std::log(512.0 / 2.0);
    const double idf_b = std::log(512.0 / 2.0);
    const double idf_c = std::log(512.0 / 1.0);
    const double raw0 = ((2.0 / 3.0) * idf_a + (1.0 / 3.0) * idf_b) / 2.0;
    const double raw1 = ((1.0 / 2.0) * idf_a + (1.0 / 2.0) * idf_b) / 2.0;
    const double raw2 = (1.0 * idf_c) / 1.0;
    const double mx = std::max({raw0, raw1, raw2});

    CHECK(std::fabs(scores[0] - raw0 / mx) < 1e-9);
    CHECK(std::fabs(scores[1] - raw1 / mx) < 1e-9);
    CHECK(std::fabs(scores[2] - raw2 / mx) < 1e-9);
    CHECK(scores[3] == 0.0);
}

TEST_CASE("tf-idf: a concept in every document contributes exactly zero") {
    std::vector<std::vector<std::string>> docs(512);
    for (auto& d : docs) {
        d = {"ubiquitous"};
    }
    docs[0].push_back("rare");
    auto scores = concept_tfidf_scores(docs);
    for (std::size_t f = 1; f < docs.size(); ++f) {
        CHECK(scores[f] == 0.0);
    }
    CHECK(scores[0] > 0.0);  // only the exclusive concept contributes
}

TEST_CASE("tf-idf: an exclusive concept beats purely ubiquitous ones") {
    std::vector<std::vector<std::string>> docs(512);
    for (auto& d : docs) {
        d = {"common1", "common2"};
    }
    docs[5] = {"common1", "exclusive"};
    auto scores = concept_tfidf_scores(docs);
    for (std::size_t f = 0; f < docs.size(); ++f) {
        if (f != 5) {
            CHECK(scores[5] > scores[f]);
        }
    }
}

TEST_CASE("tf-idf: invariant to caption order within a pseudo-document") {
    std::vector<std::vector<std::string>> a(512), b(512);
    a[0] = {"x", "y", "x", "z"};
    b[0] = {"z", "x", "y", "x"};
    a[1] = b[1] = {"y"};
    CHECK(concept_tfidf_scores(a) == concept_tfidf_scores(b));
}

TEST_CASE("specificity requires concept annotations") {
    auto dir = ts::temp_dir("inspect_noconcepts");
    ts::SynthSpec spec{3, 7, 2};
    spec.annotations = false;
    auto corpus_files = ts::make_shapes_corpus(dir + "/shapes", spec);
    Vocab vocab = build_vocab(corpus_files.records);
    CorpusRuntime corpus(corpus_files.records, vocab);
    auto model = tiny_model(vocab.size());
    std::vector<std::int32_t> idxs = {0, 1, 2};
    CHECK_THROWS_AS(semantic_specificity(model, corpus, idxs, "text", 0), ConfigError);
}
