#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>

#include "fcc/model.hpp"
#include "fcc/train.hpp"
#include "support/synthetic.hpp"

using namespace fcc;
namespace ts = fcc::testsupport;

namespace {

EncodedCaption pad_only_caption() {
    EncodedCaption e;
    e.word_ids.assign(1000, Vocab::kPadding);
    e.pretrained_word_rows.assign(1000, -1);
    e.lemma_rows.assign(1000, -1);
    e.concept_rows.assign(1000, -1);
    e.length = 0;
    return e;
}

FccModelConfig small_config(CombinerMode mode, CombineOp op, std::int64_t vocab = 12) {
    FccModelConfig c;
    c.vocab_size = vocab;
    c.combiner.mode = mode;
    c.combiner.op = op;
    c.init_seed = 33;
    return c;
}

EmbeddingTable table_of(EmbeddingTable::Kind kind, std::int64_t dim,
                        std::vector<std::string> keys, float scale) {
    std::vector<std::pair<std::string, std::vector<float>>> rows;
    float v = scale;
    for (auto& k : keys) {
        std::vector<float> row(static_cast<std::size_t>(dim));
        for (auto& x : row) {
            x = v;
            v += scale;
        }
        rows.emplace_back(k, row);
    }
    return EmbeddingTable::from_rows(kind, dim, rows);
}

}  // namespace

TEST_CASE("combiner mode (a) output equals the learnt lookup exactly") {
    FccModel model(small_config(CombinerMode::a, CombineOp::concatenate));
    EncodedCaption cap = pad_only_caption();
    cap.word_ids[0] = 3;
    cap.word_ids[1] = 5;
    cap.length = 2;
    auto combined = model.combine_embeddings(nullptr, {&cap});
    CHECK(combined.shape() == Shape{1, 1000, 300});
    auto table = model.learnt_embedding.table.value;
    for (std::int64_t j = 0; j < 300; ++j) {
        CHECK(combined.data()[0 * 300 + j] == table.data()[3 * 300 + j]);
        CHECK(combined.data()[1 * 300 + j] == table.data()[5 * 300 + j]);
        CHECK(combined.data()[5 * 300 + j] == table.data()[0 * 300 + j]);  // padding row
    }
}

TEST_CASE("combiner mode (c): 100+100+100 concatenation with zero padding for gaps") {
    auto lemma = table_of(EmbeddingTable::Kind::lemma, 100, {"make"}, 0.001f);
    auto concepts = table_of(EmbeddingTable::Kind::concept_id, 100, {"K1"}, 0.002f);
    FccModel model(small_config(CombinerMode::c, CombineOp::concatenate), nullptr, &lemma,
                   &concepts);
    CHECK(model.config().combiner.learnt_dim() == 100);

    EncodedCaption cap = pad_only_caption();
    cap.word_ids[0] = 2;
    cap.lemma_rows[0] = 0;
    cap.concept_rows[0] = -1;  // token with no concept annotation
    cap.length = 1;
    auto combined = model.combine_embeddings(nullptr, {&cap});
    CHECK(combined.shape() == Shape{1, 1000, 300});
    // middle block carries the lemma vector, the last 100 dims are zeros
    CHECK(combined.data()[100] == doctest::Approx(0.001f));
    for (std::int64_t j = 200; j < 300; ++j) {
        CHECK(combined.data()[j] == 0.0f);
    }
}

TEST_CASE("combiner mode (b): 150+150 split") {
    auto words = table_of(EmbeddingTable::Kind::word, 150, {"alpha"}, 0.01f);
    FccModel model(small_config(CombinerMode::b, CombineOp::concatenate), &words);
    CHECK(model.config().combiner.learnt_dim() == 150);
    EncodedCaption cap = pad_only_caption();
    cap.word_ids[0] = 2;
    cap.pretrained_word_rows[0] = 0;
    cap.length = 1;
    auto combined = model.combine_embeddings(nullptr, {&cap});
    CHECK(combined.shape() == Shape{1, 1000, 300});
    CHECK(combined.data()[150] == doctest::Approx(0.01f));
}

TEST_CASE("combiner add mode sums 300-D sources") {
    auto lemma = table_of(EmbeddingTable::Kind::lemma, 300, {"make"}, 0.001f);
    auto concepts = table_of(EmbeddingTable::Kind::concept_id, 300, {"K1"}, 0.0f);
    FccModel model(small_config(CombinerMode::c, CombineOp::add), nullptr, &lemma, &concepts);
    CHECK(model.config().combiner.learnt_dim() == 300);
    EncodedCaption cap = pad_only_caption();
    cap.word_ids[0] = 4;
    cap.lemma_rows[0] = 0;
    cap.length = 1;
    auto combined = model.combine_embeddings(nullptr, {&cap});
    const auto& table = model.learnt_embedding.table.value;
    CHECK(combined.data()[0] ==
          doctest::Approx(table.data()[4 * 300 + 0] + lemma.row(0)[0]).epsilon(1e-6));
}

TEST_CASE("combiner validates table registration and dimensions") {
    CHECK_THROWS_AS(FccModel(small_config(CombinerMode::c, CombineOp::concatenate)), ConfigError);
    auto lemma_wrong = table_of(EmbeddingTable::Kind::lemma, 40, {"x"}, 0.1f);
    auto concepts = table_of(EmbeddingTable::Kind::concept_id, 100, {"K"}, 0.1f);
    CHECK_THROWS_AS(FccModel(small_config(CombinerMode::c, CombineOp::concatenate), nullptr,
                             &lemma_wrong, &concepts),
                    ConfigError);
    // add mode demands 300-D sources
    auto lemma100 = table_of(EmbeddingTable::Kind::lemma, 100, {"x"}, 0.1f);
    CHECK_THROWS_AS(FccModel(small_config(CombinerMode::c, CombineOp::add), nullptr, &lemma100,
                             &concepts),
                    ConfigError);
}

TEST_CASE("vision trunk maps [2,3,224,224] to [2,512]") {
    FccModel model(small_config(CombinerMode::a, CombineOp::concatenate));
    Tensor images({2, 3, 224, 224}, 0.5f);
    auto feats = model.vision_forward(nullptr, images, ops::BnMode::infer);
    CHECK(feats.shape() == Shape{2, 512});
    Tensor bad({2, 3, 100, 100}, 0.5f);
    CHECK_THROWS_AS(model.vision_forward(nullptr, bad, ops::BnMode::infer), DimensionError);
}

TEST_CASE("vision bypass returns stored features verbatim") {
    std::vector<float> feat(512);
    for (std::size_t i = 0; i < feat.size(); ++i) {
        feat[i] = static_cast<float>(i) * 0.25f;
    }
    auto out = FccModel::vision_bypass({{feat.data(), feat.size()}});
    CHECK(out.shape() == Shape{1, 512});
    for (std::size_t i = 0; i < feat.size(); ++i) {
        CHECK(out.data()[static_cast<std::int64_t>(i)] == feat[i]);
    }
}

TEST_CASE("language trunk maps [1,1000,300] to [1,512]") {
    FccModel model(small_config(CombinerMode::a, CombineOp::concatenate));
    Tensor combined({1, 1000, 300}, 0.01f);
    auto feats = model.language_forward(nullptr, combined);
    CHECK(feats.shape() == Shape{1, 512});
    Tensor bad({1, 900, 300}, 0.01f);
    CHECK_THROWS_AS(model.language_forward(nullptr, bad), DimensionError);
}

TEST_CASE("all-padding captions map to one bias-determined feature vector") {
    FccModel model(small_config(CombinerMode::a, CombineOp::concatenate));
    auto cap1 = pad_only_caption();
    auto cap2 = pad_only_caption();
    auto f1 = model.language_forward(nullptr, model.combine_embeddings(nullptr, {&cap1}));
    auto f2 = model.language_forward(nullptr, model.combine_embeddings(nullptr, {&cap2}));
    for (std::int64_t j = 0; j < 512; ++j) {
        CHECK(f1.data()[j] == f2.data()[j]);
    }
}

TEST_CASE("token at position 999 is outside the receptive field") {
    // floor pooling drops conv outputs 995 of 996, so inputs beyond 998 are
    // unreachable; a distinct token at 999 cannot change the feature
    FccModel model(small_config(CombinerMode::a, CombineOp::concatenate));
    auto base = pad_only_caption();
    auto probe = pad_only_caption();
    probe.word_ids[999] = 7;
    auto fb = model.language_forward(nullptr, model.combine_embeddings(nullptr, {&base}));
    auto fp = model.language_forward(nullptr, model.combine_embeddings(nullptr, {&probe}));
    for (std::int64_t j = 0; j < 512; ++j) {
        CHECK(fb.data()[j] == fp.data()[j]);
    }
    // whereas position 998 is inside the field
    auto probe2 = pad_only_caption();
    probe2.word_ids[998] = 7;
    auto fp2 = model.language_forward(nullptr, model.combine_embeddings(nullptr, {&probe2}));
    bool differs = false;
    for (std::int64_t j = 0; j < 512; ++j) {
        differs = differs || fp2.data()[j] != fb.data()[j];
    }
    CHECK(differs);
}

TEST_CASE("fusion: zero visual vector collapses every caption to one output") {
    FccModel model(small_config(CombinerMode::a, CombineOp::concatenate));
    Tensor zero_v({2, 512});
    Tensor texts({2, 512});
    for (std::int64_t j = 0; j < 512; ++j) {
        texts.data()[j] = 0.3f;
        texts.data()[512 + j] = -1.7f + 0.01f * static_cast<float>(j);
    }
    auto probs = model.fuse_and_classify(zero_v, texts);
    CHECK(probs.data()[0] == probs.data()[2]);
    CHECK(probs.data()[1] == probs.data()[3]);
}

TEST_CASE("fusion probabilities sum to one and commute in their inputs") {
    FccModel model(small_config(CombinerMode::a, CombineOp::concatenate));
    std::mt19937 rng(17);
    auto v = uniform_tensor<float>({3, 512}, -1, 1, rng);
    auto t = uniform_tensor<float>({3, 512}, -1, 1, rng);
    auto p1 = model.fuse_and_classify(v, t);
    auto p2 = model.fuse_and_classify(t, v);
    for (std::int64_t i = 0; i < 3; ++i) {
        CHECK(p1.data()[i * 2] + p1.data()[i * 2 + 1] == doctest::Approx(1.0).epsilon(1e-6));
        CHECK(p1.data()[i * 2] == p2.data()[i * 2]);
        CHECK(p1.data()[i * 2 + 1] == p2.data()[i * 2 + 1]);
    }
}

TEST_CASE("fcc_loss: analytic values") {
    auto perfect = Tensor::from_data({1, 2}, {0.0f, 1.0f});
    CHECK(fcc_loss(perfect, {true}).item() == doctest::Approx(0.0));
    auto uniform = Tensor::from_data({1, 2}, {0.5f, 0.5f});
    CHECK(fcc_loss(uniform, {true}).item() == doctest::Approx(std::log(2.0)).epsilon(1e-6));
    auto two = Tensor::from_data({2, 2}, {0.0f, 1.0f, 0.5f, 0.5f});
    CHECK(fcc_loss(two, {true, true}).item() ==
          doctest::Approx(std::log(2.0) / 2.0).epsilon(1e-6));
}

TEST_CASE("checkpoint: save/load round-trips bitwise and reproduces forwards") {
    auto dir = ts::temp_dir("ckpt");
    FccModel model(small_config(CombinerMode::a, CombineOp::concatenate));
    save_checkpoint(model, dir + "/m.fcck");
    auto loaded = load_checkpoint(dir + "/m.fcck");

    auto pa = model.params();
    auto pb = loaded.params();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i]->name == pb[i]->name);
        REQUIRE(pa[i]->value.numel() == pb[i]->value.numel());
        for (std::int64_t j = 0; j < pa[i]->value.numel(); ++j) {
            CHECK(pa[i]->value.data()[j] == pb[i]->value.data()[j]);
        }
    }

    EncodedCaption cap = pad_only_caption();
    cap.word_ids[0] = 3;
    cap.length = 1;
    auto f1 = model.language_forward(nullptr, model.combine_embeddings(nullptr, {&cap}));
    auto f2 = loaded.language_forward(nullptr, loaded.combine_embeddings(nullptr, {&cap}));
    for (std::int64_t j = 0; j < 512; ++j) {
        CHECK(f1.data()[j] == f2.data()[j]);
    }
}

TEST_CASE("checkpoint: tampered magic is a format error") {
    auto dir = ts::temp_dir("ckpt");
    FccModel model(small_config(CombinerMode::a, CombineOp::concatenate));
    save_checkpoint(model, dir + "/t.fcck");
    {
        std::fstream f(dir + "/t.fcck", std::ios::in | std::ios::out | std::ios::binary);
        f.put('X');
    }
    CHECK_THROWS_AS(load_checkpoint(dir + "/t.fcck"), FormatError);
}

TEST_CASE("checkpoint: truncation is an IO error") {
    auto dir = ts::temp_dir("ckpt");
    FccModel model(small_config(CombinerMode::a, CombineOp::concatenate));
    save_checkpoint(model, dir + "/full.fcck");
    std::ifstream in(dir + "/full.fcck", std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), {});
    std::ofstream out(dir + "/cut.fcck", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    out.close();
    CHECK_THROWS_AS(load_checkpoint(dir + "/cut.fcck"), IoError);
}

TEST_CASE("checkpoint: requesting the wrong combiner mode is a config error") {
    auto dir = ts::temp_dir("ckpt");
    FccModel model(small_config(CombinerMode::a, CombineOp::concatenate));
    save_checkpoint(model, dir + "/a.fcck");
    const CombinerMode want = CombinerMode::c;
    CHECK_THROWS_AS(load_checkpoint(dir + "/a.fcck", nullptr, nullptr, nullptr, &want),
                    ConfigError);
}

TEST_CASE("parameter count at full configuration is within 10% of 32M") {
    FccModelConfig cfg;
    cfg.vocab_size = 82000;
    cfg.combiner.mode = CombinerMode::a;
    FccModel model(cfg);
    const auto count = count_trainable(model.trainable_params());
    CHECK(count > 32e6 * 0.9);
    CHECK(count < 32e6 * 1.1);
    // the language trunk dominates
    const auto language = count_trainable(model.language_params());
    const auto vision = count_trainable(model.vision_params());
    CHECK(language > vision);
    CHECK(language > count / 2);
}

TEST_CASE("one training step reaches every trainable parameter group") {
    auto dir = ts::temp_dir("step");
    auto corpus_files = ts::make_shapes_corpus(dir + "/shapes_step", {4, 21});
    Vocab vocab = build_vocab(corpus_files.records);
    CorpusRuntime corpus(corpus_files.records, vocab);
    FccModel model(small_config(CombinerMode::a, CombineOp::concatenate, vocab.size()));

    auto snapshot = [&](ParamRefs<float> ps) {
        std::vector<float> values;
        for (auto* p : ps) {
            values.insert(values.end(), p->value.data().begin(), p->value.data().end());
        }
        return values;
    };
    auto vision_before = snapshot(model.vision_params());
    auto language_before = snapshot(model.language_params());
    auto fusion_before = snapshot(model.fusion_params());
    auto emb_before = snapshot(model.learnt_embedding.params());

    PairSampler sampler(4, 3, 4);
    auto batch = sampler.epoch(0)[0];
    Tape<float> tape;
    auto fwd = forward_pair_batch(model, corpus, batch, &tape, ops::BnMode::train, false);
    auto loss = fcc_training_loss(&tape, fwd.logits, fwd.labels);
    tape.backward(loss);
    Adam adam(AdamConfig{1e-3, 0.0});
    adam.step(model.trainable_params());

    CHECK(snapshot(model.vision_params()) != vision_before);
    CHECK(snapshot(model.language_params()) != language_before);
    CHECK(snapshot(model.fusion_params()) != fusion_before);
    CHECK(snapshot(model.learnt_embedding.params()) != emb_before);
}

TEST_CASE("pretrained tables are never modified by training") {
    auto dir = ts::temp_dir("frozen");
    auto corpus_files = ts::make_shapes_corpus(dir + "/shapes_frozen", {4, 22});
    Vocab vocab = build_vocab(corpus_files.records);
    auto lemma = table_of(EmbeddingTable::Kind::lemma, 100, {"figure", "shows", "panel"}, 0.01f);
    auto concepts = table_of(EmbeddingTable::Kind::concept_id, 100, {"C_square", "C_red"}, 0.02f);
    CorpusRuntime corpus(corpus_files.records, vocab, nullptr, &lemma, &concepts);

    FccModelConfig cfg = small_config(CombinerMode::c, CombineOp::concatenate, vocab.size());
    FccModel model(cfg, nullptr, &lemma, &concepts);

    const auto lemma_bytes = lemma.raw_data();
    const auto concept_bytes = concepts.raw_data();

    PairSampler sampler(4, 5, 4);
    auto batch = sampler.epoch(0)[0];
    Tape<float> tape;
    auto fwd = forward_pair_batch(model, corpus, batch, &tape, ops::BnMode::train, false);
    auto loss = fcc_training_loss(&tape, fwd.logits, fwd.labels);
    tape.backward(loss);
    Adam adam(AdamConfig{1e-3, 1e-5});
    adam.step(model.trainable_params());

    CHECK(lemma.raw_data() == lemma_bytes);
    CHECK(concepts.raw_data() == concept_bytes);
}

TEST_CASE("export-features writes the embedding-table format and round-trips") {
    auto dir = ts::temp_dir("export");
    auto corpus_files = ts::make_shapes_corpus(dir + "/shapes_export", {3, 23});
    Vocab vocab = build_vocab(corpus_files.records);
    CorpusRuntime corpus(corpus_files.records, vocab);
    FccModel model(small_config(CombinerMode::a, CombineOp::concatenate, vocab.size()));

    export_features(model, corpus, "language", dir + "/lang.txt");
    {
        std::ifstream in(dir + "/lang.txt");
        std::string header;
        std::getline(in, header);
        CHECK(header == "3 512");
    }
    auto reloaded = EmbeddingTable::load(dir + "/lang.txt", EmbeddingTable::Kind::word);
    std::vector<std::int32_t> idxs = {0, 1, 2};
    auto feats = batch_language_features(model, corpus, idxs);
    for (std::int64_t i = 0; i < 3; ++i) {
        auto row = reloaded.row(reloaded.row_of(corpus.record(i).id));
        for (std::int64_t j = 0; j < 512; ++j) {
            CHECK(row[static_cast<std::size_t>(j)] ==
                  doctest::Approx(feats.data()[i * 512 + j]).epsilon(1e-6));
        }
    }
}

TEST_CASE("export-features in bypass mode reproduces stored vectors") {
    auto dir = ts::temp_dir("export_bypass");
    ts::SynthSpec spec{3, 24};
    spec.visual_features = true;
    auto corpus_files = ts::make_shapes_corpus(dir + "/shapes", spec);
    Vocab vocab = build_vocab(corpus_files.records);
    CorpusRuntime corpus(corpus_files.records, vocab);
    FccModel model(small_config(CombinerMode::a, CombineOp::concatenate, vocab.size()));

    export_features(model, corpus, "vision", dir + "/vis.txt", /*bypass=*/true);
    auto reloaded = EmbeddingTable::load(dir + "/vis.txt", EmbeddingTable::Kind::word);
    for (std::int64_t i = 0; i < 3; ++i) {
        auto row = reloaded.row(reloaded.row_of(corpus.record(i).id));
        const auto& stored = *corpus.record(i).visual_feature;
        for (std::size_t j = 0; j < 512; ++j) {
            CHECK(row[j] == doctest::Approx(stored[j]).epsilon(1e-6));
        }
    }
}
