#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "fcc/corpus.hpp"
#include "fcc/image.hpp"
#include "support/synthetic.hpp"

using namespace fcc;
namespace ts = fcc::testsupport;

namespace {

std::string write_lines(const std::string& name, const std::vector<std::string>& lines) {
    const auto path = ts::temp_dir("corpus") + "/" + name;
    std::ofstream out(path);
    for (const auto& l : lines) {
        out << l << "\n";
    }
    return path;
}

CorpusRecord record_with_tokens(std::vector<std::string> tokens) {
    CorpusRecord r;
    r.id = "r";
    r.image_path = "unused.png";
    r.tokens = std::move(tokens);
    return r;
}

}  // namespace

TEST_CASE("manifest: two well-formed lines load as two records") {
    auto path = write_lines("ok.jsonl", {
        R"({"id":"a","image_path":"a.png","tokens":["one","two"]})",
        R"({"id":"b","image_path":"b.png","tokens":["three"],"label":"x"})",
    });
    auto records = load_manifest(path);
    REQUIRE(records.size() == 2);
    CHECK(records[0].id == "a");
    CHECK(records[1].label.value() == "x");
}

TEST_CASE("manifest: misaligned lemmas fail with the record id") {
    auto path = write_lines("misaligned.jsonl", {
        R"({"id":"bad1","image_path":"a.png","tokens":["a","b","c","d","e"],"lemmas":["a","b","c","d"]})",
    });
    CHECK_THROWS_WITH_AS(load_manifest(path), doctest::Contains("bad1"), ValidationError);
}

TEST_CASE("manifest: empty file gives an empty list") {
    auto path = write_lines("empty.jsonl", {});
    CHECK(load_manifest(path).empty());
}

TEST_CASE("manifest: malformed JSON reports the line number") {
    auto path = write_lines("broken.jsonl", {
        R"({"id":"a","image_path":"a.png","tokens":["x"]})",
        "{not json",
    });
    CHECK_THROWS_WITH_AS(load_manifest(path), doctest::Contains("line 2"), ParseError);
}

TEST_CASE("manifest: duplicate ids are rejected") {
    auto path = write_lines("dup.jsonl", {
        R"({"id":"a","image_path":"a.png","tokens":["x"]})",
        R"({"id":"a","image_path":"b.png","tokens":["y"]})",
    });
    CHECK_THROWS_AS(load_manifest(path), ValidationError);
}

TEST_CASE("vocab: frequency order with reserved padding and unknown") {
    auto v = build_vocab({record_with_tokens({"a", "a", "b"})});
    CHECK(v.lookup("a") == 2);
    CHECK(v.lookup("b") == 3);
    CHECK(v.lookup("zzz") == Vocab::kUnknown);
    CHECK(v.size() == 4);
}

TEST_CASE("vocab: min_count drops rare tokens to unknown") {
    auto v = build_vocab({record_with_tokens({"a", "a", "b"})}, 0, 2);
    CHECK(v.lookup("a") == 2);
    CHECK(v.lookup("b") == Vocab::kUnknown);
}

TEST_CASE("vocab: frequency ties break lexicographically") {
    auto v = build_vocab({record_with_tokens({"y", "x"})});
    CHECK(v.lookup("x") == 2);
    CHECK(v.lookup("y") == 3);
}

TEST_CASE("vocab: ids round-trip for in-vocabulary tokens") {
    auto v = build_vocab({record_with_tokens({"alpha", "beta", "beta", "gamma"})});
    for (const auto& tok : {"alpha", "beta", "gamma"}) {
        CHECK(v.token_at(v.lookup(tok)) == tok);
    }
}

TEST_CASE("encode: pads to 1000 and truncates beyond") {
    auto v = build_vocab({record_with_tokens({"a", "b", "c"})});
    auto enc = encode_caption(record_with_tokens({"a", "b", "c"}), v, nullptr, nullptr, nullptr);
    CHECK(enc.length == 3);
    CHECK(enc.word_ids.size() == 1000);
    CHECK(enc.word_ids[0] != Vocab::kPadding);
    CHECK(enc.word_ids[2] != Vocab::kPadding);
    CHECK(enc.word_ids[3] == Vocab::kPadding);
    CHECK(enc.word_ids[999] == Vocab::kPadding);

    std::vector<std::string> long_caption(1200, "a");
    auto enc2 = encode_caption(record_with_tokens(long_caption), v, nullptr, nullptr, nullptr);
    CHECK(enc2.length == 1000);
    CHECK(enc2.word_ids[999] == v.lookup("a"));
}

TEST_CASE("encode: lemma resolves through the table, unseen concepts pad") {
    auto lemma_table = EmbeddingTable::from_rows(EmbeddingTable::Kind::lemma, 3,
                                                 {{"make", {1, 2, 3}}});
    auto concept_table = EmbeddingTable::from_rows(EmbeddingTable::Kind::concept_id, 3,
                                                   {{"K1", {4, 5, 6}}});
    CorpusRecord r = record_with_tokens({"made", "widgets"});
    r.lemmas = std::vector<std::string>{"make", "widget"};
    r.concepts = std::vector<std::vector<std::string>>{{}, {"K_unseen", "K1"}};
    auto v = build_vocab({r});
    auto enc = encode_caption(r, v, nullptr, &lemma_table, &concept_table);
    CHECK(enc.lemma_rows[0] == 0);          // "make" resolved
    CHECK(enc.lemma_rows[1] == -1);         // "widget" absent -> zero vector
    CHECK(enc.concept_rows[0] == -1);       // no concept annotated
    CHECK(enc.concept_rows[1] == -1);       // first listed id is unseen -> zero vector
    // absent keys resolve to the zero padding vector, never an error
    auto row = lemma_table.row(enc.lemma_rows[1]);
    for (auto x : row) {
        CHECK(x == 0.0f);
    }
}

TEST_CASE("embedding table: header and rows") {
    auto path = write_lines("emb.txt", {"2 3", "alpha 1 2 3", "beta 0.5 -1 2.25"});
    auto t = EmbeddingTable::load(path, EmbeddingTable::Kind::word);
    CHECK(t.size() == 2);
    CHECK(t.dim() == 3);
    CHECK(t.row(t.row_of("beta"))[2] == doctest::Approx(2.25f));
    CHECK(t.row_of("gamma") == -1);
}

TEST_CASE("embedding table: short row reports its row number") {
    auto path = write_lines("short.txt", {"1 3", "alpha 1 2"});
    CHECK_THROWS_WITH_AS(EmbeddingTable::load(path, EmbeddingTable::Kind::word),
                         doctest::Contains("row 2"), ParseError);
}

TEST_CASE("embedding table: duplicate keys are rejected") {
    auto path = write_lines("dupkey.txt", {"2 2", "a 1 2", "a 3 4"});
    CHECK_THROWS_AS(EmbeddingTable::load(path, EmbeddingTable::Kind::word), ValidationError);
}

TEST_CASE("embedding table: header count is verified") {
    auto path = write_lines("count.txt", {"3 2", "a 1 2", "b 3 4"});
    CHECK_THROWS_AS(EmbeddingTable::load(path, EmbeddingTable::Kind::word), ParseError);
}

TEST_CASE("embedding table: 100-D lemma tables load for mode (c)") {
    std::vector<float> row(100);
    for (std::size_t i = 0; i < row.size(); ++i) {
        row[i] = static_cast<float>(i) * 0.01f;
    }
    auto t = EmbeddingTable::from_rows(EmbeddingTable::Kind::lemma, 100, {{"make", row}});
    CHECK(t.dim() == 100);
}

TEST_CASE("image: solid white square loads as all ones") {
    auto dir = ts::temp_dir("img");
    Tensor white({3, 224, 224}, 1.0f);
    write_png(dir + "/white.png", white);
    auto loaded = load_image(dir + "/white.png");
    CHECK(loaded.shape() == Shape{3, 224, 224});
    for (auto v : loaded.data()) {
        CHECK(v == 1.0f);
    }
}

TEST_CASE("image: wide input pads to square, content in the middle band") {
    auto dir = ts::temp_dir("img");
    Tensor wide({3, 224, 448});  // black content, 2:1 aspect
    write_png(dir + "/wide.png", wide);
    auto loaded = load_image(dir + "/wide.png");
    const std::int64_t hw = 224 * 224;
    // top and bottom quarters are white padding, middle band is the content
    CHECK(loaded.data()[0 * hw + 5 * 224 + 112] == 1.0f);
    CHECK(loaded.data()[0 * hw + 218 * 224 + 112] == 1.0f);
    CHECK(loaded.data()[0 * hw + 112 * 224 + 112] < 0.1f);
}

TEST_CASE("image: grayscale inputs replicate to 3 channels") {
    auto dir = ts::temp_dir("img");
    {
        std::ofstream out(dir + "/gray.pgm", std::ios::binary);
        out << "P5\n4 4\n255\n";
        for (int i = 0; i < 16; ++i) {
            out.put(static_cast<char>(i * 16));
        }
    }
    auto loaded = load_image(dir + "/gray.pgm");
    const std::int64_t hw = 224 * 224;
    for (std::int64_t p = 0; p < hw; p += 997) {
        CHECK(loaded.data()[p] == loaded.data()[hw + p]);
        CHECK(loaded.data()[p] == loaded.data()[2 * hw + p]);
    }
}

TEST_CASE("image: undecodable files raise an IO error naming the path") {
    auto dir = ts::temp_dir("img");
    {
        std::ofstream out(dir + "/junk.png");
        out << "this is not an image";
    }
    CHECK_THROWS_WITH_AS(load_image(dir + "/junk.png"), doctest::Contains("junk.png"), IoError);
}

TEST_CASE("image: preprocessing is idempotent on 224x224 RGB inputs") {
    auto dir = ts::temp_dir("img");
    auto corpus = ts::make_shapes_corpus(dir + "/shapes_idem", {4, 7});
    auto img = load_image(corpus.records[0].image_path);
    auto again = preprocess_image(img);
    CHECK(again.same_storage(img));  // exact pass-through
}

TEST_CASE("sampler: 32 records make two balanced batches per epoch") {
    PairSampler sampler(32, 99);
    auto batches = sampler.epoch(0);
    REQUIRE(batches.size() == 2);
    for (const auto& b : batches) {
        CHECK(b.items.size() == 32);
        CHECK(b.positives() == 16);
        CHECK(b.negatives() == 16);
    }
}

TEST_CASE("sampler: epochs visit every record once as a positive") {
    PairSampler sampler(20, 5);
    for (std::int64_t e = 0; e < 3; ++e) {
        std::set<std::int32_t> positives;
        for (const auto& b : sampler.epoch(e)) {
            for (const auto& item : b.items) {
                if (item.positive) {
                    CHECK(item.figure == item.caption);
                    positives.insert(item.figure);
                }
            }
        }
        CHECK(positives.size() == 20);
    }
}

TEST_CASE("sampler: fixed seed reproduces the batch sequence") {
    PairSampler a(20, 7), b(20, 7);
    for (std::int64_t e = 0; e < 2; ++e) {
        auto ba = a.epoch(e);
        auto bb = b.epoch(e);
        REQUIRE(ba.size() == bb.size());
        for (std::size_t i = 0; i < ba.size(); ++i) {
            REQUIRE(ba[i].items.size() == bb[i].items.size());
            for (std::size_t j = 0; j < ba[i].items.size(); ++j) {
                CHECK(ba[i].items[j].figure == bb[i].items[j].figure);
                CHECK(ba[i].items[j].caption == bb[i].items[j].caption);
                CHECK(ba[i].items[j].positive == bb[i].items[j].positive);
            }
        }
    }
}

TEST_CASE("sampler: negatives never pair a figure with its own caption") {
    PairSampler sampler(5, 11);
    std::int64_t draws = 0;
    for (std::int64_t e = 0; draws < 10000; ++e) {
        for (const auto& b : sampler.epoch(e)) {
            for (const auto& item : b.items) {
                if (!item.positive) {
                    CHECK(item.caption != item.figure);
                    ++draws;
                }
            }
        }
    }
}

TEST_CASE("sampler: negatives are re-drawn across epochs") {
    PairSampler sampler(12, 3);
    auto neg_of = [&](std::int64_t e) {
        std::vector<std::pair<std::int32_t, std::int32_t>> negs;
        for (const auto& b : sampler.epoch(e)) {
            for (const auto& item : b.items) {
                if (!item.positive) {
                    negs.emplace_back(item.figure, item.caption);
                }
            }
        }
        return negs;
    };
    CHECK(neg_of(0) != neg_of(1));
}

TEST_CASE("sampler: partial final batch keeps the balance") {
    PairSampler sampler(20, 1);
    auto batches = sampler.epoch(0);
    REQUIRE(batches.size() == 2);
    CHECK(batches[1].items.size() == 8);
    CHECK(batches[1].positives() == 4);
    CHECK(batches[1].negatives() == 4);
}

TEST_CASE("sampler: a single record admits no negatives") {
    CHECK_THROWS_AS(PairSampler(1, 0), SamplingError);
}

TEST_CASE("splits: 100 records in 10 folds of 10") {
    auto d = make_kfold_splits(100, 10, 42);
    REQUIRE(d.folds.size() == 10);
    std::set<std::int32_t> seen;
    for (const auto& fold : d.folds) {
        CHECK(fold.size() == 10);
        seen.insert(fold.begin(), fold.end());
    }
    CHECK(seen.size() == 100);
}

TEST_CASE("splits: retrieval holdout follows the scaled 20% rule") {
    auto d = make_retrieval_split(50, 8);
    CHECK(d.test.size() == 10);
    CHECK(d.train.size() == 40);
    auto big = make_retrieval_split(10000, 8);
    CHECK(big.test.size() == 1000);
}

TEST_CASE("splits: the same seed reproduces the folds") {
    auto a = make_kfold_splits(37, 5, 13);
    auto b = make_kfold_splits(37, 5, 13);
    CHECK(a.folds == b.folds);
}

TEST_CASE("splits: corpus smaller than the fold count is an error") {
    CHECK_THROWS_AS(make_kfold_splits(5, 10, 0), SplitError);
}

TEST_CASE("tokenize: lowercase, split on whitespace and punctuation") {
    auto toks = tokenize("The Aliev-Panfilov model, with alpha=0.01!");
    CHECK(toks == std::vector<std::string>{"the", "aliev", "panfilov", "model", "with", "alpha",
                                           "0", "01"});
}
