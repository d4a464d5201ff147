#include "fcc/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "fcc/errors.hpp"

namespace fcc {

namespace {

using nlohmann::json;

std::vector<std::string> string_list(const json& j, const char* field, const std::string& where) {
    if (!j.is_array()) {
        throw ValidationError(where + ": field '" + field + "' must be an array of strings");
    }
    std::vector<std::string> out;
    out.reserve(j.size());
    for (const auto& v : j) {
        if (!v.is_string()) {
            throw ValidationError(where + ": field '" + field + "' must contain only strings");
        }
        out.push_back(v.get<std::string>());
    }
    return out;
}

CorpusRecord parse_record(const json& j, std::int64_t line_no) {
    if (!j.is_object()) {
        throw ParseError("line " + std::to_string(line_no) + ": record must be a JSON object");
    }
    if (!j.contains("id") || !j.at("id").is_string()) {
        throw ValidationError("line " + std::to_string(line_no) + ": missing string field 'id'");
    }
    CorpusRecord r;
    r.id = j.at("id").get<std::string>();
    const std::string where = "record '" + r.id + "'";

    if (!j.contains("image_path") || !j.at("image_path").is_string()) {
        throw ValidationError(where + ": missing string field 'image_path'");
    }
    r.image_path = j.at("image_path").get<std::string>();

    if (!j.contains("tokens")) {
        throw ValidationError(where + ": missing field 'tokens'");
    }
    r.tokens = string_list(j.at("tokens"), "tokens", where);
    if (r.tokens.empty()) {
        throw ValidationError(where + ": tokens must be non-empty");
    }

    if (j.contains("lemmas") && !j.at("lemmas").is_null()) {
        r.lemmas = string_list(j.at("lemmas"), "lemmas", where);
        if (r.lemmas->size() != r.tokens.size()) {
            throw ValidationError(where + ": lemmas do not align with tokens (" +
                                  std::to_string(r.lemmas->size()) + " vs " +
                                  std::to_string(r.tokens.size()) + ")");
        }
    }
    if (j.contains("concepts") && !j.at("concepts").is_null()) {
        const auto& c = j.at("concepts");
        if (!c.is_array()) {
            throw ValidationError(where + ": concepts must be an array of string arrays");
        }
        std::vector<std::vector<std::string>> concepts;
        concepts.reserve(c.size());
        for (const auto& per_token : c) {
            concepts.push_back(string_list(per_token, "concepts", where));
        }
        if (concepts.size() != r.tokens.size()) {
            throw ValidationError(where + ": concepts do not align with tokens (" +
                                  std::to_string(concepts.size()) + " vs " +
                                  std::to_string(r.tokens.size()) + ")");
        }
        r.concepts = std::move(concepts);
    }
    if (j.contains("label") && !j.at("label").is_null()) {
        if (!j.at("label").is_string()) {
            throw ValidationError(where + ": label must be a string");
        }
        r.label = j.at("label").get<std::string>();
    }
    if (j.contains("visual_feature") && !j.at("visual_feature").is_null()) {
        const auto& f = j.at("visual_feature");
        if (!f.is_array() || f.size() != 512) {
            throw ValidationError(where + ": visual_feature must be an array of 512 numbers");
        }
        std::vector<float> feat;
        feat.reserve(512);
        for (const auto& v : f) {
            if (!v.is_number()) {
                throw ValidationError(where + ": visual_feature must contain only numbers");
            }
            feat.push_back(v.get<float>());
        }
        r.visual_feature = std::move(feat);
    }
    return r;
}

}  // namespace

std::vector<CorpusRecord> load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open manifest: " + path);
    }
    std::vector<CorpusRecord> records;
    std::unordered_set<std::string> seen;
    std::string line;
    std::int64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
        }
        auto r = parse_record(j, line_no);
        if (!seen.insert(r.id).second) {
            throw ValidationError("record '" + r.id + "': duplicate id");
        }
        records.push_back(std::move(r));
    }
    if (records.empty()) {
        std::cerr << "warning: manifest " << path << " contains no records\n";
    }
    return records;
}

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char ch : text) {
        if (std::isalnum(ch)) {
            cur.push_back(static_cast<char>(std::tolower(ch)));
        } else if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) {
        out.push_back(cur);
    }
    return out;
}

const std::string& Vocab::token_at(std::int32_t idx) const {
    if (idx < 2 || idx >= static_cast<std::int32_t>(tokens_.size()) + 2) {
        throw ContractError("vocab index " + std::to_string(idx) + " has no token");
    }
    return tokens_[static_cast<std::size_t>(idx - 2)];
}

Vocab build_vocab(const std::vector<CorpusRecord>& records, std::int64_t max_size,
                  std::int64_t min_count) {
    std::map<std::string, std::int64_t> counts;  // ordered: lexicographic tie-break for free
    for (const auto& r : records) {
        for (const auto& t : r.tokens) {
            ++counts[t];
        }
    }
    std::vector<std::pair<std::string, std::int64_t>> items(counts.begin(), counts.end());
    std::stable_sort(items.begin(), items.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });

    Vocab v;
    std::int32_t next = 2;
    for (const auto& [token, count] : items) {
        if (count < min_count) {
            continue;
        }
        if (max_size > 0 && next >= max_size) {
            break;
        }
        v.index_.emplace(token, next);
        v.tokens_.push_back(token);
        ++next;
    }
    return v;
}

EmbeddingTable EmbeddingTable::load(const std::string& path, Kind kind) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open embedding table: " + path);
    }
    std::string line;
    if (!std::getline(in, line)) {
        throw ParseError(path + ": missing 'count dim' header");
    }
    std::int64_t count = 0, dim = 0;
    {
        std::istringstream hs(line);
        if (!(hs >> count >> dim) || count < 0 || dim <= 0) {
            throw ParseError(path + ": malformed header '" + line + "'");
        }
    }
    EmbeddingTable t;
    t.kind_ = kind;
    t.dim_ = dim;
    t.zero_.assign(static_cast<std::size_t>(dim), 0.0f);
    t.data_.reserve(static_cast<std::size_t>(count * dim));
    std::int64_t row_no = 1;
    while (std::getline(in, line)) {
        ++row_no;
        if (line.empty()) {
            continue;
        }
        const char* p = line.data();
        const char* end = p + line.size();
        const char* key_end = p;
        while (key_end < end && *key_end != ' ') {
            ++key_end;
        }
        std::string key(p, key_end);
        if (key.empty()) {
            throw ParseError(path + ": row " + std::to_string(row_no) + ": empty key");
        }
        std::int64_t got = 0;
        const char* cur = key_end;
        while (cur < end) {
            while (cur < end && *cur == ' ') {
                ++cur;
            }
            if (cur == end) {
                break;
            }
            float value = 0.0f;
            auto [next, ec] = std::from_chars(cur, end, value);
            if (ec != std::errc()) {
                throw ParseError(path + ": row " + std::to_string(row_no) +
                                 ": cannot parse float near '" + std::string(cur, std::min(end, cur + 12)) + "'");
            }
            t.data_.push_back(value);
            ++got;
            cur = next;
        }
        if (got != dim) {
            throw ParseError(path + ": row " + std::to_string(row_no) + ": expected " +
                             std::to_string(dim) + " floats, got " + std::to_string(got));
        }
        if (!t.index_.emplace(key, static_cast<std::int32_t>(t.keys_.size())).second) {
            throw ValidationError(path + ": row " + std::to_string(row_no) + ": duplicate key '" +
                                  key + "'");
        }
        t.keys_.push_back(std::move(key));
    }
    if (static_cast<std::int64_t>(t.keys_.size()) != count) {
        throw ParseError(path + ": header declares " + std::to_string(count) + " rows, file has " +
                         std::to_string(t.keys_.size()));
    }
    return t;
}

EmbeddingTable EmbeddingTable::from_rows(
    Kind kind, std::int64_t dim,
    const std::vector<std::pair<std::string, std::vector<float>>>& rows) {
    EmbeddingTable t;
    t.kind_ = kind;
    t.dim_ = dim;
    t.zero_.assign(static_cast<std::size_t>(dim), 0.0f);
    for (const auto& [key, values] : rows) {
        if (static_cast<std::int64_t>(values.size()) != dim) {
            throw ValidationError("embedding row '" + key + "' has dim " +
                                  std::to_string(values.size()) + ", expected " + std::to_string(dim));
        }
        if (!t.index_.emplace(key, static_cast<std::int32_t>(t.keys_.size())).second) {
            throw ValidationError("duplicate embedding key '" + key + "'");
        }
        t.keys_.push_back(key);
        t.data_.insert(t.data_.end(), values.begin(), values.end());
    }
    return t;
}

EncodedCaption encode_caption(const CorpusRecord& record, const Vocab& vocab,
                              const EmbeddingTable* word_table, const EmbeddingTable* lemma_table,
                              const EmbeddingTable* concept_table, std::int64_t max_len) {
    EncodedCaption e;
    const auto n = static_cast<std::size_t>(max_len);
    e.word_ids.assign(n, Vocab::kPadding);
    e.pretrained_word_rows.assign(n, -1);
    e.lemma_rows.assign(n, -1);
    e.concept_rows.assign(n, -1);
    e.length = std::min<std::int64_t>(max_len, static_cast<std::int64_t>(record.tokens.size()));
    for (std::int64_t i = 0; i < e.length; ++i) {
        const auto idx = static_cast<std::size_t>(i);
        const auto& tok = record.tokens[idx];
        e.word_ids[idx] = vocab.lookup(tok);
        if (word_table != nullptr) {
            e.pretrained_word_rows[idx] = word_table->row_of(tok);
        }
        if (lemma_table != nullptr && record.lemmas.has_value()) {
            e.lemma_rows[idx] = lemma_table->row_of((*record.lemmas)[idx]);
        }
        if (concept_table != nullptr && record.concepts.has_value()) {
            const auto& ids = (*record.concepts)[idx];
            // a token linked to several concepts uses the first listed id
            if (!ids.empty()) {
                e.concept_rows[idx] = concept_table->row_of(ids.front());
            }
        }
    }
    return e;
}

PairSampler::PairSampler(std::int64_t n_records, std::uint64_t seed, std::int64_t batch_size)
    : n_(n_records), seed_(seed), batch_(batch_size) {
    if (n_records < 2) {
        throw SamplingError("pair sampling requires at least 2 records (no negative exists)");
    }
    if (batch_size < 2 || batch_size % 2 != 0) {
        throw ContractError("batch size must be even and >= 2");
    }
}

std::int64_t PairSampler::batches_per_epoch() const {
    const std::int64_t half = batch_ / 2;
    return (n_ + half - 1) / half;
}

std::vector<PairBatch> PairSampler::epoch(std::int64_t epoch_index) const {
    std::seed_seq seq{static_cast<std::uint64_t>(seed_), static_cast<std::uint64_t>(epoch_index),
                      std::uint64_t{0x9e3779b97f4a7c15ULL}};
    std::mt19937_64 rng(seq);

    std::vector<std::int32_t> order(static_cast<std::size_t>(n_));
    for (std::int64_t i = 0; i < n_; ++i) {
        order[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(i);
    }
    std::shuffle(order.begin(), order.end(), rng);

    // one negative per positive: the figure paired with a caption drawn
    // uniformly from the other records
    std::vector<std::int32_t> neg_caption(static_cast<std::size_t>(n_));
    std::uniform_int_distribution<std::int64_t> pick(0, n_ - 2);
    for (std::int64_t i = 0; i < n_; ++i) {
        const auto fig = order[static_cast<std::size_t>(i)];
        std::int64_t j = pick(rng);
        if (j >= fig) {
            ++j;
        }
        neg_caption[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(j);
    }

    const std::int64_t half = batch_ / 2;
    std::vector<PairBatch> batches;
    for (std::int64_t begin = 0; begin < n_; begin += half) {
        const std::int64_t count = std::min(half, n_ - begin);
        PairBatch b;
        b.items.reserve(static_cast<std::size_t>(2 * count));
        for (std::int64_t k = 0; k < count; ++k) {
            const auto fig = order[static_cast<std::size_t>(begin + k)];
            b.items.push_back({fig, fig, true});
            b.items.push_back({fig, neg_caption[static_cast<std::size_t>(begin + k)], false});
        }
        batches.push_back(std::move(b));
    }
    return batches;
}

SplitDescriptor make_kfold_splits(std::int64_t n_records, std::int64_t folds, std::uint64_t seed) {
    if (folds < 2) {
        throw SplitError("fold count must be >= 2");
    }
    if (n_records < folds) {
        throw SplitError("corpus of " + std::to_string(n_records) + " records is smaller than " +
                         std::to_string(folds) + " folds");
    }
    std::mt19937_64 rng(seed);
    std::vector<std::int32_t> order(static_cast<std::size_t>(n_records));
    for (std::int64_t i = 0; i < n_records; ++i) {
        order[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(i);
    }
    std::shuffle(order.begin(), order.end(), rng);

    SplitDescriptor d;
    d.folds.resize(static_cast<std::size_t>(folds));
    for (std::int64_t i = 0; i < n_records; ++i) {
        d.folds[static_cast<std::size_t>(i % folds)].push_back(order[static_cast<std::size_t>(i)]);
    }
    return d;
}

SplitDescriptor make_retrieval_split(std::int64_t n_records, std::uint64_t seed) {
    const std::int64_t test_size = std::min<std::int64_t>(1000, n_records / 5);
    if (test_size < 1) {
        throw SplitError("corpus of " + std::to_string(n_records) +
                         " records is too small for a retrieval split");
    }
    std::mt19937_64 rng(seed);
    std::vector<std::int32_t> order(static_cast<std::size_t>(n_records));
    for (std::int64_t i = 0; i < n_records; ++i) {
        order[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(i);
    }
    std::shuffle(order.begin(), order.end(), rng);

    SplitDescriptor d;
    d.test.assign(order.begin(), order.begin() + test_size);
    d.train.assign(order.begin() + test_size, order.end());
    return d;
}

}  // namespace fcc
