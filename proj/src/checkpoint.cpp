#include <bit>
#include <cstring>
#include <fstream>

#include "fcc/model.hpp"

namespace fcc {

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'F', 'C', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kDtypeF32 = 0;

template <class T>
void write_pod(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::ifstream& in, const std::string& path) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
        throw IoError("truncated checkpoint: " + path);
    }
    return v;
}

}  // namespace

void save_checkpoint(FccModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write checkpoint: " + path);
    }
    out.write(kMagic, 4);
    write_pod(out, kVersion);
    const auto& cfg = model.config();
    write_pod(out, static_cast<std::uint8_t>(to_string(cfg.combiner.mode)[0]));
    write_pod(out, static_cast<std::uint8_t>(cfg.combiner.op == CombineOp::concatenate ? 'C' : 'A'));
    write_pod(out, cfg.vocab_size);
    write_pod(out, cfg.max_seq_len);
    write_pod(out, cfg.init_seed);

    auto params = model.params();
    write_pod(out, static_cast<std::uint32_t>(params.size()));
    for (const auto* p : params) {
        write_pod(out, static_cast<std::uint32_t>(p->name.size()));
        out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        write_pod(out, kDtypeF32);
        write_pod(out, static_cast<std::uint32_t>(p->value.rank()));
        for (auto d : p->value.shape()) {
            write_pod(out, d);
        }
        out.write(reinterpret_cast<const char*>(p->value.data().data()),
                  static_cast<std::streamsize>(p->value.numel() * sizeof(float)));
    }
    if (!out) {
        throw IoError("short write while saving checkpoint: " + path);
    }
}

FccModel load_checkpoint(const std::string& path, const EmbeddingTable* word_table,
                         const EmbeddingTable* lemma_table, const EmbeddingTable* concept_table,
                         const CombinerMode* expected_mode) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open checkpoint: " + path);
    }
    char magic[4] = {};
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
        throw FormatError("not an FCCK checkpoint: " + path);
    }
    const auto version = read_pod<std::uint32_t>(in, path);
    if (version != kVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version) + ": " + path);
    }

    FccModelConfig cfg;
    const auto mode_ch = read_pod<std::uint8_t>(in, path);
    const auto op_ch = read_pod<std::uint8_t>(in, path);
    cfg.combiner.mode = parse_combiner_mode(std::string(1, static_cast<char>(mode_ch)));
    cfg.combiner.op = op_ch == 'A' ? CombineOp::add : CombineOp::concatenate;
    cfg.vocab_size = read_pod<std::int64_t>(in, path);
    cfg.max_seq_len = read_pod<std::int64_t>(in, path);
    cfg.init_seed = read_pod<std::uint32_t>(in, path);

    if (expected_mode != nullptr && *expected_mode != cfg.combiner.mode) {
        throw ConfigError("checkpoint was trained under combiner mode " +
                          to_string(cfg.combiner.mode) + ", requested mode " +
                          to_string(*expected_mode));
    }

    FccModel model(cfg, word_table, lemma_table, concept_table);
    auto params = model.params();
    std::unordered_map<std::string, ParamT<float>*> by_name;
    for (auto* p : params) {
        by_name.emplace(p->name, p);
    }

    const auto count = read_pod<std::uint32_t>(in, path);
    if (count != params.size()) {
        throw FormatError("checkpoint stores " + std::to_string(count) + " parameters, model has " +
                          std::to_string(params.size()) + ": " + path);
    }
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = read_pod<std::uint32_t>(in, path);
        std::string name(name_len, '\0');
        if (!in.read(name.data(), name_len)) {
            throw IoError("truncated checkpoint: " + path);
        }
        auto it = by_name.find(name);
        if (it == by_name.end()) {
            throw FormatError("unknown parameter '" + name + "' in checkpoint: " + path);
        }
        const auto dtype = read_pod<std::uint8_t>(in, path);
        if (dtype != kDtypeF32) {
            throw FormatError("unsupported dtype tag for '" + name + "' in " + path);
        }
        const auto rank = read_pod<std::uint32_t>(in, path);
        Shape shape(rank);
        for (auto& d : shape) {
            d = read_pod<std::int64_t>(in, path);
        }
        auto* p = it->second;
        if (shape != p->value.shape()) {
            throw FormatError("parameter '" + name + "' has shape " + shape_str(shape) +
                              " in checkpoint, expected " + shape_str(p->value.shape()));
        }
        if (!in.read(reinterpret_cast<char*>(p->value.data().data()),
                     static_cast<std::streamsize>(p->value.numel() * sizeof(float)))) {
            throw IoError("truncated checkpoint: " + path);
        }
        by_name.erase(it);
    }
    if (!by_name.empty()) {
        throw FormatError("checkpoint is missing parameter '" + by_name.begin()->first + "': " + path);
    }
    return model;
}

}  // namespace fcc
