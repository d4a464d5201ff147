#pragma once

#include <string>
#include <vector>

#include "fcc/corpus.hpp"

namespace fcc::testsupport {

// Procedurally generated colored-shape corpus: one figure per record (a single
// filled shape on white), a caption naming the size/color/shape, shape labels,
// and identity lemmas plus shape/color concept ids. Every record's
// (size, color, shape) triple is unique, so any mismatched caption is a true
// negative and the correspondence task is separable by construction.
struct SynthCorpus {
    std::string dir;
    std::string manifest_path;
    std::vector<CorpusRecord> records;
};

struct SynthSpec {
    int n_records = 20;
    std::uint64_t seed = 0;
    int n_shapes = 5;      // <= 5: square, disc, triangle, cross, ring
    int n_colors = 4;      // <= 4: red, green, blue, orange
    bool annotations = true;  // lemmas + concepts
    bool labels = true;       // label = shape name
    bool visual_features = false;  // synthetic 512-D features for bypass runs
};

SynthCorpus make_shapes_corpus(const std::string& dir, const SynthSpec& spec);

// word2vec-text embedding table file; returns its path.
std::string write_embedding_file(const std::string& path,
                                 const std::vector<std::pair<std::string, std::vector<float>>>& rows,
                                 std::int64_t dim);

std::string temp_dir(const std::string& tag);

}  // namespace fcc::testsupport
