#include "support/synthetic.hpp"

#include <filesystem>
#include <fstream>
#include <random>

#include <json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "fcc/errors.hpp"

namespace fcc::testsupport {

namespace {

namespace fs = std::filesystem;

const char* kShapes[5] = {"square", "disc", "triangle", "cross", "ring"};
const char* kColors[4] = {"red", "green", "blue", "orange"};
const cv::Scalar kBgr[4] = {{30, 30, 220}, {60, 180, 30}, {220, 60, 40}, {20, 150, 240}};
const char* kSizes[4] = {"large", "small", "huge", "tiny"};
const int kSizePx[4] = {110, 64, 150, 44};

void draw_shape(cv::Mat& img, int shape, const cv::Scalar& color, int cx, int cy, int size) {
    switch (shape) {
        case 0:
            cv::rectangle(img, {cx - size / 2, cy - size / 2}, {cx + size / 2, cy + size / 2},
                          color, cv::FILLED);
            break;
        case 1:
            cv::circle(img, {cx, cy}, size / 2, color, cv::FILLED);
            break;
        case 2: {
            std::vector<cv::Point> pts = {{cx, cy - size / 2},
                                          {cx - size / 2, cy + size / 2},
                                          {cx + size / 2, cy + size / 2}};
            cv::fillConvexPoly(img, pts, color);
            break;
        }
        case 3: {
            const int arm = size / 6;
            cv::rectangle(img, {cx - size / 2, cy - arm}, {cx + size / 2, cy + arm}, color,
                          cv::FILLED);
            cv::rectangle(img, {cx - arm, cy - size / 2}, {cx + arm, cy + size / 2}, color,
                          cv::FILLED);
            break;
        }
        default:
            cv::circle(img, {cx, cy}, size / 2, color, size / 6);
            break;
    }
}

std::string caption_text(int variant, const std::string& size, const std::string& color,
                         const std::string& shape, int k) {
    switch (variant % 3) {
        case 0:
            return "the figure shows a " + size + " " + color + " " + shape +
                   " on a white background";
        case 1:
            return "a " + size + " " + color + " " + shape + " rendered in panel " +
                   std::to_string(k);
        default:
            return "plot " + std::to_string(k) + " contains one " + size + " " + color + " " +
                   shape;
    }
}

}  // namespace

SynthCorpus make_shapes_corpus(const std::string& dir, const SynthSpec& spec) {
    if (spec.n_shapes < 2 || spec.n_shapes > 5 || spec.n_colors < 1 || spec.n_colors > 4) {
        throw ContractError("shapes corpus supports 2..5 shapes and 1..4 colors");
    }
    const int combos = spec.n_shapes * spec.n_colors * 4;
    if (spec.n_records > combos) {
        throw ContractError("cannot generate " + std::to_string(spec.n_records) +
                            " unique records from " + std::to_string(combos) + " combinations");
    }
    fs::create_directories(dir + "/images");
    std::mt19937 rng(static_cast<std::uint32_t>(spec.seed * 2654435761ULL + 17));

    SynthCorpus corpus;
    corpus.dir = dir;
    corpus.manifest_path = dir + "/manifest.jsonl";
    std::ofstream manifest(corpus.manifest_path);

    std::uniform_int_distribution<int> jitter(-18, 18);
    for (int k = 0; k < spec.n_records; ++k) {
        const int shape = k % spec.n_shapes;
        const int color = (k / spec.n_shapes) % spec.n_colors;
        const int size = (k / (spec.n_shapes * spec.n_colors)) % 4;

        cv::Mat img(224, 224, CV_8UC3, cv::Scalar(255, 255, 255));
        const int cx = 112 + jitter(rng);
        const int cy = 112 + jitter(rng);
        draw_shape(img, shape, kBgr[color], cx, cy, kSizePx[size]);
        const std::string image_path = dir + "/images/rec" + std::to_string(k) + ".png";
        cv::imwrite(image_path, img);

        CorpusRecord r;
        r.id = "rec" + std::string(k < 10 ? "0" : "") + std::to_string(k);
        r.image_path = image_path;
        r.tokens = tokenize(caption_text(k, kSizes[size], kColors[color], kShapes[shape], k));
        if (spec.annotations) {
            std::vector<std::string> lemmas = r.tokens;  // identity lemmatizer
            std::vector<std::vector<std::string>> concepts(r.tokens.size());
            for (std::size_t i = 0; i < r.tokens.size(); ++i) {
                if (r.tokens[i] == kShapes[shape]) {
                    concepts[i].push_back("C_" + r.tokens[i]);
                } else if (r.tokens[i] == kColors[color]) {
                    concepts[i].push_back("C_" + r.tokens[i]);
                }
            }
            r.lemmas = std::move(lemmas);
            r.concepts = std::move(concepts);
        }
        if (spec.labels) {
            r.label = kShapes[shape];
        }
        if (spec.visual_features) {
            // block-coded feature: shape block + color block + seeded noise
            std::vector<float> f(512, 0.0f);
            std::normal_distribution<float> noise(0.0f, 0.05f);
            for (auto& v : f) {
                v = noise(rng);
            }
            for (int j = 0; j < 32; ++j) {
                f[static_cast<std::size_t>(shape * 32 + j)] += 1.0f;
                f[static_cast<std::size_t>(256 + color * 32 + j)] += 1.0f;
            }
            r.visual_feature = std::move(f);
        }

        nlohmann::json j;
        j["id"] = r.id;
        j["image_path"] = r.image_path;
        j["tokens"] = r.tokens;
        if (r.lemmas) {
            j["lemmas"] = *r.lemmas;
        }
        if (r.concepts) {
            j["concepts"] = *r.concepts;
        }
        if (r.label) {
            j["label"] = *r.label;
        }
        if (r.visual_feature) {
            j["visual_feature"] = *r.visual_feature;
        }
        manifest << j.dump() << "\n";
        corpus.records.push_back(std::move(r));
    }
    return corpus;
}

std::string write_embedding_file(const std::string& path,
                                 const std::vector<std::pair<std::string, std::vector<float>>>& rows,
                                 std::int64_t dim) {
    std::ofstream out(path);
    out << rows.size() << " " << dim << "\n";
    for (const auto& [key, values] : rows) {
        out << key;
        for (float v : values) {
            out << ' ' << v;
        }
        out << '\n';
    }
    return path;
}

std::string temp_dir(const std::string& tag) {
    auto dir = fs::temp_directory_path() / ("fcc_test_" + tag);
    fs::create_directories(dir);
    return dir.string();
}

}  // namespace fcc::testsupport
