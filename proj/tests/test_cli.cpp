#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "fcc/cli.hpp"
#include "fcc/errors.hpp"
#include "support/synthetic.hpp"

using namespace fcc;
namespace ts = fcc::testsupport;
namespace fs = std::filesystem;

namespace {

std::string write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    out << content;
    return path;
}

std::string file_contents(const std::string& path) {
    std::ifstream in(path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("load_config parses flat key=value files") {
    auto dir = ts::temp_dir("cli");
    auto path = write_file(dir + "/ok.cfg", "lr = 0.001\nepochs = 5  # comment\n\nmode = c\n");
    auto kv = cli::load_config(path);
    CHECK(kv.at("lr") == "0.001");
    CHECK(kv.at("epochs") == "5");
    CHECK(kv.at("mode") == "c");
}

TEST_CASE("load_config rejects duplicate keys") {
    auto dir = ts::temp_dir("cli");
    auto path = write_file(dir + "/dup.cfg", "lr = 0.001\nlr = 0.01\n");
    CHECK_THROWS_AS(cli::load_config(path), ValidationError);
}

TEST_CASE("unknown config keys are validation errors (exit 1)") {
    auto dir = ts::temp_dir("cli");
    auto cfg = write_file(dir + "/bad.cfg", "does-not-exist = 1\n");
    CHECK(cli::dispatch({"gradcheck", "--seed", "1", "--seeds", "1", "--config", cfg}) == 1);
}

TEST_CASE("unknown flags exit 1 with usage") {
    CHECK(cli::dispatch({"train", "--no-such-flag", "3"}) == 1);
    CHECK(cli::dispatch({"no-such-command"}) == 1);
}

TEST_CASE("mode c without concept embeddings fails before any compute") {
    auto dir = ts::temp_dir("cli");
    // deliberately no manifest on disk: table validation must come first
    const int rc = cli::dispatch({"train", "--manifest", dir + "/none.jsonl", "--mode", "c",
                                  "--seed", "3", "--out", dir + "/run"});
    CHECK(rc == 1);
}

TEST_CASE("eval-fcc with a missing checkpoint exits 1") {
    auto dir = ts::temp_dir("cli");
    auto corpus_files = ts::make_shapes_corpus(dir + "/shapes_cli", {4, 3, 2});
    const int rc = cli::dispatch({"eval-fcc", "--manifest", corpus_files.manifest_path,
                                  "--checkpoint", dir + "/missing.fcck", "--seed", "1"});
    CHECK(rc == 1);
}

TEST_CASE("seed is mandatory") {
    auto dir = ts::temp_dir("cli");
    auto corpus_files = ts::make_shapes_corpus(dir + "/shapes_seed", {4, 5, 2});
    CHECK(cli::dispatch({"train", "--manifest", corpus_files.manifest_path, "--out",
                         dir + "/run"}) == 1);
}

TEST_CASE("gradcheck subcommand reports a pass and exits 0") {
    CHECK(cli::dispatch({"gradcheck", "--seed", "7", "--seeds", "1"}) == 0);
}

TEST_CASE("flags override config, and the resolved config is echoed") {
    auto dir = ts::temp_dir("cli_run");
    ts::SynthSpec spec{6, 11, 3};
    spec.visual_features = true;
    auto corpus_files = ts::make_shapes_corpus(dir + "/shapes", spec);
    auto cfg = write_file(dir + "/run.cfg",
                          "lr = 0.0001\nepochs = 1\nfolds = 2\nbatch = 4\npatience = 0\n"
                          "bypass = true\n");
    const std::string out = dir + "/run";
    const int rc = cli::dispatch({"train", "--manifest", corpus_files.manifest_path, "--config",
                                  cfg, "--lr", "0.001", "--seed", "9", "--out", out});
    REQUIRE(rc == 0);

    const auto resolved = file_contents(out + "/config.resolved.txt");
    CHECK(resolved.find("lr = 0.001") != std::string::npos);   // flag wins
    CHECK(resolved.find("epochs = 1") != std::string::npos);   // file value
    CHECK(resolved.find("seed = 9") != std::string::npos);

    // run directory carries the run log and the best checkpoint
    CHECK(fs::exists(out + "/runlog.jsonl"));
    CHECK(fs::exists(out + "/best.fcck"));
    CHECK(fs::exists(out + "/fold0.fcck"));
    CHECK(fs::exists(out + "/fold1.fcck"));

    // the checkpoint round-trips through eval-fcc
    const int rc2 = cli::dispatch({"eval-fcc", "--manifest", corpus_files.manifest_path,
                                   "--checkpoint", out + "/best.fcck", "--seed", "2", "--bypass",
                                   "--out", out});
    CHECK(rc2 == 0);
    CHECK(fs::exists(out + "/eval_fcc.json"));
}

TEST_CASE("empty config file plus full flags is valid") {
    auto dir = ts::temp_dir("cli_empty");
    auto cfg = write_file(dir + "/empty.cfg", "");
    CHECK(cli::dispatch({"gradcheck", "--seed", "5", "--seeds", "1", "--config", cfg}) == 0);
}
