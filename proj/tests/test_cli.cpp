#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "deidvc/dsp.hpp"
#include "deidvc/eval.hpp"
#include "deidvc/psg.hpp"
#include "deidvc/spkemb.hpp"

using namespace deidvc;
namespace fs = std::filesystem;

namespace {

struct RunResult {
    int exit_code = -1;
    std::string output;  // stdout + stderr interleaved
};

RunResult run_cli(const std::string& args) {
    const std::string cmd = std::string(DEIDVC_CLI_PATH) + " " + args + " 2>&1";
    RunResult r;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    char buf[512];
    while (fgets(buf, sizeof(buf), pipe)) r.output += buf;
    const int status = pclose(pipe);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

fs::path temp_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("deidvc_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::vector<char> read_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("--help exits 0 and touches nothing") {
    const fs::path dir = temp_dir("help");
    RunResult top = run_cli("--help --out-dir " + dir.string());
    CHECK(top.exit_code == 0);
    CHECK(top.output.find("synth-corpus") != std::string::npos);
    for (const char* sub : {"synth-corpus", "train-vc", "convert", "grad-check"}) {
        RunResult r = run_cli(std::string(sub) + " --help");
        CHECK(r.exit_code == 0);
    }
    CHECK(fs::is_empty(dir));  // help must not create artifacts
}

TEST_CASE("missing subcommand or unknown flags exit 1") {
    CHECK(run_cli("").exit_code == 1);
    CHECK(run_cli("no-such-command").exit_code == 1);
    CHECK(run_cli("gen-speakers --bogus 3").exit_code == 1);
}

TEST_CASE("train-vc stage 2 without a stage-1 checkpoint names the artifact") {
    const fs::path dir = temp_dir("stage2");
    dsp::Corpus corpus = dsp::synth_corpus(2, 2, 2.5, 61, dir / "corpus");
    spkemb::save_speaker_encoder(dir / "es.ckpt",
                                 spkemb::make_speaker_encoder(62));
    RunResult r = run_cli("train-vc --stage 2 --corpus " + (dir / "corpus").string() +
                          " --spk-encoder " + (dir / "es.ckpt").string() + " --out-dir " +
                          (dir / "out").string());
    CHECK(r.exit_code == 1);
    CHECK(r.output.find("stage-1 checkpoint") != std::string::npos);
    CHECK(!fs::exists(dir / "out" / "vc_stage2.ckpt"));
}

TEST_CASE("gen-speakers is byte-identical across runs of the same seed") {
    const fs::path dir = temp_dir("gen");
    psg::save_psg_model(dir / "psg.ckpt", psg::make_psg_model(9));
    const std::string common = "gen-speakers --model " + (dir / "psg.ckpt").string() +
                               " --n 3 --seed 1 --out-dir ";
    RunResult a = run_cli(common + (dir / "a").string());
    RunResult b = run_cli(common + (dir / "b").string());
    REQUIRE(a.exit_code == 0);
    REQUIRE(b.exit_code == 0);
    CHECK(read_bytes(dir / "a" / "pseudo_speakers.csv") ==
          read_bytes(dir / "b" / "pseudo_speakers.csv"));

    std::vector<psg::PseudoSpeaker> ps = psg::read_pseudo_csv(dir / "a" / "pseudo_speakers.csv");
    CHECK(ps.size() == 3);
}

TEST_CASE("convert --target pseudo requires a PSG checkpoint") {
    const fs::path dir = temp_dir("convert");
    // validation fires before models are loaded, so placeholder files suffice
    std::ofstream(dir / "vc.ckpt") << "x";
    std::ofstream(dir / "in.wav") << "x";
    RunResult r = run_cli("convert --model " + (dir / "vc.ckpt").string() + " --input " +
                          (dir / "in.wav").string() + " --target pseudo --out-dir " +
                          (dir / "out").string());
    CHECK(r.exit_code == 1);
    CHECK(r.output.find("--psg") != std::string::npos);
}

TEST_CASE("eval-eer reports the computed rate and writes eer.csv") {
    const fs::path dir = temp_dir("eer");
    eval::ScoreSet s;
    s.trials = {{"g0", eval::Label::genuine, 0.9},
                {"g1", eval::Label::genuine, 0.8},
                {"i0", eval::Label::impostor, 0.1},
                {"i1", eval::Label::impostor, 0.2}};
    eval::write_scores_csv(dir / "scores.csv", s);
    RunResult r = run_cli("eval-eer --scores " + (dir / "scores.csv").string() + " --out-dir " +
                          (dir / "out").string());
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("eer 0.0000") != std::string::npos);
    CHECK(fs::exists(dir / "out" / "eer.csv"));
    CHECK(fs::exists(dir / "out" / "artifacts.csv"));
}

TEST_CASE("grad-check prints one PASS/FAIL line per loss") {
    RunResult r = run_cli("grad-check --seed 7 --seeds 1");
    CHECK(r.exit_code == 0);
    for (const char* loss : {"stage1", "stage2", "psg"}) {
        const std::size_t pos = r.output.find(loss);
        REQUIRE(pos != std::string::npos);
        const std::size_t eol = r.output.find('\n', pos);
        CHECK(r.output.substr(pos, eol - pos).find("PASS") != std::string::npos);
    }
}
