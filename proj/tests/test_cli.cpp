// End-to-end checks of the command-line binary: every subcommand is driven
// as a child process and judged on exit code and exact output lines.

#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "omni/forge.hpp"
#include "omni/image.hpp"
#include "omni/tensor.hpp"
#include "omni/wav.hpp"

namespace {

struct CliResult {
    int code = -1;
    std::string output;  // stdout and stderr interleaved
};

CliResult run_cli(const std::string& args) {
    const std::string cmd = std::string(OMNI_CLI_PATH) + " " + args + " 2>&1";
    CliResult r;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    char buf[4096];
    std::size_t n;
    while ((n = fread(buf, 1, sizeof(buf), pipe)) > 0) r.output.append(buf, n);
    const int status = pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string work_dir() {
    static const std::string dir = [] {
        const std::string d = "/tmp/omni_cli_fixtures";
        std::filesystem::remove_all(d);
        std::filesystem::create_directories(d);
        return d;
    }();
    return dir;
}

std::string small_image() {
    const std::string path = work_dir() + "/img32.ppm";
    if (!std::filesystem::exists(path)) {
        omni::Tensor px({32, 32, 3});
        for (int i = 0; i < 32; ++i) {
            for (int j = 0; j < 32; ++j) {
                px.at(i, j, 0) = 0.9f;
                px.at(i, j, 1) = 0.1f;
                px.at(i, j, 2) = static_cast<float>(j) / 32.0f;
            }
        }
        omni::write_ppm(path, omni::ImageInput::from_pixels(px));
    }
    return path;
}

std::string minute_wav() {
    const std::string path = work_dir() + "/a60.wav";
    if (!std::filesystem::exists(path)) {
        const double pi = std::acos(-1.0);
        omni::Waveform w;
        w.samples.resize(60 * omni::kSampleRate);
        for (std::size_t i = 0; i < w.samples.size(); ++i) {
            w.samples[i] = 0.5f * static_cast<float>(std::sin(2.0 * pi * 440.0 * i / 16000.0));
        }
        omni::write_wav(path, w);
    }
    return path;
}

std::string records_file() {
    const std::string path = work_dir() + "/records.jsonl";
    if (!std::filesystem::exists(path)) {
        std::ofstream out(path);
        out << R"({"id":"v1","source":"open-ended","subtitle":"the quick brown fox jumps over the lazy dog while the cat watches","duration":30,"media_path":"v1.mp4"})"
            << "\n";
        out << R"({"id":"v2","source":"open-ended","subtitle":"too short","duration":30,"media_path":"v2.mp4"})"
            << "\n";
    }
    return path;
}

}  // namespace

TEST_CASE("pool reports grid and item counts for a small image") {
    const CliResult r = run_cli("pool " + small_image());
    CHECK(r.code == 0);
    CHECK(r.output.find("tokens: 1 (pooled 2x2 -> 1x1)\n") != std::string::npos);
    CHECK(r.output.find("visual items: 4\n") != std::string::npos);
}

TEST_CASE("pool writes the pooled tensor when asked") {
    const std::string out = work_dir() + "/pooled.tnsr";
    const CliResult r = run_cli("pool " + small_image() + " --out " + out);
    CHECK(r.code == 0);
    CHECK(r.output.find("wrote " + out) != std::string::npos);
    const omni::Tensor t = omni::read_tensor_file(out);
    CHECK(t.shape == std::vector<int>{1, 1, 16});
}

TEST_CASE("pool fails cleanly on a missing file") {
    const CliResult r = run_cli("pool /tmp/omni_cli_missing.ppm");
    CHECK(r.code == 1);
    CHECK(r.output.rfind("error: ", 0) == 0);
}

TEST_CASE("audio reports the 300-token minute") {
    const CliResult r = run_cli("audio " + minute_wav());
    CHECK(r.code == 0);
    CHECK(r.output.find("300 audio tokens, 2 chunks\n") != std::string::npos);
    CHECK(r.output.find("checksum: ") != std::string::npos);

    // Determinism: the checksum line repeats bit-for-bit.
    const CliResult again = run_cli("audio " + minute_wav());
    CHECK(again.output == r.output);
}

TEST_CASE("train --plan-only prints the stage constants") {
    const CliResult r = run_cli("train --stage S1-align --plan-only");
    CHECK(r.code == 0);
    CHECK(r.output.find("stage = S1-align\n") != std::string::npos);
    CHECK(r.output.find("learning-rate = 0.001\n") != std::string::npos);
    CHECK(r.output.find("trainable = visual-connector\n") != std::string::npos);
    CHECK(r.output.find("mix = image-caption:808000:81:image\n") != std::string::npos);
}

TEST_CASE("train runs are deterministic and traced as csv") {
    const std::string args = "train --stage S1-align --steps 3 --batch 2 --seed 5";
    const CliResult a = run_cli(args);
    const CliResult b = run_cli(args);
    CHECK(a.code == 0);
    CHECK(a.output == b.output);
    CHECK(a.output.find("stage,step,task,loss\n") != std::string::npos);
    CHECK(a.output.find("S1-align,0,image-caption,") != std::string::npos);
    CHECK(a.output.find("stage S1-align: 3 steps, batch 2, trainable visual-connector") !=
          std::string::npos);
}

TEST_CASE("train rejects unknown stages") {
    const CliResult r = run_cli("train --stage S9 --plan-only");
    CHECK(r.code == 1);
    CHECK(r.output.find("error: unknown stage id: S9") != std::string::npos);
}

TEST_CASE("gradcheck passes and reports a table") {
    const CliResult r = run_cli("gradcheck matmul --seeds 2");
    CHECK(r.code == 0);
    CHECK(r.output.find("op") != std::string::npos);
    CHECK(r.output.find("max-rel-err") != std::string::npos);
    CHECK(r.output.find("matmul") != std::string::npos);
    CHECK(r.output.find("pass") != std::string::npos);

    const CliResult bad = run_cli("gradcheck warp --seeds 1");
    CHECK(bad.code == 1);
    CHECK(bad.output.rfind("error: ", 0) == 0);
}

TEST_CASE("compare emits a json report") {
    const CliResult r = run_cli(
        "--set compare.steps=20 --set compare.eval_samples=32 "
        "compare --recipes progressive,direct-mix --seeds 1");
    CHECK(r.code == 0);
    CHECK(r.output.find("\"runs\"") != std::string::npos);
    CHECK(r.output.find("\"progressive\"") != std::string::npos);
    CHECK(r.output.find("\"final_loss\"") != std::string::npos);
}

TEST_CASE("config show lists keys with defaults") {
    const CliResult r = run_cli("config show");
    CHECK(r.code == 0);
    CHECK(r.output.find("seed = 1") != std::string::npos);
    CHECK(r.output.find("pool.scalar_pi = false") != std::string::npos);
    CHECK(r.output.find("audio.chunk_cap = 25") != std::string::npos);
}

TEST_CASE("the unimplemented scalar-pi flag is refused at startup") {
    const CliResult r = run_cli("--set pool.scalar_pi=true config show");
    CHECK(r.code == 1);
    CHECK(r.output.rfind("error: ", 0) == 0);
    CHECK(r.output.find("unimplemented") != std::string::npos);
}

TEST_CASE("forge filter runs the string stages without fixtures") {
    const CliResult r = run_cli("forge filter --in " + records_file());
    CHECK(r.code == 0);
    CHECK(r.output.find("\"recipe\":\"filter\"") != std::string::npos);
    CHECK(r.output.find("\"v1\"") != std::string::npos);
    CHECK(r.output.find("\"rejected\"") != std::string::npos);

    const CliResult again = run_cli("forge filter --in " + records_file());
    CHECK(again.output == r.output);  // byte-identical reruns
}

TEST_CASE("forge mix samples per the recipe file") {
    // Build a 4-entry manifest and a recipe taking half of it.
    omni::Manifest m;
    m.recipe = "curate";
    m.seed = 1;
    for (int i = 0; i < 4; ++i) {
        omni::ManifestEntry e;
        e.id = "m" + std::to_string(i);
        e.source = "open-ended";
        e.task = "video-audio-qa";
        m.entries.push_back(e);
    }
    const std::string manifest_path = work_dir() + "/mixsrc.jsonl";
    omni::write_manifest_file(m, manifest_path);

    const std::string recipe_path = work_dir() + "/recipe.json";
    {
        std::ofstream out(recipe_path);
        out << R"({"seed": 2, "entries": [{"source": "half", "path": ")" << manifest_path
            << R"(", "fraction": 0.5}]})";
    }
    const std::string out_path = work_dir() + "/mixed.jsonl";
    const CliResult r = run_cli("forge mix --recipe " + recipe_path + " --out " + out_path);
    CHECK(r.code == 0);
    CHECK(r.output.find("wrote " + out_path) != std::string::npos);
    const omni::Manifest mixed = omni::read_manifest_file(out_path);
    CHECK(mixed.entries.size() == 2);
    CHECK(mixed.counts.at("half") == 2);
    CHECK(mixed.seed == 2);
}

TEST_CASE("a bare invocation fails with usage guidance") {
    const CliResult r = run_cli("");
    CHECK(r.code != 0);
}
