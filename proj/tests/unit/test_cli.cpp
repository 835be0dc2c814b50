#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

struct CliResult {
    int code = -1;
    std::string out;
};

CliResult run(const std::string& args) {
    const fs::path log = fs::temp_directory_path() / "satdet_cli_out.txt";
    const std::string cmd = std::string(SATDET_CLI) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path workspace(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("satdet_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

} // namespace

TEST(Cli, UsageErrorsExitOne) {
    EXPECT_EQ(run("").code, 1);
    EXPECT_EQ(run("generate").code, 1);
    EXPECT_EQ(run("frobnicate").code, 1);
    EXPECT_EQ(run("--help").code, 0);
}

TEST(Cli, GenerateSingleEmptyFrameAndIsDeterministic) {
    const fs::path ws = workspace("gen");
    const CliResult r = run("generate -n 1 -k 1 --rso-count 0 --out " + (ws / "a").string());
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("1 frames, 0 boxes"), std::string::npos) << r.out;
    ASSERT_EQ(run("generate -n 1 -k 1 --rso-count 0 --out " + (ws / "b").string()).code, 0);
    EXPECT_EQ(slurp(ws / "a" / "manifest.json"), slurp(ws / "b" / "manifest.json"));
    EXPECT_EQ(slurp(ws / "a" / "images" / "frame_00000.png"), slurp(ws / "b" / "images" / "frame_00000.png"));
}

TEST(Cli, InvalidConfigExitsTwoWithCause) {
    const fs::path ws = workspace("badcfg");
    std::ofstream(ws / "scene.json") << R"({"psf_sigma_px": -1})";
    const CliResult r = run("generate --config " + (ws / "scene.json").string() + " --out " + (ws / "o").string());
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.out.find("psf_sigma_px"), std::string::npos) << r.out;
}

TEST(Cli, InferWithoutModelNamesCheckpoint) {
    const fs::path ws = workspace("nomodel");
    ASSERT_EQ(run("generate -n 1 --out " + (ws / "d").string()).code, 0);
    const CliResult r = run("infer --model " + (ws / "missing.satdet").string() + " --image " +
                      (ws / "d" / "images" / "frame_00000.png").string() + " --out " + (ws / "o").string());
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.out.find("missing.satdet"), std::string::npos) << r.out;
}

TEST(Cli, FullRecipeEndToEnd) {
    const fs::path ws = workspace("recipe");
    const std::string w = ws.string();
    ASSERT_EQ(run("generate -n 3 -k 1 --rso-min 1 --rso-max 2 --seed 5 --out " + w + "/raw").code, 0);
    CliResult r = run("split --manifest " + w + "/raw/manifest.json --train-fraction 0.67 --seed 1 --out " + w + "/split");
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("2 train, 1 val"), std::string::npos) << r.out;
    ASSERT_EQ(run("augment --manifest " + w + "/split/train.json --out " + w + "/train").code, 0);
    ASSERT_EQ(run("augment --manifest " + w + "/split/val.json --out " + w + "/val").code, 0);
    r = run("train --train " + w + "/train/manifest.json --val " + w + "/val/manifest.json --epochs 1 --out " + w +
            "/model");
    ASSERT_EQ(r.code, 0) << r.out;
    ASSERT_TRUE(fs::exists(ws / "model" / "model.satdet"));
    ASSERT_TRUE(fs::exists(ws / "model" / "model.satdet.json"));
    const auto log = nlohmann::json::parse(slurp(ws / "model" / "train_log.json"));
    EXPECT_EQ(log["epochs"].size(), 1u);

    r = run("quantize --model " + w + "/model/model.satdet --calib " + w + "/train/manifest.json --out " + w +
            "/model/q.satdet --report " + w + "/model/q.json");
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_LT(fs::file_size(ws / "model" / "q.satdet"), fs::file_size(ws / "model" / "model.satdet"));

    r = run("eval --model " + w + "/model/model.satdet --model " + w + "/model/q.satdet --baseline --manifest " + w +
            "/val/manifest.json --out " + w + "/eval.json");
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("float-small"), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("quantized-small"), std::string::npos) << r.out;
    EXPECT_EQ(nlohmann::json::parse(slurp(ws / "eval.json"))["reports"].size(), 3u);

    r = run("infer --model " + w + "/model/q.satdet --image " + w + "/raw/images/frame_00000.png --threshold 0.01 --out " +
            w + "/infer");
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_TRUE(fs::exists(ws / "infer" / "frame_00000_detections.json"));
    EXPECT_TRUE(fs::exists(ws / "infer" / "frame_00000_annotated.png"));

    r = run("bench --model " + w + "/model/q.satdet --manifest " + w + "/val/manifest.json --frames 3 --warmup 1");
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("quantized-small"), std::string::npos) << r.out;

    // Inputs are untouched and reruns give identical outputs.
    const std::string before = slurp(ws / "raw" / "manifest.json");
    ASSERT_EQ(run("generate -n 3 -k 1 --rso-min 1 --rso-max 2 --seed 5 --out " + w + "/raw2").code, 0);
    EXPECT_EQ(slurp(ws / "raw2" / "manifest.json"), before);
}
