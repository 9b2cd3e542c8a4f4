#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "drscreen/cli.hpp"
#include "drscreen/model/checkpoint.hpp"
#include "fixtures.hpp"

using namespace drscreen;
namespace fx = drscreen::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "drscreen");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void put(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

void write_png(const fs::path& p, int side, Grade g, std::uint64_t seed) {
  const auto b = encode_png(fx::synthetic_fundus(side, side, g, seed));
  std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

const fs::path kFixtures = DRSCREEN_FIXTURE_DIR;

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  auto r = run({"frobnicate"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("unknown subcommand 'frobnicate'"), std::string::npos);
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"infer", "--image", "x.png"}).code, 2);
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST(Cli, EvaluateSeededPredictionsPrintsTheTable) {
  fx::TempDir dir;
  const auto hospital = kFixtures / "hospital";
  const auto r = run({"evaluate", "--manifest", (hospital / "validation.csv").string(), "--predictions",
                      (hospital / "predictions.csv").string(), "--out-dir", (dir / "out").string(), "--name",
                      "hospital", "--note", "seeded fixture"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("93.02"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("100.00"), std::string::npos);
  const auto report = nlohmann::json::parse(slurp(dir / "out" / "report.txt"));
  EXPECT_EQ(report["dataset"].get<std::string>(), "hospital");
  EXPECT_EQ(report["report"]["n_images"].get<int>(), 43);
  EXPECT_EQ(report["report"]["n_patients"].get<int>(), 23);
  bool noted = false;
  for (const auto& n : report["report"]["notes"]) noted |= n.get<std::string>() == "seeded fixture";
  EXPECT_TRUE(noted);
  EXPECT_TRUE(fs::exists(dir / "out" / "report-data" / "roc.csv"));
  EXPECT_TRUE(fs::exists(dir / "out" / "report-data" / "classwise.csv"));
  EXPECT_TRUE(fs::exists(dir / "out" / "effective-config.json"));

  const auto again = run({"report", "--report", (dir / "out" / "report.txt").string()});
  ASSERT_EQ(again.code, 0) << again.err;
  EXPECT_NE(again.out.find("93.02"), std::string::npos);
}

TEST(Cli, EvaluateFailuresNameTheStage) {
  fx::TempDir dir;
  put(dir / "validation.csv", "image_id,patient_code,grade,confidence\na,P,9,3\n");
  put(dir / "predictions.csv", "image_id,predicted_grade,dr_score\na,1,0.5\n");
  const auto r = run({"evaluate", "--manifest", (dir / "validation.csv").string(), "--predictions",
                      (dir / "predictions.csv").string(), "--out-dir", (dir / "out").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("load-data"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("row 1"), std::string::npos) << r.err;
}

TEST(Cli, InferIsDeterministic) {
  fx::TempDir dir;
  model::save_checkpoint(dir / "m.ckpt", fx::tiny_checkpoint(3));
  write_png(dir / "eye.png", 64, Grade(2), 5);
  const std::vector<std::string> args = {"infer", "--checkpoint", (dir / "m.ckpt").string(), "--image",
                                         (dir / "eye.png").string(), "--json"};
  const auto a = run(args), b = run(args);
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  const auto j = nlohmann::json::parse(a.out);
  EXPECT_EQ(j["probabilities"].size(), 5u);
  EXPECT_EQ(j["model_version"].get<std::string>().rfind("sha256:", 0), 0u);
  const auto cropped = run({"infer", "--checkpoint", (dir / "m.ckpt").string(), "--image",
                            (dir / "eye.png").string(), "--crop", "50,50,40"});
  EXPECT_EQ(cropped.code, 1);
  EXPECT_EQ(run({"infer", "--checkpoint", (dir / "m.ckpt").string(), "--image", (dir / "eye.png").string(),
                 "--crop", "1,2"})
                .code,
            1);
}

TEST(Cli, VerifyDataReportsIssues) {
  fx::TempDir dir;
  fs::create_directories(dir / "imgs");
  write_png(dir / "imgs" / "a.png", 230, Grade(0), 1);
  put(dir / "imgs" / "b.png", "broken");
  put(dir / "train.csv", "id_code,diagnosis\na,0\nb,2\n");
  const std::vector<std::string> base = {"verify-data", "--manifest", (dir / "train.csv").string(), "--images",
                                         (dir / "imgs").string(), "--out-dir", (dir / "v").string()};
  const auto lenient = run(base);
  EXPECT_EQ(lenient.code, 0) << lenient.err;
  EXPECT_NE(lenient.out.find("b"), std::string::npos);
  auto strict = base;
  strict.push_back("--strict");
  EXPECT_EQ(run(strict).code, 1);
  const auto j = nlohmann::json::parse(slurp(dir / "v" / "verification.json"));
  EXPECT_EQ(j["issues"].size(), 1u);
}

TEST(Cli, TrainTinyWritesCheckpointsAndLog) {
  fx::TempDir dir;
  fs::create_directories(dir / "imgs");
  std::string csv = "id_code,diagnosis\n";
  for (int i = 0; i < 10; ++i) {
    const auto id = "t" + std::to_string(i);
    write_png(dir / "imgs" / (id + ".png"), 40, Grade(i % 5), 70 + i);
    csv += id + "," + std::to_string(i % 5) + "\n";
  }
  put(dir / "train.csv", csv);
  const auto out = dir / "run";
  const auto r = run({"train", "--model", "tiny", "--train-manifest", (dir / "train.csv").string(),
                      "--train-images", (dir / "imgs").string(), "--epochs", "1", "--runs", "2",
                      "--batch-size", "4", "--seed", "3", "--out-dir", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(out / "checkpoints" / "run-00.ckpt"));
  EXPECT_TRUE(fs::exists(out / "checkpoints" / "run-01.ckpt"));
  EXPECT_TRUE(fs::exists(out / "effective-config.json"));
  const auto best = model::load_checkpoint(out / "checkpoints" / "best.ckpt");
  EXPECT_EQ(best.config, model::ModelConfig::tiny());
  EXPECT_TRUE(best.metadata.contains("held_out_accuracy"));
  std::istringstream log(slurp(out / "train-log.txt"));
  int lines = 0;
  for (std::string line; std::getline(log, line);) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    lines += j.contains("epoch");
  }
  EXPECT_EQ(lines, 2);
  const auto runs = nlohmann::json::parse(slurp(out / "runs.json"));
  EXPECT_FALSE(runs.empty());

  // Same seed, same bytes.
  const auto out2 = dir / "run2";
  ASSERT_EQ(run({"train", "--model", "tiny", "--train-manifest", (dir / "train.csv").string(), "--train-images",
                 (dir / "imgs").string(), "--epochs", "1", "--runs", "2", "--batch-size", "4", "--seed", "3",
                 "--out-dir", out2.string()})
                .code,
            0);
  EXPECT_EQ(slurp(out / "checkpoints" / "run-01.ckpt"), slurp(out2 / "checkpoints" / "run-01.ckpt"));

  put(dir / "bad.json", R"({"trainn": {}})");
  EXPECT_EQ(run({"train", "--config", (dir / "bad.json").string()}).code, 1);
}
