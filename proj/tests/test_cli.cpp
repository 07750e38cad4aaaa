#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "multidepth/cli.hpp"
#include "multidepth/config.hpp"
#include "multidepth/data.hpp"
#include "support/small_config.hpp"

using namespace multidepth;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "multidepth");
  std::ostringstream out, err;
  const int code = dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

// Fresh scratch directory per test.
fs::path fresh(const std::string& name) {
  auto dir = fs::temp_directory_path() / "multidepth_cli_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

std::string small_config_file(const fs::path& dir) {
  const auto path = (dir / "run.json").string();
  save_config(testing::small_config(), path);
  return path;
}

}  // namespace

TEST_CASE("cli usage errors exit 1 with diagnostics on the error stream") {
  auto none = run({});
  CHECK(none.code == kExitUsage);
  CHECK(none.out.empty());
  CHECK_FALSE(none.err.empty());

  CHECK(run({"frobnicate"}).code == kExitUsage);
  CHECK(run({"train"}).code == kExitUsage);  // missing --out
  CHECK(run({"train", "--out", "x", "--weighting", "bogus"}).code == kExitUsage);

  const auto dir = fresh("usage");
  auto conflict = run({"train", "--out", (dir / "t").string(), "--weighting", "equal", "--manual-weights", "5,1"});
  CHECK(conflict.code == kExitUsage);
  CHECK(conflict.err.find("--manual-weights") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "t"));

  auto reg_only = run({"train", "--out", (dir / "t").string(), "--reg-only", "--n-cls", "4"});
  CHECK(reg_only.code == kExitUsage);
}

TEST_CASE("cli help lists flags with their defaults") {
  for (const char* cmd : {"gen-data", "lr-find", "train", "ablate", "eval", "predict"}) {
    auto h = run({cmd, "--help"});
    CHECK(h.code == kExitOk);
    CHECK(h.out.find("--") != std::string::npos);
  }
  auto h = run({"train", "--help"});
  for (const char* want : {"--iters UINT [2000]", "--crop UINT [32]", "--batch UINT [16]",
                           "--val-interval UINT [100]", "--n-cls UINT:POSITIVE [32]", "[learned]", "[[2,125]]",
                           "[[5,1]]"})
    CHECK_MESSAGE(h.out.find(want) != std::string::npos, want);
  CHECK(run({"lr-find", "--help"}).out.find("--steps UINT:INT in [2 - 1000000] [250]") != std::string::npos);
  CHECK(run({"ablate", "--help"}).out.find("[[1,2,3]]") != std::string::npos);
}

TEST_CASE("cli train twice gives byte-identical metrics and a config snapshot") {
  const auto dir = fresh("train");
  const auto cfg = small_config_file(dir);
  for (const char* name : {"a", "b"}) {
    auto r = run({"train", "--config", cfg, "--seed", "7", "--out", (dir / name).string()});
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);
  }
  CHECK(slurp(dir / "a" / "train.csv") == slurp(dir / "b" / "train.csv"));
  CHECK(slurp(dir / "a" / "val.csv") == slurp(dir / "b" / "val.csv"));
  CHECK_FALSE(slurp(dir / "a" / "train.csv").empty());

  auto expected = testing::small_config();
  expected.seed = 7;
  CHECK(load_config((dir / "a" / "config.json").string()) == expected);
  CHECK(fs::exists(dir / "a" / "final.ckpt"));

  // Refuses a non-empty output directory unless forced; input config untouched.
  const auto before = slurp(cfg);
  CHECK(run({"train", "--config", cfg, "--out", (dir / "a").string()}).code == kExitUsage);
  CHECK(run({"train", "--config", cfg, "--out", (dir / "a").string(), "--force", "--iters", "5"}).code == kExitOk);
  CHECK(slurp(cfg) == before);
}

TEST_CASE("cli train resumes from a checkpoint") {
  const auto dir = fresh("resume");
  const auto cfg = small_config_file(dir);
  REQUIRE(run({"train", "--config", cfg, "--out", (dir / "full").string()}).code == kExitOk);
  REQUIRE(run({"train", "--config", cfg, "--iters", "20", "--out", (dir / "half").string()}).code == kExitOk);
  // The checkpoint of a 20-iteration run resumed inside a 20-iteration run has nothing left to do.
  auto r = run({"train", "--config", cfg, "--resume", (dir / "half" / "final.ckpt").string(), "--out",
                (dir / "resumed").string()});
  CHECK(r.code == kExitOk);

  auto conflict = testing::small_config();
  conflict.model.n_cls = 4;
  save_config(conflict, (dir / "other.json").string());
  auto bad = run({"train", "--config", (dir / "other.json").string(), "--resume",
                  (dir / "half" / "final.ckpt").string(), "--out", (dir / "bad").string()});
  CHECK(bad.code == kExitUsage);
  CHECK(bad.err.find("n_cls") != std::string::npos);
}

TEST_CASE("cli config files are validated strictly") {
  const auto dir = fresh("config");
  std::ofstream(dir / "bad.json") << R"({"batch_size": 4, "bogus": 1})";
  auto r = run({"train", "--config", (dir / "bad.json").string(), "--out", (dir / "t").string()});
  CHECK(r.code == kExitUsage);
  CHECK(r.err.find("bogus") != std::string::npos);
}

TEST_CASE("cli gen-data, predict and eval round trip") {
  const auto dir = fresh("data");
  const auto cfg = small_config_file(dir);
  REQUIRE(run({"gen-data", "--config", cfg, "--count", "3", "--seed", "5", "--out", (dir / "gen").string()}).code ==
          kExitOk);
  auto manifest = nlohmann::json::parse(slurp(dir / "gen" / "manifest.json"));
  CHECK(manifest["count"] == 3);
  CHECK(manifest["seed"] == 5);
  for (int i = 0; i < 3; ++i) {
    const auto name = "00000" + std::to_string(i) + ".png";
    CHECK(fs::exists(dir / "gen" / "image" / name));
    const DepthMap gt = read_kitti_png((dir / "gen" / "depth" / name).string());
    CHECK(gt.height == 32);
    CHECK(gt.valid_count() > 0);
  }

  auto same = run({"eval", "--pred", (dir / "gen" / "depth").string(), "--gt", (dir / "gen" / "depth").string(),
                   "--out", (dir / "eval.json").string()});
  REQUIRE(same.code == kExitOk);
  auto score = nlohmann::json::parse(slurp(dir / "eval.json"));
  CHECK(score["silog_scaled"].get<double>() == 0.0);
  CHECK(score["images"] == 3);

  REQUIRE(run({"train", "--config", cfg, "--iters", "5", "--out", (dir / "run").string()}).code == kExitOk);
  for (const char* head : {"regression", "classification"}) {
    const auto out = dir / (std::string("pred_") + head);
    auto p = run({"predict", "--checkpoint", (dir / "run" / "final.ckpt").string(), "--input",
                  (dir / "gen" / "image").string(), "--head", head, "--out", out.string()});
    REQUIRE_MESSAGE(p.code == kExitOk, p.err);
    const DepthMap pred = read_kitti_png((out / "000000.png").string());
    CHECK(pred.valid_count() == pred.size());
    auto e = run({"eval", "--pred", out.string(), "--gt", (dir / "gen" / "depth").string(), "--out",
                  (dir / "e.json").string()});
    CHECK(e.code == kExitOk);
    CHECK(nlohmann::json::parse(slurp(dir / "e.json"))["silog_scaled"].get<double>() > 0.0);
  }
}

TEST_CASE("cli runtime failures exit 2") {
  const auto dir = fresh("runtime");
  fs::create_directories(dir / "pred");
  fs::create_directories(dir / "gt");
  std::ofstream(dir / "pred" / "a.png") << "not a png";
  std::ofstream(dir / "gt" / "a.png") << "not a png";
  auto r = run({"eval", "--pred", (dir / "pred").string(), "--gt", (dir / "gt").string(), "--out",
                (dir / "e.json").string()});
  CHECK(r.code == kExitRuntime);
  CHECK_FALSE(r.err.empty());
  CHECK_FALSE(fs::exists(dir / "e.json"));

  const auto cfg = small_config_file(dir);
  auto diverge = run({"train", "--config", cfg, "--lr", "1e12", "--out", (dir / "t").string()});
  CHECK(diverge.code == kExitRuntime);
  CHECK(fs::exists(dir / "t" / "failure.ckpt"));
}

TEST_CASE("cli lr-find writes the sweep and the selected alpha") {
  const auto dir = fresh("lr");
  const auto cfg = small_config_file(dir);
  auto r = run({"lr-find", "--config", cfg, "--steps", "250", "--alpha-end", "0.1", "--out", (dir / "lr").string()});
  REQUIRE_MESSAGE(r.code == kExitOk, r.err);
  std::ifstream csv(dir / "lr" / "sweep.csv");
  std::string line;
  std::size_t rows = 0;
  std::getline(csv, line);
  CHECK(line == "step,alpha,loss_raw,loss_smoothed");
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 250);
  auto summary = nlohmann::json::parse(slurp(dir / "lr" / "summary.json"));
  CHECK(summary["selected_alpha"].get<double>() > 0.0);
  CHECK(fs::exists(dir / "lr" / "config.json"));
}

TEST_CASE("cli ablate writes csv and json tables") {
  const auto dir = fresh("ablate");
  auto c = testing::small_config();
  c.total_iters = 4;
  c.validation_interval = 2;
  save_config(c, (dir / "run.json").string());
  auto r = run({"ablate", "--config", (dir / "run.json").string(), "--axis", "weighting", "--seeds", "1,2", "--jobs",
                "2", "--out", (dir / "out").string()});
  REQUIRE_MESSAGE(r.code == kExitOk, r.err);
  auto table = nlohmann::json::parse(slurp(dir / "out" / "ablation.json"));
  CHECK(table["rows"].size() == 3);
  std::ifstream csv(dir / "out" / "ablation.csv");
  std::string line;
  std::size_t rows = 0;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 1 + 3 * 2);
}
