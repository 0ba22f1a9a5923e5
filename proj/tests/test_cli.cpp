// End-to-end checks of the command-line tool. The binary path comes from the
// SEGROB_CLI environment variable set by the test harness.

#include <doctest.h>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string cli_binary() {
  const char* env = std::getenv("SEGROB_CLI");
  REQUIRE_MESSAGE(env != nullptr, "SEGROB_CLI must point at the segrob binary");
  return env;
}

int run(const std::string& args) {
  const std::string cmd = cli_binary() + " " + args + " >/dev/null 2>&1";
  return std::system(cmd.c_str());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

struct Workspace {
  fs::path root;
  Workspace() {
    root = fs::temp_directory_path() / "segrob_cli_test";
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~Workspace() { fs::remove_all(root); }
  std::string p(const std::string& rel) const { return (root / rel).string(); }
};

}  // namespace

TEST_CASE("cli pipeline: gen, train, attack, sea, report") {
  Workspace ws;
  json gen_cfg{{"gen", {{"train_images", 10}, {"val_images", 4}, {"height", 16}, {"width", 16},
                        {"classes", 4}}}};
  std::ofstream(ws.p("gen.json")) << gen_cfg.dump();
  REQUIRE(run("gen --config " + ws.p("gen.json") + " --out " + ws.p("data") + " --seed 3") == 0);
  CHECK(fs::exists(ws.p("data/train/manifest.json")));
  CHECK(fs::exists(ws.p("data/val/images/img_0000.ppm")));

  REQUIRE(run("train --dataset " + ws.p("data") + " --out " + ws.p("model") +
              " --seed 4 --epochs 1 --steps 1 --workers 1") == 0);
  CHECK(fs::exists(ws.p("model/checkpoint.json")));
  CHECK(fs::exists(ws.p("model/train_log.jsonl")));

  SUBCASE("attack at epsilon zero reproduces clean metrics") {
    REQUIRE(run("attack --dataset " + ws.p("data") + " --model " + ws.p("model/checkpoint.json") +
                " --out " + ws.p("atk") + " --eps 0 --iters 10 --loss mce --workers 1") == 0);
    const std::string csv = slurp(ws.p("atk/metrics.csv"));
    // rows: header, clean, eps=0 attack; both must agree
    const auto clean_row = csv.substr(csv.find("\n0.000000,clean,") + 1);
    const auto attack_row = csv.substr(csv.find("\n0.000000,mce,") + 1);
    CHECK(clean_row.substr(clean_row.find(",clean,") + 7, 17) ==
          attack_row.substr(attack_row.find(",mce,") + 5, 17));
    const json manifest = json::parse(std::ifstream(ws.p("atk/attack_manifest.json")));
    CHECK(manifest.contains("wall_clock_sec"));
    CHECK(manifest.at("records").size() == 4);
  }

  SUBCASE("sea emits report files with clean columns at epsilon zero") {
    REQUIRE(run("sea --dataset " + ws.p("data") + " --model " + ws.p("model/checkpoint.json") +
                " --out " + ws.p("sea") + " --eps 0 --iters 10 --seed 5 --workers 1") == 0);
    const json report = json::parse(std::ifstream(ws.p("sea/sea_report.json")));
    const auto& row = report.at("rows").at(0);
    CHECK(row.at("clean").at("aAcc").get<double>() ==
          doctest::Approx(row.at("sea").at("aAcc").get<double>()).epsilon(1e-12));
    CHECK(row.at("clean").at("mIoU").get<double>() ==
          doctest::Approx(row.at("sea").at("mIoU").get<double>()).epsilon(1e-12));
    CHECK(fs::exists(ws.p("sea/sea_report.csv")));
  }

  SUBCASE("report renders prediction masks") {
    REQUIRE(run("report --dataset " + ws.p("data") + " --model " + ws.p("model/checkpoint.json") +
                " --out " + ws.p("rep") + " --workers 1") == 0);
    CHECK(fs::exists(ws.p("rep/metrics.csv")));
    CHECK(fs::exists(ws.p("rep/masks_pred/img_0000.ppm")));
  }

  SUBCASE("ablate emits the schedule comparison") {
    REQUIRE(run("ablate --dataset " + ws.p("data") + " --model " + ws.p("model/checkpoint.json") +
                " --out " + ws.p("abl") + " --eps 4/255 --iters 10 --losses mce --seed 8 "
                "--workers 1") == 0);
    const std::string csv = slurp(ws.p("abl/ablate_report.csv"));
    CHECK(csv.find("const-eps") != std::string::npos);
    CHECK(csv.find("const-eps-x3") != std::string::npos);
    CHECK(csv.find("red-eps") != std::string::npos);
    CHECK(csv.find("worst-case") != std::string::npos);
  }

  SUBCASE("pretrain writes a loadable backbone") {
    REQUIRE(run("pretrain --dataset " + ws.p("data") + " --out " + ws.p("bb") +
                " --seed 4 --steps 1 --workers 1 --config " + ws.p("pre.json")) != 0);  // no config yet
    std::ofstream(ws.p("pre.json")) << R"({"train": {"pretrain_epochs": 1, "patch": 8}})";
    REQUIRE(run("pretrain --dataset " + ws.p("data") + " --out " + ws.p("bb") +
                " --seed 4 --steps 1 --workers 1 --config " + ws.p("pre.json")) == 0);
    CHECK(fs::exists(ws.p("bb/backbone.json")));
    REQUIRE(run("train --dataset " + ws.p("data") + " --out " + ws.p("model_pir") +
                " --seed 4 --epochs 1 --steps 1 --init robust --backbone " +
                ws.p("bb/backbone.json") + " --workers 1") == 0);
  }

  SUBCASE("attack dumps feed transfer evaluation") {
    const std::string dump_cfg = ws.p("atk_dump.json");
    std::ofstream(dump_cfg) << json{{"attack", {{"dump_images", true}, {"iterations", 10},
                                                {"loss", "mce"}, {"schedule", "const-eps"}}}}.dump();
    REQUIRE(run("attack --config " + dump_cfg + " --dataset " + ws.p("data") + " --model " +
                ws.p("model/checkpoint.json") + " --out " + ws.p("atkd") +
                " --eps 4/255 --seed 6 --workers 1") == 0);
    CHECK(fs::exists(ws.p("atkd/adv_0.015686/img_0000.f64")));
    REQUIRE(run("transfer --dataset " + ws.p("data") + " --model " + ws.p("model/checkpoint.json") +
                " --source " + ws.p("atkd") + " --out " + ws.p("tr") +
                " --eps 4/255 --workers 1") == 0);
    CHECK(fs::exists(ws.p("tr/transfer_report.csv")));
  }
}

TEST_CASE("cli rejects malformed input") {
  Workspace ws;
  SUBCASE("unknown config keys") {
    std::ofstream(ws.p("bad.json")) << R"({"datset": "typo"})";
    CHECK(run("sea --config " + ws.p("bad.json")) != 0);
    std::ofstream(ws.p("bad2.json")) << R"({"attack": {"iterationz": 3}})";
    CHECK(run("sea --config " + ws.p("bad2.json")) != 0);
  }
  SUBCASE("epsilon outside [0, 0.5]") {
    CHECK(run("sea --dataset nowhere --model nothing --out " + ws.p("x") + " --eps 0.75") != 0);
  }
  SUBCASE("missing dataset") {
    CHECK(run("sea --dataset " + ws.p("nothing") + " --model nothing --out " + ws.p("x") +
              " --eps 0.01") != 0);
  }
  SUBCASE("unknown loss name") {
    CHECK(run("attack --dataset x --model y --out z --eps 0.01 --loss bogus") != 0);
  }
}

TEST_CASE("cli sea reports are byte-identical across reruns") {
  Workspace ws;
  json gen_cfg{{"gen", {{"train_images", 8}, {"val_images", 3}, {"height", 16}, {"width", 16},
                        {"classes", 4}}}};
  std::ofstream(ws.p("gen.json")) << gen_cfg.dump();
  REQUIRE(run("gen --config " + ws.p("gen.json") + " --out " + ws.p("data") + " --seed 9") == 0);
  REQUIRE(run("train --dataset " + ws.p("data") + " --out " + ws.p("model") +
              " --seed 9 --epochs 1 --steps 1 --workers 1") == 0);
  const std::string cmd = "sea --dataset " + ws.p("data") + " --model " +
                          ws.p("model/checkpoint.json") + " --eps 4/255 --iters 10 --seed 2 " +
                          "--workers 1 --out " + ws.p("sea");
  REQUIRE(run(cmd) == 0);
  const std::string first_json = slurp(ws.p("sea/sea_report.json"));
  const std::string first_csv = slurp(ws.p("sea/sea_report.csv"));
  REQUIRE(run(cmd) == 0);
  CHECK(first_json == slurp(ws.p("sea/sea_report.json")));
  CHECK(first_csv == slurp(ws.p("sea/sea_report.csv")));
}
