#include <catch2/catch.hpp>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "degentune/checkpoint.hpp"
#include "degentune/dataset.hpp"
#include "degentune/ledger.hpp"
#include "test_helpers.hpp"

namespace fs = std::filesystem;

namespace {

const std::string kCli = DEGENTUNE_CLI_PATH;

int run(const std::string& args) {
  const std::string cmd = kCli + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string capture(const std::string& args) {
  const std::string out_file = testutil::fresh_tmp_dir("cli_capture") + "/out.txt";
  const std::string cmd = kCli + " " + args + " >" + out_file + " 2>&1";
  std::system(cmd.c_str());
  std::ifstream in(out_file);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

/// Small config: tiny model, tiny corpus, short schedule. CLI mechanics only.
std::string tiny_config() {
  static const std::string path = [] {
    const std::string dir = testutil::fresh_tmp_dir("cli_cfg");
    const std::string p = dir + "/config.json";
    std::ofstream out(p);
    out << R"({
      "schedule": {"T": 40},
      "model": {"base_channels": 4, "time_dim": 8, "cond_dim": 8, "gn_groups": 2, "image_size": 32},
      "dataset": {"num_concepts": 3, "n_per_concept": 100},
      "base_train": {"epochs": 1, "batch": 16},
      "classifier": {"base_channels": 8, "feature_dim": 16, "epochs": 15},
      "tune": {"epochs": 1, "n_sg": 4, "n_ac": 4, "lr_base": 0.1},
      "sampler": {"steps": 8},
      "eval": {"n_per_cell": 12}
    })";
    return p;
  }();
  return path;
}

/// One shared train-base run for the mechanics tests below.
const std::string& base_root() {
  static const std::string root = [] {
    const std::string r = testutil::fresh_tmp_dir("cli_base");
    REQUIRE(run("train-base --config " + tiny_config() + " --out " + r +
                " --workers 2 --skip-detection-check") == 0);
    return r;
  }();
  return root;
}

}  // namespace

TEST_CASE("cli rejects unknown subcommands and bad flags with exit 2") {
  CHECK(run("definitely-not-a-command") == 2);
  CHECK(run("") == 2);
  CHECK(run("tune --nonsense 1") == 2);
  CHECK(run("gen --out /tmp/x") == 2);  // missing required --ckpt
}

TEST_CASE("cli --help exits 0 and lists subcommands") {
  CHECK(run("--help") == 0);
  const std::string text = capture("--help");
  for (const char* sub : {"train-base", "gen", "scramble", "build-degenset", "tune",
                          "continual", "fuse", "sweep-fusion", "eval-shield", "probe-np",
                          "perturb", "analyze-freq", "sweep-grid", "sweep-ratio"})
    CHECK(text.find(sub) != std::string::npos);
}

TEST_CASE("cli config validation errors exit 2 and name the key") {
  const std::string dir = testutil::fresh_tmp_dir("cli_badcfg");
  std::ofstream(dir + "/bad.json") << R"({"tune": {"gird": "4x4"}})";
  CHECK(run("train-base --config " + dir + "/bad.json --out " + dir + "/out") == 2);
  const std::string text = capture("train-base --config " + dir + "/bad.json --out " + dir + "/o2");
  CHECK(text.find("tune.gird") != std::string::npos);
}

TEST_CASE("cli runtime errors exit 1") {
  const std::string dir = testutil::fresh_tmp_dir("cli_runtime");
  CHECK(run("gen --ckpt " + dir + "/does_not_exist --out " + dir + "/out") == 1);
}

TEST_CASE("train-base emits dataset, classifier and base checkpoint with a ledger") {
  const std::string& root = base_root();
  CHECK(fs::exists(root + "/base_ckpt/meta.json"));
  CHECK(fs::exists(root + "/base_ckpt/params.bin"));
  CHECK(fs::exists(root + "/classifier_ckpt/meta.json"));
  CHECK(fs::exists(root + "/dataset/data_manifest.json"));
  CHECK(fs::exists(root + "/ledger.jsonl"));

  // every artifact under the root appears in the ledger exactly once
  std::ifstream in(root + "/ledger.jsonl");
  std::string line;
  std::set<std::string> recorded;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const auto& o : j.at("outputs")) recorded.insert(o.at("path").get<std::string>());
  }
  for (const auto& [path, hash] : dgt::RunLedger::fingerprints(root)) {
    (void)hash;
    if (path == root + "/ledger.jsonl") continue;
    CHECK(recorded.count(path) == 1);
  }
}

TEST_CASE("gen writes deterministic images") {
  const std::string& root = base_root();
  const std::string g1 = testutil::fresh_tmp_dir("cli_gen1");
  const std::string g2 = testutil::fresh_tmp_dir("cli_gen2");
  REQUIRE(run("gen --ckpt " + root + "/base_ckpt --cond 0 --n 3 --seed 5 --out " + g1 +
              " --config " + tiny_config() + " --workers 2") == 0);
  REQUIRE(run("gen --ckpt " + root + "/base_ckpt --cond 0 --n 3 --seed 5 --out " + g2 +
              " --config " + tiny_config() + " --workers 1") == 0);
  for (int i = 0; i < 3; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "img_%05d.png", i);
    CHECK(dgt::sha256_file(g1 + "/images/" + name) == dgt::sha256_file(g2 + "/images/" + name));
  }
}

TEST_CASE("scramble emits sidecars that replay exactly") {
  const std::string& root = base_root();
  const std::string g = testutil::fresh_tmp_dir("cli_scr_src");
  REQUIRE(run("gen --ckpt " + root + "/base_ckpt --cond 1 --n 2 --seed 9 --out " + g +
              " --config " + tiny_config()) == 0);
  const std::string s = testutil::fresh_tmp_dir("cli_scr_out");
  REQUIRE(run("scramble --in " + g + "/images --grid 4x4 --seed 3 --out " + s) == 0);
  CHECK(fs::exists(s + "/scrambled/img_00000.png"));
  CHECK(fs::exists(s + "/scrambled/img_00000.png.json"));

  const auto side = nlohmann::json::parse(dgt::detail::read_text_file(
      fs::path(s) / "scrambled" / "img_00000.png.json"));
  dgt::TilePermutation perm;
  perm.mapping = side.at("permutation").get<std::vector<int>>();
  const auto grid = dgt::parse_grid(side.at("grid").get<std::string>());
  const dgt::Image original = dgt::read_png(g + "/images/img_00000.png");
  const dgt::Image scrambled = dgt::read_png(s + "/scrambled/img_00000.png");
  const dgt::Image replay = dgt::scramble(original, grid, perm);
  for (std::size_t i = 0; i < replay.data.size(); ++i)
    CHECK(dgt::quantize_u8(replay.data[i]) == dgt::quantize_u8(scrambled.data[i]));
}

TEST_CASE("tune with zero epochs reproduces the input checkpoint bitwise") {
  const std::string& root = base_root();
  const std::string d = testutil::fresh_tmp_dir("cli_degenset");
  REQUIRE(run("build-degenset --ckpt " + root + "/base_ckpt --concept 0 --n-sg 4 --n-ac 4 "
              "--out " + d + " --config " + tiny_config() + " --seed 11") == 0);
  CHECK(fs::exists(d + "/degenset/manifest.json"));

  const std::string t = testutil::fresh_tmp_dir("cli_tune0");
  REQUIRE(run("tune --ckpt " + root + "/base_ckpt --manifest " + d + "/degenset --epochs 0 "
              "--out " + t + " --config " + tiny_config()) == 0);
  CHECK(dgt::sha256_file(t + "/tuned_ckpt/params.bin") ==
        dgt::sha256_file(root + "/base_ckpt/params.bin"));
}

TEST_CASE("tune emits loss.csv and a changed checkpoint") {
  const std::string& root = base_root();
  const std::string d = testutil::fresh_tmp_dir("cli_degenset2");
  REQUIRE(run("build-degenset --ckpt " + root + "/base_ckpt --concept 1 --n-sg 4 --n-ac 4 "
              "--out " + d + " --config " + tiny_config() + " --seed 12") == 0);
  const std::string t = testutil::fresh_tmp_dir("cli_tune1");
  REQUIRE(run("tune --ckpt " + root + "/base_ckpt --manifest " + d + "/degenset --epochs 1 "
              "--lr 1e-4 --out " + t + " --config " + tiny_config() + " --workers 2") == 0);
  CHECK(fs::exists(t + "/loss.csv"));
  CHECK(dgt::sha256_file(t + "/tuned_ckpt/params.bin") !=
        dgt::sha256_file(root + "/base_ckpt/params.bin"));
}

TEST_CASE("fuse endpoints reproduce parents through the cli") {
  const std::string& root = base_root();
  const std::string d = testutil::fresh_tmp_dir("cli_fuse_set");
  REQUIRE(run("build-degenset --ckpt " + root + "/base_ckpt --concept 0 --n-sg 4 --n-ac 4 "
              "--out " + d + " --config " + tiny_config() + " --seed 13") == 0);
  const std::string t = testutil::fresh_tmp_dir("cli_fuse_tuned");
  REQUIRE(run("tune --ckpt " + root + "/base_ckpt --manifest " + d + "/degenset --epochs 1 "
              "--lr 1e-4 --out " + t + " --config " + tiny_config()) == 0);

  const std::string f1 = testutil::fresh_tmp_dir("cli_fuse1");
  REQUIRE(run("fuse --a " + root + "/base_ckpt --b " + t + "/tuned_ckpt --lambda 1 --out " + f1) == 0);
  CHECK(dgt::sha256_file(f1 + "/fused_ckpt/params.bin") ==
        dgt::sha256_file(root + "/base_ckpt/params.bin"));

  const std::string f0 = testutil::fresh_tmp_dir("cli_fuse0");
  REQUIRE(run("fuse --a " + root + "/base_ckpt --b " + t + "/tuned_ckpt --lambda 0 --out " + f0) == 0);
  CHECK(dgt::sha256_file(f0 + "/fused_ckpt/params.bin") ==
        dgt::sha256_file(t + "/tuned_ckpt/params.bin"));

  CHECK(run("fuse --a " + root + "/base_ckpt --b " + t + "/tuned_ckpt --lambda 1.5 --out " +
            testutil::fresh_tmp_dir("cli_fuse_bad")) == 2);
}

TEST_CASE("eval-shield on an untouched model reports the null row values") {
  const std::string& root = base_root();
  const std::string e = testutil::fresh_tmp_dir("cli_eval");
  REQUIRE(run("eval-shield --pre " + root + "/base_ckpt --post " + root + "/base_ckpt "
              "--shielded 0 --extractor " + root + "/classifier_ckpt --dataset " + root +
              "/dataset --n 12 --out " + e + " --config " + tiny_config() + " --workers 2") == 0);
  // identical checkpoints and identical seeds: concept fid is exactly the floor
  std::ifstream in(e + "/shield_report.csv");
  std::string header, line;
  REQUIRE(std::getline(in, header));
  REQUIRE(std::getline(in, line));
  const auto comma = line.find(',');
  CHECK(line.substr(0, comma) == "concept");
  const std::size_t c3 = [&] {
    std::size_t pos = 0;
    for (int i = 0; i < 3; ++i) pos = line.find(',', pos) + 1;
    return pos;
  }();
  const double fid = std::stod(line.substr(c3));
  CHECK(fid < 5.0);
}

TEST_CASE("probe-np emits identical rates across lambda") {
  const std::string& root = base_root();
  const std::string e = testutil::fresh_tmp_dir("cli_np");
  REQUIRE(run("probe-np --ckpt " + root + "/base_ckpt --concept 0 --lambdas 0,3,7.5 --n 6 "
              "--extractor " + root + "/classifier_ckpt --out " + e + " --config " +
              tiny_config() + " --workers 2") == 0);
  std::ifstream in(e + "/np_probe.csv");
  std::string header, l1, l2, l3;
  REQUIRE(std::getline(in, header));
  REQUIRE(std::getline(in, l1));
  REQUIRE(std::getline(in, l2));
  REQUIRE(std::getline(in, l3));
  CHECK(l1.substr(l1.find(',')) == l2.substr(l2.find(',')));
  CHECK(l2.substr(l2.find(',')) == l3.substr(l3.find(',')));
}

TEST_CASE("rerunning a subcommand reproduces artifact fingerprints bitwise") {
  const std::string& root = base_root();
  const std::string r1 = testutil::fresh_tmp_dir("cli_repro1");
  const std::string r2 = testutil::fresh_tmp_dir("cli_repro2");
  const std::string cmd = "build-degenset --ckpt " + root + "/base_ckpt --concept 2 "
                          "--n-sg 3 --n-ac 3 --seed 77 --config " + tiny_config() +
                          " --workers 1 --out ";
  REQUIRE(run(cmd + r1) == 0);
  REQUIRE(run(cmd + r2) == 0);
  const auto f1 = dgt::RunLedger::fingerprints(r1 + "/degenset");
  const auto f2 = dgt::RunLedger::fingerprints(r2 + "/degenset");
  REQUIRE(f1.size() == f2.size());
  auto it1 = f1.begin();
  auto it2 = f2.begin();
  for (; it1 != f1.end(); ++it1, ++it2) CHECK(it1->second == it2->second);
}
