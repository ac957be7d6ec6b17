#include <catch2/catch.hpp>

#include "degentune/config.hpp"
#include "degentune/ledger.hpp"
#include "test_helpers.hpp"

#include <fstream>

namespace {

std::string write_config(const char* name, const std::string& text) {
  const std::string dir = testutil::fresh_tmp_dir(std::string("cfg_") + name);
  const std::string path = dir + "/config.json";
  std::ofstream out(path);
  out << text;
  return path;
}

}  // namespace

TEST_CASE("empty config file yields all defaults") {
  const auto cfg = dgt::validate_config(write_config("empty", "  \n"));
  CHECK(cfg.grid.cells_y == 4);
  CHECK(cfg.grid.cells_x == 4);
  CHECK(cfg.tune_epochs == 60);
  CHECK(cfg.tune_batch == 16);
  CHECK(cfg.base_batch == 16);
  CHECK(cfg.tune_lr() == Approx(1e-6));  // lr_base / 1000
  CHECK(cfg.sampler_steps == 50);
  CHECK(cfg.guidance_lambda == 3.0);
  CHECK(cfg.schedule_T == 200);
  CHECK(cfg.num_concepts == 6);
  CHECK(cfg.eval_n_per_cell == 512);
  CHECK(cfg.band_cutoff == 0.125);
  CHECK(cfg.cond_dropout == 0.1);
}

TEST_CASE("unknown keys are rejected with their path") {
  const auto path = write_config("typo", R"({"tune": {"gird": "4x4"}})");
  try {
    dgt::validate_config(path);
    FAIL("expected ValidationError");
  } catch (const dgt::ValidationError& e) {
    CHECK(std::string(e.what()).find("tune.gird") != std::string::npos);
  }

  CHECK_THROWS_AS(dgt::validate_config(write_config("top", R"({"modle": {}})")),
                  dgt::ValidationError);
}

TEST_CASE("config values are range checked") {
  CHECK_THROWS_AS(dgt::validate_config(write_config("b0", R"({"tune": {"batch": 0}})")),
                  dgt::ValidationError);
  CHECK_THROWS_AS(dgt::validate_config(write_config("neg", R"({"tune": {"lr_base": -1}})")),
                  dgt::ValidationError);
  CHECK_THROWS_AS(
      dgt::validate_config(write_config("steps", R"({"schedule": {"T": 10}, "sampler": {"steps": 20}})")),
      dgt::ValidationError);
  CHECK_THROWS_AS(dgt::validate_config(write_config("schema", R"({"schema_version": 2})")),
                  dgt::ValidationError);
  CHECK_THROWS_AS(dgt::validate_config("/nonexistent/config.json"), dgt::ValidationError);
}

TEST_CASE("overrides apply and derived fields stay consistent") {
  const auto cfg = dgt::validate_config(write_config("set", R"({
    "seed": 9,
    "schedule": {"T": 100, "kind": "cosine"},
    "model": {"base_channels": 8},
    "dataset": {"num_concepts": 4},
    "tune": {"lr_base": 2e-3, "epochs": 10, "grid": "8x8", "subset": "xattn"},
    "sampler": {"kind": "ddpm", "steps": 25, "guidance": 1.5}
  })"));
  CHECK(cfg.seed == 9);
  CHECK(cfg.schedule_kind == dgt::ScheduleKind::kCosine);
  CHECK(cfg.model.base_channels == 8);
  CHECK(cfg.model.num_concepts == 4);      // mirrored from dataset
  CHECK(cfg.classifier.num_classes == 4);  // mirrored from dataset
  CHECK(cfg.tune_lr() == Approx(2e-6));
  CHECK(cfg.grid.cells_y == 8);
  CHECK(cfg.tune_subset == dgt::ModuleSubset::kCrossAttentionOnly);
  CHECK(cfg.sampler == dgt::SamplerKind::kDdpm);
}

TEST_CASE("ledger records fingerprints for every artifact") {
  const std::string root = testutil::fresh_tmp_dir("ledger");
  dgt::RunLedger ledger(root);

  // emit a couple of artifacts
  const std::string sub = root + "/artifacts";
  std::filesystem::create_directories(sub);
  {
    std::ofstream(sub + "/a.txt") << "alpha";
    std::ofstream(sub + "/b.txt") << "beta";
  }
  ledger.record("demo", {"demo", "--x"}, {}, {sub}, 12.5);

  std::ifstream in(ledger.path());
  std::string line;
  REQUIRE(std::getline(in, line));
  const auto j = nlohmann::json::parse(line);
  CHECK(j.at("command") == "demo");
  CHECK(j.at("outputs").size() == 2);
  for (const auto& o : j.at("outputs"))
    CHECK(o.at("sha256").get<std::string>().size() == 64);

  // every file under the root (minus the ledger itself) is covered
  const auto prints = dgt::RunLedger::fingerprints(root);
  std::size_t non_ledger = 0;
  for (const auto& [path, hash] : prints) {
    (void)hash;
    if (path != ledger.path()) ++non_ledger;
  }
  CHECK(non_ledger == j.at("outputs").size());

  // identical input bytes give identical fingerprints
  const auto again = dgt::RunLedger::fingerprints(sub);
  CHECK(again == dgt::RunLedger::fingerprints(sub));
}
