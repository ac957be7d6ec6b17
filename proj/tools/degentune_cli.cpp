// degentune: train a small class-conditional diffusion model, build
// scrambled-grid degeneration corpora, re-tune to shield concepts, fuse and
// evaluate checkpoints, and run the noise/frequency analyses.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "degentune/config.hpp"
#include "degentune/dataset.hpp"
#include "degentune/diffusion.hpp"
#include "degentune/freq.hpp"
#include "degentune/fusion.hpp"
#include "degentune/image_io.hpp"
#include "degentune/ledger.hpp"
#include "degentune/metrics.hpp"
#include "degentune/train.hpp"
#include "degentune/tuner.hpp"

namespace fs = std::filesystem;
using dgt::Condition;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitValidation = 2;

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    const std::size_t comma = s.find(',', pos);
    const std::string tok = s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    try {
      out.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      throw dgt::ValidationError("expected a comma-separated integer list, got '" + s + "'");
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (out.empty()) throw dgt::ValidationError("empty list: '" + s + "'");
  return out;
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    const std::size_t comma = s.find(',', pos);
    const std::string tok = s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    try {
      out.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw dgt::ValidationError("expected a comma-separated number list, got '" + s + "'");
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (out.empty()) throw dgt::ValidationError("empty list: '" + s + "'");
  return out;
}

std::vector<dgt::GridSpec> parse_grid_list(const std::string& s) {
  std::vector<dgt::GridSpec> out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    const std::size_t comma = s.find(',', pos);
    out.push_back(dgt::parse_grid(
        s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos)));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (out.empty()) throw dgt::ValidationError("empty grid list: '" + s + "'");
  return out;
}

struct Common {
  std::string config_path;
  std::string out_root = "out";
  std::uint64_t seed = 0;
  bool seed_set = false;
  int workers = 0;  // 0 -> config value

  dgt::RunConfig load() const {
    dgt::RunConfig cfg = config_path.empty() ? dgt::RunConfig{} : dgt::validate_config(config_path);
    if (seed_set) cfg.seed = seed;
    if (workers > 0) cfg.workers = workers;
    cfg.output_root = out_root;
    return cfg;
  }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "JSON config file (defaults apply when omitted)");
  cmd->add_option("--out", c.out_root, "output root directory")->required();
  cmd->add_option("--seed", c.seed, "global seed override")->each([&](const std::string&) {
    c.seed_set = true;
  });
  cmd->add_option("--workers", c.workers, "worker threads (1 = bitwise mode; default from config)");
}

dgt::ShieldOptions shield_options(const dgt::RunConfig& cfg, int n_override) {
  dgt::ShieldOptions opt;
  opt.n_per_cell = n_override > 0 ? n_override : cfg.eval_n_per_cell;
  opt.gen = cfg.gen_options();
  opt.workers = cfg.workers;
  return opt;
}

std::vector<int> general_or_default(const std::vector<int>& general,
                                    const std::vector<int>& shielded, int num_concepts) {
  if (!general.empty()) return general;
  std::vector<int> out;
  for (int c = 0; c < num_concepts; ++c)
    if (std::find(shielded.begin(), shielded.end(), c) == shielded.end()) out.push_back(c);
  if (out.empty()) throw dgt::ValidationError("no general (non-shielded) concepts left");
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw dgt::RuntimeError("cannot write " + path);
  out << text;
}

// ---------------------------------------------------------------------------

int cmd_train_base(const Common& common, int detection_n, bool skip_check) {
  const dgt::RunConfig cfg = common.load();
  dgt::RunLedger ledger(cfg.output_root);
  dgt::WallTimer timer;

  const auto specs = dgt::default_concept_specs(cfg.num_concepts);
  std::cout << "synthesizing base dataset (" << cfg.num_concepts << " x "
            << cfg.n_per_concept << ")\n";
  const auto data = dgt::synth_base_dataset(specs, cfg.n_per_concept,
                                            dgt::mix_seed(cfg.seed, dgt::seed_tag::kSynthesis),
                                            cfg.model.image_size, cfg.texture);
  const std::string data_dir = cfg.output_root + "/dataset";
  dgt::save_labeled_dataset(data, data_dir);

  std::cout << "training evaluation classifier\n";
  dgt::ClassifierTrainConfig ccfg;
  ccfg.arch = cfg.classifier;
  ccfg.epochs = cfg.classifier_epochs;
  ccfg.batch_size = cfg.classifier_batch;
  ccfg.lr = cfg.classifier_lr;
  ccfg.seed = cfg.seed;
  auto trained = dgt::train_concept_classifier(data, ccfg);
  const double clf_acc = trained.holdout_accuracy;
  const std::string clf_dir = cfg.output_root + "/classifier_ckpt";
  dgt::save_classifier(trained.net, clf_dir, data.concepts, cfg.seed, clf_acc);
  std::cout << "classifier held-out accuracy: " << clf_acc << "\n";

  std::cout << "training base model (" << cfg.base_epochs << " epochs)\n";
  dgt::BaseTrainConfig bcfg;
  bcfg.arch = cfg.model;
  bcfg.schedule_T = cfg.schedule_T;
  bcfg.schedule_kind = cfg.schedule_kind;
  bcfg.epochs = cfg.base_epochs;
  bcfg.batch_size = cfg.base_batch;
  bcfg.lr = cfg.base_lr;
  bcfg.cond_dropout = cfg.cond_dropout;
  bcfg.seed = cfg.seed;
  bcfg.workers = cfg.workers;
  const auto ckpt = dgt::train_base(data, bcfg);
  const std::string ckpt_dir = cfg.output_root + "/base_ckpt";
  ckpt.save(ckpt_dir);
  std::cout << "base checkpoint: " << ckpt_dir << " (" << ckpt.fingerprint().substr(0, 12)
            << ")\n";

  if (!skip_check && bcfg.epochs > 0) {
    const auto fx = dgt::make_extractor(std::move(trained));
    double worst = 1.0;
    for (const auto& c : data.concepts) {
      std::vector<dgt::Image> imgs(static_cast<std::size_t>(detection_n));
      dgt::parallel_for(imgs.size(), cfg.workers, [&](std::size_t i) {
        dgt::SampleOptions opt;
        opt.sampler = cfg.sampler;
        opt.steps = cfg.sampler_steps;
        opt.seed = dgt::mix_seed(cfg.seed, dgt::seed_tag::kInitNoise,
                                 static_cast<std::uint64_t>(c.id) * 100000u + i);
        imgs[i] = dgt::sample(ckpt, dgt::cfg_guidance(Condition::for_concept(c.id),
                                                      cfg.guidance_lambda),
                              opt)
                      .image;
      });
      const double rate = dgt::concept_detection_rate(imgs, c.id, fx, cfg.workers);
      std::cout << "  concept " << c.id << " (" << c.label << ") detection " << rate << "\n";
      worst = std::min(worst, rate);
    }
    if (worst < 0.85)
      throw dgt::TrainingFailedError(
          "base model detection rate " + std::to_string(worst) +
          " below the 0.85 contract; increase base_train.epochs or change the seed");
  }

  ledger.record("train-base", {"train-base"}, {}, {data_dir, clf_dir, ckpt_dir}, timer.ms());
  return kExitOk;
}

int cmd_gen(const Common& common, const std::string& ckpt_dir, const std::string& cond_str,
            int n, int steps_override) {
  const dgt::RunConfig cfg = common.load();
  dgt::RunLedger ledger(cfg.output_root);
  dgt::WallTimer timer;

  const auto ckpt = dgt::ModelCheckpoint::load(ckpt_dir);
  const Condition cond = dgt::parse_condition(cond_str);
  ckpt.require_condition(cond);
  const std::string img_dir = cfg.output_root + "/images";
  fs::create_directories(img_dir);

  std::vector<dgt::Image> imgs(static_cast<std::size_t>(n));
  dgt::parallel_for(imgs.size(), cfg.workers, [&](std::size_t i) {
    dgt::SampleOptions opt;
    opt.sampler = cfg.sampler;
    opt.steps = steps_override > 0 ? steps_override : cfg.sampler_steps;
    opt.seed = cfg.seed + i;
    const dgt::GuidanceConfig g = cond.is_none()
                                      ? dgt::plain_guidance(cond)
                                      : dgt::cfg_guidance(cond, cfg.guidance_lambda);
    imgs[i] = dgt::sample(ckpt, g, opt).image;
  });
  for (int i = 0; i < n; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "img_%05d.png", i);
    dgt::write_png(img_dir + "/" + name, imgs[static_cast<std::size_t>(i)]);
  }
  std::cout << "wrote " << n << " images to " << img_dir << "\n";
  ledger.record("gen", {"gen", ckpt_dir, cond_str, std::to_string(n)}, {ckpt_dir}, {img_dir},
                timer.ms());
  return kExitOk;
}

int cmd_scramble(const Common& common, const std::string& in_path, const std::string& grid_str) {
  const dgt::RunConfig cfg = common.load();
  dgt::RunLedger ledger(cfg.output_root);
  dgt::WallTimer timer;

  const dgt::GridSpec grid = grid_str.empty() ? cfg.grid : dgt::parse_grid(grid_str);
  std::vector<std::string> inputs;
  if (fs::is_directory(in_path)) {
    for (const auto& e : fs::directory_iterator(in_path))
      if (e.path().extension() == ".png") inputs.push_back(e.path().string());
    std::sort(inputs.begin(), inputs.end());
  } else {
    inputs.push_back(in_path);
  }
  if (inputs.empty()) throw dgt::ValidationError("no .png inputs under " + in_path);

  const std::string out_dir = cfg.output_root + "/scrambled";
  fs::create_directories(out_dir);
  const int ncells = grid.cells_y * grid.cells_x;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const dgt::Image img = dgt::read_png(inputs[i]);
    const std::uint64_t pseed = dgt::mix_seed(cfg.seed, dgt::seed_tag::kPermutation, i);
    const auto perm = dgt::make_permutation(pseed, ncells);
    const dgt::Image scrambled = dgt::scramble(img, grid, perm);
    const std::string name = fs::path(inputs[i]).filename().string();
    dgt::write_png(out_dir + "/" + name, scrambled);
    nlohmann::json side;
    side["seed"] = pseed;
    side["grid"] = to_string(grid);
    side["permutation"] = perm.mapping;
    write_text(out_dir + "/" + name + ".json", side.dump() + "\n");
  }
  std::cout << "scrambled " << inputs.size() << " images into " << out_dir << "\n";
  ledger.record("scramble", {"scramble", in_path, to_string(grid)}, {in_path}, {out_dir},
                timer.ms());
  return kExitOk;
}

int cmd_build_degenset(const Common& common, const std::string& ckpt_dir, int concept_id,
                       int n_sg, int n_ac, const std::string& grid_str,
                       const std::string& mode_str) {
  const dgt::RunConfig cfg = common.load();
  dgt::RunLedger ledger(cfg.output_root);
  dgt::WallTimer timer;

  const auto ckpt = dgt::ModelCheckpoint::load(ckpt_dir);
  const dgt::GridSpec grid = grid_str.empty() ? cfg.grid : dgt::parse_grid(grid_str);
  const int sg = n_sg > 0 ? n_sg : cfg.n_sg;
  const int ac = n_ac > 0 ? n_ac : cfg.n_ac;
  const std::string set_dir = cfg.output_root + "/degenset";

  if (mode_str == "degen") {
    dgt::build_degen_set(ckpt, concept_id, sg, ac, grid, cfg.seed, set_dir, cfg.gen_options());
  } else {
    dgt::BaselineMode mode;
    if (mode_str == "no_scramble") mode = dgt::BaselineMode::kNoScramble;
    else if (mode_str == "black") mode = dgt::BaselineMode::kPureBlack;
    else if (mode_str == "white") mode = dgt::BaselineMode::kPureWhite;
    else if (mode_str == "gray") mode = dgt::BaselineMode::kPureGray;
    else
      throw dgt::ValidationError("mode must be degen|no_scramble|black|white|gray, got '" +
                                 mode_str + "'");
    dgt::build_baseline_set(ckpt, concept_id, mode, sg, ac, cfg.seed, set_dir, grid,
                            cfg.gen_options());
  }
  std::cout << "degeneration corpus (" << mode_str << ", " << sg << " sg + " << ac
            << " ac) in " << set_dir << "\n";
  ledger.record("build-degenset",
                {"build-degenset", ckpt_dir, std::to_string(concept_id), mode_str},
                {ckpt_dir}, {set_dir}, timer.ms());
  return kExitOk;
}

int cmd_tune(const Common& common, const std::string& ckpt_dir, const std::string& manifest_dir,
             double lr, int epochs, int batch, const std::string& subset_str,
             const std::string& grid_str) {
  const dgt::RunConfig cfg = common.load();
  dgt::RunLedger ledger(cfg.output_root);
  dgt::WallTimer timer;

  const auto ckpt = dgt::ModelCheckpoint::load(ckpt_dir);
  const auto manifest = dgt::load_manifest(manifest_dir);

  dgt::TuneConfig tune = cfg.tune_config();
  if (lr > 0) tune.learning_rate = lr;
  if (epochs >= 0) tune.epochs = epochs;
  if (batch > 0) tune.batch_size = batch;
  if (!subset_str.empty()) tune.module_subset = dgt::subset_from_string(subset_str);
  if (!grid_str.empty()) tune.grid = dgt::parse_grid(grid_str);
  tune.loss_csv = cfg.output_root + "/loss.csv";
  tune.divergence_dump_dir = cfg.output_root + "/diverged_ckpt";

  const auto out = dgt::degeneration_tune(ckpt, manifest, tune);
  const std::string out_ckpt = cfg.output_root + "/tuned_ckpt";
  out.save(out_ckpt);
  std::cout << "tuned checkpoint: " << out_ckpt << " (" << out.fingerprint().substr(0, 12)
            << ")\n";
  std::vector<std::string> outputs = {out_ckpt};
  if (tune.epochs > 0) outputs.push_back(tune.loss_csv);
  ledger.record("tune", {"tune", ckpt_dir, manifest_dir}, {ckpt_dir, manifest_dir}, outputs,
                timer.ms());
  return kExitOk;
}

int cmd_continual(const Common& common, const std::string& ckpt_dir,
                  const std::string& concepts_str, int n_sg, int n_ac) {
  const dgt::RunConfig cfg = common.load();
  dgt::RunLedger ledger(cfg.output_root);
  dgt::WallTimer timer;

  const auto ckpt = dgt::ModelCheckpoint::load(ckpt_dir);
  dgt::ContinualPlan plan;
  plan.work_dir = cfg.output_root + "/continual";
  plan.gen = cfg.gen_options();
  const auto concept_ids = parse_int_list(concepts_str);
  for (std::size_t k = 0; k < concept_ids.size(); ++k) {
    dgt::ContinualStage stage;
    stage.concept_id = concept_ids[k];
    stage.tune = cfg.tune_config();
    stage.tune.seed = dgt::mix_seed(cfg.seed, dgt::seed_tag::kStage, 2 * k);
    stage.tune.loss_csv = plan.work_dir + "/stage" + std::to_string(k) + "_loss.csv";
    stage.n_sg = n_sg > 0 ? n_sg : cfg.n_sg;
    stage.n_ac = n_ac > 0 ? n_ac : cfg.n_ac;
    stage.data_seed = dgt::mix_seed(cfg.seed, dgt::seed_tag::kStage, 2 * k + 1);
    plan.stages.push_back(stage);
  }
  fs::create_directories(plan.work_dir);
  const auto seq = dgt::continual_tune(ckpt, plan);
  std::cout << "continual shielding of " << seq.size() << " concepts complete; stage "
            << "checkpoints under " << plan.work_dir << "\n";
  ledger.record("continual", {"continual", ckpt_dir, concepts_str}, {ckpt_dir},
                {plan.work_dir}, timer.ms());
  return kExitOk;
}

int cmd_fuse(const Common& common, const std::string& a_dir, const std::string& b_dir,
             double lambda) {
  const dgt::RunConfig cfg = common.load();
  dgt::RunLedger ledger(cfg.output_root);
  dgt::WallTimer timer;

  const auto a = dgt::ModelCheckpoint::load(a_dir);
  const auto b = dgt::ModelCheckpoint::load(b_dir);
  const auto fused = dgt::fuse(a, b, lambda);
  const std::string out_dir = cfg.output_root + "/fused_ckpt";
  fused.save(out_dir);
  std::cout << "fused checkpoint (lambda=" << lambda << "): " << out_dir << "\n";
  ledger.record("fuse", {"fuse", a_dir, b_dir, std::to_string(lambda)}, {a_dir, b_dir},
                {out_dir}, timer.ms());
  return kExitOk;
}

int cmd_sweep_fusion(const Common& common, const std::string& a_dir, const std::string& b_dir,
                     const std::string& lambdas_str, int probe_concept,
                     const std::string& general_str, const std::string& extractor_dir,
                     const std::string& dataset_dir, int n) {
  const dgt::RunConfig cfg = common.load();
  dgt::RunLedger ledger(cfg.output_root);
  dgt::WallTimer timer;

  const auto a = dgt::ModelCheckpoint::load(a_dir);
  const auto b = dgt::ModelCheckpoint::load(b_dir);
  const auto fx = dgt::load_extractor(extractor_dir);
  const auto data = dgt::load_labeled_dataset(dataset_dir);
  const auto lambdas = parse_double_list(lambdas_str);
  const auto general =
      general_or_default(general_str.empty() ? std::vector<int>{} : parse_int_list(general_str),
                         {probe_concept}, static_cast<int>(data.concepts.size()));

  const auto rows = dgt::fusion_sweep(a, b, lambdas, probe_concept, general, data.items, fx,
                                      n > 0 ? n : cfg.eval_n_per_cell, cfg.seed,
                                      cfg.gen_options(), cfg.workers);
  const std::string csv = cfg.output_root + "/fusion_sweep.csv";
  dgt::write_fusion_sweep_csv(rows, csv);
  for (const auto& r : rows)
    std::cout << "lambda " << r.lambda << ": detection " << r.detection_rate
              << ", retention fid " << r.retention_fid << "\n";
  ledger.record("sweep-fusion", {"sweep-fusion", a_dir, b_dir, lambdas_str},
                {a_dir, b_dir, extractor_dir, dataset_dir}, {csv}, timer.ms());
  return kExitOk;
}

int cmd_eval_shield(const Common& common, const std::string& pre_dir,
                    const std::string& post_dir, const std::string& shielded_str,
                    const std::string& general_str, const std::string& extractor_dir,
                    const std::string& dataset_dir, int n) {
  const dgt::RunConfig cfg = common.load();
  dgt::RunLedger ledger(cfg.output_root);
  dgt::WallTimer timer;

  const auto pre = dgt::ModelCheckpoint::load(pre_dir);
  const auto post = dgt::ModelCheckpoint::load(post_dir);
  const auto fx = dgt::load_extractor(extractor_dir);
  const auto data = dgt::load_labeled_dataset(dataset_dir);
  const auto shielded = parse_int_list(shielded_str);
  const auto general = general_or_default(
      general_str.empty() ? std::vector<int>{} : parse_int_list(general_str), shielded,
      static_cast<int>(data.concepts.size()));

  const auto report = dgt::shield_report(pre, post, shielded, general, data.items, fx,
                                         cfg.seed, shield_options(cfg, n));
  const std::string csv = cfg.output_root + "/shield_report.csv";
  dgt::write_metrics_csv(report, csv);
  for (const auto& r : report.concept_rows)
    std::cout << "concept " << r.concept_id << " (" << r.label << "): fid "
              << r.fid_proxy_concept << ", is " << r.is_proxy << ", detection "
              << r.detection_rate << "\n";
  for (const auto& r : report.retention_rows)
    std::cout << "retention " << r.which << ": fid " << r.fid_proxy_general << ", is "
              << r.is_proxy_general << "\n";
  ledger.record("eval-shield", {"eval-shield", pre_dir, post_dir, shielded_str},
                {pre_dir, post_dir, extractor_dir, dataset_dir}, {csv}, timer.ms());
  return kExitOk;
}

int cmd_probe_np(const Common& common, const std::string& ckpt_dir, int concept_id,
                 const std::string& lambdas_str, const std::string& extractor_dir, int n) {
  const dgt::RunConfig cfg = common.load();
  dgt::RunLedger ledger(cfg.output_root);
  dgt::WallTimer timer;

  const auto ckpt = dgt::ModelCheckpoint::load(ckpt_dir);
  const auto fx = dgt::load_extractor(extractor_dir);
  const auto rows = dgt::np_failure_probe(ckpt, concept_id, parse_double_list(lambdas_str),
                                          n, cfg.seed, fx, cfg.gen_options(), cfg.workers);
  const std::string csv = cfg.output_root + "/np_probe.csv";
  std::ofstream out(csv);
  out << "lambda,detection_rate\n";
  for (const auto& r : rows) {
    out << r.lambda << "," << r.detection_rate << "\n";
    std::cout << "lambda " << r.lambda << ": detection " << r.detection_rate << "\n";
  }
  out.close();
  ledger.record("probe-np", {"probe-np", ckpt_dir, std::to_string(concept_id)},
                {ckpt_dir, extractor_dir}, {csv}, timer.ms());
  return kExitOk;
}

int cmd_perturb(const Common& common, const std::string& ckpt_dir,
                const std::string& a_values_str, const std::string& extractor_dir, int n) {
  const dgt::RunConfig cfg = common.load();
  dgt::RunLedger ledger(cfg.output_root);
  dgt::WallTimer timer;

  const auto ckpt = dgt::ModelCheckpoint::load(ckpt_dir);
  const auto fx = dgt::load_extractor(extractor_dir);
  // matched-magnitude pairs: value-preserving (1-a, a) vs
  // distribution-preserving (sqrt(1-a^2), a) at equal a
  std::vector<dgt::PerturbationSpec> specs;
  for (const double a : parse_double_list(a_values_str)) {
    specs.push_back(dgt::value_preserving_spec(a, cfg.seed));
    specs.push_back(dgt::distribution_preserving_spec(a, cfg.seed));
  }
  const auto rows = dgt::perturb_experiment(ckpt, specs, n, fx, cfg.gen_options(), cfg.workers);
  const std::string csv = cfg.output_root + "/perturb.csv";
  dgt::write_perturb_csv(rows, csv);
  for (const auto& r : rows)
    std::cout << to_string(r.mode) << " gamma=" << r.gamma << " eta=" << r.eta << ": drift "
              << r.mean_feature_drift << ", flips " << r.label_flip_rate << "\n";
  ledger.record("perturb", {"perturb", ckpt_dir, a_values_str}, {ckpt_dir, extractor_dir},
                {csv}, timer.ms());
  return kExitOk;
}

int cmd_analyze_freq(const Common& common, const std::string& ckpt_dir,
                     const std::string& cond_str, int n_seeds, double cutoff) {
  const dgt::RunConfig cfg = common.load();
  dgt::RunLedger ledger(cfg.output_root);
  dgt::WallTimer timer;

  const auto ckpt = dgt::ModelCheckpoint::load(ckpt_dir);
  const Condition cond = dgt::parse_condition(cond_str);
  ckpt.require_condition(cond);
  const double cut = cutoff > 0 ? cutoff : cfg.band_cutoff;

  const std::string dir = cfg.output_root + "/freq";
  fs::create_directories(dir);
  std::ofstream summary(dir + "/crossings.csv");
  summary << "seed,gen_cross_low,gen_cross_high,diff_cross_low,diff_cross_high\n";
  int gen_ordered = 0, diff_ordered = 0;
  std::vector<dgt::FreqTrajectory> results(static_cast<std::size_t>(n_seeds));
  dgt::parallel_for(results.size(), cfg.workers, [&](std::size_t i) {
    results[i] = dgt::freq_trajectory(ckpt, cond, cfg.seed + i, cut, cfg.gen_options());
  });
  for (int i = 0; i < n_seeds; ++i) {
    const auto& ft = results[static_cast<std::size_t>(i)];
    dgt::write_freq_csv(ft, dir + "/trajectory_" + std::to_string(i) + ".csv");
    summary << (cfg.seed + static_cast<std::uint64_t>(i)) << "," << ft.gen_cross_low << ","
            << ft.gen_cross_high << "," << ft.diff_cross_low << "," << ft.diff_cross_high
            << "\n";
    if (ft.gen_cross_low < ft.gen_cross_high) ++gen_ordered;
    if (ft.diff_cross_low > ft.diff_cross_high) ++diff_ordered;
  }
  summary.close();
  std::cout << "generation: low band locks in first on " << gen_ordered << "/" << n_seeds
            << " runs; diffusion: low band decays last on " << diff_ordered << "/" << n_seeds
            << "\n";
  ledger.record("analyze-freq", {"analyze-freq", ckpt_dir, cond_str}, {ckpt_dir}, {dir},
                timer.ms());
  return kExitOk;
}

int cmd_sweep_grid(const Common& common, const std::string& ckpt_dir,
                   const std::string& grids_str, int concept_id,
                   const std::string& extractor_dir, const std::string& dataset_dir, int n) {
  const dgt::RunConfig cfg = common.load();
  dgt::RunLedger ledger(cfg.output_root);
  dgt::WallTimer timer;

  const auto ckpt = dgt::ModelCheckpoint::load(ckpt_dir);
  const auto fx = dgt::load_extractor(extractor_dir);
  const auto data = dgt::load_labeled_dataset(dataset_dir);
  const auto general =
      general_or_default({}, {concept_id}, static_cast<int>(data.concepts.size()));

  std::ofstream summary(cfg.output_root + "/sweep_grid.csv");
  summary << "grid,detection_rate,fid_concept,retention_fid_post\n";
  std::vector<std::string> outputs = {cfg.output_root + "/sweep_grid.csv"};
  for (const auto& grid : parse_grid_list(grids_str)) {
    const std::string tag = to_string(grid);
    const std::string set_dir = cfg.output_root + "/grid_" + tag + "/degenset";
    const auto manifest = dgt::build_degen_set(ckpt, concept_id, cfg.n_sg, cfg.n_ac, grid,
                                               cfg.seed, set_dir, cfg.gen_options());
    dgt::TuneConfig tune = cfg.tune_config();
    tune.grid = grid;
    tune.loss_csv = cfg.output_root + "/grid_" + tag + "/loss.csv";
    const auto tuned = dgt::degeneration_tune(ckpt, manifest, tune);
    const std::string tuned_dir = cfg.output_root + "/grid_" + tag + "/tuned_ckpt";
    tuned.save(tuned_dir);
    const auto report = dgt::shield_report(ckpt, tuned, {concept_id}, general, data.items, fx,
                                           cfg.seed, shield_options(cfg, n));
    const std::string csv = cfg.output_root + "/grid_" + tag + "/shield_report.csv";
    dgt::write_metrics_csv(report, csv);
    summary << tag << "," << report.concept_rows[0].detection_rate << ","
            << report.concept_rows[0].fid_proxy_concept << ","
            << report.retention_rows[1].fid_proxy_general << "\n";
    std::cout << "grid " << tag << ": detection " << report.concept_rows[0].detection_rate
              << ", concept fid " << report.concept_rows[0].fid_proxy_concept << "\n";
    outputs.push_back(cfg.output_root + "/grid_" + tag);
  }
  summary.close();
  ledger.record("sweep-grid", {"sweep-grid", ckpt_dir, grids_str},
                {ckpt_dir, extractor_dir, dataset_dir}, outputs, timer.ms());
  return kExitOk;
}

int cmd_sweep_ratio(const Common& common, const std::string& ckpt_dir,
                    const std::string& nsg_list_str, int n_ac, int concept_id,
                    const std::string& extractor_dir, const std::string& dataset_dir, int n) {
  const dgt::RunConfig cfg = common.load();
  dgt::RunLedger ledger(cfg.output_root);
  dgt::WallTimer timer;

  const auto ckpt = dgt::ModelCheckpoint::load(ckpt_dir);
  const auto fx = dgt::load_extractor(extractor_dir);
  const auto data = dgt::load_labeled_dataset(dataset_dir);
  const auto general =
      general_or_default({}, {concept_id}, static_cast<int>(data.concepts.size()));
  const int ac = n_ac > 0 ? n_ac : cfg.n_ac;

  std::ofstream summary(cfg.output_root + "/sweep_ratio.csv");
  summary << "n_sg,n_ac,detection_rate,fid_concept,retention_fid_post\n";
  std::vector<std::string> outputs = {cfg.output_root + "/sweep_ratio.csv"};
  for (const int sg : parse_int_list(nsg_list_str)) {
    const std::string tag = "sg" + std::to_string(sg);
    const std::string set_dir = cfg.output_root + "/" + tag + "/degenset";
    const auto manifest = dgt::build_degen_set(ckpt, concept_id, sg, ac, cfg.grid, cfg.seed,
                                               set_dir, cfg.gen_options());
    dgt::TuneConfig tune = cfg.tune_config();
    tune.loss_csv = cfg.output_root + "/" + tag + "/loss.csv";
    const auto tuned = dgt::degeneration_tune(ckpt, manifest, tune);
    tuned.save(cfg.output_root + "/" + tag + "/tuned_ckpt");
    const auto report = dgt::shield_report(ckpt, tuned, {concept_id}, general, data.items, fx,
                                           cfg.seed, shield_options(cfg, n));
    dgt::write_metrics_csv(report, cfg.output_root + "/" + tag + "/shield_report.csv");
    summary << sg << "," << ac << "," << report.concept_rows[0].detection_rate << ","
            << report.concept_rows[0].fid_proxy_concept << ","
            << report.retention_rows[1].fid_proxy_general << "\n";
    std::cout << "n_sg " << sg << ": detection " << report.concept_rows[0].detection_rate
              << "\n";
    outputs.push_back(cfg.output_root + "/" + tag);
  }
  summary.close();
  ledger.record("sweep-ratio", {"sweep-ratio", ckpt_dir, nsg_list_str},
                {ckpt_dir, extractor_dir, dataset_dir}, outputs, timer.ms());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"degentune: concept shielding for a small conditional diffusion model"};
  app.require_subcommand(1);

  Common c_train, c_gen, c_scramble, c_degen, c_tune, c_cont, c_fuse, c_sfuse, c_eval,
      c_np, c_perturb, c_freq, c_sgrid, c_sratio;

  // train-base
  auto* train = app.add_subcommand("train-base",
                                   "synthesize the base corpus, train the evaluation "
                                   "classifier and the base diffusion model");
  add_common(train, c_train);
  int detection_n = 64;
  bool skip_check = false;
  train->add_option("--detection-n", detection_n, "samples per concept for the contract check");
  train->add_flag("--skip-detection-check", skip_check, "skip the 0.85 detection contract check");

  // gen
  auto* gen = app.add_subcommand("gen", "sample images from a checkpoint");
  add_common(gen, c_gen);
  std::string gen_ckpt, gen_cond = "none";
  int gen_n = 16, gen_steps = 0;
  gen->add_option("--ckpt", gen_ckpt, "checkpoint directory")->required();
  gen->add_option("--cond", gen_cond, "condition: none or a concept id");
  gen->add_option("--n", gen_n, "number of images");
  gen->add_option("--steps", gen_steps, "sampler steps override");

  // scramble
  auto* scr = app.add_subcommand("scramble", "apply seeded tile permutations to images");
  add_common(scr, c_scramble);
  std::string scr_in, scr_grid;
  scr->add_option("--in", scr_in, "input .png file or directory")->required();
  scr->add_option("--grid", scr_grid, "grid RxC (default from config)");

  // build-degenset
  auto* bds = app.add_subcommand("build-degenset",
                                 "build the scrambled + anchor tuning corpus for a concept");
  add_common(bds, c_degen);
  std::string bds_ckpt, bds_grid, bds_mode = "degen";
  int bds_concept = 0, bds_nsg = 0, bds_nac = 0;
  bds->add_option("--ckpt", bds_ckpt, "source checkpoint")->required();
  bds->add_option("--concept", bds_concept, "concept id to degenerate")->required();
  bds->add_option("--n-sg", bds_nsg, "scrambled sample count (default from config)");
  bds->add_option("--n-ac", bds_nac, "anchor sample count (default from config)");
  bds->add_option("--grid", bds_grid, "grid RxC (default from config)");
  bds->add_option("--mode", bds_mode, "degen|no_scramble|black|white|gray");

  // tune
  auto* tune = app.add_subcommand("tune", "degeneration-tune a checkpoint on a manifest");
  add_common(tune, c_tune);
  std::string tune_ckpt, tune_manifest, tune_subset, tune_grid;
  double tune_lr = -1;
  int tune_epochs = -1, tune_batch = 0;
  tune->add_option("--ckpt", tune_ckpt, "input checkpoint")->required();
  tune->add_option("--manifest", tune_manifest, "degeneration corpus directory")->required();
  tune->add_option("--lr", tune_lr, "learning rate (default lr_base/1000)");
  tune->add_option("--epochs", tune_epochs, "epochs (default 60)");
  tune->add_option("--batch", tune_batch, "batch size (default 16)");
  tune->add_option("--subset", tune_subset, "all|xattn|resblock");
  tune->add_option("--grid", tune_grid, "grid RxC recorded with the run");

  // continual
  auto* cont = app.add_subcommand("continual",
                                  "sequential shielding with per-stage regenerated anchors");
  add_common(cont, c_cont);
  std::string cont_ckpt, cont_concepts;
  int cont_nsg = 0, cont_nac = 0;
  cont->add_option("--ckpt", cont_ckpt, "starting checkpoint")->required();
  cont->add_option("--concepts", cont_concepts, "comma-separated concept ids in stage order")
      ->required();
  cont->add_option("--n-sg", cont_nsg, "scrambled count per stage");
  cont->add_option("--n-ac", cont_nac, "anchor count per stage");

  // fuse
  auto* fuse = app.add_subcommand("fuse", "linear parameter interpolation of two checkpoints");
  add_common(fuse, c_fuse);
  std::string fuse_a, fuse_b;
  double fuse_lambda = 0.5;
  fuse->add_option("--a", fuse_a, "checkpoint A (weight lambda)")->required();
  fuse->add_option("--b", fuse_b, "checkpoint B (weight 1-lambda)")->required();
  fuse->add_option("--lambda", fuse_lambda, "mixing weight in [0,1]")->required();

  // sweep-fusion
  auto* sfuse = app.add_subcommand("sweep-fusion", "detection-vs-lambda fusion study");
  add_common(sfuse, c_sfuse);
  std::string sf_a, sf_b, sf_lambdas = "0,0.02,0.05,0.1,0.5,1", sf_general, sf_fx, sf_data;
  int sf_concept = 0, sf_n = 0;
  sfuse->add_option("--a", sf_a, "original checkpoint")->required();
  sfuse->add_option("--b", sf_b, "tuned checkpoint")->required();
  sfuse->add_option("--lambdas", sf_lambdas, "comma-separated lambda values");
  sfuse->add_option("--concept", sf_concept, "shielded concept to probe")->required();
  sfuse->add_option("--general", sf_general, "general concept ids (default: the rest)");
  sfuse->add_option("--extractor", sf_fx, "classifier checkpoint")->required();
  sfuse->add_option("--dataset", sf_data, "base dataset directory")->required();
  sfuse->add_option("--n", sf_n, "samples per cell (default from config)");

  // eval-shield
  auto* eval = app.add_subcommand("eval-shield", "shield/retention metric report");
  add_common(eval, c_eval);
  std::string ev_pre, ev_post, ev_shielded, ev_general, ev_fx, ev_data;
  int ev_n = 0;
  eval->add_option("--pre", ev_pre, "pre-tuning checkpoint")->required();
  eval->add_option("--post", ev_post, "post-tuning checkpoint")->required();
  eval->add_option("--shielded", ev_shielded, "comma-separated shielded concept ids")->required();
  eval->add_option("--general", ev_general, "general concept ids (default: the rest)");
  eval->add_option("--extractor", ev_fx, "classifier checkpoint")->required();
  eval->add_option("--dataset", ev_data, "base dataset directory")->required();
  eval->add_option("--n", ev_n, "samples per cell (default from config)");

  // probe-np
  auto* np = app.add_subcommand("probe-np",
                                "negative-prompt failure probe (positive == negative)");
  add_common(np, c_np);
  std::string np_ckpt, np_lambdas = "0,3,7.5", np_fx;
  int np_concept = 0, np_n = 64;
  np->add_option("--ckpt", np_ckpt, "checkpoint")->required();
  np->add_option("--concept", np_concept, "probed concept id")->required();
  np->add_option("--lambdas", np_lambdas, "guidance strengths");
  np->add_option("--extractor", np_fx, "classifier checkpoint")->required();
  np->add_option("--n", np_n, "samples per lambda");

  // perturb
  auto* pert = app.add_subcommand("perturb", "initial-noise perturbation experiment");
  add_common(pert, c_perturb);
  std::string pe_ckpt, pe_a = "0.02,0.03", pe_fx;
  int pe_n = 20;
  pert->add_option("--ckpt", pe_ckpt, "checkpoint")->required();
  pert->add_option("--a-values", pe_a, "perturbation magnitudes");
  pert->add_option("--extractor", pe_fx, "classifier checkpoint")->required();
  pert->add_option("--n", pe_n, "seeds per spec");

  // analyze-freq
  auto* freq = app.add_subcommand("analyze-freq", "frequency-band trajectory analysis");
  add_common(freq, c_freq);
  std::string fr_ckpt, fr_cond = "none";
  int fr_seeds = 25;
  double fr_cutoff = 0;
  freq->add_option("--ckpt", fr_ckpt, "checkpoint")->required();
  freq->add_option("--cond", fr_cond, "condition: none or a concept id");
  freq->add_option("--seeds", fr_seeds, "number of recorded runs");
  freq->add_option("--cutoff", fr_cutoff, "radial cutoff in (0,1); default from config");

  // sweep-grid
  auto* sgrid = app.add_subcommand("sweep-grid", "grid-size ablation (build + tune + eval)");
  add_common(sgrid, c_sgrid);
  std::string sg_ckpt, sg_grids = "2x2,4x4,8x8", sg_fx, sg_data;
  int sg_concept = 0, sg_n = 0;
  sgrid->add_option("--ckpt", sg_ckpt, "base checkpoint")->required();
  sgrid->add_option("--grids", sg_grids, "comma-separated RxC grids");
  sgrid->add_option("--concept", sg_concept, "concept to shield")->required();
  sgrid->add_option("--extractor", sg_fx, "classifier checkpoint")->required();
  sgrid->add_option("--dataset", sg_data, "base dataset directory")->required();
  sgrid->add_option("--n", sg_n, "samples per cell (default from config)");

  // sweep-ratio
  auto* sratio = app.add_subcommand("sweep-ratio", "x_sg : x_ac proportion ablation");
  add_common(sratio, c_sratio);
  std::string sr_ckpt, sr_nsg = "75,150,300", sr_fx, sr_data;
  int sr_nac = 0, sr_concept = 0, sr_n = 0;
  sratio->add_option("--ckpt", sr_ckpt, "base checkpoint")->required();
  sratio->add_option("--nsg-list", sr_nsg, "comma-separated x_sg counts");
  sratio->add_option("--n-ac", sr_nac, "fixed anchor count (default from config)");
  sratio->add_option("--concept", sr_concept, "concept to shield")->required();
  sratio->add_option("--extractor", sr_fx, "classifier checkpoint")->required();
  sratio->add_option("--dataset", sr_data, "base dataset directory")->required();
  sratio->add_option("--n", sr_n, "samples per cell (default from config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    if (*train) return cmd_train_base(c_train, detection_n, skip_check);
    if (*gen) return cmd_gen(c_gen, gen_ckpt, gen_cond, gen_n, gen_steps);
    if (*scr) return cmd_scramble(c_scramble, scr_in, scr_grid);
    if (*bds) return cmd_build_degenset(c_degen, bds_ckpt, bds_concept, bds_nsg, bds_nac,
                                        bds_grid, bds_mode);
    if (*tune) return cmd_tune(c_tune, tune_ckpt, tune_manifest, tune_lr, tune_epochs,
                               tune_batch, tune_subset, tune_grid);
    if (*cont) return cmd_continual(c_cont, cont_ckpt, cont_concepts, cont_nsg, cont_nac);
    if (*fuse) return cmd_fuse(c_fuse, fuse_a, fuse_b, fuse_lambda);
    if (*sfuse) return cmd_sweep_fusion(c_sfuse, sf_a, sf_b, sf_lambdas, sf_concept,
                                        sf_general, sf_fx, sf_data, sf_n);
    if (*eval) return cmd_eval_shield(c_eval, ev_pre, ev_post, ev_shielded, ev_general, ev_fx,
                                      ev_data, ev_n);
    if (*np) return cmd_probe_np(c_np, np_ckpt, np_concept, np_lambdas, np_fx, np_n);
    if (*pert) return cmd_perturb(c_perturb, pe_ckpt, pe_a, pe_fx, pe_n);
    if (*freq) return cmd_analyze_freq(c_freq, fr_ckpt, fr_cond, fr_seeds, fr_cutoff);
    if (*sgrid) return cmd_sweep_grid(c_sgrid, sg_ckpt, sg_grids, sg_concept, sg_fx, sg_data,
                                      sg_n);
    if (*sratio) return cmd_sweep_ratio(c_sratio, sr_ckpt, sr_nsg, sr_nac, sr_concept, sr_fx,
                                        sr_data, sr_n);
  } catch (const dgt::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitValidation;
}
