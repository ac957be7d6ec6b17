#pragma once

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "degentune/checkpoint.hpp"
#include "degentune/diffusion.hpp"
#include "degentune/errors.hpp"
#include "degentune/freq.hpp"
#include "degentune/image_io.hpp"
#include "degentune/rng.hpp"
#include "degentune/scramble.hpp"

namespace dgt {

// ---------------------------------------------------------------------------
// Synthetic base data
// ---------------------------------------------------------------------------

/// A concept is a distinct low-frequency composition: a large shape layout
/// with jittered position/scale. Colors are drawn per image from a pool
/// shared by all concepts, so class identity lives in layout, not color
/// statistics. High-frequency texture (grain + fine checker) is shared too.
struct SyntheticConceptSpec {
  int concept_id = 0;
  std::string label;
  int shape_kind = 0;  // 0 disk, 1 hsplit, 2 vsplit, 3 diagonal, 4 ring, 5 cross
  double position_jitter = 3.0;
  double scale_jitter = 0.15;
};

struct TextureParams {
  double noise_std = 0.25;
  double checker_amp = 0.45;
};

inline std::vector<SyntheticConceptSpec> default_concept_specs(int k = 6) {
  static const char* kNames[6] = {"disk", "hsplit", "vsplit", "diagonal", "ring", "cross"};
  if (k < 2 || k > 6) throw ValidationError("default_concept_specs: k in [2,6]");
  std::vector<SyntheticConceptSpec> specs;
  for (int i = 0; i < k; ++i) {
    SyntheticConceptSpec s;
    s.concept_id = i;
    s.label = kNames[i];
    s.shape_kind = i;
    specs.push_back(s);
  }
  return specs;
}

namespace detail {

inline double smoothstep(double edge, double width, double x) {
  const double t = std::clamp((x - edge) / width + 0.5, 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

/// Zero-mean chroma directions shared by every concept and both shape roles.
/// The foreground/background split is a fixed brightness offset, so concept
/// mean images differ in layout while per-pixel color marginals stay
/// concept-independent (shapes all cover ~half the frame).
inline const std::vector<std::array<double, 3>>& chroma_pool() {
  static const std::vector<std::array<double, 3>> kPool = {
      {+0.20, -0.10, -0.10}, {-0.10, +0.20, -0.10}, {-0.10, -0.10, +0.20},
      {+0.14, +0.14, -0.16}, {+0.14, -0.16, +0.14}, {-0.16, +0.14, +0.14},
      {0.0, 0.0, 0.0},       {+0.10, -0.16, +0.10}};
  return kPool;
}

constexpr double kForegroundLift = 0.33;  // fg brightness - bg brightness = 2x this

}  // namespace detail

/// Renders one instance of a concept at the given image size. Deterministic
/// per draw_seed. Shape sizes are tuned to ~50% frame coverage so tile
/// scrambles leave no concept signal in global brightness.
inline Image render_concept(const SyntheticConceptSpec& spec, const TextureParams& tex,
                            int size, std::uint64_t draw_seed) {
  SplitMix64 u(draw_seed);
  GaussRng gauss(mix_seed(draw_seed, seed_tag::kSynthesis));
  const auto& pool = detail::chroma_pool();
  const auto& fg_chroma = pool[static_cast<std::size_t>(u.bounded(pool.size()))];
  const auto& bg_chroma = pool[static_cast<std::size_t>(u.bounded(pool.size()))];

  const double cx = size / 2.0 + (u.uniform() * 2.0 - 1.0) * spec.position_jitter;
  const double cy = size / 2.0 + (u.uniform() * 2.0 - 1.0) * spec.position_jitter;
  const double scale = 1.0 + (u.uniform() * 2.0 - 1.0) * spec.scale_jitter;
  const int checker_phase = static_cast<int>(u.bounded(2));
  const double edge_w = 2.0;

  Image img = make_image(3, size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double dx = x - cx, dy = y - cy;
      double m = 0.0;  // foreground coverage in [0,1]
      switch (spec.shape_kind) {
        case 0: {  // disk, r = 0.4 s covers ~half the frame
          const double r = std::sqrt(dx * dx + dy * dy);
          m = 1.0 - detail::smoothstep(0.40 * size * scale, edge_w, r);
          break;
        }
        case 1:  // horizontal split
          m = 1.0 - detail::smoothstep(0.0, edge_w, dy);
          break;
        case 2:  // vertical split
          m = 1.0 - detail::smoothstep(0.0, edge_w, dx);
          break;
        case 3:  // diagonal split
          m = 1.0 - detail::smoothstep(0.0, edge_w * 1.4142, dx + dy);
          break;
        case 4: {  // ring, outer 0.46 s / inner 0.23 s
          const double r = std::sqrt(dx * dx + dy * dy);
          const double outer = 1.0 - detail::smoothstep(0.46 * size * scale, edge_w, r);
          const double inner = 1.0 - detail::smoothstep(0.23 * size * scale, edge_w, r);
          m = outer - inner;
          break;
        }
        case 5: {  // cross, band half-width 0.1464 s
          const double band = 0.1464 * size * scale;
          const double mh = 1.0 - detail::smoothstep(band, edge_w, std::abs(dy));
          const double mv = 1.0 - detail::smoothstep(band, edge_w, std::abs(dx));
          m = std::max(mh, mv);
          break;
        }
        default:
          throw ValidationError("render_concept: bad shape kind");
      }
      const int checker = ((x / 2 + y / 2 + checker_phase) & 1) ? 1 : -1;
      for (int c = 0; c < 3; ++c) {
        const double fg = fg_chroma[static_cast<std::size_t>(c)] + detail::kForegroundLift;
        const double bg = bg_chroma[static_cast<std::size_t>(c)] - detail::kForegroundLift;
        double v = bg + m * (fg - bg);
        v += tex.checker_amp * checker;
        v += tex.noise_std * gauss.next();
        img.at3(c, y, x) = std::clamp(v, -1.0, 1.0);
      }
    }
  }
  return img;
}

struct LabeledDataset {
  std::vector<std::pair<Image, Condition>> items;
  std::vector<ConceptEntry> concepts;
};

inline double sum_squares_diff(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    s += d * d;
  }
  return s;
}

/// Deterministic synthetic training corpus: n_per_concept instances of each
/// spec. Verifies at build time that concepts are separated in low-band
/// space (mean low-band images pairwise apart).
inline LabeledDataset synth_base_dataset(const std::vector<SyntheticConceptSpec>& specs,
                                         int n_per_concept, std::uint64_t seed,
                                         int image_size = 32,
                                         const TextureParams& tex = {}) {
  if (specs.size() < 2) throw ValidationError("synth_base_dataset: need >= 2 concepts");
  if (n_per_concept < 1) throw ValidationError("synth_base_dataset: n must be >= 1");

  LabeledDataset out;
  for (const auto& s : specs) out.concepts.push_back({s.concept_id, s.label});

  // Colors are shared across concepts, so the discriminative statistic is
  // the spatial pattern of low-band energy, not the mean image: per concept,
  // average the squared low-band deviation from each image's spatial mean.
  std::vector<Tensor> energy_maps;
  for (const auto& s : specs) {
    Tensor emap({image_size, image_size});
    for (int i = 0; i < n_per_concept; ++i) {
      const std::uint64_t ds =
          mix_seed(seed, seed_tag::kSynthesis,
                   static_cast<std::uint64_t>(s.concept_id) * 1000003u + static_cast<std::uint64_t>(i));
      Image img = render_concept(s, tex, image_size, ds);
      out.items.emplace_back(std::move(img), Condition::for_concept(s.concept_id));
    }
    const int probe = std::min(n_per_concept, 16);
    for (int i = 0; i < probe; ++i) {
      const auto& img = out.items[out.items.size() - static_cast<std::size_t>(n_per_concept) +
                                  static_cast<std::size_t>(i)].first;
      const BandSplit bs = band_split(img, 0.25);
      for (int c = 0; c < 3; ++c) {
        double mu = 0.0;
        for (int y = 0; y < image_size; ++y)
          for (int x = 0; x < image_size; ++x) mu += bs.low.at3(c, y, x);
        mu /= static_cast<double>(image_size) * image_size;
        for (int y = 0; y < image_size; ++y)
          for (int x = 0; x < image_size; ++x) {
            const double d = bs.low.at3(c, y, x) - mu;
            emap.at2(y, x) += d * d / (3.0 * probe);
          }
      }
    }
    energy_maps.push_back(std::move(emap));
  }

  for (std::size_t a = 0; a < energy_maps.size(); ++a)
    for (std::size_t b = a + 1; b < energy_maps.size(); ++b) {
      const double d2 = sum_squares_diff(energy_maps[a], energy_maps[b]) /
                        static_cast<double>(energy_maps[a].numel());
      if (d2 < 1e-4)
        throw ValidationError("synth_base_dataset: concepts " + std::to_string(a) + " and " +
                              std::to_string(b) + " not separated in low band");
    }
  return out;
}

/// Labeled dataset on disk: data_manifest.json plus one PNG per item. Used
/// to persist the synthetic base corpus that retention metrics reference.
inline void save_labeled_dataset(const LabeledDataset& data, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  json j;
  j["schema_version"] = 1;
  json reg = json::array();
  for (const auto& c : data.concepts) reg.push_back({{"id", c.id}, {"label", c.label}});
  j["concepts"] = reg;
  json items = json::array();
  for (std::size_t i = 0; i < data.items.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "img_%06zu.png", i);
    write_png((fs::path(dir) / name).string(), data.items[i].first);
    items.push_back({{"file", name},
                     {"condition", data.items[i].second.is_none()
                                       ? json("none")
                                       : json(data.items[i].second.concept_id())}});
  }
  j["items"] = items;
  detail::write_text_file(fs::path(dir) / "data_manifest.json", j.dump(2) + "\n");
}

inline LabeledDataset load_labeled_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const json j = json::parse(detail::read_text_file(fs::path(dir) / "data_manifest.json"));
  LabeledDataset data;
  for (const auto& c : j.at("concepts"))
    data.concepts.push_back({c.at("id").get<int>(), c.at("label").get<std::string>()});
  for (const auto& it : j.at("items")) {
    Condition cond = it.at("condition").is_string()
                         ? Condition::none()
                         : Condition::for_concept(it.at("condition").get<int>());
    data.items.emplace_back(read_png((fs::path(dir) / it.at("file").get<std::string>()).string()),
                            cond);
  }
  return data;
}

// ---------------------------------------------------------------------------
// Model-generated corpora
// ---------------------------------------------------------------------------

struct GenOptions {
  SamplerKind sampler = SamplerKind::kDdim;
  int steps = 50;
  double guidance_lambda = 3.0;  // applied to concept generation only
};

/// n samples under the concept condition, sampler seeds seed..seed+n-1.
inline std::vector<Image> gen_concept_images(const ModelCheckpoint& ckpt, int concept_id,
                                             int n, std::uint64_t seed,
                                             const GenOptions& gen = {}) {
  if (n < 0) throw ValidationError("gen_concept_images: n must be >= 0");
  if (!ckpt.has_concept(concept_id)) throw UnknownConceptError(concept_id);
  std::vector<Image> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    SampleOptions opt;
    opt.sampler = gen.sampler;
    opt.steps = gen.steps;
    opt.seed = seed + static_cast<std::uint64_t>(i);
    out.push_back(sample(ckpt, cfg_guidance(Condition::for_concept(concept_id),
                                            gen.guidance_lambda),
                         opt)
                      .image);
  }
  return out;
}

/// n None-condition samples (anchors), sampler seeds seed..seed+n-1.
inline std::vector<Image> gen_anchor_images(const ModelCheckpoint& ckpt, int n,
                                            std::uint64_t seed, const GenOptions& gen = {}) {
  if (n < 0) throw ValidationError("gen_anchor_images: n must be >= 0");
  std::vector<Image> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    SampleOptions opt;
    opt.sampler = gen.sampler;
    opt.steps = gen.steps;
    opt.seed = seed + static_cast<std::uint64_t>(i);
    out.push_back(sample(ckpt, plain_guidance(Condition::none()), opt).image);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Degeneration manifests
// ---------------------------------------------------------------------------

enum class BaselineMode { kNone, kNoScramble, kPureBlack, kPureWhite, kPureGray };

inline std::string to_string(BaselineMode m) {
  switch (m) {
    case BaselineMode::kNone: return "degen";
    case BaselineMode::kNoScramble: return "no_scramble";
    case BaselineMode::kPureBlack: return "pure_color:black";
    case BaselineMode::kPureWhite: return "pure_color:white";
    case BaselineMode::kPureGray: return "pure_color:gray";
  }
  return "degen";
}

struct DegenSample {
  std::string file;  // path relative to the manifest directory
  Condition condition;
  bool is_sg = false;  // false -> anchor
  std::uint64_t gen_seed = 0;
  std::optional<GridSpec> grid;
  std::uint64_t perm_seed = 0;
  std::vector<int> permutation;  // empty for anchors and baseline substitutes
};

/// Provenance-tracked degeneration corpus: n_sg scrambled concept images
/// paired with their concept condition plus n_ac unscrambled None-condition
/// anchors, all on disk with a manifest for exact replay.
struct DegenManifest {
  int schema_version = 1;
  std::string dir;  // not serialized; set on save/load
  std::vector<DegenSample> samples;
  int n_sg = 0;
  int n_ac = 0;
  std::string source_fingerprint;
  std::uint64_t creation_seed = 0;
  BaselineMode mode = BaselineMode::kNone;
  bool provenance_mismatch = false;
  std::vector<std::string> stacked_from;  // fingerprints of stacked manifests
};

namespace detail {

inline json sample_to_json(const DegenSample& s) {
  json j;
  j["file"] = s.file;
  j["condition"] = s.condition.is_none() ? json("none") : json(s.condition.concept_id());
  j["kind"] = s.is_sg ? "sg" : "anchor";
  j["seed"] = s.gen_seed;
  if (s.grid) j["grid"] = to_string(*s.grid);
  if (!s.permutation.empty()) {
    j["perm_seed"] = s.perm_seed;
    j["permutation"] = s.permutation;
  }
  return j;
}

inline DegenSample sample_from_json(const json& j) {
  DegenSample s;
  s.file = j.at("file").get<std::string>();
  if (j.at("condition").is_string())
    s.condition = Condition::none();
  else
    s.condition = Condition::for_concept(j.at("condition").get<int>());
  s.is_sg = j.at("kind").get<std::string>() == "sg";
  s.gen_seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("grid")) s.grid = parse_grid(j.at("grid").get<std::string>());
  if (j.contains("permutation")) {
    s.perm_seed = j.at("perm_seed").get<std::uint64_t>();
    s.permutation = j.at("permutation").get<std::vector<int>>();
  }
  return s;
}

inline void check_manifest_invariants(const DegenManifest& m) {
  int sg = 0, ac = 0;
  for (const auto& s : m.samples) {
    if (s.is_sg) {
      ++sg;
      if (!s.grid || s.condition.is_none())
        throw ValidationError("manifest: sg sample must carry a grid and a concept condition");
    } else {
      ++ac;
      if (!s.condition.is_none())
        throw ValidationError("manifest: anchor sample must carry the None condition");
    }
  }
  if (sg != m.n_sg || ac != m.n_ac)
    throw ValidationError("manifest: counts do not match sample list");
}

}  // namespace detail

inline void save_manifest(const DegenManifest& m) {
  detail::check_manifest_invariants(m);
  json j;
  j["schema_version"] = m.schema_version;
  j["mode"] = to_string(m.mode);
  j["counts"] = {{"n_sg", m.n_sg}, {"n_ac", m.n_ac}};
  j["source_fingerprint"] = m.source_fingerprint;
  j["creation_seed"] = m.creation_seed;
  if (m.provenance_mismatch) j["provenance_mismatch"] = true;
  if (!m.stacked_from.empty()) j["stacked_from"] = m.stacked_from;
  json arr = json::array();
  for (const auto& s : m.samples) arr.push_back(detail::sample_to_json(s));
  j["samples"] = arr;
  detail::write_text_file(std::filesystem::path(m.dir) / "manifest.json", j.dump(2) + "\n");
}

inline DegenManifest load_manifest(const std::string& dir) {
  const json j = json::parse(detail::read_text_file(std::filesystem::path(dir) / "manifest.json"));
  DegenManifest m;
  m.dir = dir;
  m.schema_version = j.at("schema_version").get<int>();
  m.n_sg = j.at("counts").at("n_sg").get<int>();
  m.n_ac = j.at("counts").at("n_ac").get<int>();
  m.source_fingerprint = j.at("source_fingerprint").get<std::string>();
  m.creation_seed = j.at("creation_seed").get<std::uint64_t>();
  m.provenance_mismatch = j.value("provenance_mismatch", false);
  if (j.contains("stacked_from"))
    m.stacked_from = j.at("stacked_from").get<std::vector<std::string>>();
  const std::string mode = j.value("mode", "degen");
  if (mode == "degen") m.mode = BaselineMode::kNone;
  else if (mode == "no_scramble") m.mode = BaselineMode::kNoScramble;
  else if (mode == "pure_color:black") m.mode = BaselineMode::kPureBlack;
  else if (mode == "pure_color:white") m.mode = BaselineMode::kPureWhite;
  else if (mode == "pure_color:gray") m.mode = BaselineMode::kPureGray;
  for (const auto& sj : j.at("samples")) m.samples.push_back(detail::sample_from_json(sj));
  detail::check_manifest_invariants(m);
  for (const auto& s : m.samples) {
    if (!std::filesystem::exists(std::filesystem::path(dir) / s.file))
      throw RuntimeError("manifest: missing file " + s.file);
  }
  return m;
}

/// Reads every manifest image back as (image, condition) training pairs.
inline std::vector<std::pair<Image, Condition>> load_degen_items(const DegenManifest& m) {
  std::vector<std::pair<Image, Condition>> items;
  items.reserve(m.samples.size());
  for (const auto& s : m.samples)
    items.emplace_back(read_png((std::filesystem::path(m.dir) / s.file).string()), s.condition);
  return items;
}

namespace detail {

inline std::string index_name(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%05d.png", prefix, i);
  return buf;
}

inline bool quantized_equal(const Image& a, const Image& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.data.size(); ++i)
    if (quantize_u8(a.data[i]) != quantize_u8(b.data[i])) return false;
  return true;
}

}  // namespace detail

/// Builds the tuning corpus for one concept: scrambled concept images (one
/// fixed permutation per image) plus unscrambled anchors, written under
/// out_dir with sidecar replay data.
inline DegenManifest build_degen_set(const ModelCheckpoint& ckpt, int concept_id,
                                     int n_sg, int n_ac, const GridSpec& grid,
                                     std::uint64_t seed, const std::string& out_dir,
                                     const GenOptions& gen = {}) {
  if (n_sg < 1 || n_ac < 1)
    throw ValidationError("build_degen_set: n_sg and n_ac must be >= 1");
  if (!ckpt.has_concept(concept_id)) throw UnknownConceptError(concept_id);
  const int size = ckpt.unet().config().image_size;
  if (size % grid.cells_y != 0 || size % grid.cells_x != 0)
    throw InvalidGridError("build_degen_set: image size " + std::to_string(size) +
                           " not divisible by grid " + to_string(grid));

  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  DegenManifest m;
  m.dir = out_dir;
  m.source_fingerprint = ckpt.fingerprint();
  m.creation_seed = seed;
  m.n_sg = n_sg;
  m.n_ac = n_ac;

  const std::uint64_t sg_seed = mix_seed(seed, seed_tag::kSynthesis, 1);
  const std::uint64_t ac_seed = mix_seed(seed, seed_tag::kSynthesis, 2);
  const int ncells = grid.cells_y * grid.cells_x;

  const std::vector<Image> concept_imgs =
      gen_concept_images(ckpt, concept_id, n_sg, sg_seed, gen);
  for (int i = 0; i < n_sg; ++i) {
    DegenSample s;
    s.file = detail::index_name("sg", i);
    s.condition = Condition::for_concept(concept_id);
    s.is_sg = true;
    s.gen_seed = sg_seed + static_cast<std::uint64_t>(i);
    s.grid = grid;
    // redraw if the scramble happens to land on the source pixels
    Image scrambled;
    TilePermutation perm;
    std::uint64_t pseed = 0;
    for (std::uint64_t attempt = 0;; ++attempt) {
      pseed = mix_seed(seed, seed_tag::kPermutation,
                       static_cast<std::uint64_t>(i) * 64 + attempt);
      perm = make_permutation(pseed, ncells);
      scrambled = scramble(concept_imgs[static_cast<std::size_t>(i)], grid, perm);
      if (!detail::quantized_equal(scrambled, concept_imgs[static_cast<std::size_t>(i)]) ||
          attempt >= 63)
        break;
    }
    s.perm_seed = pseed;
    s.permutation = perm.mapping;
    write_png((fs::path(out_dir) / s.file).string(), scrambled);
    json side;
    side["seed"] = pseed;
    side["grid"] = to_string(grid);
    side["permutation"] = perm.mapping;
    detail::write_text_file(fs::path(out_dir) / (s.file + ".json"), side.dump() + "\n");
    m.samples.push_back(std::move(s));
  }

  const std::vector<Image> anchors = gen_anchor_images(ckpt, n_ac, ac_seed, gen);
  for (int i = 0; i < n_ac; ++i) {
    DegenSample s;
    s.file = detail::index_name("ac", i);
    s.condition = Condition::none();
    s.is_sg = false;
    s.gen_seed = ac_seed + static_cast<std::uint64_t>(i);
    write_png((fs::path(out_dir) / s.file).string(), anchors[static_cast<std::size_t>(i)]);
    m.samples.push_back(std::move(s));
  }

  save_manifest(m);
  return m;
}

/// Stacks several manifests into one corpus (the joint-shielding setup).
/// Files are copied so the result is self-contained; mismatched source
/// checkpoints are flagged, not fatal.
inline DegenManifest build_joint_set(const std::vector<DegenManifest>& manifests,
                                     const std::string& out_dir) {
  if (manifests.empty()) throw ValidationError("build_joint_set: need >= 1 manifest");
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  DegenManifest joint;
  joint.dir = out_dir;
  joint.source_fingerprint = manifests.front().source_fingerprint;
  joint.creation_seed = manifests.front().creation_seed;
  for (const auto& m : manifests) {
    joint.stacked_from.push_back(m.source_fingerprint);
    if (m.source_fingerprint != joint.source_fingerprint) {
      joint.provenance_mismatch = true;
      std::cerr << "warning: stacking manifests from different source checkpoints\n";
    }
  }

  int part = 0;
  for (const auto& m : manifests) {
    const std::string prefix = "p" + std::to_string(part++) + "_";
    for (const auto& s : m.samples) {
      DegenSample copy = s;
      copy.file = prefix + s.file;
      fs::copy_file(fs::path(m.dir) / s.file, fs::path(out_dir) / copy.file,
                    fs::copy_options::overwrite_existing);
      if (fs::exists(fs::path(m.dir) / (s.file + ".json")))
        fs::copy_file(fs::path(m.dir) / (s.file + ".json"),
                      fs::path(out_dir) / (copy.file + ".json"),
                      fs::copy_options::overwrite_existing);
      joint.samples.push_back(std::move(copy));
      if (s.is_sg) ++joint.n_sg;
      else ++joint.n_ac;
    }
  }
  save_manifest(joint);
  return joint;
}

/// Control corpora: the scrambled slots are replaced by raw concept images
/// (no_scramble) or constant pure-color images. The grid is recorded for
/// schema uniformity but no permutation is applied.
inline DegenManifest build_baseline_set(const ModelCheckpoint& ckpt, int concept_id,
                                        BaselineMode mode, int n_sg, int n_ac,
                                        std::uint64_t seed, const std::string& out_dir,
                                        const GridSpec& grid = {4, 4},
                                        const GenOptions& gen = {}) {
  if (mode == BaselineMode::kNone)
    throw ValidationError("build_baseline_set: pick a baseline mode");
  if (n_sg < 1 || n_ac < 1)
    throw ValidationError("build_baseline_set: n_sg and n_ac must be >= 1");
  if (!ckpt.has_concept(concept_id)) throw UnknownConceptError(concept_id);

  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  DegenManifest m;
  m.dir = out_dir;
  m.mode = mode;
  m.source_fingerprint = ckpt.fingerprint();
  m.creation_seed = seed;
  m.n_sg = n_sg;
  m.n_ac = n_ac;

  const std::uint64_t sg_seed = mix_seed(seed, seed_tag::kSynthesis, 1);
  const std::uint64_t ac_seed = mix_seed(seed, seed_tag::kSynthesis, 2);
  const int size = ckpt.unet().config().image_size;

  double pure = 0.0;
  if (mode == BaselineMode::kPureBlack) pure = -1.0;
  if (mode == BaselineMode::kPureWhite) pure = 1.0;

  std::vector<Image> substitutes;
  if (mode == BaselineMode::kNoScramble) {
    substitutes = gen_concept_images(ckpt, concept_id, n_sg, sg_seed, gen);
  } else {
    substitutes.assign(static_cast<std::size_t>(n_sg), make_image(3, size, size, pure));
  }

  for (int i = 0; i < n_sg; ++i) {
    DegenSample s;
    s.file = detail::index_name("sg", i);
    s.condition = Condition::for_concept(concept_id);
    s.is_sg = true;
    s.gen_seed = sg_seed + static_cast<std::uint64_t>(i);
    s.grid = grid;
    write_png((fs::path(out_dir) / s.file).string(), substitutes[static_cast<std::size_t>(i)]);
    m.samples.push_back(std::move(s));
  }

  const std::vector<Image> anchors = gen_anchor_images(ckpt, n_ac, ac_seed, gen);
  for (int i = 0; i < n_ac; ++i) {
    DegenSample s;
    s.file = detail::index_name("ac", i);
    s.condition = Condition::none();
    s.is_sg = false;
    s.gen_seed = ac_seed + static_cast<std::uint64_t>(i);
    write_png((fs::path(out_dir) / s.file).string(), anchors[static_cast<std::size_t>(i)]);
    m.samples.push_back(std::move(s));
  }

  save_manifest(m);
  return m;
}

}  // namespace dgt
