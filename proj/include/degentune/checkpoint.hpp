#pragma once

#include <json.hpp>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "degentune/classifier.hpp"
#include "degentune/condition.hpp"
#include "degentune/errors.hpp"
#include "degentune/schedule.hpp"
#include "degentune/sha256.hpp"
#include "degentune/tensor.hpp"
#include "degentune/unet.hpp"

namespace dgt {

using json = nlohmann::json;

struct ConceptEntry {
  int id = 0;
  std::string label;
};

struct TrainMeta {
  std::vector<std::uint64_t> seeds;
  int epochs = 0;
  std::vector<double> loss_history;
  std::string parent_a;  // fingerprints, for fused checkpoints
  std::string parent_b;
  std::optional<double> fusion_lambda;
};

namespace detail {

/// params.bin layout: for each group in canonical order, each entry in
/// insertion order, raw little-endian IEEE-754 f32 values. The index in
/// meta.json records {name, shape, dtype, byte offset} per tensor.
inline std::vector<char> serialize_params(const ParamStore& store, json* index_out) {
  std::vector<char> bytes;
  json index = json::object();
  for (const auto& group : param_group_names()) {
    json entries = json::array();
    for (const auto* e : store.group_entries(group)) {
      json rec;
      rec["name"] = e->name;
      rec["shape"] = e->value.shape;
      rec["dtype"] = "f32";
      rec["offset"] = bytes.size();
      entries.push_back(rec);
      const std::size_t start = bytes.size();
      bytes.resize(start + static_cast<std::size_t>(e->value.numel()) * 4);
      auto* dst = reinterpret_cast<float*>(bytes.data() + start);
      for (std::int64_t i = 0; i < e->value.numel(); ++i)
        dst[i] = static_cast<float>(e->value.data[static_cast<std::size_t>(i)]);
    }
    index[group] = std::move(entries);
  }
  if (index_out) *index_out = std::move(index);
  return bytes;
}

inline void deserialize_params(const std::vector<char>& bytes, const json& index,
                               ParamStore& store) {
  for (const auto& group : param_group_names()) {
    if (!index.contains(group)) continue;
    for (const auto& rec : index.at(group)) {
      const std::string name = rec.at("name").get<std::string>();
      const std::vector<int> shape = rec.at("shape").get<std::vector<int>>();
      const std::size_t offset = rec.at("offset").get<std::size_t>();
      if (!store.has(name))
        throw IncompatibleCheckpointsError("checkpoint tensor not in model: " + name);
      auto& e = store.at(name);
      if (e.value.shape != shape)
        throw IncompatibleCheckpointsError("shape mismatch for " + name);
      if (e.group != group)
        throw IncompatibleCheckpointsError("group mismatch for " + name);
      const std::size_t need = offset + static_cast<std::size_t>(e.value.numel()) * 4;
      if (need > bytes.size())
        throw RuntimeError("params.bin truncated at tensor " + name);
      const auto* src = reinterpret_cast<const float*>(bytes.data() + offset);
      for (std::int64_t i = 0; i < e.value.numel(); ++i)
        e.value.data[static_cast<std::size_t>(i)] = src[i];
    }
  }
}

inline json schedule_to_json(const NoiseSchedule& s) {
  json j;
  j["T"] = s.T;
  j["kind"] = to_string(s.kind);
  j["alpha"] = s.alpha;
  j["sigma"] = s.sigma;
  return j;
}

inline NoiseSchedule schedule_from_json(const json& j) {
  NoiseSchedule s;
  s.T = j.at("T").get<int>();
  s.kind = schedule_kind_from_string(j.at("kind").get<std::string>());
  s.alpha = j.at("alpha").get<std::vector<double>>();
  s.sigma = j.at("sigma").get<std::vector<double>>();
  if (!s.valid()) throw RuntimeError("loaded schedule violates invariants");
  return s;
}

inline void write_text_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw RuntimeError("cannot write " + p.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw RuntimeError("short write to " + p.string());
}

inline std::string read_text_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw RuntimeError("cannot read " + p.string());
  std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return s;
}

inline std::vector<char> read_binary_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw RuntimeError("cannot read " + p.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

/// Atomic directory write: stage under a temp name, then rename into place.
template <class FillFn>
void write_dir_atomic(const std::filesystem::path& dir, FillFn&& fill) {
  namespace fs = std::filesystem;
  const fs::path parent = dir.parent_path().empty() ? fs::path(".") : dir.parent_path();
  fs::create_directories(parent);
  const fs::path tmp = parent / (dir.filename().string() + ".tmp-" +
                                 std::to_string(::getpid()));
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  fill(tmp);
  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

}  // namespace detail

inline json unet_config_to_json(const UNetConfig& c) {
  return json{{"image_channels", c.image_channels}, {"image_size", c.image_size},
              {"base_channels", c.base_channels},   {"time_dim", c.time_dim},
              {"cond_dim", c.cond_dim},             {"num_concepts", c.num_concepts},
              {"gn_groups", c.gn_groups}};
}

inline UNetConfig unet_config_from_json(const json& j) {
  UNetConfig c;
  c.image_channels = j.at("image_channels").get<int>();
  c.image_size = j.at("image_size").get<int>();
  c.base_channels = j.at("base_channels").get<int>();
  c.time_dim = j.at("time_dim").get<int>();
  c.cond_dim = j.at("cond_dim").get<int>();
  c.num_concepts = j.at("num_concepts").get<int>();
  c.gn_groups = j.at("gn_groups").get<int>();
  return c;
}

inline json classifier_config_to_json(const ClassifierConfig& c) {
  return json{{"image_channels", c.image_channels}, {"image_size", c.image_size},
              {"base_channels", c.base_channels},   {"feature_dim", c.feature_dim},
              {"num_classes", c.num_classes}};
}

inline ClassifierConfig classifier_config_from_json(const json& j) {
  ClassifierConfig c;
  c.image_channels = j.at("image_channels").get<int>();
  c.image_size = j.at("image_size").get<int>();
  c.base_channels = j.at("base_channels").get<int>();
  c.feature_dim = j.at("feature_dim").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  return c;
}

/// The diffusion model artifact: named parameter groups, concept registry,
/// the noise schedule it was trained with, and training metadata. On disk:
/// a directory holding meta.json plus params.bin.
class ModelCheckpoint {
 public:
  ModelCheckpoint(const UNetConfig& cfg, NoiseSchedule sched,
                  std::vector<ConceptEntry> concepts)
      : unet_(std::make_unique<UNet>(cfg)),
        schedule_(std::move(sched)),
        concepts_(std::move(concepts)) {}

  ModelCheckpoint(const ModelCheckpoint& o)
      : unet_(std::make_unique<UNet>(o.unet_->config())),
        schedule_(o.schedule_),
        concepts_(o.concepts_),
        train_meta_(o.train_meta_) {
    auto& dst = unet_->params().entries();
    const auto& src = o.unet_->params().entries();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i].value = src[i].value;
  }
  ModelCheckpoint& operator=(const ModelCheckpoint&) = delete;
  ModelCheckpoint(ModelCheckpoint&&) = default;
  ModelCheckpoint& operator=(ModelCheckpoint&&) = default;

  UNet& unet() { return *unet_; }
  const UNet& unet() const { return *unet_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  const std::vector<ConceptEntry>& concepts() const { return concepts_; }
  TrainMeta& train_meta() { return train_meta_; }
  const TrainMeta& train_meta() const { return train_meta_; }

  bool has_concept(int id) const {
    for (const auto& c : concepts_)
      if (c.id == id) return true;
    return false;
  }

  void require_condition(const Condition& c) const {
    if (!c.is_none() && !has_concept(c.concept_id()))
      throw UnknownConceptError(c.concept_id());
  }

  /// SHA-256 of the serialized params.bin bytes.
  std::string fingerprint() const {
    const std::vector<char> bytes = detail::serialize_params(unet_->params(), nullptr);
    return sha256_hex(bytes.data(), bytes.size());
  }

  void save(const std::string& dir) const {
    detail::write_dir_atomic(dir, [&](const std::filesystem::path& tmp) {
      json index;
      const std::vector<char> bytes = detail::serialize_params(unet_->params(), &index);
      json meta;
      meta["schema_version"] = 1;
      meta["kind"] = "cond_unet";
      meta["arch"] = unet_config_to_json(unet_->config());
      meta["schedule"] = detail::schedule_to_json(schedule_);
      json reg = json::array();
      for (const auto& c : concepts_) reg.push_back({{"id", c.id}, {"label", c.label}});
      meta["concepts"] = reg;
      meta["groups"] = index;
      json tm;
      tm["seeds"] = train_meta_.seeds;
      tm["epochs"] = train_meta_.epochs;
      tm["loss_history"] = train_meta_.loss_history;
      if (!train_meta_.parent_a.empty()) {
        tm["parent_a"] = train_meta_.parent_a;
        tm["parent_b"] = train_meta_.parent_b;
        tm["fusion_lambda"] = train_meta_.fusion_lambda.value_or(0.0);
      }
      meta["train_meta"] = tm;
      meta["fingerprint"] = sha256_hex(bytes.data(), bytes.size());
      detail::write_text_file(tmp / "meta.json", meta.dump(2) + "\n");
      std::ofstream bin(tmp / "params.bin", std::ios::binary);
      bin.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
      if (!bin) throw RuntimeError("failed writing params.bin under " + dir);
    });
  }

  static ModelCheckpoint load(const std::string& dir) {
    namespace fs = std::filesystem;
    const json meta = json::parse(detail::read_text_file(fs::path(dir) / "meta.json"));
    if (meta.at("kind").get<std::string>() != "cond_unet")
      throw IncompatibleCheckpointsError(dir + " is not a diffusion checkpoint");
    const UNetConfig cfg = unet_config_from_json(meta.at("arch"));
    NoiseSchedule sched = detail::schedule_from_json(meta.at("schedule"));
    std::vector<ConceptEntry> concepts;
    for (const auto& c : meta.at("concepts"))
      concepts.push_back({c.at("id").get<int>(), c.at("label").get<std::string>()});
    ModelCheckpoint ckpt(cfg, std::move(sched), std::move(concepts));
    const auto bytes = detail::read_binary_file(fs::path(dir) / "params.bin");
    detail::deserialize_params(bytes, meta.at("groups"), ckpt.unet_->params());
    const auto& tm = meta.at("train_meta");
    ckpt.train_meta_.seeds = tm.at("seeds").get<std::vector<std::uint64_t>>();
    ckpt.train_meta_.epochs = tm.at("epochs").get<int>();
    ckpt.train_meta_.loss_history = tm.at("loss_history").get<std::vector<double>>();
    if (tm.contains("parent_a")) {
      ckpt.train_meta_.parent_a = tm.at("parent_a").get<std::string>();
      ckpt.train_meta_.parent_b = tm.at("parent_b").get<std::string>();
      ckpt.train_meta_.fusion_lambda = tm.at("fusion_lambda").get<double>();
    }
    return ckpt;
  }

 private:
  std::unique_ptr<UNet> unet_;
  NoiseSchedule schedule_;
  std::vector<ConceptEntry> concepts_;
  TrainMeta train_meta_;
};

/// Classifier persistence shares the directory format (meta.json +
/// params.bin) with diffusion checkpoints.
inline void save_classifier(const ConceptClassifier& clf, const std::string& dir,
                            const std::vector<ConceptEntry>& concepts,
                            std::uint64_t train_seed, double holdout_accuracy) {
  detail::write_dir_atomic(dir, [&](const std::filesystem::path& tmp) {
    json index;
    const std::vector<char> bytes = detail::serialize_params(clf.params(), &index);
    json meta;
    meta["schema_version"] = 1;
    meta["kind"] = "concept_classifier";
    meta["arch"] = classifier_config_to_json(clf.config());
    json reg = json::array();
    for (const auto& c : concepts) reg.push_back({{"id", c.id}, {"label", c.label}});
    meta["concepts"] = reg;
    meta["groups"] = index;
    meta["train_meta"] = {{"seeds", std::vector<std::uint64_t>{train_seed}},
                          {"holdout_accuracy", holdout_accuracy},
                          {"feature_dim", clf.config().feature_dim}};
    meta["fingerprint"] = sha256_hex(bytes.data(), bytes.size());
    detail::write_text_file(tmp / "meta.json", meta.dump(2) + "\n");
    std::ofstream bin(tmp / "params.bin", std::ios::binary);
    bin.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!bin) throw RuntimeError("failed writing params.bin under " + dir);
  });
}

inline ConceptClassifier load_classifier(const std::string& dir) {
  namespace fs = std::filesystem;
  const json meta = json::parse(detail::read_text_file(fs::path(dir) / "meta.json"));
  if (meta.at("kind").get<std::string>() != "concept_classifier")
    throw IncompatibleCheckpointsError(dir + " is not a classifier checkpoint");
  ConceptClassifier clf(classifier_config_from_json(meta.at("arch")));
  const auto bytes = detail::read_binary_file(fs::path(dir) / "params.bin");
  detail::deserialize_params(bytes, meta.at("groups"), clf.params());
  return clf;
}

inline std::string classifier_fingerprint(const ConceptClassifier& clf) {
  const std::vector<char> bytes = detail::serialize_params(clf.params(), nullptr);
  return sha256_hex(bytes.data(), bytes.size());
}

}  // namespace dgt
