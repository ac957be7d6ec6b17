#include <catch2/catch.hpp>

#include "degentune/checkpoint.hpp"
#include "degentune/classifier.hpp"
#include "test_helpers.hpp"

#include <set>

TEST_CASE("parameter groups partition all tensors") {
  const auto ckpt = testutil::tiny_checkpoint();
  const auto& store = ckpt.unet().params();
  std::set<std::string> seen;
  std::int64_t counted = 0;
  for (const auto& group : dgt::param_group_names()) {
    for (const auto* e : store.group_entries(group)) {
      CHECK(seen.insert(e->name).second);  // no tensor in two groups
      counted += e->value.numel();
    }
  }
  CHECK(seen.size() == store.entries().size());  // none missing
  CHECK(counted == store.total_params());
  CHECK(store.all_finite());
  // the ablation-relevant groups are non-trivial
  CHECK_FALSE(store.group_entries("cross_attention").empty());
  CHECK_FALSE(store.group_entries("resblock").empty());
  CHECK_FALSE(store.group_entries("other").empty());
}

TEST_CASE("checkpoint save/load round trip") {
  const auto ckpt = testutil::tiny_checkpoint(3);
  const std::string dir = testutil::fresh_tmp_dir("ckpt_roundtrip");
  ckpt.save(dir);

  const auto back = dgt::ModelCheckpoint::load(dir);
  CHECK(back.unet().config() == ckpt.unet().config());
  CHECK(back.schedule().T == ckpt.schedule().T);
  CHECK(back.concepts().size() == ckpt.concepts().size());

  // values round-trip through f32 exactly once: saving again is stable
  const std::string dir2 = testutil::fresh_tmp_dir("ckpt_roundtrip2");
  back.save(dir2);
  CHECK(dgt::sha256_file(dir + "/params.bin") == dgt::sha256_file(dir2 + "/params.bin"));
  CHECK(back.fingerprint() == dgt::ModelCheckpoint::load(dir2).fingerprint());

  // doubles loaded from f32 are exactly representable
  const auto reload = dgt::ModelCheckpoint::load(dir2);
  const auto& a = back.unet().params().entries();
  const auto& b = reload.unet().params().entries();
  for (std::size_t i = 0; i < a.size(); ++i)
    CHECK(dgt::bitwise_equal(a[i].value, b[i].value));
}

TEST_CASE("fingerprint tracks parameter content") {
  auto ckpt = testutil::tiny_checkpoint(3);
  const std::string fp = ckpt.fingerprint();
  CHECK(fp.size() == 64);
  ckpt.unet().params().entries()[5].value.data[0] += 0.5;
  CHECK(ckpt.fingerprint() != fp);
}

TEST_CASE("checkpoint copies are deep") {
  auto a = testutil::tiny_checkpoint(9);
  dgt::ModelCheckpoint b(a);
  CHECK(a.fingerprint() == b.fingerprint());
  b.unet().params().entries()[0].value.data[0] += 1.0;
  CHECK(a.fingerprint() != b.fingerprint());
}

TEST_CASE("save overwrites an existing directory atomically") {
  auto ckpt = testutil::tiny_checkpoint(4);
  const std::string dir = testutil::fresh_tmp_dir("ckpt_overwrite");
  ckpt.save(dir);
  ckpt.unet().params().entries()[0].value.data[0] = 9.0;
  ckpt.save(dir);
  const auto back = dgt::ModelCheckpoint::load(dir);
  CHECK(back.fingerprint() == ckpt.fingerprint());
}

TEST_CASE("condition registry checks") {
  const auto ckpt = testutil::tiny_checkpoint(1, 40, 3);
  CHECK(ckpt.has_concept(0));
  CHECK_FALSE(ckpt.has_concept(3));
  CHECK_NOTHROW(ckpt.require_condition(dgt::Condition::none()));
  CHECK_THROWS_AS(ckpt.require_condition(dgt::Condition::for_concept(7)),
                  dgt::UnknownConceptError);
}

TEST_CASE("classifier persists in the shared directory format") {
  dgt::ClassifierConfig cfg;
  cfg.base_channels = 4;
  cfg.feature_dim = 8;
  cfg.num_classes = 3;
  cfg.image_size = 16;
  dgt::ConceptClassifier clf(cfg);
  clf.init_weights(11);

  const std::string dir = testutil::fresh_tmp_dir("clf_roundtrip");
  dgt::save_classifier(clf, dir, {{0, "a"}, {1, "b"}, {2, "c"}}, 11, 0.99);
  const auto back = dgt::load_classifier(dir);
  CHECK(back.config() == clf.config());
  CHECK(dgt::classifier_fingerprint(back) == dgt::classifier_fingerprint(clf));

  // kind mismatch is rejected both ways
  CHECK_THROWS_AS(dgt::ModelCheckpoint::load(dir), dgt::IncompatibleCheckpointsError);
}
