#include <cmath>
#include <vector>

#include "doctest.h"
#include "lcdg/error.hpp"
#include "lcdg/model_io.hpp"
#include "lcdg/training.hpp"

using namespace lcdg;

namespace {

Tensor<float> const_tensor(const Shape& shape, float v) {
  int64_t n = numel_of(shape);
  return Tensor<float>(shape, std::vector<float>(static_cast<size_t>(n), v));
}

ProceduralDataset tiny_dataset(int n = 32, int channels = 1, uint64_t seed = 7) {
  DatasetConfig cfg;
  cfg.n = n;
  cfg.seed = seed;
  cfg.channels = channels;
  cfg.image_size = 32;
  cfg.val_frac = 0.25;
  return gen_dataset(cfg);
}

DenoiserConfig tiny_denoiser_cfg() {
  DenoiserConfig cfg;
  cfg.base_channels = 8;
  return cfg;
}

int tap_channel_sum(DenoiserModel<float>& model) {
  int s = 0;
  for (const TapInfo& t : model.tap_spec()) s += t.channels;
  return s;
}

AdapterConfig tiny_adapter_cfg(DenoiserModel<float>& model) {
  AdapterConfig cfg;
  cfg.in_channels = tap_channel_sum(model);
  cfg.cond_channels = 1;
  cfg.size_class = "tiny";
  return cfg;
}

}  // namespace

TEST_CASE("adam drives a quadratic to its minimum and takes signed first steps") {
  Tensor<float> x = const_tensor({8}, 5.f);
  Adam<float> opt({{"x", x}}, 0.1);
  Tensor<float> target = const_tensor({8}, 0.f);

  // First bias-corrected update has magnitude ~lr regardless of grad scale.
  Tensor<float> loss = mse(x, target);
  opt.zero_grad();
  loss.backward();
  opt.step();
  for (float v : x.values()) CHECK(v == doctest::Approx(5.f - 0.1f).epsilon(1e-3));

  for (int i = 0; i < 300; ++i) {
    Tensor<float> l = mse(x, target);
    opt.zero_grad();
    l.backward();
    opt.step();
  }
  for (float v : x.values()) CHECK(std::fabs(v) < 1e-2f);
  CHECK(opt.steps_done() == 301);
}

TEST_CASE("adam treats a parameter without gradients as zero-gradient") {
  Tensor<float> used = const_tensor({4}, 1.f);
  Tensor<float> idle = const_tensor({4}, 2.f);
  Adam<float> opt({{"used", used}, {"idle", idle}}, 0.05);
  Tensor<float> loss = mse(used, const_tensor({4}, 0.f));
  opt.zero_grad();
  loss.backward();
  opt.step();
  CHECK(used.values()[0] != doctest::Approx(1.f));
  for (float v : idle.values()) CHECK(v == 2.f);
}

TEST_CASE("adam state round-trips through a checkpoint bit-exactly") {
  auto make = [] { return const_tensor({6}, 3.f); };
  Tensor<float> target = const_tensor({6}, -1.f);

  // Reference: five uninterrupted steps.
  Tensor<float> xa = make();
  Adam<float> oa({{"x", xa}}, 0.02);
  for (int i = 0; i < 5; ++i) {
    Tensor<float> l = mse(xa, target);
    oa.zero_grad();
    l.backward();
    oa.step();
  }

  // Same five steps split 3 + 2 around a serialization boundary.
  Tensor<float> xb = make();
  Adam<float> ob({{"x", xb}}, 0.02);
  for (int i = 0; i < 3; ++i) {
    Tensor<float> l = mse(xb, target);
    ob.zero_grad();
    l.backward();
    ob.step();
  }
  Checkpoint ck;
  ck.kind = "opt-state";
  ob.add_to_checkpoint(ck);
  ck.add_tensor("x", xb);

  Tensor<float> xc = ck.get_tensor<float>("x");
  Adam<float> oc({{"x", xc}}, 0.02);
  oc.load_from_checkpoint(ck);
  CHECK(oc.steps_done() == 3);
  for (int i = 0; i < 2; ++i) {
    Tensor<float> l = mse(xc, target);
    oc.zero_grad();
    l.backward();
    oc.step();
  }
  for (size_t i = 0; i < xa.values().size(); ++i) CHECK(xa.values()[i] == xc.values()[i]);
}

TEST_CASE("adam rejects empty parameter lists and bad hyperparameters") {
  CHECK_THROWS_AS(Adam<float>({}), ValueError);
  Tensor<float> x = const_tensor({2}, 0.f);
  CHECK_THROWS_AS(Adam<float>({{"x", x}}, -1.0), ValueError);
  CHECK_THROWS_AS(Adam<float>({{"x", x}}, 1e-4, 1.0), ValueError);
}

TEST_CASE("freeze_params is the inverse of optimizer attachment") {
  DenoiserModel<float> model(tiny_denoiser_cfg(), 1);
  for (auto& [name, p] : model.named_params()) CHECK(!p.requires_grad());
  Adam<float> opt(model.named_params());
  for (auto& [name, p] : model.named_params()) CHECK(p.requires_grad());
  freeze_params(model.named_params());
  for (auto& [name, p] : model.named_params()) CHECK(!p.requires_grad());
}

TEST_CASE("denoiser training is deterministic in seed and resumes bit-exactly") {
  ProceduralDataset data = tiny_dataset();
  NoiseSchedule sched = make_schedule(50);
  TrainOpts opts;
  opts.batch_size = 4;
  opts.seed = 11;
  opts.log_every = 2;

  // Reference: six uninterrupted steps.
  DenoiserModel<float> ma(tiny_denoiser_cfg(), 5);
  DenoiserTrainer ta(ma, data, sched, opts);
  TrainReport ra = ta.run(6);
  CHECK(ra.steps_done == 6);
  CHECK(!ra.loss_curve.empty());
  CHECK(std::isfinite(ra.initial_loss));
  CHECK(std::isfinite(ra.final_loss));
  const std::string digest_a = params_digest(ma.named_params());

  // Same seed, fresh everything: identical weights.
  DenoiserModel<float> mb(tiny_denoiser_cfg(), 5);
  DenoiserTrainer tb(mb, data, sched, opts);
  tb.run(6);
  CHECK(params_digest(mb.named_params()) == digest_a);

  // Split 3 + 3 around a full model+trainer checkpoint.
  DenoiserModel<float> mc(tiny_denoiser_cfg(), 5);
  DenoiserTrainer tc(mc, data, sched, opts);
  tc.run(3);
  Checkpoint ck = checkpoint_from_denoiser(mc);
  tc.save_state(ck);

  DenoiserModel<float> md = denoiser_from_checkpoint(ck);
  DenoiserTrainer td(md, data, sched, opts);
  td.load_state(ck);
  CHECK(td.step() == 3);
  TrainReport rd = td.run(3);
  CHECK(rd.steps_done == 3);
  CHECK(params_digest(md.named_params()) == digest_a);
}

TEST_CASE("zero training steps change nothing and report nothing") {
  ProceduralDataset data = tiny_dataset();
  NoiseSchedule sched = make_schedule(50);
  DenoiserModel<float> model(tiny_denoiser_cfg(), 2);
  const std::string before = params_digest(model.named_params());
  TrainOpts opts;
  opts.batch_size = 4;
  DenoiserTrainer trainer(model, data, sched, opts);
  TrainReport rep = trainer.run(0);
  CHECK(rep.steps_done == 0);
  CHECK(rep.loss_curve.empty());
  CHECK(params_digest(model.named_params()) == before);
  CHECK_THROWS_AS(trainer.run(-1), ValueError);
}

TEST_CASE("divergence guard aborts before touching the weights") {
  ProceduralDataset data = tiny_dataset();
  NoiseSchedule sched = make_schedule(50);
  DenoiserModel<float> model(tiny_denoiser_cfg(), 2);
  const std::string before = params_digest(model.named_params());
  TrainOpts opts;
  opts.batch_size = 4;
  opts.divergence_factor = 1e-9;  // any positive loss trips on the first step
  DenoiserTrainer trainer(model, data, sched, opts);
  CHECK_THROWS_AS(trainer.run(4), DivergenceError);
  CHECK(params_digest(model.named_params()) == before);
}

TEST_CASE("adapter trains against a frozen backbone and checks the digest") {
  ProceduralDataset data = tiny_dataset();
  NoiseSchedule sched = make_schedule(50);
  DenoiserModel<float> backbone(tiny_denoiser_cfg(), 3);
  const std::string backbone_digest = params_digest(backbone.named_params());

  ConditionAdapter<float> adapter(tiny_adapter_cfg(backbone), 9);
  TimestepSampler tsampler;
  tsampler.mode = TimestepSampler::Mode::resampled;
  tsampler.T = sched.T;
  TrainOpts opts;
  opts.batch_size = 2;
  opts.seed = 13;
  opts.log_every = 2;

  AdapterTrainer trainer(adapter, backbone, data, CondKind::mask, sched, tsampler, opts);
  const std::string adapter_before = params_digest(adapter.named_params());
  TrainReport rep = trainer.run(4);
  CHECK(rep.steps_done == 4);
  CHECK(std::isfinite(rep.final_loss));
  CHECK(params_digest(adapter.named_params()) != adapter_before);
  CHECK(params_digest(backbone.named_params()) == backbone_digest);

  // Zero steps leave the adapter untouched.
  ConditionAdapter<float> fresh(tiny_adapter_cfg(backbone), 9);
  AdapterTrainer t2(fresh, backbone, data, CondKind::mask, sched, tsampler, opts);
  const std::string fresh_before = params_digest(fresh.named_params());
  TrainReport r2 = t2.run(0);
  CHECK(r2.steps_done == 0);
  CHECK(r2.loss_curve.empty());
  CHECK(params_digest(fresh.named_params()) == fresh_before);
}

TEST_CASE("adapter training refuses an unfrozen backbone or mismatched horizon") {
  ProceduralDataset data = tiny_dataset();
  NoiseSchedule sched = make_schedule(50);
  DenoiserModel<float> backbone(tiny_denoiser_cfg(), 3);
  ConditionAdapter<float> adapter(tiny_adapter_cfg(backbone), 9);
  TimestepSampler tsampler;
  tsampler.T = sched.T;
  TrainOpts opts;
  opts.batch_size = 2;

  Adam<float> attach(backbone.named_params());  // marks params as trainable
  CHECK_THROWS_AS(
      AdapterTrainer(adapter, backbone, data, CondKind::mask, sched, tsampler, opts), Error);
  freeze_params(backbone.named_params());

  TimestepSampler wrong = tsampler;
  wrong.T = sched.T + 1;
  CHECK_THROWS_AS(
      AdapterTrainer(adapter, backbone, data, CondKind::mask, sched, wrong, opts), ValueError);
}

TEST_CASE("held-out adapter evaluation is deterministic and works untrained") {
  ProceduralDataset data = tiny_dataset();
  NoiseSchedule sched = make_schedule(50);
  DenoiserModel<float> backbone(tiny_denoiser_cfg(), 3);
  ConditionAdapter<float> adapter(tiny_adapter_cfg(backbone), 9);

  double a = eval_adapter_heldout(adapter, backbone, data, CondKind::mask, sched, 2, 2, 21);
  double b = eval_adapter_heldout(adapter, backbone, data, CondKind::mask, sched, 2, 2, 21);
  CHECK(std::isfinite(a));
  CHECK(a == b);
  double c = eval_adapter_heldout(adapter, backbone, data, CondKind::mask, sched, 2, 2, 22);
  CHECK(std::isfinite(c));
}

TEST_CASE("condition targets: eval maps are fixed, train maps follow the stream") {
  ProceduralDataset data = tiny_dataset(8, 3);
  const DatasetItem& item = data.items[0];
  for (CondKind kind :
       {CondKind::edge, CondKind::stroke, CondKind::palette, CondKind::mask}) {
    ConditionMap a = eval_condition(item, kind);
    ConditionMap b = eval_condition(item, kind);
    CHECK(a.map == b.map);
    CHECK(a.kind == kind);
    RngStream rs(3);
    ConditionMap c = train_condition(item, kind, rs);
    CHECK(c.map.height == item.image.height);
    for (float v : c.map.data) {
      CHECK(v >= -1e-6f);
      CHECK(v <= 1.f + 1e-6f);
    }
  }
}

TEST_CASE("classifier training reaches usable held-out accuracy") {
  ProceduralDataset data = tiny_dataset(160, 1, 31);
  Classifier<float> clf(ClassifierConfig{}, 17);
  TrainOpts opts;
  opts.batch_size = 16;
  opts.lr = 1e-3;
  opts.seed = 29;
  opts.log_every = 50;
  ClassifierTrainer trainer(clf, data, opts);
  TrainReport rep = trainer.run(200);
  CHECK(rep.steps_done == 200);
  CHECK(rep.final_loss < rep.initial_loss);
  CHECK(rep.final_loss < 1.0);
  CHECK(eval_classifier_heldout(clf, data) >= 0.6);
}

TEST_CASE("denoiser checkpoints rebuild the exact model") {
  DenoiserModel<float> model(tiny_denoiser_cfg(), 3);
  Checkpoint ck = checkpoint_from_denoiser(model);
  CHECK(ck.kind == kDenoiserKind);

  // Round trip through bytes, then compare weights and behavior.
  Checkpoint loaded = ck;
  DenoiserModel<float> twin = denoiser_from_checkpoint(loaded);
  CHECK(params_digest(twin.named_params()) == params_digest(model.named_params()));

  Tensor<float> z(
      {2, 1, 32, 32},
      [] {
        RngStream rs(5);
        std::vector<float> v(static_cast<size_t>(2 * 32 * 32));
        rs.fill_normal(v);
        return v;
      }());
  std::vector<int> t = {7, 40};
  std::vector<int> cls = {0, 4};
  Tensor<float> ea = model.eps(z, t, cls);
  Tensor<float> eb = twin.eps(z, t, cls);
  for (size_t i = 0; i < ea.values().size(); ++i) CHECK(ea.values()[i] == eb.values()[i]);
}

TEST_CASE("model checkpoints reject the wrong kind, architecture, or missing weights") {
  DenoiserModel<float> model(tiny_denoiser_cfg(), 3);
  Checkpoint ck = checkpoint_from_denoiser(model);

  Checkpoint wrong_kind = ck;
  wrong_kind.kind = kAdapterKind;
  CHECK_THROWS_AS(denoiser_from_checkpoint(wrong_kind), CheckpointError);

  Checkpoint wrong_arch = ck;
  wrong_arch.set_meta("base_channels", "16");
  bool malformed = false;
  try {
    denoiser_from_checkpoint(wrong_arch);
  } catch (const CheckpointError& e) {
    malformed = e.kind == CheckpointError::Kind::malformed;
  }
  CHECK(malformed);

  Checkpoint missing = ck;
  missing.tensors.pop_back();
  bool missing_kind = false;
  try {
    denoiser_from_checkpoint(missing);
  } catch (const CheckpointError& e) {
    missing_kind = e.kind == CheckpointError::Kind::missing_tensor;
  }
  CHECK(missing_kind);
}

TEST_CASE("adapter checkpoints carry domain, weights, and norm buffers") {
  ProceduralDataset data = tiny_dataset();
  NoiseSchedule sched = make_schedule(50);
  DenoiserModel<float> backbone(tiny_denoiser_cfg(), 3);
  ConditionAdapter<float> adapter(tiny_adapter_cfg(backbone), 9);
  TimestepSampler tsampler;
  tsampler.T = sched.T;
  TrainOpts opts;
  opts.batch_size = 2;
  AdapterTrainer trainer(adapter, backbone, data, CondKind::mask, sched, tsampler, opts);
  trainer.run(2);  // moves batch-norm running statistics off their defaults

  Checkpoint ck = checkpoint_from_adapter(adapter, "mask");
  CHECK(adapter_domain(ck) == "mask");
  ConditionAdapter<float> twin = adapter_from_checkpoint(ck);
  CHECK(params_digest(twin.named_params()) == params_digest(adapter.named_params()));
  auto ba = adapter.named_buffers();
  auto bb = twin.named_buffers();
  REQUIRE(ba.size() == bb.size());
  for (size_t i = 0; i < ba.size(); ++i) {
    CHECK(ba[i].first == bb[i].first);
    CHECK(ba[i].second == bb[i].second);
  }

  // Frozen-statistics forward agrees exactly.
  RngStream rs(2);
  std::vector<float> fv(static_cast<size_t>(adapter.config().in_channels * 32 * 32));
  rs.fill_normal(fv);
  Tensor<float> feats({1, adapter.config().in_channels, 32, 32}, fv);
  Tensor<float> ya = adapter.forward(feats, {10}, NormMode::eval);
  Tensor<float> yb = twin.forward(feats, {10}, NormMode::eval);
  for (size_t i = 0; i < ya.values().size(); ++i) CHECK(ya.values()[i] == yb.values()[i]);
}

TEST_CASE("classifier checkpoints rebuild an identical predictor") {
  ProceduralDataset data = tiny_dataset(16);
  Classifier<float> clf(ClassifierConfig{}, 23);
  Checkpoint ck = checkpoint_from_classifier(clf);
  Classifier<float> twin = classifier_from_checkpoint(ck);
  CHECK(params_digest(twin.named_params()) == params_digest(clf.named_params()));
  std::vector<Image> imgs;
  for (int i = 0; i < 4; ++i) imgs.push_back(data.items[size_t(i)].image);
  Tensor<float> x = images_to_tensor<float>(imgs);
  CHECK(clf.predict(x) == twin.predict(x));
}
