#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>

#include "../support/desk.h"
#include "gebc/error.h"
#include "gebc/trainer.h"

using namespace gebc;
using ag::Matrix;
using testing_support::DeskWorld;
using testing_support::desk_config;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("gebc_trainer_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

FixtureOptions small_fixture() {
  FixtureOptions fx;
  fx.videos = 2;
  fx.boundaries_per_video = 2;
  return fx;
}

TrainConfig quick_train(int epochs = 2) {
  TrainConfig t = desk_config().train;
  t.max_epochs = epochs;
  t.batch_size = 4;
  t.warmup_steps = 1;
  return t;
}

bool same_log(const std::vector<TrainLogEntry>& a, const std::vector<TrainLogEntry>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].step != b[i].step || a[i].epoch != b[i].epoch || a[i].loss != b[i].loss ||
        a[i].lr != b[i].lr) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("default train config") {
  const TrainConfig c;
  CHECK(c.weight_decay == 0.001);
  CHECK(c.batch_size == 16);
  CHECK(c.lr_init == 8e-5);
  CHECK(c.lr_min == 1e-5);
  CHECK(c.lr_warmup_start == 1e-6);
  CHECK(c.max_epochs == 5);
  CHECK_NOTHROW(validate(c));
  TrainConfig bad = c;
  bad.lr_min = 1e-4;
  CHECK_THROWS_AS(validate(bad), InvalidConfig);
  bad = c;
  bad.batch_size = 0;
  CHECK_THROWS_AS(validate(bad), InvalidConfig);
}

TEST_CASE("learning-rate schedule") {
  const TrainConfig c;
  const int64_t total = 10000;
  const int64_t warm = resolve_warmup_steps(total, c);
  CHECK(warm == 1000);
  CHECK(lr_at(0, total, c) == doctest::Approx(1e-6).epsilon(1e-12));
  CHECK(std::abs(lr_at(warm, total, c) - 8e-5) <= 1e-12);
  CHECK(std::abs(lr_at(total, total, c) - 1e-5) <= 1e-12);
  // Continuous at the joint.
  CHECK(std::abs(lr_at(warm - 1, total, c) - lr_at(warm, total, c)) < 1e-7);
  for (int64_t s = 1; s <= total; ++s) {
    if (s <= warm) {
      CHECK(lr_at(s, total, c) >= lr_at(s - 1, total, c));
    } else {
      CHECK(lr_at(s, total, c) <= lr_at(s - 1, total, c));
    }
  }

  TrainConfig lin = c;
  lin.decay = DecayShape::kLinear;
  CHECK(std::abs(lr_at(total, total, lin) - 1e-5) <= 1e-12);
  CHECK(std::abs(lr_at((warm + total) / 2, total, lin) - 4.5e-5) <= 1e-12);

  TrainConfig fixed = c;
  fixed.warmup_steps = 10;
  CHECK(resolve_warmup_steps(500, fixed) == 10);
  CHECK_THROWS_AS(lr_at(0, 10, fixed), InvalidSchedule);
  CHECK_THROWS_AS(lr_at(-1, total, c), InvalidSchedule);
  CHECK_THROWS_AS(lr_at(total + 1, total, c), InvalidSchedule);
  CHECK_THROWS_AS(lr_at(0, 0, c), InvalidSchedule);
}

TEST_CASE("AdamW") {
  nn::Initializer init(1);
  const DeskWorld world(desk_config(), small_fixture());
  const nn::ParameterList params = world.pipeline.model->trainable_parameters();
  const AdamW opt(params, TrainConfig{});

  SUBCASE("decay exclusions") {
    int excluded = 0;
    for (const auto& p : params) {
      CAPTURE(p.name);
      const bool bias_or_norm = p.name.ends_with(".bias") || p.name.ends_with(".gain") ||
                                p.name.ends_with(".shift");
      CHECK(opt.decays(p.name) == !bias_or_norm);
      if (p.name.find("norm") != std::string::npos) CHECK_FALSE(opt.decays(p.name));
      if (p.name.ends_with("positions") || p.name.ends_with("query_embeddings")) {
        CHECK(opt.decays(p.name));
      }
      excluded += bias_or_norm ? 1 : 0;
    }
    CHECK(excluded > 0);
  }
  SUBCASE("one step against the update rule") {
    TrainConfig c;
    c.weight_decay = 0.1;
    ag::Var w(Matrix{{1.0, -2.0}}, true);
    ag::Var b(Matrix{{0.5, 0.5}}, true);
    AdamW o({{"w", w, true}, {"b", b, false}}, c);
    w.node()->accumulate(Matrix{{0.3, -0.1}});
    b.node()->accumulate(Matrix{{0.2, 0.0}});
    o.step(0.01);
    // First step: m_hat = g, v_hat = g^2.
    const double lr = 0.01, eps = 1e-8;
    CHECK(w.value()(0, 0) == doctest::Approx(1.0 * (1 - lr * 0.1) - lr * 0.3 / (0.3 + eps)));
    CHECK(w.value()(0, 1) == doctest::Approx(-2.0 * (1 - lr * 0.1) + lr * 0.1 / (0.1 + eps)));
    CHECK(b.value()(0, 0) == doctest::Approx(0.5 - lr));
    CHECK(b.value()(0, 1) == 0.5);
    CHECK(o.steps_taken() == 1);
  }
}

TEST_CASE("gradient clipping") {
  ag::Var a(Matrix{{3.0, 0.0}}, true), b(Matrix{{0.0, 4.0}}, true);
  const nn::ParameterList params{{"a", a, true}, {"b", b, true}};
  a.node()->accumulate(Matrix{{3.0, 0.0}});
  b.node()->accumulate(Matrix{{0.0, 4.0}});
  CHECK(clip_grad_norm(params, 0.0) == doctest::Approx(5.0));
  CHECK(a.grad()(0, 0) == 3.0);
  CHECK(clip_grad_norm(params, 10.0) == doctest::Approx(5.0));
  CHECK(a.grad()(0, 0) == 3.0);
  CHECK(clip_grad_norm(params, 1.0) == doctest::Approx(5.0));
  CHECK(std::hypot(a.grad()(0, 0), b.grad()(0, 1)) == doctest::Approx(1.0));
  CHECK(a.grad()(0, 0) / b.grad()(0, 1) == doctest::Approx(0.75));
}

TEST_CASE("epoch order") {
  const auto a = epoch_order(50, 3, 0);
  std::set<size_t> seen(a.begin(), a.end());
  CHECK(seen.size() == 50);
  CHECK(*seen.rbegin() == 49);
  CHECK(a == epoch_order(50, 3, 0));
  CHECK(a != epoch_order(50, 3, 1));
  CHECK(a != epoch_order(50, 4, 0));
}

TEST_CASE("trainable parameters") {
  const DeskWorld world(desk_config(), small_fixture());
  const nn::ParameterList params = world.pipeline.model->trainable_parameters();
  std::set<const ag::Node*> lm_nodes, extractor_nodes;
  for (const auto& p : world.pipeline.lm->parameters()) lm_nodes.insert(p.var.node().get());
  for (const auto& e : world.pipeline.extractors) {
    for (const auto& p : e->parameters()) extractor_nodes.insert(p.var.node().get());
  }
  CHECK_FALSE(lm_nodes.empty());
  CHECK_FALSE(extractor_nodes.empty());
  std::set<std::string> names;
  for (const auto& p : params) {
    CHECK(lm_nodes.count(p.var.node().get()) == 0);
    CHECK(extractor_nodes.count(p.var.node().get()) == 0);
    CHECK(p.var.requires_grad());
    names.insert(p.name);
  }
  CHECK(names.size() == params.size());
  for (const char* group : {"projection.", "boundary.", "adapter.primary.positions",
                            "adapter.others.positions", "adapter.primary.qformer.query_embeddings",
                            "adapter.others.qformer.query_embeddings", "adapter.primary.to_lm",
                            "adapter.others.to_lm"}) {
    CAPTURE(group);
    CHECK(std::any_of(names.begin(), names.end(),
                      [&](const std::string& n) { return n.starts_with(group); }));
  }

  // Same seed, same set.
  const GebcModel again(model_config(world.pipeline.config));
  const nn::ParameterList p2 = again.trainable_parameters();
  REQUIRE(p2.size() == params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    CHECK(p2[i].name == params[i].name);
    CHECK(p2[i].var.value() == params[i].var.value());
  }
}

TEST_CASE("one optimizer step moves every trained parameter and nothing frozen") {
  DeskWorld world(desk_config(), small_fixture());
  GebcModel& model = *world.pipeline.model;
  const auto data = make_training_set(world.records, world.videos);
  const nn::ParameterList params = model.trainable_parameters();
  std::vector<Matrix> before;
  for (const auto& p : params) before.push_back(p.var.value());
  const uint64_t lm_sum = nn::checksum(world.pipeline.lm->parameters());
  uint64_t ex_sum = 0;
  for (const auto& e : world.pipeline.extractors) ex_sum ^= nn::checksum(e->parameters());

  TrainConfig c = quick_train(1);
  c.max_steps = 1;
  c.warmup_steps = 0;
  Trainer trainer(model, *world.pipeline.lm, c);
  trainer.train(data);
  for (size_t i = 0; i < params.size(); ++i) {
    CAPTURE(params[i].name);
    CHECK(params[i].var.value() != before[i]);
  }
  uint64_t ex_after = 0;
  for (const auto& e : world.pipeline.extractors) ex_after ^= nn::checksum(e->parameters());
  CHECK(nn::checksum(world.pipeline.lm->parameters()) == lm_sum);
  CHECK(ex_after == ex_sum);
}

TEST_CASE("training is deterministic and resumable") {
  const RunConfig cfg = desk_config();
  const TrainConfig tc = quick_train(3);
  auto run = [&](const std::function<void(Trainer&, const std::vector<TrainingExample>&)>& body) {
    DeskWorld world(cfg, small_fixture());
    const auto data = make_training_set(world.records, world.videos);
    Trainer trainer(*world.pipeline.model, *world.pipeline.lm, tc, config_hash(cfg));
    body(trainer, data);
    return trainer.checkpoint();
  };

  std::vector<TrainLogEntry> log_a, log_b, log_resumed;
  Checkpoint after_one_epoch;
  const Checkpoint a = run([&](Trainer& t, const auto& data) {
    TrainHooks hooks;
    hooks.on_epoch = [&](int64_t epoch, const Checkpoint& c) {
      if (epoch == 1) after_one_epoch = c;
    };
    log_a = t.train(data, hooks);
  });
  const Checkpoint b = run([&](Trainer& t, const auto& data) { log_b = t.train(data); });
  CHECK(log_a.size() == 9);
  CHECK(same_log(log_a, log_b));
  CHECK(encode_checkpoint(a) == encode_checkpoint(b));

  // Resume from the epoch-1 checkpoint via a file round trip.
  const fs::path dir = scratch_dir("resume");
  save_checkpoint(after_one_epoch, dir / "e1.gebk");
  const Checkpoint resumed = run([&](Trainer& t, const auto& data) {
    t.restore(load_checkpoint(dir / "e1.gebk", config_hash(cfg)));
    CHECK(t.step() == 3);
    CHECK(t.epoch() == 1);
    log_resumed = t.train(data);
  });
  CHECK(same_log(std::vector<TrainLogEntry>(log_a.begin() + 3, log_a.end()), log_resumed));
  CHECK(encode_checkpoint(resumed) == encode_checkpoint(a));

  // Interrupted inside the second epoch, then resumed from that point.
  std::vector<TrainLogEntry> head;
  Checkpoint mid;
  run([&](Trainer& t, const auto& data) {
    TrainHooks hooks;
    hooks.on_step = [&](const TrainLogEntry& e) {
      head.push_back(e);
      if (e.step == 3) {
        mid = t.checkpoint();
        throw std::runtime_error("interrupt");
      }
    };
    CHECK_THROWS_AS(t.train(data, hooks), std::runtime_error);
  });
  CHECK(mid.step == 4);
  CHECK(mid.epoch == 1);
  std::vector<TrainLogEntry> tail;
  const Checkpoint finished = run([&](Trainer& t, const auto& data) {
    t.restore(mid);
    tail = t.train(data);
  });
  head.insert(head.end(), tail.begin(), tail.end());
  CHECK(same_log(head, log_a));
  CHECK(encode_checkpoint(finished) == encode_checkpoint(a));
  fs::remove_all(dir);
}

TEST_CASE("checkpoint files") {
  const fs::path dir = scratch_dir("ckpt");
  Checkpoint c;
  c.config_hash = 0xfeedbeefULL;
  c.step = 42;
  c.epoch = 3;
  c.tensors["param/x"] = Matrix{{1.0, std::nextafter(1.0, 2.0)}, {-0.0, 1e-300}};
  c.tensors["adam.m/x"] = Matrix::Constant(2, 2, 0.125);
  c.tensors["adam.v/x"] = Matrix::Zero(2, 2);
  const fs::path path = dir / "c.gebk";
  save_checkpoint(c, path);

  const Checkpoint back = load_checkpoint(path, c.config_hash);
  CHECK(back.step == 42);
  CHECK(back.epoch == 3);
  CHECK(back.tensors.size() == 3);
  for (const auto& [k, m] : c.tensors) {
    CHECK(std::memcmp(back.tensors.at(k).data(), m.data(), sizeof(double) * m.size()) == 0);
  }
  CHECK(encode_checkpoint(back) == encode_checkpoint(c));

  CHECK_THROWS_AS(load_checkpoint(path, 1234), ConfigMismatch);
  CHECK(load_checkpoint(path, 1234, true).step == 42);

  const std::string bytes = encode_checkpoint(c);
  for (size_t cut : {size_t{0}, size_t{3}, size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
    CAPTURE(cut);
    CHECK_THROWS_AS(decode_checkpoint(std::string_view(bytes).substr(0, cut)), CorruptCheckpoint);
  }
  std::string flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x01;
  CHECK_THROWS_AS(decode_checkpoint(flipped), CorruptCheckpoint);
  std::string magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(magic), CorruptCheckpoint);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.gebk"), IoFailure);
  fs::remove_all(dir);
}

TEST_CASE("changing q_0 changes the config hash and blocks the checkpoint") {
  const RunConfig base = desk_config();
  RunConfig wider = base;
  wider.adapter.primary_queries = 8;
  CHECK(config_hash(base) != config_hash(wider));
  RunConfig reseeded = base;
  reseeded.seed = 99;
  reseeded.output_dir = "elsewhere";
  CHECK(config_hash(base) == config_hash(reseeded));

  DeskWorld world(base, small_fixture());
  Trainer t(*world.pipeline.model, *world.pipeline.lm, quick_train(), config_hash(base));
  const fs::path dir = scratch_dir("hash");
  save_checkpoint(t.checkpoint(), dir / "c.gebk");
  CHECK_THROWS_AS(load_checkpoint(dir / "c.gebk", config_hash(wider)), ConfigMismatch);

  // Forcing past the hash still refuses tensors of the wrong shape.
  DeskWorld other(wider, small_fixture());
  Trainer t2(*other.pipeline.model, *other.pipeline.lm, quick_train(), config_hash(wider));
  CHECK_THROWS_AS(t2.restore(load_checkpoint(dir / "c.gebk", config_hash(wider), true)),
                  ConfigMismatch);
  fs::remove_all(dir);
}

TEST_CASE("non-finite loss aborts with diagnostics") {
  DeskWorld world(desk_config(), small_fixture());
  const auto data = make_training_set(world.records, world.videos);
  ag::Var q = world.pipeline.model->adapter().primary_qformer().query_embeddings();
  q.mutable_value()(0, 0) = std::numeric_limits<double>::quiet_NaN();
  Trainer trainer(*world.pipeline.model, *world.pipeline.lm, quick_train());
  try {
    trainer.train(data);
    FAIL("expected NonFiniteLoss");
  } catch (const NonFiniteLoss& e) {
    const std::string msg = e.what();
    CHECK(msg.find("step 0") != std::string::npos);
    CHECK(msg.find("lr") != std::string::npos);
    CHECK(msg.find("v_0/") != std::string::npos);
    CHECK(e.code() == ErrorCode::kNonFiniteLoss);
  }
}

TEST_CASE("training set construction") {
  const DeskWorld world(desk_config(), small_fixture());
  const auto data = make_training_set(world.records, world.videos);
  CHECK(data.size() == 2 * 2 * 3);
  auto partial = world.videos;
  partial.erase(partial.begin());
  CHECK_THROWS_AS(make_training_set(world.records, partial), CacheMiss);
  TrainConfig c = quick_train();
  c.batch_size = 5;
  Trainer t(*world.pipeline.model, *world.pipeline.lm, c);
  CHECK(t.total_steps(12) == 3 * 2);
  c.max_steps = 4;
  Trainer capped(*world.pipeline.model, *world.pipeline.lm, c);
  CHECK(capped.total_steps(12) == 4);
  CHECK_THROWS_AS(t.train({}), InvalidConfig);
}
