#include <doctest.h>

#include <random>

#include "../support/desk.h"
#include "../support/oracles.h"
#include "gebc/error.h"
#include "gebc/model.h"

using namespace gebc;
using ag::Matrix;
using testing_support::DeskWorld;
using testing_support::desk_config;

namespace {

VideoAdapterConfig small_adapter() { return {32, 32, 4, 4, 2, 4, 64, 64}; }

Matrix random_matrix(Eigen::Index r, Eigen::Index c, uint64_t seed) {
  nn::Initializer init(seed);
  return init.normal(r, c, 1.0);
}

}  // namespace

TEST_CASE("V_0 and V_1 shapes do not depend on L or the number of other extractors") {
  FixtureOptions one;
  one.videos = 1;
  one.boundaries_per_video = 1;
  for (int steps : {1, 4, 8, 64}) {
    for (int others = 0; others <= 3; ++others) {
      CAPTURE(steps);
      CAPTURE(others);
      const DeskWorld world(desk_config(others, steps), one);
      const auto& r = world.records[0];
      const auto box = normalize_timebox(r.boundaries[0].time_box, r.duration_sec);
      const VideoTokens v = world.pipeline.model->video_tokens(*world.videos.at(r.video_id), box);
      CHECK(v.primary.path == TokenPath::kPrimary);
      CHECK(v.primary.block.rows() == 4);
      CHECK(v.primary.block.cols() == 32);
      CHECK(v.primary.block.value().allFinite());
      REQUIRE(v.others.has_value() == (others > 0));
      if (v.others) {
        CHECK(v.others->path == TokenPath::kOthers);
        CHECK(v.others->block.rows() == 4);
        CHECK(v.others->block.cols() == 32);
      }
    }
  }
}

TEST_CASE("position table") {
  nn::Initializer init(3);
  PositionTable table(8, 6, init);

  SUBCASE("overflow") {
    CHECK_THROWS_AS(table.add(ag::constant(Matrix::Zero(9 * 2, 6)), 9, 2), PositionOverflow);
    CHECK_THROWS_AS(table.add(ag::constant(Matrix::Zero(5, 6)), 3, 2), ShapeMismatch);
  }
  SUBCASE("zero table is the identity") {
    table.table().mutable_value().setZero();
    const Matrix x = random_matrix(4 * 3, 6, 1);
    CHECK(table.add(ag::constant(x), 4, 3).value() == x);
  }
  SUBCASE("zero features give P[t] on every token of step t") {
    const Matrix out = table.add(ag::constant(Matrix::Zero(5 * 3, 6)), 5, 3).value();
    for (int t = 0; t < 5; ++t) {
      for (int k = 0; k < 3; ++k) CHECK(out.row(t * 3 + k) == table.table().value().row(t));
    }
  }
  SUBCASE("gradient matches finite differences") {
    const Matrix x = random_matrix(5 * 3, 6, 2);
    const Matrix w = random_matrix(5 * 3, 6, 4);
    auto f = [&] {
      const ag::Var y = table.add(ag::constant(x), 5, 3);
      return ag::sum_all(ag::mul(ag::mul(y, y), ag::constant(w)));
    };
    table.table().zero_grad();
    f().backward();
    const Matrix numeric = oracle::numeric_gradient(table.table(), [&] { return f().scalar(); });
    CHECK(oracle::relative_error(table.table().grad(), numeric) <= 1e-4);
    // Rows past the sequence never see the loss.
    CHECK(table.table().grad().bottomRows(3).isZero(0.0));
  }
}

TEST_CASE("video Q-former") {
  nn::Initializer init(5);
  const VideoQFormer qf({4, 32, 2, 4, 64}, init);

  SUBCASE("output shape is fixed") {
    for (int n : {1, 8, 64, 64 * 7}) {
      const ag::Var out = qf.forward(ag::constant(random_matrix(n, 32, n)));
      CHECK(out.rows() == 4);
      CHECK(out.cols() == 32);
    }
    CHECK_THROWS_AS(qf.forward(ag::constant(Matrix::Zero(3, 16))), ShapeMismatch);
  }
  SUBCASE("identical rows: permutation gives bit-identical output") {
    Matrix x(10, 32);
    x.rowwise() = random_matrix(1, 32, 9).row(0);
    Matrix swapped = x;
    swapped.row(2).swap(swapped.row(7));
    CHECK(qf.forward(ag::constant(x)).value() == qf.forward(ag::constant(swapped)).value());
  }
  SUBCASE("no positional information inside the Q-former itself") {
    const Matrix x = random_matrix(12, 32, 10);
    std::vector<int> perm(12);
    for (int i = 0; i < 12; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(4));
    Matrix px(12, 32);
    for (int i = 0; i < 12; ++i) px.row(i) = x.row(perm[i]);
    const Matrix a = qf.forward(ag::constant(x)).value();
    CHECK((a - qf.forward(ag::constant(px)).value()).cwiseAbs().maxCoeff() <= 1e-10);
  }
  SUBCASE("deterministic") {
    const Matrix x = random_matrix(16, 32, 11);
    CHECK(qf.forward(ag::constant(x)).value() == qf.forward(ag::constant(x)).value());
  }
  SUBCASE("query embedding gradient") {
    const ag::Var x = ag::constant(random_matrix(6, 32, 12));
    const Matrix w = random_matrix(4, 32, 13);
    auto f = [&] { return ag::mean_all(ag::mul(qf.forward(x), ag::constant(w))); };
    ag::Var q = qf.query_embeddings();
    q.zero_grad();
    f().backward();
    const Matrix numeric = oracle::numeric_gradient(q, [&] { return f().scalar(); });
    CHECK(oracle::relative_error(q.grad(), numeric) <= 1e-3);
  }
}

TEST_CASE("LM-space projection") {
  nn::Initializer init(6);
  VideoAdapter adapter(small_adapter(), true, init);
  nn::Linear& to_lm = adapter.primary_to_lm();

  const Matrix zero_out = to_lm.forward(ag::constant(Matrix::Zero(4, 32))).value();
  for (int i = 0; i < 4; ++i) CHECK(zero_out.row(i) == to_lm.bias().value().row(0));

  nn::Linear square(32, 32, init, true);
  square.init_identity();
  const Matrix x = random_matrix(4, 32, 14);
  CHECK(square.forward(ag::constant(x)).value() == x);

  const Matrix w = random_matrix(4, 32, 15);
  auto f = [&] {
    const ag::Var y = to_lm.forward(ag::constant(x));
    return ag::sum_all(ag::mul(ag::mul(y, y), ag::constant(w)));
  };
  ag::Var weight = to_lm.weight();
  weight.zero_grad();
  f().backward();
  const Matrix numeric = oracle::numeric_gradient(weight, [&] { return f().scalar(); });
  CHECK(oracle::relative_error(weight.grad(), numeric) <= 1e-4);
}

TEST_CASE("token-axis concatenation interleaves blocks per step") {
  const ProjectedFeatures a{ag::constant(random_matrix(3 * 2, 5, 1)), 3, 2};
  const ProjectedFeatures b{ag::constant(random_matrix(3 * 1, 5, 2)), 3, 1};
  const ProjectedFeatures j = concat_tokens({a, b});
  CHECK(j.steps == 3);
  CHECK(j.tokens == 3);
  for (int t = 0; t < 3; ++t) {
    CHECK(j.data.value().row(t * 3 + 0) == a.data.value().row(t * 2 + 0));
    CHECK(j.data.value().row(t * 3 + 1) == a.data.value().row(t * 2 + 1));
    CHECK(j.data.value().row(t * 3 + 2) == b.data.value().row(t));
  }
  const ProjectedFeatures bad{ag::constant(random_matrix(4, 5, 3)), 4, 1};
  CHECK_THROWS_AS(concat_tokens({a, bad}), ShapeMismatch);
  CHECK_THROWS_AS(concat_tokens({}), ShapeMismatch);
}

TEST_CASE("build_video_tokens") {
  FixtureOptions one;
  one.videos = 1;
  one.boundaries_per_video = 1;
  const DeskWorld world(desk_config(3, 8), one);
  const GebcModel& model = *world.pipeline.model;
  const PreparedVideo& video = *world.videos.begin()->second;

  SUBCASE("no other features: V_1 absent") {
    nn::Initializer init(1);
    const VideoAdapter primary_only(small_adapter(), false, init);
    const ProjectedFeatures p = model.project_primary(video.primary);
    const ag::Var emb = ag::constant(random_matrix(1, 32, 3));
    const VideoTokens v = build_video_tokens(primary_only, p, {}, emb);
    CHECK_FALSE(v.others.has_value());
    CHECK_THROWS_AS(primary_only.other_tokens(model.project_others(video.others), emb),
                    ShapeMismatch);
  }
  SUBCASE("boundary box changes V_0") {
    const Matrix a = model.video_tokens(video, {0.2, 0.4}).primary.block.value();
    const Matrix b = model.video_tokens(video, {0.2, 0.5}).primary.block.value();
    CHECK((a - b).norm() > 0.0);
    CHECK(a == model.video_tokens(video, {0.2, 0.4}).primary.block.value());
  }
  SUBCASE("the others path sees every other extractor") {
    const Matrix base = model.video_tokens(video, {0.2, 0.4}).others->block.value();
    for (size_t i = 0; i < video.others.size(); ++i) {
      PreparedVideo changed = video;
      changed.others[i].data.array() += 0.5;
      const Matrix v1 = model.video_tokens(changed, {0.2, 0.4}).others->block.value();
      CHECK((v1 - base).norm() > 0.0);
    }
  }
}

TEST_CASE("every trainable parameter receives gradient from the caption loss") {
  const DeskWorld world(desk_config(3, 8));
  const nn::ParameterList params = world.pipeline.model->trainable_parameters();
  nn::zero_grad(params);
  for (size_t k = 0; k < 4; ++k) {
    ag::scale(world.loss(k, kCaptionTypes[k % 3]), 0.25).backward();
  }
  for (const auto& p : params) {
    CAPTURE(p.name);
    CHECK(p.var.grad().norm() > 0.0);
  }
}

TEST_CASE("caption loss gradients match finite differences on the desk model") {
  const DeskWorld world(desk_config(3, 8));
  GebcModel& model = *world.pipeline.model;
  std::vector<std::pair<std::string, ag::Var>> groups = {
      {"primary queries", model.adapter().primary_qformer().query_embeddings()},
      {"primary positions", model.adapter().primary_positions().table()},
      {"other positions", model.adapter().other_positions().table()},
      {"primary to_lm", model.adapter().primary_to_lm().weight()},
      {"other to_lm", model.adapter().other_to_lm().weight()},
      {"boundary projection", model.boundary_encoder().projection().weight()},
  };
  for (size_t i = 0; i < model.other_specs().size(); ++i) {
    groups.emplace_back("projection " + model.other_specs()[i].name,
                        model.other_projection(i).linear().weight());
  }
  uint64_t seed = 0;
  for (auto& [name, var] : groups) {
    CAPTURE(name);
    const auto [analytic, numeric] =
        oracle::sampled_gradients(var, [&] { return world.loss(1); }, 24, ++seed);
    CHECK(oracle::relative_error(analytic, numeric) <= 1e-3);
  }
}
