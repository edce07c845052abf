#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "flowgnn/data.hpp"
#include "flowgnn/metrics.hpp"
#include "flowgnn/models.hpp"
#include "flowgnn/training.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace flowgnn;
using Catch::Approx;

TEST_CASE("nll_loss") {
  SECTION("perfect one-hot prediction costs nothing") {
    Tape tape;
    Tensor lp = Tensor::constant({1, 3}, {0.0, -50.0, -50.0});
    CHECK(nll_loss(lp, {0}).item() == 0.0);
  }

  SECTION("uniform over four classes costs ln 4") {
    Tape tape;
    const real_t u = std::log(0.25);
    Tensor lp = Tensor::constant({1, 4}, {u, u, u, u});
    CHECK(nll_loss(lp, {2}).item() == Approx(std::log(4.0)).epsilon(1e-12));
    CHECK(nll_loss(lp, {2}).item() == Approx(1.386294).margin(1e-6));
  }

  SECTION("mixed batch matches the hand sum") {
    Tape tape;
    Tensor lp = Tensor::constant({3, 2}, {-0.3, -2.0, -1.5, -0.7, -0.1, -2.5});
    const double expect = (0.3 + 0.7 + 2.5) / 3.0;
    CHECK(nll_loss(lp, {0, 1, 1}).item() == Approx(expect).epsilon(1e-12));
    CHECK_THROWS_AS(nll_loss(lp, {0, 1, 2}), std::out_of_range);
  }
}

TEST_CASE("mse_loss") {
  Tape tape;
  Tensor p = Tensor::constant({3}, {1, 2, 3});
  CHECK(mse_loss(p, {1, 2, 3}).item() == 0.0);
  CHECK(mse_loss(p, {0, 1, 2}).item() == Approx(1.0));
  CHECK(mse_loss(p, {1.5, 1.0, 5.0}).item() ==
        Approx((0.25 + 1.0 + 4.0) / 3.0).epsilon(1e-12));
  CHECK_THROWS_AS(mse_loss(p, {1, 2}), ShapeError);
}

TEST_CASE("optimizer_step") {
  SECTION("zero gradient and zero decay leave parameters unchanged") {
    Tensor p = Tensor::param({2}, {1.0, -2.0});
    OptimizerConfig cfg;
    Optimizer opt({p}, cfg);
    p.zero_grad();
    opt.step();
    CHECK(p.value() == std::vector<real_t>{1.0, -2.0});
  }

  SECTION("first step with unit gradient matches the hand computation") {
    // m_hat = v_hat = 1, so the update is -lr / (1 + eps)
    Tensor p = Tensor::param({1}, {0.0});
    OptimizerConfig cfg;
    cfg.lr = 1e-3;
    Optimizer opt({p}, cfg);
    {
      Tape tape;
      backward(sum(p));  // grad = 1
    }
    opt.step();
    const double expect = -1e-3 / (1.0 + 1e-8);
    CHECK(p.value()[0] == Approx(expect).epsilon(1e-15));
  }

  SECTION("AdamW with zero gradient shrinks by (1 - lr*wd)") {
    Tensor p = Tensor::param({1}, {2.0});
    OptimizerConfig cfg;
    cfg.lr = 0.1;
    cfg.adamw = true;
    cfg.weight_decay = 0.01;
    Optimizer opt({p}, cfg);
    p.zero_grad();
    opt.step();
    CHECK(p.value()[0] == Approx(2.0 * (1 - 0.1 * 0.01)).epsilon(1e-15));
  }

  SECTION("100 random steps match the one-parameter oracle to 1e-12") {
    Rng rng(5);
    for (bool adamw : {false, true}) {
      Tensor p = Tensor::param({1}, {0.7});
      OptimizerConfig cfg;
      cfg.lr = 3e-3;
      cfg.adamw = adamw;
      cfg.weight_decay = 0.02;
      Optimizer opt({p}, cfg);

      double value = 0.7;
      oracles::AdamState st;
      for (int step = 0; step < 100; ++step) {
        const double g = rng.uniform(-2, 2);
        p.zero_grad();
        {
          Tape tape;
          backward(scale(sum(p), static_cast<real_t>(g)));
        }
        opt.step();
        value = oracles::adam_step(value, g, st, cfg.lr, adamw, cfg.weight_decay);
        REQUIRE(p.value()[0] == Approx(value).margin(1e-12));
      }
    }
  }

  SECTION("non-finite gradients are rejected") {
    Tensor p = Tensor::param({1}, {0.0});
    Optimizer opt({p}, OptimizerConfig{});
    p.zero_grad();
    const_cast<std::vector<real_t>&>(p.grad())[0] = std::numeric_limits<real_t>::quiet_NaN();
    CHECK_THROWS_AS(opt.step(), NonFiniteError);
  }
}

TEST_CASE("plateau_scheduler") {
  SECTION("an improving stream keeps the rate") {
    PlateauScheduler sched(5, 10, /*maximize=*/true);
    double lr = 1e-3;
    for (int e = 0; e < 30; ++e) lr = sched.step(0.5 + 0.01 * e, lr);
    CHECK(lr == 1e-3);
  }

  SECTION("ten flat epochs divide the rate by five") {
    PlateauScheduler sched(5, 10, true);
    double lr = 1e-3;
    lr = sched.step(0.8, lr);
    for (int e = 0; e < 10; ++e) lr = sched.step(0.8, lr);
    CHECK(lr == Approx(1e-3 / 5));
  }

  SECTION("nine flat epochs then an improvement reset the counter") {
    PlateauScheduler sched(5, 10, true);
    double lr = 1e-3;
    lr = sched.step(0.8, lr);
    for (int e = 0; e < 9; ++e) lr = sched.step(0.8, lr);
    lr = sched.step(0.9, lr);
    for (int e = 0; e < 9; ++e) lr = sched.step(0.9, lr);
    CHECK(lr == 1e-3);
  }

  SECTION("the rate never increases") {
    PlateauScheduler sched(2, 1, false);
    double lr = 1.0;
    Rng rng(1);
    for (int e = 0; e < 50; ++e) {
      const double next = sched.step(rng.uniform(), lr);
      REQUIRE(next <= lr);
      lr = next;
    }
  }
}

TEST_CASE("early_stopping") {
  SECTION("monotone improvement never stops") {
    EarlyStopping stop(20, true);
    for (int e = 0; e < 100; ++e) {
      stop.update(e);
      REQUIRE_FALSE(stop.should_stop());
    }
  }

  SECTION("twenty flat epochs trigger the stop") {
    EarlyStopping stop(20, true);
    stop.update(0.9);
    for (int e = 0; e < 19; ++e) {
      stop.update(0.9);
      REQUIRE_FALSE(stop.should_stop());
    }
    stop.update(0.9);
    CHECK(stop.should_stop());
  }

  SECTION("improvement at epoch 19 resets the counter") {
    EarlyStopping stop(20, true);
    stop.update(0.5);
    for (int e = 0; e < 19; ++e) stop.update(0.5);
    CHECK(stop.update(0.6));
    CHECK_FALSE(stop.should_stop());
  }
}

TEST_CASE("balanced_accuracy") {
  SECTION("perfect predictions score 1") {
    ConfusionMatrix cm(3);
    cm.add(0, 0);
    cm.add(1, 1);
    cm.add(2, 2);
    CHECK(balanced_accuracy(cm) == 1.0);
  }

  SECTION("the binary TP=FN=TN=FP=1 case scores exactly one half") {
    ConfusionMatrix cm(2);
    cm.add(1, 1);  // TP
    cm.add(1, 0);  // FN
    cm.add(0, 0);  // TN
    cm.add(0, 1);  // FP
    CHECK(balanced_accuracy(cm) == 0.5);
  }

  SECTION("the majority predictor on a balanced binary set scores one half") {
    ConfusionMatrix cm(2);
    for (int i = 0; i < 10; ++i) cm.add(0, 0);
    for (int i = 0; i < 10; ++i) cm.add(1, 0);
    CHECK(balanced_accuracy(cm) == 0.5);
  }

  SECTION("classes without support are excluded") {
    ConfusionMatrix cm(3);
    cm.add(0, 0);
    cm.add(1, 0);
    CHECK(balanced_accuracy(cm) == 0.5);
    CHECK_THROWS_AS(balanced_accuracy(ConfusionMatrix(2)), std::invalid_argument);
  }
}

TEST_CASE("metric oracles on random prediction sets") {
  Rng rng(9);
  for (int it = 0; it < 100; ++it) {
    const std::size_t n = 5 + rng.uniform_int(std::uint64_t(50));
    const std::size_t classes = 2 + rng.uniform_int(std::uint64_t(3));
    std::vector<std::size_t> truth(n), pred(n);
    ConfusionMatrix cm(classes);
    for (std::size_t i = 0; i < n; ++i) {
      truth[i] = rng.uniform_int(static_cast<std::uint64_t>(classes));
      pred[i] = rng.uniform_int(static_cast<std::uint64_t>(classes));
      cm.add(truth[i], pred[i]);
    }
    REQUIRE(balanced_accuracy(cm) ==
            Approx(oracles::balanced_accuracy(truth, pred, classes)).margin(1e-12));
    REQUIRE(macro_f1(cm) == Approx(oracles::macro_f1(truth, pred, classes)).margin(1e-12));

    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = rng.uniform(-3, 3);
      b[i] = rng.uniform(-3, 3);
    }
    REQUIRE(rmse(a, b) == Approx(oracles::rmse(a, b)).margin(1e-12));
    REQUIRE(pearson_r(a, b) == Approx(oracles::pearson(a, b)).margin(1e-12));
  }
}

TEST_CASE("regression metric edge cases") {
  CHECK(rmse({1, 2}, {1, 2}) == 0.0);
  CHECK(pearson_r({1, 2, 3}, {1, 2, 3}) == Approx(1.0));
  CHECK(pearson_r({-1, 0, 1}, {1, 0, -1}) == Approx(-1.0));
  CHECK_THROWS_AS(pearson_r({1, 1, 1}, {1, 2, 3}), std::invalid_argument);

  // 4-point hand case
  const std::vector<double> p{1, 2, 3, 4}, t{1.5, 2.5, 2.5, 5.0};
  CHECK(rmse(p, t) == Approx(std::sqrt((0.25 + 0.25 + 0.25 + 1.0) / 4)).epsilon(1e-12));
}

TEST_CASE("macro F1 zero-division convention") {
  // class 1 never predicted and never true: F1 = 0 for it
  ConfusionMatrix cm(2);
  cm.add(0, 0);
  cm.add(0, 0);
  CHECK(macro_f1(cm) == Approx(0.5));
}

namespace {

TrainConfig smoke_config() {
  TrainConfig cfg;
  cfg.lr = 5e-3;
  cfg.batch_size = 8;
  cfg.max_epochs = 30;
  cfg.early_stop_patience = 30;
  cfg.seed = 11;
  cfg.dropout = 0.0;
  return cfg;
}

}  // namespace

TEST_CASE("train loop") {
  Dataset ds = gen_flow_classification(60, 8, 3);
  Splits splits = split(ds, {0.7, 0.15, 0.15}, 5, /*stratify=*/true);

  ModelConfig mc;
  mc.type = "flowgat";
  mc.layers = 2;
  mc.hidden = 8;
  mc.feature_dim = 3;
  mc.num_classes = 2;
  mc.init_seed = 7;

  SECTION("lr = 0 leaves parameters unchanged") {
    Model model(mc);
    std::vector<std::vector<real_t>> before;
    for (const auto& p : model.params()) before.push_back(p.value());
    TrainConfig cfg = smoke_config();
    cfg.lr = 0;
    cfg.max_epochs = 3;
    train(model, splits, cfg);
    auto params = model.params();
    for (std::size_t i = 0; i < params.size(); ++i) REQUIRE(params[i].value() == before[i]);
  }

  SECTION("a few epochs reduce the training loss") {
    Model model(mc);
    TrainConfig cfg = smoke_config();
    TrainOutcome out = train(model, splits, cfg);
    REQUIRE(out.history.size() >= 2);
    CHECK(out.history.back().train_loss < out.history.front().train_loss);
  }

  SECTION("the same seed reproduces the history bitwise") {
    Model m1(mc), m2(mc);
    TrainConfig cfg = smoke_config();
    cfg.max_epochs = 6;
    cfg.dropout = 0.1;
    TrainOutcome o1 = train(m1, splits, cfg);
    TrainOutcome o2 = train(m2, splits, cfg);
    REQUIRE(o1.history.size() == o2.history.size());
    for (std::size_t i = 0; i < o1.history.size(); ++i) {
      REQUIRE(o1.history[i].train_loss == o2.history[i].train_loss);
      REQUIRE(o1.history[i].val_metric == o2.history[i].val_metric);
      REQUIRE(o1.history[i].lr == o2.history[i].lr);
    }
    auto p1 = m1.params(), p2 = m2.params();
    for (std::size_t i = 0; i < p1.size(); ++i) REQUIRE(p1[i].value() == p2[i].value());
  }

  SECTION("early stopping restores the best parameters") {
    Model model(mc);
    TrainConfig cfg = smoke_config();
    cfg.max_epochs = 15;
    cfg.early_stop_patience = 3;
    TrainOutcome out = train(model, splits, cfg);
    // evaluating at the restored parameters reproduces the best metric
    MetricsReport rep = evaluate(model, splits.val.records.empty() ? splits.train : splits.val);
    CHECK(*rep.balanced_accuracy == Approx(out.best_val_metric).margin(1e-12));
  }
}
