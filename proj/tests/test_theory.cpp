#include <doctest.h>

#include <cmath>
#include <vector>

#include "cauirl/errors.hpp"
#include "cauirl/model.hpp"
#include "cauirl/rng.hpp"
#include "cauirl/theory.hpp"

using namespace cauirl;

namespace {

data::GaussianTask standard_task(double sep = 1.5) {
    data::GaussianTask task;
    task.class_means = {{-sep, 0.0}, {sep, 0.0}};
    task.covariance = {{1.0, 0.0}, {0.0, 1.0}};
    task.train_priors = {0.5, 0.5};
    task.test_priors = {0.5, 0.5};
    return task;
}

} // namespace

TEST_CASE("analytic boundary for unit-covariance symmetric means") {
    auto task = standard_task(1.0);  // means at (-1,0) and (1,0)
    auto b = theory::analytic_bayes_boundary(task, {0.5, 0.5});
    REQUIRE(b.weight.size() == 2);
    CHECK(b.weight[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(b.weight[1] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(b.bias == doctest::Approx(0.0).epsilon(1e-12));

    SUBCASE("unequal priors shift the bias by the log prior ratio") {
        auto shifted = theory::analytic_bayes_boundary(task, {0.9, 0.1});
        CHECK(shifted.weight[0] == doctest::Approx(2.0).epsilon(1e-12));
        // quadratic terms cancel for symmetric means, leaving ln(0.1/0.9)
        CHECK(shifted.bias == doctest::Approx(std::log(1.0 / 9.0)).epsilon(1e-12));
        // the boundary plane w.x + bias = 0 sits at x0 = ln(9)/2, inside
        // the majority class's half-space
        const double x0 = -shifted.bias / shifted.weight[0];
        CHECK(x0 == doctest::Approx(std::log(9.0) / 2.0).epsilon(1e-12));
    }
    SUBCASE("swapping the class means negates the rule") {
        data::GaussianTask swapped = task;
        std::swap(swapped.class_means[0], swapped.class_means[1]);
        auto s = theory::analytic_bayes_boundary(swapped, {0.5, 0.5});
        CHECK(s.weight[0] == doctest::Approx(-b.weight[0]).epsilon(1e-12));
        CHECK(s.bias == doctest::Approx(-b.bias).epsilon(1e-12));
    }
    SUBCASE("anisotropic covariance reweights the separating direction") {
        data::GaussianTask aniso = task;
        aniso.covariance = {{4.0, 0.0}, {0.0, 1.0}};
        auto a = theory::analytic_bayes_boundary(aniso, {0.5, 0.5});
        // w = Sigma^-1 (mu1 - mu0) = (2/4, 0)
        CHECK(a.weight[0] == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(a.weight[1] == doctest::Approx(0.0).epsilon(1e-12));
    }
    SUBCASE("decisions are invariant under rotation of the whole task") {
        const double theta = 0.7;
        const double ct = std::cos(theta), st = std::sin(theta);
        data::GaussianTask rot = task;
        for (auto &mu : rot.class_means) {
            const double x = mu[0], y = mu[1];
            mu[0] = ct * x - st * y;
            mu[1] = st * x + ct * y;
        }
        // R * I * R' = I, so covariance is unchanged
        auto br = theory::analytic_bayes_boundary(rot, {0.5, 0.5});

        Rng rng(5);
        for (int i = 0; i < 200; ++i) {
            const double x = rng.normal() * 2.0, y = rng.normal() * 2.0;
            const double d0 = b.weight[0] * x + b.weight[1] * y + b.bias;
            const double xr = ct * x - st * y, yr = st * x + ct * y;
            const double d1 = br.weight[0] * xr + br.weight[1] * yr + br.bias;
            CHECK((d0 > 0) == (d1 > 0));
        }
    }
    SUBCASE("correlated covariance matches a hand-solved system") {
        data::GaussianTask corr = task;
        corr.covariance = {{2.0, 1.0}, {1.0, 2.0}};
        auto c = theory::analytic_bayes_boundary(corr, {0.5, 0.5});
        // solve Sigma w = (2,0): w = (4/3, -2/3)
        CHECK(c.weight[0] == doctest::Approx(4.0 / 3.0).epsilon(1e-12));
        CHECK(c.weight[1] == doctest::Approx(-2.0 / 3.0).epsilon(1e-12));
    }
    SUBCASE("validation of inputs") {
        CHECK_THROWS_AS(theory::analytic_bayes_boundary(task, {0.0, 1.0}), ParameterError);
        data::GaussianTask three = task;
        three.class_means.push_back({0.0, 5.0});
        CHECK_THROWS_AS(theory::analytic_bayes_boundary(three, {0.3, 0.3}), ParameterError);
        data::GaussianTask singular = task;
        singular.covariance = {{1.0, 1.0}, {1.0, 1.0}};
        CHECK_THROWS_AS(theory::analytic_bayes_boundary(singular, {0.5, 0.5}), NumericError);
    }
}

TEST_CASE("evaluation grid covers the class means with margin") {
    auto task = standard_task(1.5);
    auto grid = theory::decision_grid(task, 50, 4.0);
    REQUIRE(grid.rows() == 2500);
    REQUIRE(grid.cols() == 2);
    double lo0 = 1e9, hi0 = -1e9, lo1 = 1e9, hi1 = -1e9;
    for (std::size_t r = 0; r < grid.rows(); ++r) {
        lo0 = std::min(lo0, grid(r, 0));
        hi0 = std::max(hi0, grid(r, 0));
        lo1 = std::min(lo1, grid(r, 1));
        hi1 = std::max(hi1, grid(r, 1));
    }
    // dimension 0: means at +-1.5, sigma 1, span 4 -> [-5.5, 5.5]
    CHECK(lo0 == doctest::Approx(-5.5).epsilon(1e-12));
    CHECK(hi0 == doctest::Approx(5.5).epsilon(1e-12));
    CHECK(lo1 == doctest::Approx(-4.0).epsilon(1e-12));
    CHECK(hi1 == doctest::Approx(4.0).epsilon(1e-12));

    CHECK_THROWS_AS(theory::decision_grid(task, 1, 4.0), ParameterError);
}

TEST_CASE("decision helpers: agreement fraction and boundary angle") {
    theory::LinearBoundary right{{1.0, 0.0}, 0.0};
    theory::LinearBoundary up{{0.0, 2.5}, 0.0};
    theory::LinearBoundary right2{{3.0, 0.0}, 0.1};

    CHECK(theory::boundary_angle_deg(right, up) == doctest::Approx(90.0).epsilon(1e-12));
    CHECK(theory::boundary_angle_deg(right, right2) == doctest::Approx(0.0).epsilon(1e-9));
    // opposite normals fold into [0, 90]
    theory::LinearBoundary left{{-1.0, 0.0}, 0.0};
    CHECK(theory::boundary_angle_deg(right, left) == doctest::Approx(0.0).epsilon(1e-9));

    Matrix pts(4, 2);
    pts(0, 0) = 1.0;  pts(1, 0) = -1.0;
    pts(2, 0) = 2.0;  pts(3, 0) = -2.0;
    auto d1 = theory::boundary_decisions(right, pts);
    CHECK(d1 == std::vector<int>{1, 0, 1, 0});
    auto d2 = theory::boundary_decisions(left, pts);
    CHECK(theory::decision_agreement(d1, d1) == 1.0);
    CHECK(theory::decision_agreement(d1, d2) == 0.0);
    CHECK(theory::decision_agreement(d1, {1, 0, 0, 1}) == 0.5);
    CHECK_THROWS_AS(theory::decision_agreement(d1, {1}), ConsistencyError);
}

TEST_CASE("inert rebalancing on balanced data reproduces the balanced run exactly") {
    // delta = 0 plus equal class counts must make the "rebalanced" arm
    // byte-for-byte the balanced arm: per-seed agreement exactly 1.
    auto task = standard_task(1.5);
    theory::RebalanceConfig rebalance;
    rebalance.delta = 0.0;
    model::TrainConfig tc;
    tc.epochs = 4;
    tc.batch_size = 64;
    tc.learning_rate = 0.2;
    tc.seed = 5;

    auto res = theory::run_bayes_consistency_check(task, {80, 80}, rebalance, tc,
                                                   /*n_seeds=*/2, /*grid=*/40);
    REQUIRE(res.per_seed_agreement.size() == 2);
    for (double a : res.per_seed_agreement) CHECK(a == 1.0);
    CHECK(res.agreement_rate == 1.0);
}

TEST_CASE("conditional-matching rebalance tracks the Bayes rule better than raw training") {
    // Small-scale version of the desk verification: imbalanced draws with a
    // class-conditional Universum should land closer to the balanced
    // decisions than plain ERM on the same draws.
    auto task = standard_task(1.5);
    model::TrainConfig tc;
    tc.epochs = 12;
    tc.batch_size = 64;
    tc.learning_rate = 0.2;
    tc.milestones = {9};
    tc.decay_factor = 0.1;
    tc.seed = 3;

    theory::RebalanceConfig rebalance;
    rebalance.delta = 0.9;
    rebalance.defer_epochs = 12;  // active for the whole run

    auto suite = theory::run_bayes_suite(task, {300, 6}, rebalance, tc,
                                         /*n_seeds=*/3, /*grid=*/60);
    CHECK(suite.rebalanced.agreement_rate > suite.erm.agreement_rate);
    CHECK(suite.rebalanced.agreement_rate > 0.9);
    // self-agreement across balanced runs brackets the attainable ceiling
    REQUIRE(suite.balanced_self_agreement.size() == 3);  // 3 choose 2
    for (double a : suite.balanced_self_agreement) {
        CHECK(a > 0.8);
        CHECK(a <= 1.0);
    }
    CHECK(suite.self_agreement_p5 > 0.0);
    CHECK(suite.self_agreement_p5 <= 1.0);

    SUBCASE("result fields are internally consistent") {
        CHECK(suite.rebalanced.per_seed_agreement.size() == 3);
        double mean = 0.0;
        for (double a : suite.rebalanced.per_seed_agreement) mean += a / 3.0;
        CHECK(suite.rebalanced.agreement_rate == doctest::Approx(mean).epsilon(1e-12));
        CHECK(suite.rebalanced.boundary_analytic.size() == 3);  // w0, w1, bias
        CHECK(suite.rebalanced.angle_rebalanced_deg >= 0.0);
        CHECK(suite.rebalanced.angle_rebalanced_deg <= 90.0);
        const bool bar = suite.rebalanced.agreement_rate >= suite.self_agreement_p5;
        CHECK(suite.rebalanced_meets_bar == bar);
    }
    SUBCASE("fewer than two seeds cannot form a self-agreement bar") {
        CHECK_THROWS_AS(theory::run_bayes_suite(task, {300, 6}, rebalance, tc, 1, 40),
                        ParameterError);
    }
}

TEST_CASE("per-class gradients recompose into the batch gradient") {
    model::ArchConfig cfg;
    cfg.kind = "passthrough";
    cfg.input_shape = {3};
    cfg.num_classes = 4;
    auto net = model::Network::build(cfg, 7);

    Rng rng(11);
    sampling::Batch batch;
    batch.samples = Matrix(128, 3);
    for (std::size_t r = 0; r < 128; ++r) {
        for (std::size_t c = 0; c < 3; ++c) batch.samples(r, c) = rng.normal();
        // skewed 127:1-style composition across 4 classes
        batch.labels.push_back(r < 100 ? 0 : (r < 120 ? 1 : (r < 127 ? 2 : 3)));
    }
    batch.universum_mask.assign(128, 0);

    auto dec = theory::gradient_decomposition(net, batch);
    CHECK(dec.class_counts == std::vector<std::size_t>{100, 20, 7, 1});
    CHECK(dec.recomposition_error < 1e-9);
    REQUIRE(dec.per_class_grad.size() == 4);
    REQUIRE(dec.grad_norms.size() == 4);
    for (double n : dec.grad_norms) CHECK(n > 0.0);
    CHECK(dec.minority_to_majority_ratio ==
          doctest::Approx(dec.grad_norms[3] / dec.grad_norms[0]).epsilon(1e-12));

    // cosine matrix: unit diagonal, symmetric, entries in [-1, 1]
    REQUIRE(dec.cosine.rows() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(dec.cosine(i, i) == doctest::Approx(1.0).epsilon(1e-12));
        for (std::size_t j = 0; j < 4; ++j) {
            CHECK(dec.cosine(i, j) == doctest::Approx(dec.cosine(j, i)).epsilon(1e-12));
            CHECK(dec.cosine(i, j) >= -1.0 - 1e-12);
            CHECK(dec.cosine(i, j) <= 1.0 + 1e-12);
        }
    }

    SUBCASE("explicit hand recomposition") {
        // full gradient = sum_c (n_c / n) * per_class_grad_c
        for (std::size_t k = 0; k < dec.full_grad.size(); ++k) {
            double acc = 0.0;
            for (std::size_t c = 0; c < 4; ++c)
                acc += double(dec.class_counts[c]) / 128.0 * dec.per_class_grad[c][k];
            CHECK(std::abs(acc - dec.full_grad[k]) < 1e-9);
        }
    }
    SUBCASE("mirror-symmetric batches give mirror-equal gradient norms") {
        model::ArchConfig c2;
        c2.kind = "passthrough";
        c2.input_shape = {2};
        c2.num_classes = 2;
        auto zero_net = model::Network::build(c2, 1);
        for (auto *p : zero_net.parameters())
            std::fill(p->value.begin(), p->value.end(), 0.0);

        sampling::Batch sym;
        sym.samples = Matrix(8, 2);
        for (std::size_t r = 0; r < 4; ++r) {
            sym.samples(r, 0) = 1.0 + double(r) * 0.25;
            sym.samples(r, 1) = 0.5;
            sym.samples(r + 4, 0) = -(1.0 + double(r) * 0.25);
            sym.samples(r + 4, 1) = -0.5;
        }
        for (std::size_t r = 0; r < 8; ++r) sym.labels.push_back(r < 4 ? 0 : 1);
        sym.universum_mask.assign(8, 0);

        auto d = theory::gradient_decomposition(zero_net, sym);
        CHECK(std::abs(d.grad_norms[0] - d.grad_norms[1]) < 1e-9);
        CHECK(d.minority_to_majority_ratio == doctest::Approx(1.0).epsilon(1e-9));
    }
    SUBCASE("a single-class batch cannot be decomposed") {
        sampling::Batch mono;
        mono.samples = Matrix(4, 3);
        mono.labels = {2, 2, 2, 2};
        mono.universum_mask.assign(4, 0);
        CHECK_THROWS_AS(theory::gradient_decomposition(net, mono), ConsistencyError);
    }
}
