#pragma once

#include <cstdint>
#include <vector>

#include "cauirl/dataset.hpp"
#include "cauirl/matrix.hpp"
#include "cauirl/model.hpp"
#include "cauirl/sampling.hpp"

namespace cauirl::theory {

// Linear two-class decision rule: predict class 1 iff w.x + bias > 0.
struct LinearBoundary {
    std::vector<double> weight;
    double bias = 0.0;
};

// Closed-form optimal rule for two Gaussian classes with shared covariance:
//   w = Sigma^-1 (mu1 - mu0)
//   bias = -1/2 (mu1' Sigma^-1 mu1 - mu0' Sigma^-1 mu0) + ln(pi1/pi0)
LinearBoundary analytic_bayes_boundary(const data::GaussianTask &task,
                                       const std::vector<double> &priors);

// Axis-aligned evaluation grid covering every class mean plus a margin of
// span_sigmas marginal standard deviations per dimension.
Matrix decision_grid(const data::GaussianTask &task, std::size_t resolution, double span_sigmas);

std::vector<int> boundary_decisions(const LinearBoundary &boundary, const Matrix &points);

// Fraction of rows where the two decision vectors pick the same class.
double decision_agreement(const std::vector<int> &a, const std::vector<int> &b);

// Angle in degrees between two boundary normals, folded into [0, 90].
double boundary_angle_deg(const LinearBoundary &a, const LinearBoundary &b);

// How the "rebalanced" arm of the consistency check builds its training
// stream. The conditional-matching Universum draws from the true class
// conditionals, so replacement injects ideal minority samples.
struct RebalanceConfig {
    bool oversample = true;    // false: plain shuffled passes over the data
    bool replacement = true;   // false: no Universum injection
    double delta = 0.9;
    int defer_epochs = -1;     // <0: last 20% of epochs
};

struct BayesCheckResult {
    std::vector<double> boundary_balanced;   // (w..., bias), averaged over seeds
    std::vector<double> boundary_rebalanced;
    std::vector<double> boundary_analytic;
    double angle_balanced_deg = 0.0;   // learned-vs-analytic, averaged
    double angle_rebalanced_deg = 0.0;
    double agreement_balanced_vs_analytic = 0.0;
    double agreement_rebalanced_vs_analytic = 0.0;
    double agreement_rate = 0.0; // rebalanced vs balanced, the headline number
    std::vector<double> per_seed_agreement;
};

// Trains (a) a softmax-linear classifier on a balanced draw from the task
// and (b) the same architecture on an imbalanced draw pushed through the
// rebalance pipeline; compares decisions of both against each other and the
// analytic equal-prior boundary on a dense grid, averaged over n_seeds.
BayesCheckResult run_bayes_consistency_check(const data::GaussianTask &task,
                                             const std::vector<std::size_t> &imbalance,
                                             const RebalanceConfig &rebalance,
                                             const model::TrainConfig &train_config,
                                             std::size_t n_seeds, std::size_t grid_resolution = 200,
                                             double span_sigmas = 4.0);

// Full comparison battery for one task: the rebalanced pipeline, a plain
// ERM arm (no over-sampling, no replacement), and the distribution of
// balanced-vs-balanced agreement across seeds, whose 5th percentile serves
// as the pass bar for the rebalanced arm.
struct BayesSuiteResult {
    BayesCheckResult rebalanced;
    BayesCheckResult erm;
    std::vector<double> balanced_self_agreement; // pairwise, across seed pairs
    double self_agreement_p5 = 0.0;
    bool rebalanced_meets_bar = false;      // agreement_rate >= self_agreement_p5
    bool rebalanced_beats_erm_every_seed = false;
};

BayesSuiteResult run_bayes_suite(const data::GaussianTask &task,
                                 const std::vector<std::size_t> &imbalance,
                                 const RebalanceConfig &rebalance,
                                 const model::TrainConfig &train_config, std::size_t n_seeds,
                                 std::size_t grid_resolution = 200, double span_sigmas = 4.0);

// Per-class split of the classifier-head gradient on one batch.
struct GradientDecomposition {
    std::vector<std::vector<double>> per_class_grad; // flattened head weight+bias per class
    std::vector<std::size_t> class_counts;
    std::vector<double> grad_norms;
    Matrix cosine;                     // pairwise cosine similarity of per-class gradients
    std::vector<double> full_grad;     // gradient of the batch-mean loss
    double recomposition_error = 0.0;  // max |full - count-weighted sum of per-class|
    double minority_to_majority_ratio = 0.0; // norm(smallest class)/norm(largest class)
};

// Head-only gradients with the feature extractor frozen (eval-mode
// features), so the count-weighted per-class gradients recompose to the
// full-batch gradient exactly up to rounding.
GradientDecomposition gradient_decomposition(model::Network &net, const sampling::Batch &batch);

} // namespace cauirl::theory
