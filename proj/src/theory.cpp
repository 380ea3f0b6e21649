#include "cauirl/theory.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cauirl/errors.hpp"
#include "cauirl/rng.hpp"
#include "cauirl/universum.hpp"

namespace cauirl::theory {

namespace {

// Solve L L' x = b given the lower-triangular Cholesky factor L.
std::vector<double> cholesky_solve(const std::vector<std::vector<double>> &chol,
                                   const std::vector<double> &b) {
    const std::size_t n = b.size();
    std::vector<double> y(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t j = 0; j < i; ++j)
            s -= chol[i][j] * y[j];
        y[i] = s / chol[i][i];
    }
    std::vector<double> x(n, 0.0);
    for (std::size_t i = n; i-- > 0;) {
        double s = y[i];
        for (std::size_t j = i + 1; j < n; ++j)
            s -= chol[j][i] * x[j];
        x[i] = s / chol[i][i];
    }
    return x;
}

double dot(const std::vector<double> &a, const std::vector<double> &b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += a[i] * b[i];
    return s;
}

} // namespace

LinearBoundary analytic_bayes_boundary(const data::GaussianTask &task,
                                       const std::vector<double> &priors) {
    if (task.num_classes() != 2)
        throw ParameterError("analytic_bayes_boundary: task must have exactly 2 classes, has " +
                             std::to_string(task.num_classes()));
    if (priors.size() != 2 || priors[0] <= 0.0 || priors[1] <= 0.0)
        throw ParameterError("analytic_bayes_boundary: need two positive priors");

    const auto chol = data::cholesky(task.covariance);
    const std::vector<double> a1 = cholesky_solve(chol, task.class_means[1]);
    const std::vector<double> a0 = cholesky_solve(chol, task.class_means[0]);

    LinearBoundary b;
    b.weight.resize(task.dim());
    for (std::size_t i = 0; i < task.dim(); ++i)
        b.weight[i] = a1[i] - a0[i];
    b.bias = -0.5 * (dot(task.class_means[1], a1) - dot(task.class_means[0], a0)) +
             std::log(priors[1] / priors[0]);
    return b;
}

Matrix decision_grid(const data::GaussianTask &task, std::size_t resolution, double span_sigmas) {
    const std::size_t d = task.dim();
    if (d == 0 || d > 2)
        throw ParameterError("decision_grid supports 1- or 2-dimensional tasks, got dim " +
                             std::to_string(d));
    if (resolution < 2)
        throw ParameterError("decision_grid: resolution must be at least 2");

    std::vector<double> lo(d), hi(d);
    for (std::size_t i = 0; i < d; ++i) {
        double mn = task.class_means[0][i], mx = task.class_means[0][i];
        for (const auto &mu : task.class_means) {
            mn = std::min(mn, mu[i]);
            mx = std::max(mx, mu[i]);
        }
        const double sigma = std::sqrt(task.covariance[i][i]);
        lo[i] = mn - span_sigmas * sigma;
        hi[i] = mx + span_sigmas * sigma;
    }

    auto coord = [&](std::size_t dim, std::size_t idx) {
        return lo[dim] + (hi[dim] - lo[dim]) * static_cast<double>(idx) /
                             static_cast<double>(resolution - 1);
    };

    if (d == 1) {
        Matrix grid(resolution, 1);
        for (std::size_t i = 0; i < resolution; ++i)
            grid(i, 0) = coord(0, i);
        return grid;
    }
    Matrix grid(resolution * resolution, 2);
    std::size_t r = 0;
    for (std::size_t i = 0; i < resolution; ++i)
        for (std::size_t j = 0; j < resolution; ++j, ++r) {
            grid(r, 0) = coord(0, i);
            grid(r, 1) = coord(1, j);
        }
    return grid;
}

std::vector<int> boundary_decisions(const LinearBoundary &boundary, const Matrix &points) {
    if (points.cols() != boundary.weight.size())
        throw ConsistencyError("boundary_decisions: point dim " + std::to_string(points.cols()) +
                               " vs boundary dim " + std::to_string(boundary.weight.size()));
    std::vector<int> out(points.rows());
    for (std::size_t n = 0; n < points.rows(); ++n) {
        double s = boundary.bias;
        const double *x = points.row(n).data();
        for (std::size_t i = 0; i < boundary.weight.size(); ++i)
            s += boundary.weight[i] * x[i];
        out[n] = s > 0.0 ? 1 : 0;
    }
    return out;
}

double decision_agreement(const std::vector<int> &a, const std::vector<int> &b) {
    if (a.size() != b.size())
        throw ConsistencyError("decision_agreement: length mismatch, " +
                               std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    if (a.empty())
        throw ParameterError("decision_agreement: empty decision vectors");
    std::size_t same = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] == b[i])
            ++same;
    return static_cast<double>(same) / static_cast<double>(a.size());
}

double boundary_angle_deg(const LinearBoundary &a, const LinearBoundary &b) {
    const double na = std::sqrt(dot(a.weight, a.weight));
    const double nb = std::sqrt(dot(b.weight, b.weight));
    if (na == 0.0 || nb == 0.0)
        return 90.0;
    double c = std::abs(dot(a.weight, b.weight)) / (na * nb);
    c = std::min(1.0, c);
    return std::acos(c) * 180.0 / 3.14159265358979323846;
}

namespace {

// Train a softmax-linear classifier on a stream built from `ds`. With
// oversample on, every epoch draws a fresh class-balanced index stream;
// otherwise it is a plain shuffled pass. Replacement (when on) swaps slots
// for true-class-conditional draws in the deferred window.
model::Network train_linear_on_stream(const data::GaussianTask &task,
                                      const data::LabeledDataset &ds,
                                      const RebalanceConfig &rebalance,
                                      const model::TrainConfig &train_config,
                                      std::uint64_t stream_seed) {
    model::ArchConfig arch;
    arch.kind = "passthrough";
    arch.input_shape = {task.dim()};
    arch.num_classes = task.num_classes();
    model::Network net = model::Network::build(arch, derive_seed(stream_seed, 1));
    model::SgdOptimizer opt(train_config.momentum, train_config.weight_decay);

    const sampling::ClassStats stats = sampling::compute_class_stats(ds, rebalance.delta);
    const int defer = rebalance.defer_epochs >= 0 ? rebalance.defer_epochs
                                                  : (train_config.epochs + 4) / 5;
    sampling::ReplacementSchedule schedule;
    schedule.delta = rebalance.delta;
    schedule.defer_epochs = rebalance.replacement ? defer : 0;
    schedule.total_epochs = train_config.epochs;
    schedule.rng_seed = derive_seed(stream_seed, 2);
    universum::GaussianConditionalSource source(task);

    const std::size_t max_count = *std::max_element(ds.class_counts.begin(), ds.class_counts.end());
    const std::size_t epoch_len = ds.num_classes() * max_count;
    const std::size_t batch_size = static_cast<std::size_t>(train_config.batch_size);

    for (int epoch = 0; epoch < train_config.epochs; ++epoch) {
        const double lr = model::scheduled_lr(train_config, epoch);
        std::vector<std::size_t> indices;
        if (rebalance.oversample) {
            indices = sampling::oversample_epoch(ds, stats, epoch_len,
                                                 derive_seed(stream_seed, 3, epoch));
        } else {
            indices.resize(ds.size());
            std::iota(indices.begin(), indices.end(), std::size_t{0});
            Rng rng(derive_seed(stream_seed, 3, epoch));
            rng.shuffle(indices);
        }
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < indices.size(); start += batch_size, ++batch_index) {
            const std::size_t n = std::min(batch_size, indices.size() - start);
            sampling::Batch batch;
            batch.samples = Matrix(n, ds.sample_dim());
            batch.labels.resize(n);
            batch.universum_mask.assign(n, 0);
            for (std::size_t i = 0; i < n; ++i) {
                batch.samples.set_row(i, ds.samples.row(indices[start + i]));
                batch.labels[i] = ds.labels[indices[start + i]];
            }
            if (rebalance.replacement)
                batch = sampling::apply_replacement(std::move(batch), stats, source, epoch,
                                                    batch_index, schedule);
            model::train_step(net, opt, batch, lr);
        }
    }
    return net;
}

LinearBoundary head_boundary(const model::Network &net) {
    const model::ParamTensor &w = net.head_weight();
    const model::ParamTensor &b = net.head_bias();
    const std::size_t dim = net.feature_dim();
    LinearBoundary out;
    out.weight.resize(dim);
    for (std::size_t i = 0; i < dim; ++i)
        out.weight[i] = w.value[1 * dim + i] - w.value[0 * dim + i];
    out.bias = b.value[1] - b.value[0];
    return out;
}

std::vector<int> net_decisions(model::Network &net, const Matrix &points) {
    model::LayerContext ctx; // eval
    std::vector<int> out(points.rows());
    constexpr std::size_t kChunk = 4096;
    for (std::size_t start = 0; start < points.rows(); start += kChunk) {
        const std::size_t n = std::min(kChunk, points.rows() - start);
        Matrix chunk(n, points.cols());
        for (std::size_t i = 0; i < n; ++i)
            chunk.set_row(i, points.row(start + i));
        const model::ForwardResult fwd = net.forward(chunk, ctx);
        for (std::size_t i = 0; i < n; ++i) {
            auto row = fwd.logits.row(i);
            std::size_t best = 0;
            for (std::size_t c = 1; c < row.size(); ++c)
                if (row[c] > row[best])
                    best = c;
            out[start + i] = static_cast<int>(best);
        }
    }
    return out;
}

void accumulate(std::vector<double> &acc, const LinearBoundary &b) {
    if (acc.empty())
        acc.assign(b.weight.size() + 1, 0.0);
    for (std::size_t i = 0; i < b.weight.size(); ++i)
        acc[i] += b.weight[i];
    acc.back() += b.bias;
}

} // namespace

BayesCheckResult run_bayes_consistency_check(const data::GaussianTask &task,
                                             const std::vector<std::size_t> &imbalance,
                                             const RebalanceConfig &rebalance,
                                             const model::TrainConfig &train_config,
                                             std::size_t n_seeds, std::size_t grid_resolution,
                                             double span_sigmas) {
    if (task.num_classes() != 2)
        throw ParameterError("bayes consistency check: task must have 2 classes");
    if (imbalance.size() != 2)
        throw ParameterError("bayes consistency check: imbalance must list 2 counts");
    if (n_seeds == 0)
        throw ParameterError("bayes consistency check: n_seeds must be positive");
    train_config.validate();

    const Matrix grid = decision_grid(task, grid_resolution, span_sigmas);
    const LinearBoundary analytic = analytic_bayes_boundary(task, {0.5, 0.5});
    const std::vector<int> analytic_dec = boundary_decisions(analytic, grid);

    const std::size_t balanced_count = *std::max_element(imbalance.begin(), imbalance.end());
    const std::vector<std::size_t> balanced_counts(2, balanced_count);
    // The balanced arm runs the identical pipeline; on balanced data every
    // replacement probability is 0, so only the dataset differs.
    RebalanceConfig balanced_arm = rebalance;
    balanced_arm.oversample = true;
    balanced_arm.replacement = true;

    BayesCheckResult res;
    res.boundary_analytic = analytic.weight;
    res.boundary_analytic.push_back(analytic.bias);

    for (std::size_t s = 0; s < n_seeds; ++s) {
        const std::uint64_t data_seed = derive_seed(train_config.seed, s, 100);
        const std::uint64_t stream_seed = derive_seed(train_config.seed, s, 200);

        data::LabeledDataset ds_bal = data::sample_gaussian_task(task, balanced_counts, data_seed);
        data::LabeledDataset ds_imb = data::sample_gaussian_task(task, imbalance, data_seed);

        model::Network net_bal =
            train_linear_on_stream(task, ds_bal, balanced_arm, train_config, stream_seed);
        model::Network net_reb =
            train_linear_on_stream(task, ds_imb, rebalance, train_config, stream_seed);

        const std::vector<int> dec_bal = net_decisions(net_bal, grid);
        const std::vector<int> dec_reb = net_decisions(net_reb, grid);

        const LinearBoundary b_bal = head_boundary(net_bal);
        const LinearBoundary b_reb = head_boundary(net_reb);
        accumulate(res.boundary_balanced, b_bal);
        accumulate(res.boundary_rebalanced, b_reb);
        res.angle_balanced_deg += boundary_angle_deg(b_bal, analytic);
        res.angle_rebalanced_deg += boundary_angle_deg(b_reb, analytic);
        res.agreement_balanced_vs_analytic += decision_agreement(dec_bal, analytic_dec);
        res.agreement_rebalanced_vs_analytic += decision_agreement(dec_reb, analytic_dec);
        res.per_seed_agreement.push_back(decision_agreement(dec_reb, dec_bal));
    }

    const double inv = 1.0 / static_cast<double>(n_seeds);
    for (double &v : res.boundary_balanced)
        v *= inv;
    for (double &v : res.boundary_rebalanced)
        v *= inv;
    res.angle_balanced_deg *= inv;
    res.angle_rebalanced_deg *= inv;
    res.agreement_balanced_vs_analytic *= inv;
    res.agreement_rebalanced_vs_analytic *= inv;
    res.agreement_rate =
        std::accumulate(res.per_seed_agreement.begin(), res.per_seed_agreement.end(), 0.0) * inv;
    return res;
}

BayesSuiteResult run_bayes_suite(const data::GaussianTask &task,
                                 const std::vector<std::size_t> &imbalance,
                                 const RebalanceConfig &rebalance,
                                 const model::TrainConfig &train_config, std::size_t n_seeds,
                                 std::size_t grid_resolution, double span_sigmas) {
    if (task.num_classes() != 2)
        throw ParameterError("bayes suite: task must have 2 classes");
    if (imbalance.size() != 2)
        throw ParameterError("bayes suite: imbalance must list 2 counts");
    if (n_seeds < 2)
        throw ParameterError("bayes suite: need at least 2 seeds for the self-agreement bar");
    train_config.validate();

    const Matrix grid = decision_grid(task, grid_resolution, span_sigmas);
    const LinearBoundary analytic = analytic_bayes_boundary(task, {0.5, 0.5});
    const std::vector<int> analytic_dec = boundary_decisions(analytic, grid);

    const std::size_t balanced_count = *std::max_element(imbalance.begin(), imbalance.end());
    const std::vector<std::size_t> balanced_counts(2, balanced_count);
    RebalanceConfig balanced_arm = rebalance;
    balanced_arm.oversample = true;
    balanced_arm.replacement = true;
    RebalanceConfig erm_arm;
    erm_arm.oversample = false;
    erm_arm.replacement = false;

    BayesSuiteResult suite;
    suite.rebalanced.boundary_analytic = analytic.weight;
    suite.rebalanced.boundary_analytic.push_back(analytic.bias);
    suite.erm.boundary_analytic = suite.rebalanced.boundary_analytic;

    std::vector<std::vector<int>> balanced_decisions;
    for (std::size_t s = 0; s < n_seeds; ++s) {
        const std::uint64_t data_seed = derive_seed(train_config.seed, s, 100);
        const std::uint64_t stream_seed = derive_seed(train_config.seed, s, 200);

        data::LabeledDataset ds_bal = data::sample_gaussian_task(task, balanced_counts, data_seed);
        data::LabeledDataset ds_imb = data::sample_gaussian_task(task, imbalance, data_seed);

        model::Network net_bal =
            train_linear_on_stream(task, ds_bal, balanced_arm, train_config, stream_seed);
        model::Network net_reb =
            train_linear_on_stream(task, ds_imb, rebalance, train_config, stream_seed);
        model::Network net_erm =
            train_linear_on_stream(task, ds_imb, erm_arm, train_config, stream_seed);

        const std::vector<int> dec_bal = net_decisions(net_bal, grid);
        const std::vector<int> dec_reb = net_decisions(net_reb, grid);
        const std::vector<int> dec_erm = net_decisions(net_erm, grid);

        const LinearBoundary b_bal = head_boundary(net_bal);
        for (auto *side : {&suite.rebalanced, &suite.erm}) {
            accumulate(side->boundary_balanced, b_bal);
            side->angle_balanced_deg += boundary_angle_deg(b_bal, analytic);
            side->agreement_balanced_vs_analytic += decision_agreement(dec_bal, analytic_dec);
        }
        const LinearBoundary b_reb = head_boundary(net_reb);
        accumulate(suite.rebalanced.boundary_rebalanced, b_reb);
        suite.rebalanced.angle_rebalanced_deg += boundary_angle_deg(b_reb, analytic);
        suite.rebalanced.agreement_rebalanced_vs_analytic +=
            decision_agreement(dec_reb, analytic_dec);
        suite.rebalanced.per_seed_agreement.push_back(decision_agreement(dec_reb, dec_bal));

        const LinearBoundary b_erm = head_boundary(net_erm);
        accumulate(suite.erm.boundary_rebalanced, b_erm);
        suite.erm.angle_rebalanced_deg += boundary_angle_deg(b_erm, analytic);
        suite.erm.agreement_rebalanced_vs_analytic += decision_agreement(dec_erm, analytic_dec);
        suite.erm.per_seed_agreement.push_back(decision_agreement(dec_erm, dec_bal));

        balanced_decisions.push_back(dec_bal);
    }

    const double inv = 1.0 / static_cast<double>(n_seeds);
    for (auto *side : {&suite.rebalanced, &suite.erm}) {
        for (double &v : side->boundary_balanced)
            v *= inv;
        for (double &v : side->boundary_rebalanced)
            v *= inv;
        side->angle_balanced_deg *= inv;
        side->angle_rebalanced_deg *= inv;
        side->agreement_balanced_vs_analytic *= inv;
        side->agreement_rebalanced_vs_analytic *= inv;
        side->agreement_rate = std::accumulate(side->per_seed_agreement.begin(),
                                               side->per_seed_agreement.end(), 0.0) *
                               inv;
    }

    for (std::size_t a = 0; a < n_seeds; ++a)
        for (std::size_t b = a + 1; b < n_seeds; ++b)
            suite.balanced_self_agreement.push_back(
                decision_agreement(balanced_decisions[a], balanced_decisions[b]));
    std::vector<double> sorted = suite.balanced_self_agreement;
    std::sort(sorted.begin(), sorted.end());
    // nearest-rank 5th percentile
    const std::size_t rank = static_cast<std::size_t>(
        std::ceil(0.05 * static_cast<double>(sorted.size())));
    suite.self_agreement_p5 = sorted[rank == 0 ? 0 : rank - 1];

    suite.rebalanced_meets_bar = suite.rebalanced.agreement_rate >= suite.self_agreement_p5;
    suite.rebalanced_beats_erm_every_seed = true;
    for (std::size_t s = 0; s < n_seeds; ++s)
        if (suite.rebalanced.per_seed_agreement[s] <= suite.erm.per_seed_agreement[s])
            suite.rebalanced_beats_erm_every_seed = false;
    return suite;
}

GradientDecomposition gradient_decomposition(model::Network &net, const sampling::Batch &batch) {
    const std::size_t num_classes = net.arch().num_classes;
    const std::size_t n = batch.size();
    if (n == 0)
        throw ParameterError("gradient_decomposition: empty batch");

    std::vector<std::size_t> counts(num_classes, 0);
    for (int y : batch.labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
            throw ConsistencyError("gradient_decomposition: label " + std::to_string(y) +
                                   " outside [0, " + std::to_string(num_classes) + ")");
        ++counts[static_cast<std::size_t>(y)];
    }
    const std::size_t present =
        static_cast<std::size_t>(std::count_if(counts.begin(), counts.end(),
                                               [](std::size_t c) { return c > 0; }));
    if (present < 2)
        throw ConsistencyError("gradient_decomposition: batch holds a single class; "
                               "the per-class split is degenerate");

    model::LayerContext ctx; // eval mode: the extractor is frozen here
    const model::ForwardResult fwd = net.forward(batch.samples, ctx);
    const std::size_t dim = net.feature_dim();
    const std::size_t flat = num_classes * dim + num_classes; // head weight + bias

    GradientDecomposition out;
    out.class_counts = counts;
    out.per_class_grad.assign(num_classes, std::vector<double>(flat, 0.0));
    out.full_grad.assign(flat, 0.0);

    // per-sample head gradient of -log softmax: dW[o] = (p_o - [o==y]) z,
    // db[o] = p_o - [o==y]; accumulated per class, then averaged
    std::vector<double> sample_grad(flat);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t y = static_cast<std::size_t>(batch.labels[i]);
        const double *z = fwd.features.row(i).data();
        const double *p = fwd.probabilities.row(i).data();
        for (std::size_t o = 0; o < num_classes; ++o) {
            const double err = p[o] - (o == y ? 1.0 : 0.0);
            for (std::size_t j = 0; j < dim; ++j)
                sample_grad[o * dim + j] = err * z[j];
            sample_grad[num_classes * dim + o] = err;
        }
        std::vector<double> &cls = out.per_class_grad[y];
        for (std::size_t j = 0; j < flat; ++j) {
            cls[j] += sample_grad[j];
            out.full_grad[j] += sample_grad[j];
        }
    }
    for (std::size_t j = 0; j < flat; ++j)
        out.full_grad[j] /= static_cast<double>(n);
    for (std::size_t c = 0; c < num_classes; ++c)
        if (counts[c] > 0)
            for (double &v : out.per_class_grad[c])
                v /= static_cast<double>(counts[c]);

    out.grad_norms.resize(num_classes, 0.0);
    for (std::size_t c = 0; c < num_classes; ++c)
        out.grad_norms[c] = std::sqrt(dot(out.per_class_grad[c], out.per_class_grad[c]));

    out.cosine = Matrix(num_classes, num_classes);
    for (std::size_t a = 0; a < num_classes; ++a)
        for (std::size_t b = 0; b < num_classes; ++b) {
            const double na = out.grad_norms[a], nb = out.grad_norms[b];
            out.cosine(a, b) = (na > 0.0 && nb > 0.0)
                                   ? dot(out.per_class_grad[a], out.per_class_grad[b]) / (na * nb)
                                   : 0.0;
        }

    double max_err = 0.0;
    for (std::size_t j = 0; j < flat; ++j) {
        double weighted = 0.0;
        for (std::size_t c = 0; c < num_classes; ++c)
            weighted += static_cast<double>(counts[c]) / static_cast<double>(n) *
                        out.per_class_grad[c][j];
        max_err = std::max(max_err, std::abs(weighted - out.full_grad[j]));
    }
    out.recomposition_error = max_err;

    std::size_t majority = num_classes, minority = num_classes;
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (counts[c] == 0)
            continue;
        if (majority == num_classes || counts[c] > counts[majority])
            majority = c;
        if (minority == num_classes || counts[c] < counts[minority])
            minority = c;
    }
    if (out.grad_norms[majority] > 0.0)
        out.minority_to_majority_ratio = out.grad_norms[minority] / out.grad_norms[majority];
    return out;
}

} // namespace cauirl::theory
