#include "cauirl/universum.hpp"

#include <random>
#include <string>

#include "cauirl/errors.hpp"

namespace cauirl::universum {

namespace {

void check_lambda(double lambda) {
    if (lambda < 0.0 || lambda > 1.0)
        throw ParameterError("mixing coefficient must lie in [0,1]");
}

} // namespace

std::vector<double> homu(const Matrix &batch_samples, std::size_t target_index, double lambda,
                         bool exclude_self) {
    check_lambda(lambda);
    const std::size_t n = batch_samples.rows();
    if (n == 0)
        throw ParameterError("homu: empty batch");
    if (target_index >= n)
        throw ParameterError("homu: target index out of range");
    if (exclude_self && n < 2)
        throw ParameterError("homu: exclude-self needs at least two rows");

    const std::size_t dim = batch_samples.cols();
    std::vector<double> mean(dim, 0.0);
    std::size_t used = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (exclude_self && i == target_index)
            continue;
        const auto row = batch_samples.row(i);
        for (std::size_t j = 0; j < dim; ++j)
            mean[j] += row[j];
        ++used;
    }
    const auto target = batch_samples.row(target_index);
    std::vector<double> out(dim);
    for (std::size_t j = 0; j < dim; ++j)
        out[j] = (1.0 - lambda) * mean[j] / static_cast<double>(used) + lambda * target[j];
    return out;
}

std::vector<double> homu_same_class(const Matrix &batch_samples, const std::vector<int> &batch_labels,
                                    std::size_t target_index, double lambda, bool exclude_self) {
    check_lambda(lambda);
    if (target_index >= batch_samples.rows())
        throw ParameterError("homu_same_class: target index out of range");
    if (batch_labels.size() != batch_samples.rows())
        throw ConsistencyError("homu_same_class: label/sample length mismatch");

    const int label = batch_labels[target_index];
    const std::size_t dim = batch_samples.cols();
    std::vector<double> mean(dim, 0.0);
    std::size_t used = 0;
    for (std::size_t i = 0; i < batch_samples.rows(); ++i) {
        if (batch_labels[i] != label)
            continue;
        if (exclude_self && i == target_index)
            continue;
        const auto row = batch_samples.row(i);
        for (std::size_t j = 0; j < dim; ++j)
            mean[j] += row[j];
        ++used;
    }
    if (used == 0)
        throw ParameterError("homu_same_class: no same-class samples for label " +
                             std::to_string(label));
    const auto target = batch_samples.row(target_index);
    std::vector<double> out(dim);
    for (std::size_t j = 0; j < dim; ++j)
        out[j] = (1.0 - lambda) * mean[j] / static_cast<double>(used) + lambda * target[j];
    return out;
}

std::vector<double> mixup_pair(std::span<const double> x_i, std::span<const double> x_j,
                               double lambda) {
    check_lambda(lambda);
    if (x_i.size() != x_j.size())
        throw ConsistencyError("mixup_pair: shape mismatch");
    std::vector<double> out(x_i.size());
    for (std::size_t k = 0; k < out.size(); ++k)
        out[k] = lambda * x_i[k] + (1.0 - lambda) * x_j[k];
    return out;
}

std::vector<double> external_universum(const data::LabeledDataset &pool, int class_label,
                                       std::uint64_t seed) {
    if (class_label < 0 || static_cast<std::size_t>(class_label) >= pool.num_classes())
        throw ParameterError("external universum: class " + std::to_string(class_label) +
                             " is outside the pool's label range");
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < pool.size(); ++i)
        if (pool.labels[i] == class_label)
            members.push_back(i);
    if (members.empty())
        throw CapacityError("external universum: pool has no samples of class " +
                            std::to_string(class_label));
    Rng rng(seed);
    const auto row = pool.samples.row(members[rng.uniform_index(members.size())]);
    return {row.begin(), row.end()};
}

std::vector<double> HoMuSource::generate(const sampling::Batch &pristine, std::size_t slot,
                                         Rng &) {
    return homu(pristine.samples, slot, config_.lambda, config_.exclude_self_from_mean);
}

std::vector<double> HoMuSameClassSource::generate(const sampling::Batch &pristine, std::size_t slot,
                                                  Rng &) {
    return homu_same_class(pristine.samples, pristine.labels, slot, config_.lambda,
                           config_.exclude_self_from_mean);
}

ExternalPoolSource::ExternalPoolSource(const data::LabeledDataset &pool) : pool_(pool) {
    by_class_.resize(pool.num_classes());
    for (std::size_t i = 0; i < pool.size(); ++i)
        by_class_[static_cast<std::size_t>(pool.labels[i])].push_back(i);
}

std::vector<double> ExternalPoolSource::generate(const sampling::Batch &pristine, std::size_t slot,
                                                 Rng &rng) {
    const auto c = static_cast<std::size_t>(pristine.labels[slot]);
    if (pristine.labels[slot] < 0 || c >= by_class_.size())
        throw ParameterError("external universum: class " +
                             std::to_string(pristine.labels[slot]) +
                             " is outside the pool's label range");
    if (by_class_[c].empty())
        throw CapacityError("external universum: pool has no samples of class " +
                            std::to_string(pristine.labels[slot]));
    const auto row = pool_.samples.row(by_class_[c][rng.uniform_index(by_class_[c].size())]);
    return {row.begin(), row.end()};
}

std::vector<double> MixupPairSource::generate(const sampling::Batch &pristine, std::size_t slot,
                                              Rng &rng) {
    double lambda = lambda_;
    if (beta_alpha_ > 0.0) {
        // Beta(a,a) via two gamma draws; only this optional path uses a
        // standard-library distribution.
        std::gamma_distribution<double> gamma(beta_alpha_, 1.0);
        const double g1 = gamma(rng.engine());
        const double g2 = gamma(rng.engine());
        lambda = g1 + g2 > 0.0 ? g1 / (g1 + g2) : 0.5;
    }
    const std::size_t other = rng.uniform_index(pristine.size());
    return mixup_pair(pristine.samples.row(slot), pristine.samples.row(other), lambda);
}

GaussianConditionalSource::GaussianConditionalSource(const data::GaussianTask &task)
    : task_(task), chol_(data::cholesky(task.covariance)) {}

std::vector<double> GaussianConditionalSource::generate(const sampling::Batch &pristine,
                                                        std::size_t slot, Rng &rng) {
    const auto c = static_cast<std::size_t>(pristine.labels[slot]);
    const std::size_t dim = task_.dim();
    std::vector<double> z(dim), out(dim);
    for (std::size_t d = 0; d < dim; ++d)
        z[d] = rng.normal();
    for (std::size_t d = 0; d < dim; ++d) {
        double v = task_.class_means[c][d];
        for (std::size_t k = 0; k <= d; ++k)
            v += chol_[d][k] * z[k];
        out[d] = v;
    }
    return out;
}

} // namespace cauirl::universum
