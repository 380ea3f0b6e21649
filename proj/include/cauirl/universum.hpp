#pragma once

#include <cstdint>
#include <vector>

#include "cauirl/dataset.hpp"
#include "cauirl/matrix.hpp"
#include "cauirl/sampling.hpp"

namespace cauirl::universum {

enum class HoMuMode { batch, same_class, external };

struct HoMuConfig {
    double lambda = 0.5; // mixing coefficient in [0,1]
    HoMuMode mode = HoMuMode::batch;
    bool exclude_self_from_mean = false;
};

// Higher-order mix of one batch row with the whole-batch mean:
//   (1 - lambda) * mean(batch) + lambda * batch.row(target_index)
// The mean includes the target row itself unless exclude_self is set.
std::vector<double> homu(const Matrix &batch_samples, std::size_t target_index, double lambda,
                         bool exclude_self = false);

// As homu, but the mean runs over rows of batch_labels equal to the target
// row's label only.
std::vector<double> homu_same_class(const Matrix &batch_samples, const std::vector<int> &batch_labels,
                                    std::size_t target_index, double lambda,
                                    bool exclude_self = false);

// Low-order pairwise mix: lambda * x_i + (1 - lambda) * x_j.
std::vector<double> mixup_pair(std::span<const double> x_i, std::span<const double> x_j,
                               double lambda);

// Seeded uniform draw from the pool rows assigned to class_label.
std::vector<double> external_universum(const data::LabeledDataset &pool, int class_label,
                                       std::uint64_t seed);

// --- batch replacement sources ------------------------------------------

class HoMuSource final : public sampling::UniversumSource {
public:
    explicit HoMuSource(HoMuConfig config) : config_(config) {}
    std::vector<double> generate(const sampling::Batch &pristine, std::size_t slot,
                                 Rng &rng) override;

private:
    HoMuConfig config_;
};

class HoMuSameClassSource final : public sampling::UniversumSource {
public:
    explicit HoMuSameClassSource(HoMuConfig config) : config_(config) {}
    std::vector<double> generate(const sampling::Batch &pristine, std::size_t slot,
                                 Rng &rng) override;

private:
    HoMuConfig config_;
};

// Draws from an external pool, restricted to the slot's class.
class ExternalPoolSource final : public sampling::UniversumSource {
public:
    explicit ExternalPoolSource(const data::LabeledDataset &pool);
    std::vector<double> generate(const sampling::Batch &pristine, std::size_t slot,
                                 Rng &rng) override;

private:
    const data::LabeledDataset &pool_;
    std::vector<std::vector<std::size_t>> by_class_;
};

// Low-order mixup baseline: mixes two random pristine rows. lambda is fixed
// unless beta_alpha > 0, in which case it is drawn from Beta(alpha, alpha).
class MixupPairSource final : public sampling::UniversumSource {
public:
    MixupPairSource(double lambda, double beta_alpha = 0.0)
        : lambda_(lambda), beta_alpha_(beta_alpha) {}
    std::vector<double> generate(const sampling::Batch &pristine, std::size_t slot,
                                 Rng &rng) override;

private:
    double lambda_;
    double beta_alpha_;
};

// Samples the true class conditional of a Gaussian task; used by the
// Bayes-consistency harness where the Universum must match the class
// conditional exactly.
class GaussianConditionalSource final : public sampling::UniversumSource {
public:
    explicit GaussianConditionalSource(const data::GaussianTask &task);
    std::vector<double> generate(const sampling::Batch &pristine, std::size_t slot,
                                 Rng &rng) override;

private:
    const data::GaussianTask &task_;
    std::vector<std::vector<double>> chol_;
};

} // namespace cauirl::universum
