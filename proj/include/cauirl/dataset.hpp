#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cauirl/matrix.hpp"

namespace cauirl::data {

// Universal data container: flat real-valued sample rows plus labels.
// Pixel-derived values are normalized to [0,1] at load time. Immutable by
// convention after construction; freely shareable across threads.
struct LabeledDataset {
    Matrix samples;                        // one row per sample
    std::vector<std::size_t> shape;        // e.g. {3,32,32}; product == samples.cols()
    std::vector<int> labels;               // class index in [0, num_classes)
    std::vector<std::size_t> class_counts; // class_counts[c] == #rows labeled c

    std::size_t size() const { return labels.size(); }
    std::size_t num_classes() const { return class_counts.size(); }
    std::size_t sample_dim() const { return samples.cols(); }
};

// Recomputes class_counts from labels and checks the container invariants.
// Throws ConsistencyError on violation.
void finalize_dataset(LabeledDataset &ds, std::size_t num_classes);

// Long-tailed profile: per-class target counts decaying exponentially from
// base_count down to base_count / imbalance_rate.
struct LTProfile {
    std::size_t num_classes = 0;
    double imbalance_rate = 1.0; // >= 1
    std::size_t base_count = 0;  // size of the largest class
    std::vector<std::size_t> per_class_targets;
};

// per_class_targets[c] = round(base_count * v^(-c/(C-1)))
LTProfile make_lt_profile(std::size_t num_classes, double imbalance_rate, std::size_t base_count);

// Parametric Gaussian classification task with shared covariance.
struct GaussianTask {
    std::vector<std::vector<double>> class_means;
    std::vector<std::vector<double>> covariance; // shared, symmetric positive definite
    std::vector<double> train_priors;
    std::vector<double> test_priors;

    std::size_t num_classes() const { return class_means.size(); }
    std::size_t dim() const { return class_means.empty() ? 0 : class_means.front().size(); }
};

// --- loaders -------------------------------------------------------------
//
// CIFAR-10 binary batch layout, per record:
//   1 byte label (0..9), then 3072 pixel bytes (row-major R, G, B planes).
// IDX layout (MNIST family), big-endian:
//   images: magic 0x00000803, count, rows, cols, then count*rows*cols bytes
//   labels: magic 0x00000801, count, then count label bytes

// Loads the five standard training batch files data_batch_1.bin .. _5.bin.
LabeledDataset load_cifar10(const std::filesystem::path &dir_path);

// Loads a single CIFAR-10 format batch file; record count from file size.
LabeledDataset load_cifar10_batch(const std::filesystem::path &file_path);

LabeledDataset load_idx(const std::filesystem::path &images_path,
                        const std::filesystem::path &labels_path);

// Writers for the same bit-exact formats (round-trip partners of the
// loaders; also used to materialize LT datasets on disk).
void write_cifar10_batch(const LabeledDataset &ds, const std::filesystem::path &file_path);
void write_idx(const LabeledDataset &ds, const std::filesystem::path &images_path,
               const std::filesystem::path &labels_path);

// --- synthesis -----------------------------------------------------------

// Retains the first per_class_targets[c] samples of a seeded uniform shuffle
// of each class. Deterministic for a fixed seed.
LabeledDataset make_long_tailed(const LabeledDataset &balanced, const LTProfile &profile,
                                std::uint64_t seed);

// Draws n_per_class[c] i.i.d. samples from N(mean_c, covariance).
LabeledDataset sample_gaussian_task(const GaussianTask &task,
                                    const std::vector<std::size_t> &n_per_class,
                                    std::uint64_t seed);

// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
// Throws NumericError if the matrix is not positive definite.
std::vector<std::vector<double>> cholesky(const std::vector<std::vector<double>> &m);

} // namespace cauirl::data
