#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cauirl/dataset.hpp"
#include "cauirl/metrics.hpp"
#include "cauirl/model.hpp"
#include "cauirl/theory.hpp"

namespace cauirl::experiment {

// Where the training data comes from and how it is imbalanced.
//   source "idx":      train/test IDX pairs under data_dir
//   source "cifar10":  the five binary train batches + test_batch.bin
//   data_dir empty -> CAUIRL_DATA_DIR environment variable
struct DatasetSpec {
    std::string source = "idx";
    std::string data_dir;
    std::string train_images = "train-images-idx3-ubyte";
    std::string train_labels = "train-labels-idx1-ubyte";
    std::string test_images = "test-images-idx3-ubyte";
    std::string test_labels = "test-labels-idx1-ubyte";
    double imbalance_rate = 1.0; // > 1 applies long-tailed subsampling
    std::size_t lt_base_count = 0; // 0: smallest source class count
    std::uint64_t lt_seed = 1;
};

struct UniversumSpec {
    double lambda = 0.5;
    double delta = 0.9;
    int defer_epochs = -1; // <0: last 20% of epochs
    bool exclude_self = false;
    std::string external_images; // pool for method cauirl_external
    std::string external_labels;
    double mixup_beta_alpha = 0.0; // >0: Beta-drawn lambda for mixup_universum
};

// Synthetic two-Gaussian task used by the Bayes-consistency command.
struct BayesSpec {
    std::vector<std::vector<double>> means = {{-1.5, 0.0}, {1.5, 0.0}};
    std::vector<std::vector<double>> covariance = {{1.0, 0.0}, {0.0, 1.0}};
    std::vector<std::size_t> imbalance = {1000, 20};
    std::size_t seeds = 10;
    std::size_t grid = 200;
    double span_sigmas = 4.0;
    model::TrainConfig train; // defaults overridden below in load_run_config
};

struct RunConfig {
    DatasetSpec dataset;
    std::string method = "erm"; // erm | oversample | cauirl | cauirl_sc |
                                // cauirl_external | mixup_universum
    UniversumSpec universum;
    model::ArchConfig arch;
    model::TrainConfig train;
    std::size_t epoch_len = 0; // 0: classes * largest class count
    bool augment = true;       // flip + padded crop, image-shaped data only
    std::size_t n_groups = 5;
    std::string out_dir = "out";
    BayesSpec bayes;
};

// JSON file, every field optional; defaults as above. Throws FormatError /
// ParameterError on malformed content or invalid values.
RunConfig load_run_config(const std::filesystem::path &path);
RunConfig run_config_from_json(const std::string &text);
std::string run_config_to_json(const RunConfig &config); // fully resolved echo

// Loaded train/test pair after optional long-tailed subsampling.
struct ResolvedData {
    data::LabeledDataset train;
    data::LabeledDataset test;
    std::optional<data::LabeledDataset> external_pool;
};

ResolvedData resolve_data(const RunConfig &config);

// Random horizontal flip + 4-pixel zero-padded random crop, in place, for
// rows shaped (channels, h, w).
void augment_batch(Matrix &samples, const std::vector<std::size_t> &shape, Rng &rng);

struct TrainOutcome {
    double final_top1 = 0.0;
    std::vector<double> final_per_class;
    std::vector<double> group_acc;
    std::vector<std::vector<std::size_t>> groups;
    double final_train_loss = 0.0;
    long clamped_probabilities = 0; // times p_true hit the 1e-12 floor
    double wall_seconds = 0.0;
    std::filesystem::path csv_path;
    std::filesystem::path checkpoint_path;
    std::filesystem::path report_path;
};

// Full training run: per-epoch metrics CSV, final checkpoint, JSON report.
// All randomness derives from config.train.seed; reruns give byte-identical
// CSVs. Pass write_files=false to skip all disk output (useful in sweeps).
TrainOutcome run_training(const RunConfig &config, bool write_files = true);

// Long-tailed dataset synthesis to disk: IDX pair + JSON manifest.
struct MakeLtOutcome {
    std::filesystem::path images_path;
    std::filesystem::path labels_path;
    std::filesystem::path manifest_path;
    std::vector<std::size_t> class_counts;
};

MakeLtOutcome run_make_lt(const RunConfig &config);

// C2G between the configured train and test sets under the checkpointed
// extractor; emits per-class CSV and a JSON summary.
struct C2GOutcome {
    metrics::C2GReport report;
    double spearman_class_index = 0.0; // class index vs gap
    std::filesystem::path csv_path;
    std::filesystem::path json_path;
};

C2GOutcome run_c2g(const RunConfig &config, const std::filesystem::path &checkpoint,
                   bool write_files = true);

// Grid sweep over one parameter; paired seeds across values.
struct SweepRow {
    double value = 0.0;
    std::uint64_t seed = 0;
    double top1 = 0.0;
    double smallest_group_acc = 0.0;
};

struct SweepSummary {
    double value = 0.0;
    double mean_top1 = 0.0;
    double stderr_top1 = 0.0;
};

struct SweepOutcome {
    std::vector<SweepRow> rows;
    std::vector<SweepSummary> summary;
    std::filesystem::path csv_path;
};

SweepOutcome run_sweep(const RunConfig &config, const std::string &parameter,
                       std::vector<double> values, std::size_t n_seeds, bool write_files = true);

struct BayesOutcome {
    theory::BayesSuiteResult suite;
    std::filesystem::path json_path;
};

BayesOutcome run_bayes(const RunConfig &config, bool write_files = true);

} // namespace cauirl::experiment
