#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cauirl/matrix.hpp"

namespace cauirl::metrics {

// Per-class Euclidean distance between the class feature means of two
// datasets, a scalar proxy for how far each class's representation drifted
// between them (e.g. long-tailed train vs balanced test).
struct C2GReport {
    std::vector<double> per_class_gap;
    double mean_gap = 0.0;
    std::string distance_kind = "euclidean";
    Matrix class_means_a; // num_classes x feature_dim
    Matrix class_means_b;
};

C2GReport c2g(const Matrix &features_a, const std::vector<int> &labels_a,
              const Matrix &features_b, const std::vector<int> &labels_b,
              std::size_t num_classes);

struct AccuracyReport {
    double overall = 0.0;
    std::vector<double> per_class;
    std::vector<std::size_t> per_class_counts;
};

AccuracyReport top1_accuracy(const std::vector<int> &predictions, const std::vector<int> &labels,
                             std::size_t num_classes);

// Classes sorted by descending training count, split into n_groups
// contiguous chunks (earlier chunks absorb the remainder when the split is
// uneven); group 1 holds the largest classes.
struct GroupAccuracyReport {
    std::vector<std::vector<std::size_t>> groups; // class ids per group
    std::vector<double> group_accuracy;           // unweighted mean within group
    double overall = 0.0;                         // test-count-weighted mean, if counts given
};

GroupAccuracyReport group_accuracy(const std::vector<double> &per_class_acc,
                                   const std::vector<std::size_t> &train_counts,
                                   std::size_t n_groups,
                                   const std::vector<std::size_t> &test_counts = {});

struct ClusteringReport {
    std::vector<int> assignments;
    Matrix centroids;
    double silhouette = 0.0;
};

// Seeded k-means++ initialization, Lloyd iterations (max 100, tolerance
// 1e-6), then the mean silhouette score under Euclidean distance. Degenerate
// points (singleton clusters, zero spread) score 0 by convention. An empty
// cluster is re-seeded from the point farthest from its assigned centroid.
ClusteringReport kmeans_silhouette(const Matrix &features, std::size_t k, std::uint64_t seed);

// Spearman rank correlation; used to quantify the "gap grows toward the
// tail" trend of C2G against class index.
double spearman(const std::vector<double> &a, const std::vector<double> &b);

} // namespace cauirl::metrics
