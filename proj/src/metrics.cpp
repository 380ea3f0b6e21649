#include "cauirl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "cauirl/errors.hpp"
#include "cauirl/rng.hpp"

namespace cauirl::metrics {

namespace {

Matrix class_means(const Matrix &features, const std::vector<int> &labels,
                   std::size_t num_classes, const char *side) {
    if (features.rows() != labels.size())
        throw ConsistencyError("c2g: feature rows and labels disagree on side " +
                               std::string(side));
    Matrix means(num_classes, features.cols());
    std::vector<std::size_t> counts(num_classes, 0);
    for (std::size_t n = 0; n < features.rows(); ++n) {
        const int y = labels[n];
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
            throw ConsistencyError("c2g: label " + std::to_string(y) + " outside [0, " +
                                   std::to_string(num_classes) + ") on side " + side);
        const std::size_t c = static_cast<std::size_t>(y);
        ++counts[c];
        const double *x = features.row(n).data();
        double *m = means.row(c).data();
        for (std::size_t i = 0; i < features.cols(); ++i)
            m[i] += x[i];
    }
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (counts[c] == 0)
            throw ConsistencyError("c2g: class " + std::to_string(c) + " has no samples on side " +
                                   std::string(side));
        double *m = means.row(c).data();
        for (std::size_t i = 0; i < features.cols(); ++i)
            m[i] /= static_cast<double>(counts[c]);
    }
    return means;
}

double sq_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

} // namespace

C2GReport c2g(const Matrix &features_a, const std::vector<int> &labels_a,
              const Matrix &features_b, const std::vector<int> &labels_b,
              std::size_t num_classes) {
    if (features_a.cols() != features_b.cols())
        throw ConsistencyError("c2g: feature widths differ (" + std::to_string(features_a.cols()) +
                               " vs " + std::to_string(features_b.cols()) + ")");
    C2GReport rep;
    rep.class_means_a = class_means(features_a, labels_a, num_classes, "A");
    rep.class_means_b = class_means(features_b, labels_b, num_classes, "B");
    rep.per_class_gap.resize(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c)
        rep.per_class_gap[c] =
            std::sqrt(sq_distance(rep.class_means_a.row(c), rep.class_means_b.row(c)));
    rep.mean_gap = std::accumulate(rep.per_class_gap.begin(), rep.per_class_gap.end(), 0.0) /
                   static_cast<double>(num_classes);
    return rep;
}

AccuracyReport top1_accuracy(const std::vector<int> &predictions, const std::vector<int> &labels,
                             std::size_t num_classes) {
    if (predictions.empty())
        throw ParameterError("top1_accuracy: empty input");
    if (predictions.size() != labels.size())
        throw ConsistencyError("top1_accuracy: " + std::to_string(predictions.size()) +
                               " predictions vs " + std::to_string(labels.size()) + " labels");
    AccuracyReport rep;
    rep.per_class.assign(num_classes, 0.0);
    rep.per_class_counts.assign(num_classes, 0);
    std::size_t correct = 0;
    for (std::size_t n = 0; n < labels.size(); ++n) {
        const int y = labels[n];
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
            throw ConsistencyError("top1_accuracy: label " + std::to_string(y) +
                                   " outside [0, " + std::to_string(num_classes) + ")");
        const std::size_t c = static_cast<std::size_t>(y);
        ++rep.per_class_counts[c];
        if (predictions[n] == y) {
            ++correct;
            rep.per_class[c] += 1.0;
        }
    }
    for (std::size_t c = 0; c < num_classes; ++c)
        if (rep.per_class_counts[c] > 0)
            rep.per_class[c] /= static_cast<double>(rep.per_class_counts[c]);
    rep.overall = static_cast<double>(correct) / static_cast<double>(labels.size());
    return rep;
}

GroupAccuracyReport group_accuracy(const std::vector<double> &per_class_acc,
                                   const std::vector<std::size_t> &train_counts,
                                   std::size_t n_groups,
                                   const std::vector<std::size_t> &test_counts) {
    const std::size_t c_total = per_class_acc.size();
    if (c_total != train_counts.size())
        throw ConsistencyError("group_accuracy: " + std::to_string(c_total) + " accuracies vs " +
                               std::to_string(train_counts.size()) + " train counts");
    if (n_groups == 0 || n_groups > c_total)
        throw ParameterError("group_accuracy: n_groups must lie in [1, classes]");

    // descending train count; ties break toward the lower class id
    std::vector<std::size_t> order(c_total);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return train_counts[a] > train_counts[b];
    });

    GroupAccuracyReport rep;
    const std::size_t base = c_total / n_groups;
    const std::size_t extra = c_total % n_groups; // first `extra` groups get one more
    std::size_t pos = 0;
    for (std::size_t g = 0; g < n_groups; ++g) {
        const std::size_t size = base + (g < extra ? 1 : 0);
        std::vector<std::size_t> members(order.begin() + static_cast<std::ptrdiff_t>(pos),
                                         order.begin() + static_cast<std::ptrdiff_t>(pos + size));
        double acc = 0.0;
        for (std::size_t cls : members)
            acc += per_class_acc[cls];
        rep.group_accuracy.push_back(acc / static_cast<double>(size));
        rep.groups.push_back(std::move(members));
        pos += size;
    }

    if (!test_counts.empty()) {
        if (test_counts.size() != c_total)
            throw ConsistencyError("group_accuracy: test_counts length mismatch");
        double weighted = 0.0;
        std::size_t total = 0;
        for (std::size_t c = 0; c < c_total; ++c) {
            weighted += per_class_acc[c] * static_cast<double>(test_counts[c]);
            total += test_counts[c];
        }
        if (total > 0)
            rep.overall = weighted / static_cast<double>(total);
    }
    return rep;
}

ClusteringReport kmeans_silhouette(const Matrix &features, std::size_t k, std::uint64_t seed) {
    const std::size_t n = features.rows();
    if (k < 2)
        throw ParameterError("kmeans_silhouette: k must be at least 2");
    if (n < k)
        throw ParameterError("kmeans_silhouette: " + std::to_string(n) + " points for k=" +
                             std::to_string(k));

    Rng rng(seed);
    Matrix centroids(k, features.cols());

    // k-means++ style: first centroid uniform, then proportional to squared
    // distance from the nearest chosen centroid.
    std::vector<double> d2(n, std::numeric_limits<double>::max());
    centroids.set_row(0, features.row(rng.uniform_index(n)));
    for (std::size_t c = 1; c < k; ++c) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], sq_distance(features.row(i), centroids.row(c - 1)));
            total += d2[i];
        }
        std::size_t pick = 0;
        if (total > 0.0) {
            const double target = rng.uniform() * total;
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                acc += d2[i];
                if (acc >= target) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = rng.uniform_index(n); // all points identical
        }
        centroids.set_row(c, features.row(pick));
    }

    std::vector<int> assign(n, 0);
    constexpr int kMaxIters = 100;
    constexpr double kTol = 1e-6;
    for (int iter = 0; iter < kMaxIters; ++iter) {
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::max();
            int bc = 0;
            for (std::size_t c = 0; c < k; ++c) {
                const double d = sq_distance(features.row(i), centroids.row(c));
                if (d < best) {
                    best = d;
                    bc = static_cast<int>(c);
                }
            }
            assign[i] = bc;
        }

        Matrix next(k, features.cols());
        std::vector<std::size_t> sizes(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            ++sizes[static_cast<std::size_t>(assign[i])];
            const double *x = features.row(i).data();
            double *m = next.row(static_cast<std::size_t>(assign[i])).data();
            for (std::size_t j = 0; j < features.cols(); ++j)
                m[j] += x[j];
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (sizes[c] > 0) {
                double *m = next.row(c).data();
                for (std::size_t j = 0; j < features.cols(); ++j)
                    m[j] /= static_cast<double>(sizes[c]);
            } else {
                // deterministic rescue: move the centroid onto the point
                // farthest from its current centroid
                std::size_t far = 0;
                double best = -1.0;
                for (std::size_t i = 0; i < n; ++i) {
                    const double d =
                        sq_distance(features.row(i),
                                    centroids.row(static_cast<std::size_t>(assign[i])));
                    if (d > best) {
                        best = d;
                        far = i;
                    }
                }
                next.set_row(c, features.row(far));
            }
        }

        double shift = 0.0;
        for (std::size_t c = 0; c < k; ++c)
            shift = std::max(shift, sq_distance(centroids.row(c), next.row(c)));
        centroids = next;
        if (std::sqrt(shift) < kTol)
            break;
    }
    // final assignment against the converged centroids
    for (std::size_t i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::max();
        int bc = 0;
        for (std::size_t c = 0; c < k; ++c) {
            const double d = sq_distance(features.row(i), centroids.row(c));
            if (d < best) {
                best = d;
                bc = static_cast<int>(c);
            }
        }
        assign[i] = bc;
    }
    // ties in the final pass can re-empty a cluster (e.g. identical points);
    // rescue again so every cluster keeps at least one member
    {
        std::vector<std::size_t> counts(k, 0);
        for (int a : assign)
            ++counts[static_cast<std::size_t>(a)];
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] > 0)
                continue;
            std::size_t far = n;
            double best = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                const auto own = static_cast<std::size_t>(assign[i]);
                if (counts[own] < 2)
                    continue;
                const double d = sq_distance(features.row(i), centroids.row(own));
                if (d > best) {
                    best = d;
                    far = i;
                }
            }
            if (far == n)
                break;
            --counts[static_cast<std::size_t>(assign[far])];
            assign[far] = static_cast<int>(c);
            ++counts[c];
        }
    }

    std::vector<std::size_t> sizes(k, 0);
    for (int a : assign)
        ++sizes[static_cast<std::size_t>(a)];

    double total = 0.0;
    std::vector<double> mean_dist(k);
    for (std::size_t i = 0; i < n; ++i) {
        std::fill(mean_dist.begin(), mean_dist.end(), 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j)
                continue;
            mean_dist[static_cast<std::size_t>(assign[j])] +=
                std::sqrt(sq_distance(features.row(i), features.row(j)));
        }
        const std::size_t own = static_cast<std::size_t>(assign[i]);
        if (sizes[own] <= 1)
            continue; // singleton scores 0
        const double a = mean_dist[own] / static_cast<double>(sizes[own] - 1);
        double b = std::numeric_limits<double>::max();
        for (std::size_t c = 0; c < k; ++c) {
            if (c == own || sizes[c] == 0)
                continue;
            b = std::min(b, mean_dist[c] / static_cast<double>(sizes[c]));
        }
        const double denom = std::max(a, b);
        if (denom > 0.0)
            total += (b - a) / denom;
    }

    ClusteringReport rep;
    rep.assignments = std::move(assign);
    rep.centroids = std::move(centroids);
    rep.silhouette = total / static_cast<double>(n);
    return rep;
}

double spearman(const std::vector<double> &a, const std::vector<double> &b) {
    if (a.size() != b.size())
        throw ConsistencyError("spearman: length mismatch, " + std::to_string(a.size()) +
                               " vs " + std::to_string(b.size()));
    if (a.size() < 2)
        throw ParameterError("spearman: need at least two observations");
    const std::size_t n = a.size();
    auto ranks = [n](const std::vector<double> &v) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
        std::vector<double> r(n);
        for (std::size_t i = 0; i < n;) {
            std::size_t j = i;
            while (j + 1 < n && v[order[j + 1]] == v[order[i]])
                ++j;
            const double mid = 0.5 * static_cast<double>(i + j) + 1.0; // average rank for ties
            for (std::size_t t = i; t <= j; ++t)
                r[order[t]] = mid;
            i = j + 1;
        }
        return r;
    };
    const std::vector<double> ra = ranks(a), rb = ranks(b);
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (va == 0.0 || vb == 0.0)
        return 0.0;
    return cov / std::sqrt(va * vb);
}

} // namespace cauirl::metrics
