#include "cauirl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "cauirl/errors.hpp"
#include "cauirl/rng.hpp"

namespace cauirl::data {

namespace {

constexpr std::size_t kCifarPixels = 3 * 32 * 32;
constexpr std::size_t kCifarRecord = 1 + kCifarPixels;
constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw FormatError("cannot open file: " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return bytes;
}

std::uint32_t read_be32(const std::uint8_t *p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

void write_be32(std::ofstream &out, std::uint32_t v) {
    const std::uint8_t b[4] = {static_cast<std::uint8_t>(v >> 24), static_cast<std::uint8_t>(v >> 16),
                               static_cast<std::uint8_t>(v >> 8), static_cast<std::uint8_t>(v)};
    out.write(reinterpret_cast<const char *>(b), 4);
}

} // namespace

void finalize_dataset(LabeledDataset &ds, std::size_t num_classes) {
    if (ds.labels.size() != ds.samples.rows())
        throw ConsistencyError("dataset: label count does not match sample rows");
    std::size_t dim = 1;
    for (std::size_t d : ds.shape)
        dim *= d;
    if (ds.samples.rows() > 0 && dim != ds.samples.cols())
        throw ConsistencyError("dataset: shape product does not match sample width");
    ds.class_counts.assign(num_classes, 0);
    for (int y : ds.labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
            throw ConsistencyError("dataset: label " + std::to_string(y) + " out of range");
        ++ds.class_counts[static_cast<std::size_t>(y)];
    }
}

LTProfile make_lt_profile(std::size_t num_classes, double imbalance_rate, std::size_t base_count) {
    if (num_classes == 0)
        throw ParameterError("LT profile: num_classes must be positive");
    if (imbalance_rate < 1.0)
        throw ParameterError("LT profile: imbalance_rate must be >= 1");
    if (base_count == 0)
        throw ParameterError("LT profile: base_count must be positive");
    LTProfile p;
    p.num_classes = num_classes;
    p.imbalance_rate = imbalance_rate;
    p.base_count = base_count;
    p.per_class_targets.resize(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) {
        const double expo = num_classes == 1 ? 0.0
                                             : -static_cast<double>(c) /
                                                   static_cast<double>(num_classes - 1);
        const double target = static_cast<double>(base_count) * std::pow(imbalance_rate, expo);
        p.per_class_targets[c] = static_cast<std::size_t>(std::llround(target));
    }
    return p;
}

LabeledDataset load_cifar10_batch(const std::filesystem::path &file_path) {
    const auto bytes = read_file_bytes(file_path);
    if (bytes.empty() || bytes.size() % kCifarRecord != 0)
        throw FormatError("CIFAR batch " + file_path.string() + ": truncated at byte offset " +
                          std::to_string(bytes.size() - bytes.size() % kCifarRecord));
    const std::size_t n = bytes.size() / kCifarRecord;
    LabeledDataset ds;
    ds.shape = {3, 32, 32};
    ds.samples = Matrix(n, kCifarPixels);
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint8_t *rec = bytes.data() + i * kCifarRecord;
        if (rec[0] >= 10)
            throw FormatError("CIFAR batch " + file_path.string() + ": corrupt record " +
                              std::to_string(i) + " at byte offset " +
                              std::to_string(i * kCifarRecord) + " (label byte " +
                              std::to_string(rec[0]) + ")");
        ds.labels[i] = rec[0];
        auto row = ds.samples.row(i);
        for (std::size_t j = 0; j < kCifarPixels; ++j)
            row[j] = static_cast<double>(rec[1 + j]) / 255.0;
    }
    finalize_dataset(ds, 10);
    return ds;
}

LabeledDataset load_cifar10(const std::filesystem::path &dir_path) {
    LabeledDataset all;
    all.shape = {3, 32, 32};
    std::vector<LabeledDataset> parts;
    std::size_t total = 0;
    for (int b = 1; b <= 5; ++b) {
        const auto file = dir_path / ("data_batch_" + std::to_string(b) + ".bin");
        if (!std::filesystem::exists(file))
            throw FormatError("CIFAR-10 training batch missing: " + file.string());
        parts.push_back(load_cifar10_batch(file));
        total += parts.back().size();
    }
    all.samples = Matrix(total, kCifarPixels);
    all.labels.reserve(total);
    std::size_t row = 0;
    for (const auto &part : parts) {
        for (std::size_t i = 0; i < part.size(); ++i, ++row) {
            all.samples.set_row(row, part.samples.row(i));
            all.labels.push_back(part.labels[i]);
        }
    }
    finalize_dataset(all, 10);
    return all;
}

void write_cifar10_batch(const LabeledDataset &ds, const std::filesystem::path &file_path) {
    if (ds.sample_dim() != kCifarPixels)
        throw ParameterError("CIFAR writer: sample dimension must be 3072");
    std::ofstream out(file_path, std::ios::binary);
    if (!out)
        throw FormatError("cannot open for writing: " + file_path.string());
    std::vector<std::uint8_t> rec(kCifarRecord);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        rec[0] = static_cast<std::uint8_t>(ds.labels[i]);
        const auto row = ds.samples.row(i);
        for (std::size_t j = 0; j < kCifarPixels; ++j)
            rec[1 + j] = static_cast<std::uint8_t>(std::llround(row[j] * 255.0));
        out.write(reinterpret_cast<const char *>(rec.data()), static_cast<std::streamsize>(rec.size()));
    }
}

LabeledDataset load_idx(const std::filesystem::path &images_path,
                        const std::filesystem::path &labels_path) {
    const auto img = read_file_bytes(images_path);
    const auto lab = read_file_bytes(labels_path);
    if (img.size() < 16)
        throw FormatError("IDX images " + images_path.string() + ": header truncated");
    if (lab.size() < 8)
        throw FormatError("IDX labels " + labels_path.string() + ": header truncated");
    if (read_be32(img.data()) != kIdxImageMagic)
        throw FormatError("IDX images " + images_path.string() + ": bad magic");
    if (read_be32(lab.data()) != kIdxLabelMagic)
        throw FormatError("IDX labels " + labels_path.string() + ": bad magic");
    const std::size_t n_img = read_be32(img.data() + 4);
    const std::size_t rows = read_be32(img.data() + 8);
    const std::size_t cols = read_be32(img.data() + 12);
    const std::size_t n_lab = read_be32(lab.data() + 4);
    if (n_img != n_lab)
        throw ConsistencyError("IDX: image count " + std::to_string(n_img) +
                               " != label count " + std::to_string(n_lab));
    const std::size_t pixels = rows * cols;
    if (img.size() != 16 + n_img * pixels)
        throw FormatError("IDX images " + images_path.string() + ": payload truncated");
    if (lab.size() != 8 + n_lab)
        throw FormatError("IDX labels " + labels_path.string() + ": payload truncated");

    LabeledDataset ds;
    ds.shape = {1, rows, cols};
    ds.samples = Matrix(n_img, pixels);
    ds.labels.resize(n_img);
    int max_label = -1;
    for (std::size_t i = 0; i < n_img; ++i) {
        auto row = ds.samples.row(i);
        const std::uint8_t *px = img.data() + 16 + i * pixels;
        for (std::size_t j = 0; j < pixels; ++j)
            row[j] = static_cast<double>(px[j]) / 255.0;
        ds.labels[i] = lab[8 + i];
        max_label = std::max(max_label, ds.labels[i]);
    }
    finalize_dataset(ds, static_cast<std::size_t>(max_label) + 1);
    return ds;
}

void write_idx(const LabeledDataset &ds, const std::filesystem::path &images_path,
               const std::filesystem::path &labels_path) {
    if (ds.shape.size() != 3 || ds.shape[0] != 1)
        throw ParameterError("IDX writer: expects shape {1, rows, cols}");
    const std::size_t rows = ds.shape[1], cols = ds.shape[2];
    std::ofstream img(images_path, std::ios::binary);
    std::ofstream lab(labels_path, std::ios::binary);
    if (!img || !lab)
        throw FormatError("cannot open IDX output files");
    write_be32(img, kIdxImageMagic);
    write_be32(img, static_cast<std::uint32_t>(ds.size()));
    write_be32(img, static_cast<std::uint32_t>(rows));
    write_be32(img, static_cast<std::uint32_t>(cols));
    write_be32(lab, kIdxLabelMagic);
    write_be32(lab, static_cast<std::uint32_t>(ds.size()));
    std::vector<std::uint8_t> buf(rows * cols);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto row = ds.samples.row(i);
        for (std::size_t j = 0; j < buf.size(); ++j)
            buf[j] = static_cast<std::uint8_t>(std::llround(row[j] * 255.0));
        img.write(reinterpret_cast<const char *>(buf.data()), static_cast<std::streamsize>(buf.size()));
        lab.put(static_cast<char>(ds.labels[i]));
    }
}

LabeledDataset make_long_tailed(const LabeledDataset &balanced, const LTProfile &profile,
                                std::uint64_t seed) {
    if (profile.num_classes != balanced.num_classes())
        throw ParameterError("LT: profile class count does not match dataset");
    for (std::size_t c = 0; c < profile.num_classes; ++c) {
        if (profile.per_class_targets[c] > balanced.class_counts[c])
            throw CapacityError("LT: class " + std::to_string(c) + " has " +
                                std::to_string(balanced.class_counts[c]) +
                                " samples, target needs " +
                                std::to_string(profile.per_class_targets[c]));
    }

    std::vector<std::vector<std::size_t>> by_class(profile.num_classes);
    for (std::size_t i = 0; i < balanced.size(); ++i)
        by_class[static_cast<std::size_t>(balanced.labels[i])].push_back(i);

    std::vector<std::size_t> kept;
    for (std::size_t c = 0; c < profile.num_classes; ++c) {
        Rng rng(derive_seed(seed, c));
        rng.shuffle(by_class[c]);
        kept.insert(kept.end(), by_class[c].begin(),
                    by_class[c].begin() + static_cast<std::ptrdiff_t>(profile.per_class_targets[c]));
    }

    LabeledDataset out;
    out.shape = balanced.shape;
    out.samples = Matrix(kept.size(), balanced.sample_dim());
    out.labels.reserve(kept.size());
    for (std::size_t i = 0; i < kept.size(); ++i) {
        out.samples.set_row(i, balanced.samples.row(kept[i]));
        out.labels.push_back(balanced.labels[kept[i]]);
    }
    finalize_dataset(out, profile.num_classes);
    return out;
}

std::vector<std::vector<double>> cholesky(const std::vector<std::vector<double>> &m) {
    const std::size_t n = m.size();
    std::vector<std::vector<double>> l(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double sum = m[i][j];
            for (std::size_t k = 0; k < j; ++k)
                sum -= l[i][k] * l[j][k];
            if (i == j) {
                if (sum <= 0.0)
                    throw NumericError("cholesky: matrix not positive definite at pivot " +
                                       std::to_string(i));
                l[i][i] = std::sqrt(sum);
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    return l;
}

LabeledDataset sample_gaussian_task(const GaussianTask &task,
                                    const std::vector<std::size_t> &n_per_class,
                                    std::uint64_t seed) {
    if (n_per_class.size() != task.num_classes())
        throw ParameterError("gaussian sampling: n_per_class length mismatch");
    const std::size_t dim = task.dim();
    const auto chol = cholesky(task.covariance);
    const std::size_t total = std::accumulate(n_per_class.begin(), n_per_class.end(), std::size_t{0});

    LabeledDataset ds;
    ds.shape = {dim};
    ds.samples = Matrix(total, dim);
    ds.labels.reserve(total);
    std::size_t row = 0;
    std::vector<double> z(dim);
    for (std::size_t c = 0; c < task.num_classes(); ++c) {
        Rng rng(derive_seed(seed, c));
        for (std::size_t i = 0; i < n_per_class[c]; ++i, ++row) {
            for (std::size_t d = 0; d < dim; ++d)
                z[d] = rng.normal();
            auto out = ds.samples.row(row);
            for (std::size_t d = 0; d < dim; ++d) {
                double v = task.class_means[c][d];
                for (std::size_t k = 0; k <= d; ++k)
                    v += chol[d][k] * z[k];
                out[d] = v;
            }
            ds.labels.push_back(static_cast<int>(c));
        }
    }
    finalize_dataset(ds, task.num_classes());
    return ds;
}

} // namespace cauirl::data
