#include "cauirl/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cauirl/errors.hpp"
#include "cauirl/rng.hpp"
#include "cauirl/universum.hpp"

namespace cauirl::experiment {

namespace {

using nlohmann::json;

const std::set<std::string> kMethods = {"erm",       "oversample",      "cauirl",
                                        "cauirl_sc", "cauirl_external", "mixup_universum"};

// Seed stream tags; every random decision in a run derives from
// (config.train.seed, tag, ...) so reruns are bit-identical.
constexpr std::uint64_t kTagInit = 11;
constexpr std::uint64_t kTagStream = 13;
constexpr std::uint64_t kTagAugment = 17;
constexpr std::uint64_t kTagReplace = 19;

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

template <typename T> void read_if(const json &j, const char *key, T &out) {
    if (j.contains(key))
        j.at(key).get_to(out);
}

json train_to_json(const model::TrainConfig &t) {
    return json{{"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"learning_rate", t.learning_rate},
                {"milestones", t.milestones},
                {"decay_factor", t.decay_factor},
                {"momentum", t.momentum},
                {"weight_decay", t.weight_decay},
                {"warmup_epochs", t.warmup_epochs},
                {"seed", t.seed}};
}

void train_from_json(const json &j, model::TrainConfig &t) {
    read_if(j, "epochs", t.epochs);
    read_if(j, "batch_size", t.batch_size);
    read_if(j, "learning_rate", t.learning_rate);
    read_if(j, "milestones", t.milestones);
    read_if(j, "decay_factor", t.decay_factor);
    read_if(j, "momentum", t.momentum);
    read_if(j, "weight_decay", t.weight_decay);
    read_if(j, "warmup_epochs", t.warmup_epochs);
    read_if(j, "seed", t.seed);
}

} // namespace

RunConfig run_config_from_json(const std::string &text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error &e) {
        throw FormatError(std::string("run config is not valid JSON: ") + e.what());
    }
    if (!j.is_object())
        throw FormatError("run config root must be a JSON object");

    RunConfig c;
    // The Bayes arm trains a softmax-linear model; its schedule is separate
    // from the main run's and converges in a few dozen epochs.
    c.bayes.train.epochs = 40;
    c.bayes.train.milestones = {30};
    c.bayes.train.decay_factor = 0.1;
    c.bayes.train.weight_decay = 1e-4;

    if (j.contains("dataset")) {
        const json &d = j.at("dataset");
        read_if(d, "source", c.dataset.source);
        read_if(d, "data_dir", c.dataset.data_dir);
        read_if(d, "train_images", c.dataset.train_images);
        read_if(d, "train_labels", c.dataset.train_labels);
        read_if(d, "test_images", c.dataset.test_images);
        read_if(d, "test_labels", c.dataset.test_labels);
        read_if(d, "imbalance_rate", c.dataset.imbalance_rate);
        read_if(d, "lt_base_count", c.dataset.lt_base_count);
        read_if(d, "lt_seed", c.dataset.lt_seed);
    }
    read_if(j, "method", c.method);
    if (j.contains("universum")) {
        const json &u = j.at("universum");
        read_if(u, "lambda", c.universum.lambda);
        read_if(u, "delta", c.universum.delta);
        read_if(u, "defer_epochs", c.universum.defer_epochs);
        read_if(u, "exclude_self", c.universum.exclude_self);
        read_if(u, "external_images", c.universum.external_images);
        read_if(u, "external_labels", c.universum.external_labels);
        read_if(u, "mixup_beta_alpha", c.universum.mixup_beta_alpha);
    }
    if (j.contains("arch")) {
        const json &a = j.at("arch");
        read_if(a, "kind", c.arch.kind);
        read_if(a, "conv_channels", c.arch.conv_channels);
        read_if(a, "hidden", c.arch.hidden);
        read_if(a, "bn_momentum", c.arch.bn_momentum);
        read_if(a, "bn_epsilon", c.arch.bn_epsilon);
    }
    if (j.contains("train"))
        train_from_json(j.at("train"), c.train);
    read_if(j, "epoch_len", c.epoch_len);
    read_if(j, "augment", c.augment);
    read_if(j, "n_groups", c.n_groups);
    read_if(j, "out_dir", c.out_dir);
    if (j.contains("bayes")) {
        const json &b = j.at("bayes");
        read_if(b, "means", c.bayes.means);
        read_if(b, "covariance", c.bayes.covariance);
        read_if(b, "imbalance", c.bayes.imbalance);
        read_if(b, "seeds", c.bayes.seeds);
        read_if(b, "grid", c.bayes.grid);
        read_if(b, "span_sigmas", c.bayes.span_sigmas);
        if (b.contains("train"))
            train_from_json(b.at("train"), c.bayes.train);
    }

    if (kMethods.count(c.method) == 0)
        throw ParameterError("unknown method '" + c.method + "'");
    if (c.universum.lambda < 0.0 || c.universum.lambda > 1.0)
        throw ParameterError("lambda must lie in [0,1]");
    if (c.universum.delta < 0.0 || c.universum.delta > 1.0)
        throw ParameterError("delta must lie in [0,1]");
    if (c.dataset.imbalance_rate < 1.0)
        throw ParameterError("imbalance_rate must be >= 1");
    if (c.method == "cauirl_external" &&
        (c.universum.external_images.empty() || c.universum.external_labels.empty()))
        throw ParameterError("method cauirl_external requires universum.external_images "
                             "and universum.external_labels");
    c.train.validate();
    c.bayes.train.validate();
    return c;
}

RunConfig load_run_config(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in)
        throw FormatError("cannot open run config: " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return run_config_from_json(buf.str());
}

std::string run_config_to_json(const RunConfig &c) {
    json j;
    j["dataset"] = {{"source", c.dataset.source},
                    {"data_dir", c.dataset.data_dir},
                    {"train_images", c.dataset.train_images},
                    {"train_labels", c.dataset.train_labels},
                    {"test_images", c.dataset.test_images},
                    {"test_labels", c.dataset.test_labels},
                    {"imbalance_rate", c.dataset.imbalance_rate},
                    {"lt_base_count", c.dataset.lt_base_count},
                    {"lt_seed", c.dataset.lt_seed}};
    j["method"] = c.method;
    j["universum"] = {{"lambda", c.universum.lambda},
                      {"delta", c.universum.delta},
                      {"defer_epochs", c.universum.defer_epochs},
                      {"exclude_self", c.universum.exclude_self},
                      {"external_images", c.universum.external_images},
                      {"external_labels", c.universum.external_labels},
                      {"mixup_beta_alpha", c.universum.mixup_beta_alpha}};
    j["arch"] = {{"kind", c.arch.kind},
                 {"conv_channels", c.arch.conv_channels},
                 {"hidden", c.arch.hidden},
                 {"bn_momentum", c.arch.bn_momentum},
                 {"bn_epsilon", c.arch.bn_epsilon}};
    j["train"] = train_to_json(c.train);
    j["epoch_len"] = c.epoch_len;
    j["augment"] = c.augment;
    j["n_groups"] = c.n_groups;
    j["out_dir"] = c.out_dir;
    j["bayes"] = {{"means", c.bayes.means},       {"covariance", c.bayes.covariance},
                  {"imbalance", c.bayes.imbalance}, {"seeds", c.bayes.seeds},
                  {"grid", c.bayes.grid},         {"span_sigmas", c.bayes.span_sigmas},
                  {"train", train_to_json(c.bayes.train)}};
    return j.dump();
}

ResolvedData resolve_data(const RunConfig &config) {
    std::string dir = config.dataset.data_dir;
    if (dir.empty()) {
        const char *env = std::getenv("CAUIRL_DATA_DIR");
        if (env != nullptr)
            dir = env;
    }
    if (dir.empty())
        throw ParameterError("no data directory: set dataset.data_dir or CAUIRL_DATA_DIR");
    const std::filesystem::path root(dir);

    ResolvedData out;
    if (config.dataset.source == "idx") {
        out.train = data::load_idx(root / config.dataset.train_images,
                                   root / config.dataset.train_labels);
        out.test = data::load_idx(root / config.dataset.test_images,
                                  root / config.dataset.test_labels);
    } else if (config.dataset.source == "cifar10") {
        out.train = data::load_cifar10(root);
        out.test = data::load_cifar10_batch(root / "test_batch.bin");
    } else {
        throw ParameterError("unknown dataset source '" + config.dataset.source + "'");
    }

    if (config.dataset.imbalance_rate > 1.0) {
        const std::size_t base =
            config.dataset.lt_base_count > 0
                ? config.dataset.lt_base_count
                : *std::min_element(out.train.class_counts.begin(), out.train.class_counts.end());
        const data::LTProfile profile = data::make_lt_profile(
            out.train.num_classes(), config.dataset.imbalance_rate, base);
        out.train = data::make_long_tailed(out.train, profile, config.dataset.lt_seed);
    }

    if (!config.universum.external_images.empty() && !config.universum.external_labels.empty())
        out.external_pool = data::load_idx(root / config.universum.external_images,
                                           root / config.universum.external_labels);
    return out;
}

void augment_batch(Matrix &samples, const std::vector<std::size_t> &shape, Rng &rng) {
    if (shape.size() != 3)
        throw ParameterError("augment_batch: needs (channels, height, width) shaped rows");
    const std::size_t channels = shape[0], h = shape[1], w = shape[2];
    constexpr std::size_t kPad = 4;
    std::vector<double> plane(h * w);
    for (std::size_t n = 0; n < samples.rows(); ++n) {
        double *row = samples.row(n).data();
        const bool flip = rng.bernoulli(0.5);
        const std::size_t dy = rng.uniform_index(2 * kPad + 1);
        const std::size_t dx = rng.uniform_index(2 * kPad + 1);
        for (std::size_t c = 0; c < channels; ++c) {
            double *p = row + c * h * w;
            if (flip)
                for (std::size_t y = 0; y < h; ++y)
                    std::reverse(p + y * w, p + (y + 1) * w);
            if (dy == kPad && dx == kPad)
                continue; // centered crop is the identity
            std::copy(p, p + h * w, plane.begin());
            for (std::size_t y = 0; y < h; ++y) {
                // source coordinates in the 4-pixel zero-padded image
                const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + dy) -
                                          static_cast<std::ptrdiff_t>(kPad);
                for (std::size_t x = 0; x < w; ++x) {
                    const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + dx) -
                                              static_cast<std::ptrdiff_t>(kPad);
                    const bool inside = sy >= 0 && sy < static_cast<std::ptrdiff_t>(h) &&
                                        sx >= 0 && sx < static_cast<std::ptrdiff_t>(w);
                    p[y * w + x] = inside ? plane[static_cast<std::size_t>(sy) * w +
                                                  static_cast<std::size_t>(sx)]
                                          : 0.0;
                }
            }
        }
    }
}

namespace {

// CSV header comment: the configuration without the output location, so that
// the same run written to two directories produces identical bytes.
std::string csv_echo(const RunConfig &config) {
    json j = json::parse(run_config_to_json(config));
    j.erase("out_dir");
    return j.dump();
}

std::unique_ptr<sampling::UniversumSource> make_source(const RunConfig &config,
                                                       const ResolvedData &data) {
    universum::HoMuConfig hc;
    hc.lambda = config.universum.lambda;
    hc.exclude_self_from_mean = config.universum.exclude_self;
    if (config.method == "cauirl") {
        hc.mode = universum::HoMuMode::batch;
        return std::make_unique<universum::HoMuSource>(hc);
    }
    if (config.method == "cauirl_sc") {
        hc.mode = universum::HoMuMode::same_class;
        return std::make_unique<universum::HoMuSameClassSource>(hc);
    }
    if (config.method == "cauirl_external") {
        if (!data.external_pool.has_value())
            throw ParameterError("method cauirl_external: external pool not loaded");
        return std::make_unique<universum::ExternalPoolSource>(*data.external_pool);
    }
    if (config.method == "mixup_universum")
        return std::make_unique<universum::MixupPairSource>(config.universum.lambda,
                                                            config.universum.mixup_beta_alpha);
    return nullptr; // erm, oversample
}

} // namespace

TrainOutcome run_training(const RunConfig &config, bool write_files) {
    if (kMethods.count(config.method) == 0)
        throw ParameterError("unknown method '" + config.method + "'");
    config.train.validate();
    const auto t0 = std::chrono::steady_clock::now();

    ResolvedData data = resolve_data(config);
    const std::size_t num_classes = data.train.num_classes();
    if (config.n_groups == 0 || config.n_groups > num_classes)
        throw ParameterError("n_groups must lie in [1, classes]");

    model::ArchConfig arch = config.arch;
    arch.input_shape = data.train.shape;
    arch.num_classes = num_classes;

    const sampling::ClassStats stats =
        sampling::compute_class_stats(data.train, config.universum.delta);
    std::unique_ptr<sampling::UniversumSource> source = make_source(config, data);

    sampling::ReplacementSchedule schedule;
    schedule.delta = config.universum.delta;
    schedule.defer_epochs = source == nullptr ? 0
                            : config.universum.defer_epochs >= 0
                                ? config.universum.defer_epochs
                                : (config.train.epochs + 4) / 5; // last 20%
    if (schedule.defer_epochs > config.train.epochs)
        throw ParameterError("defer_epochs exceeds total epochs");
    schedule.total_epochs = config.train.epochs;
    schedule.rng_seed = derive_seed(config.train.seed, kTagReplace);

    const bool balanced_stream = config.method != "erm";
    const std::size_t max_count =
        *std::max_element(data.train.class_counts.begin(), data.train.class_counts.end());
    const std::size_t epoch_len = !balanced_stream ? data.train.size()
                                  : config.epoch_len > 0 ? config.epoch_len
                                                         : num_classes * max_count;
    const std::size_t batch_size = static_cast<std::size_t>(config.train.batch_size);
    const bool do_augment = config.augment && data.train.shape.size() == 3;
    const std::uint64_t aug_seed = derive_seed(config.train.seed, kTagAugment);

    model::Network net = model::Network::build(arch, derive_seed(config.train.seed, kTagInit));
    model::SgdOptimizer opt(config.train.momentum, config.train.weight_decay);

    TrainOutcome out;
    std::ofstream csv;
    if (write_files) {
        std::filesystem::create_directories(config.out_dir);
        out.csv_path = std::filesystem::path(config.out_dir) / "metrics.csv";
        csv.open(out.csv_path);
        if (!csv)
            throw FormatError("cannot open " + out.csv_path.string() + " for writing");
        csv << "# config: " << csv_echo(config) << "\n";
        csv << "epoch,lr,train_loss,test_top1";
        for (std::size_t c = 0; c < num_classes; ++c)
            csv << ",acc_c" << c;
        csv << "\n";
    }

    metrics::AccuracyReport acc;
    for (int epoch = 0; epoch < config.train.epochs; ++epoch) {
        const double lr = model::scheduled_lr(config.train, epoch);
        std::vector<std::size_t> indices;
        if (balanced_stream) {
            indices = sampling::oversample_epoch(data.train, stats, epoch_len,
                                                 derive_seed(config.train.seed, kTagStream,
                                                             static_cast<std::uint64_t>(epoch)));
        } else {
            indices.resize(data.train.size());
            std::iota(indices.begin(), indices.end(), std::size_t{0});
            Rng rng(derive_seed(config.train.seed, kTagStream, static_cast<std::uint64_t>(epoch)));
            rng.shuffle(indices);
        }

        double loss_sum = 0.0;
        std::size_t loss_n = 0;
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < indices.size(); start += batch_size, ++batch_index) {
            const std::size_t n = std::min(batch_size, indices.size() - start);
            sampling::Batch batch;
            batch.samples = Matrix(n, data.train.sample_dim());
            batch.labels.resize(n);
            batch.universum_mask.assign(n, 0);
            for (std::size_t i = 0; i < n; ++i) {
                batch.samples.set_row(i, data.train.samples.row(indices[start + i]));
                batch.labels[i] = data.train.labels[indices[start + i]];
            }
            if (do_augment) {
                Rng rng(derive_seed(aug_seed, static_cast<std::uint64_t>(epoch), batch_index));
                augment_batch(batch.samples, data.train.shape, rng);
            }
            if (source != nullptr)
                batch = sampling::apply_replacement(std::move(batch), stats, *source, epoch,
                                                    batch_index, schedule);
            const model::StepResult step = model::train_step(net, opt, batch, lr);
            loss_sum += step.loss * static_cast<double>(n);
            loss_n += n;
            out.clamped_probabilities += step.clamped;
        }
        out.final_train_loss = loss_sum / static_cast<double>(loss_n);

        const std::vector<int> preds = model::predict(net, data.test);
        acc = metrics::top1_accuracy(preds, data.test.labels, num_classes);
        if (write_files) {
            csv << epoch << ',' << fmt(lr) << ',' << fmt(out.final_train_loss) << ','
                << fmt(acc.overall);
            for (std::size_t c = 0; c < num_classes; ++c)
                csv << ',' << fmt(acc.per_class[c]);
            csv << "\n";
        }
    }

    out.final_top1 = acc.overall;
    out.final_per_class = acc.per_class;
    const metrics::GroupAccuracyReport groups = metrics::group_accuracy(
        acc.per_class, data.train.class_counts, config.n_groups, acc.per_class_counts);
    out.group_acc = groups.group_accuracy;
    out.groups = groups.groups;
    out.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (write_files) {
        csv.close();
        out.checkpoint_path = std::filesystem::path(config.out_dir) / "model.ckpt";
        net.save(out.checkpoint_path);

        json rep;
        rep["config"] = json::parse(run_config_to_json(config));
        rep["seed"] = config.train.seed;
        rep["method"] = config.method;
        rep["final_top1"] = out.final_top1;
        rep["per_class_accuracy"] = out.final_per_class;
        rep["group_accuracy"] = out.group_acc;
        rep["groups"] = out.groups;
        rep["train_class_counts"] = data.train.class_counts;
        rep["final_train_loss"] = out.final_train_loss;
        rep["clamped_probabilities"] = out.clamped_probabilities;
        rep["wall_seconds"] = out.wall_seconds;
        out.report_path = std::filesystem::path(config.out_dir) / "report.json";
        std::ofstream repf(out.report_path);
        repf << rep.dump(2) << "\n";
    }
    return out;
}

MakeLtOutcome run_make_lt(const RunConfig &config) {
    ResolvedData data = resolve_data(config); // applies the LT profile
    std::filesystem::create_directories(config.out_dir);
    const std::filesystem::path out(config.out_dir);

    MakeLtOutcome res;
    res.class_counts = data.train.class_counts;
    if (data.train.shape.size() == 3 && data.train.shape[0] == 3 &&
        data.train.sample_dim() == 3072) {
        res.images_path = out / "train_lt.bin";
        data::write_cifar10_batch(data.train, res.images_path);
    } else {
        res.images_path = out / "train-lt-images-idx3-ubyte";
        res.labels_path = out / "train-lt-labels-idx1-ubyte";
        data::write_idx(data.train, res.images_path, res.labels_path);
    }

    json manifest;
    manifest["config"] = json::parse(run_config_to_json(config));
    manifest["seed"] = config.dataset.lt_seed;
    manifest["imbalance_rate"] = config.dataset.imbalance_rate;
    manifest["class_counts"] = data.train.class_counts;
    manifest["images"] = res.images_path.filename().string();
    if (!res.labels_path.empty())
        manifest["labels"] = res.labels_path.filename().string();
    res.manifest_path = out / "lt_manifest.json";
    std::ofstream mf(res.manifest_path);
    if (!mf)
        throw FormatError("cannot open " + res.manifest_path.string() + " for writing");
    mf << manifest.dump(2) << "\n";
    return res;
}

C2GOutcome run_c2g(const RunConfig &config, const std::filesystem::path &checkpoint,
                   bool write_files) {
    ResolvedData data = resolve_data(config);
    model::Network net = model::Network::load(checkpoint);
    const std::size_t num_classes = data.train.num_classes();

    const Matrix feats_train = model::extract_features(net, data.train);
    const Matrix feats_test = model::extract_features(net, data.test);

    C2GOutcome out;
    out.report = metrics::c2g(feats_train, data.train.labels, feats_test, data.test.labels,
                              num_classes);
    std::vector<double> idx(num_classes);
    std::iota(idx.begin(), idx.end(), 0.0);
    out.spearman_class_index = metrics::spearman(idx, out.report.per_class_gap);

    if (write_files) {
        std::filesystem::create_directories(config.out_dir);
        out.csv_path = std::filesystem::path(config.out_dir) / "c2g.csv";
        std::ofstream csv(out.csv_path);
        if (!csv)
            throw FormatError("cannot open " + out.csv_path.string() + " for writing");
        csv << "# config: " << csv_echo(config) << "\n";
        csv << "# checkpoint: " << checkpoint.string() << "\n";
        csv << "class,gap\n";
        for (std::size_t c = 0; c < num_classes; ++c)
            csv << c << ',' << fmt(out.report.per_class_gap[c]) << "\n";

        json rep;
        rep["config"] = json::parse(run_config_to_json(config));
        rep["checkpoint"] = checkpoint.string();
        rep["per_class_gap"] = out.report.per_class_gap;
        rep["mean_gap"] = out.report.mean_gap;
        rep["distance_kind"] = out.report.distance_kind;
        rep["spearman_class_index_vs_gap"] = out.spearman_class_index;
        out.json_path = std::filesystem::path(config.out_dir) / "c2g.json";
        std::ofstream jf(out.json_path);
        jf << rep.dump(2) << "\n";
    }
    return out;
}

SweepOutcome run_sweep(const RunConfig &config, const std::string &parameter,
                       std::vector<double> values, std::size_t n_seeds, bool write_files) {
    const std::set<std::string> kParams = {"lambda", "delta", "defer_epochs", "imbalance"};
    if (kParams.count(parameter) == 0)
        throw ParameterError("sweep parameter must be one of lambda, delta, defer_epochs, "
                             "imbalance; got '" + parameter + "'");
    if (values.empty())
        throw ParameterError("sweep: empty value list");
    if (n_seeds == 0)
        throw ParameterError("sweep: n_seeds must be positive");

    std::vector<double> unique_values;
    for (double v : values) {
        if (std::find(unique_values.begin(), unique_values.end(), v) != unique_values.end()) {
            std::cerr << "warning: duplicate sweep value " << fmt(v) << " ignored\n";
            continue;
        }
        unique_values.push_back(v);
    }

    SweepOutcome out;
    for (double value : unique_values) {
        double sum = 0.0, sumsq = 0.0;
        for (std::size_t s = 0; s < n_seeds; ++s) {
            RunConfig cfg = config;
            if (parameter == "lambda")
                cfg.universum.lambda = value;
            else if (parameter == "delta")
                cfg.universum.delta = value;
            else if (parameter == "defer_epochs")
                cfg.universum.defer_epochs = static_cast<int>(std::llround(value));
            else
                cfg.dataset.imbalance_rate = value;
            // paired seeds: the same seed set is reused for every value
            cfg.train.seed = derive_seed(config.train.seed, s);
            const TrainOutcome run = run_training(cfg, false);
            SweepRow row;
            row.value = value;
            row.seed = cfg.train.seed;
            row.top1 = run.final_top1;
            row.smallest_group_acc = run.group_acc.back();
            out.rows.push_back(row);
            sum += run.final_top1;
            sumsq += run.final_top1 * run.final_top1;
        }
        SweepSummary summ;
        summ.value = value;
        summ.mean_top1 = sum / static_cast<double>(n_seeds);
        if (n_seeds > 1) {
            const double var = (sumsq - sum * sum / static_cast<double>(n_seeds)) /
                               static_cast<double>(n_seeds - 1);
            summ.stderr_top1 = std::sqrt(std::max(0.0, var) / static_cast<double>(n_seeds));
        }
        out.summary.push_back(summ);
    }

    if (write_files) {
        std::filesystem::create_directories(config.out_dir);
        out.csv_path = std::filesystem::path(config.out_dir) / ("sweep_" + parameter + ".csv");
        std::ofstream csv(out.csv_path);
        if (!csv)
            throw FormatError("cannot open " + out.csv_path.string() + " for writing");
        csv << "# config: " << csv_echo(config) << "\n";
        csv << "# parameter: " << parameter << "\n";
        csv << "kind,value,seed,top1,smallest_group_acc,mean_top1,stderr_top1\n";
        for (const SweepRow &r : out.rows)
            csv << "run," << fmt(r.value) << ',' << r.seed << ',' << fmt(r.top1) << ','
                << fmt(r.smallest_group_acc) << ",,\n";
        for (const SweepSummary &s : out.summary)
            csv << "summary," << fmt(s.value) << ",,,," << fmt(s.mean_top1) << ','
                << fmt(s.stderr_top1) << "\n";
    }
    return out;
}

BayesOutcome run_bayes(const RunConfig &config, bool write_files) {
    data::GaussianTask task;
    task.class_means = config.bayes.means;
    task.covariance = config.bayes.covariance;
    task.train_priors = {0.5, 0.5};
    task.test_priors = {0.5, 0.5};

    theory::RebalanceConfig rebalance;
    rebalance.oversample = true;
    rebalance.replacement = true;
    rebalance.delta = config.universum.delta;
    // The consistency check keeps replacement on for the whole run unless a
    // deferral is requested explicitly; the theorem concerns the rebalanced
    // stream itself, not the deferred engineering schedule.
    rebalance.defer_epochs = config.universum.defer_epochs >= 0 ? config.universum.defer_epochs
                                                                : config.bayes.train.epochs;

    BayesOutcome out;
    out.suite = theory::run_bayes_suite(task, config.bayes.imbalance, rebalance,
                                        config.bayes.train, config.bayes.seeds, config.bayes.grid,
                                        config.bayes.span_sigmas);

    if (write_files) {
        std::filesystem::create_directories(config.out_dir);
        auto side_to_json = [](const theory::BayesCheckResult &r) {
            return json{{"boundary_balanced", r.boundary_balanced},
                        {"boundary_rebalanced", r.boundary_rebalanced},
                        {"boundary_analytic", r.boundary_analytic},
                        {"angle_balanced_deg", r.angle_balanced_deg},
                        {"angle_rebalanced_deg", r.angle_rebalanced_deg},
                        {"agreement_balanced_vs_analytic", r.agreement_balanced_vs_analytic},
                        {"agreement_rebalanced_vs_analytic", r.agreement_rebalanced_vs_analytic},
                        {"agreement_rate", r.agreement_rate},
                        {"per_seed_agreement", r.per_seed_agreement}};
        };
        json rep;
        rep["config"] = json::parse(run_config_to_json(config));
        rep["rebalanced"] = side_to_json(out.suite.rebalanced);
        rep["erm"] = side_to_json(out.suite.erm);
        rep["balanced_self_agreement"] = out.suite.balanced_self_agreement;
        rep["self_agreement_p5"] = out.suite.self_agreement_p5;
        rep["rebalanced_meets_bar"] = out.suite.rebalanced_meets_bar;
        rep["rebalanced_beats_erm_every_seed"] = out.suite.rebalanced_beats_erm_every_seed;
        out.json_path = std::filesystem::path(config.out_dir) / "bayes_check.json";
        std::ofstream jf(out.json_path);
        if (!jf)
            throw FormatError("cannot open " + out.json_path.string() + " for writing");
        jf << rep.dump(2) << "\n";
    }
    return out;
}

} // namespace cauirl::experiment
