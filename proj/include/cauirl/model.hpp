#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "cauirl/matrix.hpp"
#include "cauirl/sampling.hpp"

namespace cauirl::model {

struct ParamTensor {
    std::string name;
    std::vector<double> value;
    std::vector<double> grad;

    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

// Per-forward context. universum_mask may be null (all rows natural);
// when set it routes DAR-BN statistics.
struct LayerContext {
    bool training = false;
    const std::vector<std::uint8_t> *universum_mask = nullptr;
};

class Layer {
public:
    virtual ~Layer() = default;
    virtual std::string name() const = 0;
    virtual std::size_t output_dim() const = 0;
    virtual Matrix forward(const Matrix &input, const LayerContext &ctx) = 0;
    // Uses activations cached by the preceding forward call; training loops
    // are single-threaded over the model by contract.
    virtual Matrix backward(const Matrix &grad_output) = 0;
    virtual std::vector<ParamTensor *> params() { return {}; }
    // Persistent non-optimized state (BN running statistics).
    virtual std::vector<ParamTensor *> state() { return {}; }
};

// Distribution-aware routing batch normalization. Natural rows are
// normalized with statistics over natural rows only and only those update
// the running estimates; Universum rows get their own batch statistics and
// never touch the running state. A side with fewer than two rows borrows
// the other side's statistics (full-batch statistics if both sides are
// that small). gamma/beta are shared. Eval mode uses running statistics
// for every row.
class DarBatchNorm final : public Layer {
public:
    DarBatchNorm(std::string name, std::size_t channels, std::size_t spatial,
                 double momentum = 0.9, double epsilon = 1e-5);

    std::string name() const override { return name_; }
    std::size_t output_dim() const override { return channels_ * spatial_; }
    Matrix forward(const Matrix &input, const LayerContext &ctx) override;
    Matrix backward(const Matrix &grad_output) override;
    std::vector<ParamTensor *> params() override { return {&gamma_, &beta_}; }
    std::vector<ParamTensor *> state() override { return {&running_mean_, &running_var_}; }

    std::size_t channels() const { return channels_; }
    const std::vector<double> &running_mean() const { return running_mean_.value; }
    const std::vector<double> &running_var() const { return running_var_.value; }

private:
    struct StatGroup {
        std::vector<std::size_t> stat_rows;     // rows the statistics came from
        std::vector<std::size_t> consumer_rows; // rows normalized with them
        std::vector<double> mean;               // per channel
        std::vector<double> rstd;               // per channel, 1/sqrt(var+eps)
    };

    std::string name_;
    std::size_t channels_;
    std::size_t spatial_;
    double momentum_;
    double epsilon_;
    ParamTensor gamma_, beta_, running_mean_, running_var_;

    // cached by forward for backward
    Matrix input_;
    std::vector<StatGroup> groups_;
    bool cached_training_ = false;
};

// Plain batch normalization; reference implementation DAR-BN must reduce to
// when every row is natural.
Matrix batchnorm_reference(const Matrix &input, const std::vector<double> &gamma,
                           const std::vector<double> &beta, std::size_t channels, double epsilon);

struct ArchConfig {
    std::string kind = "cnn"; // cnn | mlp | passthrough
    std::vector<std::size_t> input_shape;
    std::size_t num_classes = 10;
    std::vector<std::size_t> conv_channels = {8, 16}; // one entry per block
    std::vector<std::size_t> hidden = {64};           // mlp widths
    double bn_momentum = 0.9;
    double bn_epsilon = 1e-5;

    std::size_t input_dim() const;
    std::string to_json() const;
    static ArchConfig from_json(const std::string &text);
};

struct TrainConfig {
    int epochs = 30;
    int batch_size = 128;
    double learning_rate = 0.1;
    std::vector<int> milestones; // epochs where the rate decays
    double decay_factor = 0.01;
    double momentum = 0.9;
    double weight_decay = 2e-4;
    int warmup_epochs = 0;
    std::uint64_t seed = 1;

    void validate() const;
};

// initial * factor^(milestones passed); linear warmup over the first
// warmup_epochs epochs.
double scheduled_lr(const TrainConfig &config, int epoch);

struct ForwardResult {
    Matrix features; // input of the classifier head, width = feature_dim
    Matrix logits;
    Matrix probabilities;
};

struct CrossEntropyResult {
    double loss = 0.0;
    std::vector<double> per_class_loss;
    std::vector<std::size_t> per_class_counts;
    int clamped = 0; // how many p_true values hit the 1e-12 floor
};

CrossEntropyResult cross_entropy(const Matrix &probabilities, const std::vector<int> &labels,
                                 std::size_t num_classes);

// Feature extractor f followed by a linear classifier head g. The head is
// always the final layer; features are the head's input.
class Network {
public:
    static Network build(const ArchConfig &config, std::uint64_t init_seed);

    ForwardResult forward(const Matrix &inputs, const LayerContext &ctx);
    // Backward from softmax cross-entropy: dL/dlogit = (p - onehot)/batch.
    void backward(const Matrix &probabilities, const std::vector<int> &labels);

    std::vector<ParamTensor *> parameters();
    std::vector<ParamTensor *> state_tensors();
    void zero_grad();

    const ArchConfig &arch() const { return arch_; }
    std::size_t feature_dim() const { return feature_dim_; }
    std::size_t num_layers() const { return layers_.size(); }
    const Layer &layer(std::size_t i) const { return *layers_[i]; }
    Layer &layer(std::size_t i) { return *layers_[i]; }

    // Head parameters as (num_classes x feature_dim) weight + bias views.
    const ParamTensor &head_weight() const;
    const ParamTensor &head_bias() const;

    Matrix extract_features(const Matrix &inputs);

    void save(const std::filesystem::path &path);
    static Network load(const std::filesystem::path &path);

private:
    ArchConfig arch_;
    std::vector<std::unique_ptr<Layer>> layers_;
    std::size_t feature_dim_ = 0;
};

class SgdOptimizer {
public:
    SgdOptimizer(double momentum, double weight_decay)
        : momentum_(momentum), weight_decay_(weight_decay) {}

    // grad + weight_decay*value into the velocity, then value -= lr*velocity
    void step(const std::vector<ParamTensor *> &params, double lr);

private:
    double momentum_;
    double weight_decay_;
    std::vector<std::vector<double>> velocity_;
};

struct StepResult {
    double loss = 0.0;
    int clamped = 0; // times p_true hit the cross-entropy floor this step
    std::vector<std::pair<std::string, double>> gradient_norms; // per parameter tensor
};

// One SGD step on a batch: forward (training mode, mask-aware), softmax
// cross-entropy backward, parameter update. Throws NumericError naming the
// offending tensor if a gradient goes non-finite.
StepResult train_step(Network &net, SgdOptimizer &opt, const sampling::Batch &batch, double lr);

// Eval-mode features for a whole dataset, batched; deterministic.
Matrix extract_features(Network &net, const data::LabeledDataset &dataset,
                        std::size_t batch_size = 256);

// Eval-mode argmax predictions for a whole dataset.
std::vector<int> predict(Network &net, const data::LabeledDataset &dataset,
                         std::size_t batch_size = 256);

} // namespace cauirl::model
