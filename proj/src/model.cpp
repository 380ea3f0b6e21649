#include "cauirl/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "cauirl/errors.hpp"
#include "cauirl/rng.hpp"

namespace cauirl::model {

namespace {

bool all_finite(std::span<const double> values) {
    for (double v : values)
        if (!std::isfinite(v))
            return false;
    return true;
}

void check_width(const Matrix &input, std::size_t expected, const std::string &layer) {
    if (input.cols() != expected)
        throw ArchitectureError("layer " + layer + " expects width " + std::to_string(expected) +
                                ", got " + std::to_string(input.cols()));
}

class Linear final : public Layer {
public:
    Linear(std::string name, std::size_t in_dim, std::size_t out_dim)
        : name_(std::move(name)), in_(in_dim), out_(out_dim) {
        weight_.name = name_ + ".weight";
        weight_.value.assign(out_ * in_, 0.0);
        weight_.grad.assign(out_ * in_, 0.0);
        bias_.name = name_ + ".bias";
        bias_.value.assign(out_, 0.0);
        bias_.grad.assign(out_, 0.0);
    }

    std::string name() const override { return name_; }
    std::size_t output_dim() const override { return out_; }
    std::vector<ParamTensor *> params() override { return {&weight_, &bias_}; }

    Matrix forward(const Matrix &input, const LayerContext &) override {
        check_width(input, in_, name_);
        input_ = input;
        Matrix out(input.rows(), out_);
        for (std::size_t n = 0; n < input.rows(); ++n) {
            const double *x = input.row(n).data();
            double *y = out.row(n).data();
            for (std::size_t o = 0; o < out_; ++o) {
                const double *w = weight_.value.data() + o * in_;
                double acc = bias_.value[o];
                for (std::size_t i = 0; i < in_; ++i)
                    acc += w[i] * x[i];
                y[o] = acc;
            }
        }
        return out;
    }

    Matrix backward(const Matrix &grad_output) override {
        Matrix grad_in(input_.rows(), in_);
        for (std::size_t n = 0; n < input_.rows(); ++n) {
            const double *x = input_.row(n).data();
            const double *gy = grad_output.row(n).data();
            double *gx = grad_in.row(n).data();
            for (std::size_t o = 0; o < out_; ++o) {
                const double g = gy[o];
                double *gw = weight_.grad.data() + o * in_;
                const double *w = weight_.value.data() + o * in_;
                bias_.grad[o] += g;
                for (std::size_t i = 0; i < in_; ++i) {
                    gw[i] += g * x[i];
                    gx[i] += g * w[i];
                }
            }
        }
        return grad_in;
    }

private:
    std::string name_;
    std::size_t in_, out_;
    ParamTensor weight_, bias_;
    Matrix input_;
};

class ReLU final : public Layer {
public:
    ReLU(std::string name, std::size_t dim) : name_(std::move(name)), dim_(dim) {}

    std::string name() const override { return name_; }
    std::size_t output_dim() const override { return dim_; }

    Matrix forward(const Matrix &input, const LayerContext &) override {
        check_width(input, dim_, name_);
        input_ = input;
        Matrix out = input;
        for (double &v : out.storage())
            v = v > 0.0 ? v : 0.0;
        return out;
    }

    Matrix backward(const Matrix &grad_output) override {
        Matrix grad_in = grad_output;
        const auto &x = input_.storage();
        auto &g = grad_in.storage();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (x[i] <= 0.0)
                g[i] = 0.0;
        return grad_in;
    }

private:
    std::string name_;
    std::size_t dim_;
    Matrix input_;
};

// 3x3 convolution, stride 1, zero padding 1: spatial size is preserved.
class Conv3x3 final : public Layer {
public:
    Conv3x3(std::string name, std::size_t in_c, std::size_t out_c, std::size_t h, std::size_t w)
        : name_(std::move(name)), in_c_(in_c), out_c_(out_c), h_(h), w_(w) {
        weight_.name = name_ + ".weight";
        weight_.value.assign(out_c_ * in_c_ * 9, 0.0);
        weight_.grad.assign(weight_.value.size(), 0.0);
        bias_.name = name_ + ".bias";
        bias_.value.assign(out_c_, 0.0);
        bias_.grad.assign(out_c_, 0.0);
    }

    std::string name() const override { return name_; }
    std::size_t output_dim() const override { return out_c_ * h_ * w_; }
    std::vector<ParamTensor *> params() override { return {&weight_, &bias_}; }
    std::size_t fan_in() const { return in_c_ * 9; }

    Matrix forward(const Matrix &input, const LayerContext &) override {
        check_width(input, in_c_ * h_ * w_, name_);
        input_ = input;
        const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(h_);
        const std::ptrdiff_t w = static_cast<std::ptrdiff_t>(w_);
        Matrix out(input.rows(), out_c_ * h_ * w_);
        for (std::size_t n = 0; n < input.rows(); ++n) {
            const double *in = input.row(n).data();
            double *op = out.row(n).data();
            for (std::size_t oc = 0; oc < out_c_; ++oc) {
                double *plane = op + oc * h_ * w_;
                std::fill(plane, plane + h_ * w_, bias_.value[oc]);
                for (std::size_t ic = 0; ic < in_c_; ++ic) {
                    const double *ip = in + ic * h_ * w_;
                    const double *wp = weight_.value.data() + (oc * in_c_ + ic) * 9;
                    for (std::ptrdiff_t dy = -1; dy <= 1; ++dy) {
                        for (std::ptrdiff_t dx = -1; dx <= 1; ++dx) {
                            const double wv = wp[(dy + 1) * 3 + (dx + 1)];
                            const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, -dy);
                            const std::ptrdiff_t y1 = std::min(h, h - dy);
                            const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx);
                            const std::ptrdiff_t x1 = std::min(w, w - dx);
                            for (std::ptrdiff_t y = y0; y < y1; ++y) {
                                const double *irow = ip + (y + dy) * w + dx;
                                double *orow = plane + y * w;
                                for (std::ptrdiff_t x = x0; x < x1; ++x)
                                    orow[x] += wv * irow[x];
                            }
                        }
                    }
                }
            }
        }
        return out;
    }

    Matrix backward(const Matrix &grad_output) override {
        const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(h_);
        const std::ptrdiff_t w = static_cast<std::ptrdiff_t>(w_);
        Matrix grad_in(input_.rows(), in_c_ * h_ * w_);
        for (std::size_t n = 0; n < input_.rows(); ++n) {
            const double *in = input_.row(n).data();
            const double *go = grad_output.row(n).data();
            double *gi = grad_in.row(n).data();
            for (std::size_t oc = 0; oc < out_c_; ++oc) {
                const double *gplane = go + oc * h_ * w_;
                double bacc = 0.0;
                for (std::size_t i = 0; i < h_ * w_; ++i)
                    bacc += gplane[i];
                bias_.grad[oc] += bacc;
                for (std::size_t ic = 0; ic < in_c_; ++ic) {
                    const double *ip = in + ic * h_ * w_;
                    double *gip = gi + ic * h_ * w_;
                    const double *wp = weight_.value.data() + (oc * in_c_ + ic) * 9;
                    double *gwp = weight_.grad.data() + (oc * in_c_ + ic) * 9;
                    for (std::ptrdiff_t dy = -1; dy <= 1; ++dy) {
                        for (std::ptrdiff_t dx = -1; dx <= 1; ++dx) {
                            const double wv = wp[(dy + 1) * 3 + (dx + 1)];
                            double wacc = 0.0;
                            const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, -dy);
                            const std::ptrdiff_t y1 = std::min(h, h - dy);
                            const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx);
                            const std::ptrdiff_t x1 = std::min(w, w - dx);
                            for (std::ptrdiff_t y = y0; y < y1; ++y) {
                                const double *irow = ip + (y + dy) * w + dx;
                                double *girow = gip + (y + dy) * w + dx;
                                const double *grow = gplane + y * w;
                                for (std::ptrdiff_t x = x0; x < x1; ++x) {
                                    wacc += grow[x] * irow[x];
                                    girow[x] += grow[x] * wv;
                                }
                            }
                            gwp[(dy + 1) * 3 + (dx + 1)] += wacc;
                        }
                    }
                }
            }
        }
        return grad_in;
    }

private:
    std::string name_;
    std::size_t in_c_, out_c_, h_, w_;
    ParamTensor weight_, bias_;
    Matrix input_;
};

// 2x2 max pooling with stride 2. Ties resolve to the earliest position in
// row-major order, which keeps the backward routing deterministic.
class MaxPool2 final : public Layer {
public:
    MaxPool2(std::string name, std::size_t channels, std::size_t h, std::size_t w)
        : name_(std::move(name)), channels_(channels), h_(h), w_(w) {
        if (h_ % 2 != 0 || w_ % 2 != 0)
            throw ArchitectureError("layer " + name_ + " needs even spatial size, got " +
                                    std::to_string(h_) + "x" + std::to_string(w_));
    }

    std::string name() const override { return name_; }
    std::size_t output_dim() const override { return channels_ * (h_ / 2) * (w_ / 2); }

    Matrix forward(const Matrix &input, const LayerContext &) override {
        check_width(input, channels_ * h_ * w_, name_);
        in_rows_ = input.rows();
        const std::size_t oh = h_ / 2, ow = w_ / 2;
        Matrix out(input.rows(), output_dim());
        argmax_.assign(input.rows() * output_dim(), 0);
        for (std::size_t n = 0; n < input.rows(); ++n) {
            const double *in = input.row(n).data();
            double *op = out.row(n).data();
            std::uint32_t *am = argmax_.data() + n * output_dim();
            for (std::size_t c = 0; c < channels_; ++c) {
                const double *ip = in + c * h_ * w_;
                for (std::size_t y = 0; y < oh; ++y) {
                    for (std::size_t x = 0; x < ow; ++x) {
                        const std::size_t base = (2 * y) * w_ + 2 * x;
                        std::size_t best = base;
                        double bv = ip[base];
                        const std::size_t cand[3] = {base + 1, base + w_, base + w_ + 1};
                        for (std::size_t k = 0; k < 3; ++k) {
                            if (ip[cand[k]] > bv) {
                                bv = ip[cand[k]];
                                best = cand[k];
                            }
                        }
                        const std::size_t oi = c * oh * ow + y * ow + x;
                        op[oi] = bv;
                        am[oi] = static_cast<std::uint32_t>(c * h_ * w_ + best);
                    }
                }
            }
        }
        return out;
    }

    Matrix backward(const Matrix &grad_output) override {
        Matrix grad_in(in_rows_, channels_ * h_ * w_);
        for (std::size_t n = 0; n < in_rows_; ++n) {
            const double *go = grad_output.row(n).data();
            double *gi = grad_in.row(n).data();
            const std::uint32_t *am = argmax_.data() + n * output_dim();
            for (std::size_t i = 0; i < output_dim(); ++i)
                gi[am[i]] += go[i];
        }
        return grad_in;
    }

private:
    std::string name_;
    std::size_t channels_, h_, w_;
    std::size_t in_rows_ = 0;
    std::vector<std::uint32_t> argmax_;
};

class GlobalAvgPool final : public Layer {
public:
    GlobalAvgPool(std::string name, std::size_t channels, std::size_t spatial)
        : name_(std::move(name)), channels_(channels), spatial_(spatial) {}

    std::string name() const override { return name_; }
    std::size_t output_dim() const override { return channels_; }

    Matrix forward(const Matrix &input, const LayerContext &) override {
        check_width(input, channels_ * spatial_, name_);
        in_rows_ = input.rows();
        Matrix out(input.rows(), channels_);
        for (std::size_t n = 0; n < input.rows(); ++n) {
            const double *in = input.row(n).data();
            for (std::size_t c = 0; c < channels_; ++c) {
                double acc = 0.0;
                const double *p = in + c * spatial_;
                for (std::size_t s = 0; s < spatial_; ++s)
                    acc += p[s];
                out(n, c) = acc / static_cast<double>(spatial_);
            }
        }
        return out;
    }

    Matrix backward(const Matrix &grad_output) override {
        Matrix grad_in(in_rows_, channels_ * spatial_);
        const double inv = 1.0 / static_cast<double>(spatial_);
        for (std::size_t n = 0; n < in_rows_; ++n) {
            double *gi = grad_in.row(n).data();
            for (std::size_t c = 0; c < channels_; ++c) {
                const double g = grad_output(n, c) * inv;
                double *p = gi + c * spatial_;
                for (std::size_t s = 0; s < spatial_; ++s)
                    p[s] = g;
            }
        }
        return grad_in;
    }

private:
    std::string name_;
    std::size_t channels_, spatial_;
    std::size_t in_rows_ = 0;
};

void softmax_rows(Matrix &m) {
    for (std::size_t n = 0; n < m.rows(); ++n) {
        auto row = m.row(n);
        double mx = row[0];
        for (double v : row)
            mx = std::max(mx, v);
        double sum = 0.0;
        for (double &v : row) {
            v = std::exp(v - mx);
            sum += v;
        }
        for (double &v : row)
            v /= sum;
    }
}

} // namespace

// ---------------------------------------------------------------------------
// DarBatchNorm

DarBatchNorm::DarBatchNorm(std::string name, std::size_t channels, std::size_t spatial,
                           double momentum, double epsilon)
    : name_(std::move(name)), channels_(channels), spatial_(spatial), momentum_(momentum),
      epsilon_(epsilon) {
    gamma_.name = name_ + ".gamma";
    gamma_.value.assign(channels_, 1.0);
    gamma_.grad.assign(channels_, 0.0);
    beta_.name = name_ + ".beta";
    beta_.value.assign(channels_, 0.0);
    beta_.grad.assign(channels_, 0.0);
    running_mean_.name = name_ + ".running_mean";
    running_mean_.value.assign(channels_, 0.0);
    running_var_.name = name_ + ".running_var";
    running_var_.value.assign(channels_, 1.0);
}

Matrix DarBatchNorm::forward(const Matrix &input, const LayerContext &ctx) {
    check_width(input, channels_ * spatial_, name_);
    input_ = input;
    cached_training_ = ctx.training;

    Matrix out(input.rows(), input.cols());
    if (!ctx.training) {
        for (std::size_t c = 0; c < channels_; ++c) {
            const double r = 1.0 / std::sqrt(running_var_.value[c] + epsilon_);
            const double mu = running_mean_.value[c];
            const double g = gamma_.value[c], b = beta_.value[c];
            for (std::size_t n = 0; n < input.rows(); ++n) {
                const double *x = input.row(n).data() + c * spatial_;
                double *y = out.row(n).data() + c * spatial_;
                for (std::size_t s = 0; s < spatial_; ++s)
                    y[s] = g * (x[s] - mu) * r + b;
            }
        }
        return out;
    }

    std::vector<std::size_t> natural, universum;
    if (ctx.universum_mask != nullptr) {
        if (ctx.universum_mask->size() != input.rows())
            throw ConsistencyError("layer " + name_ + ": mask length " +
                                   std::to_string(ctx.universum_mask->size()) +
                                   " does not match batch size " + std::to_string(input.rows()));
        for (std::size_t n = 0; n < input.rows(); ++n)
            ((*ctx.universum_mask)[n] ? universum : natural).push_back(n);
    } else {
        natural.resize(input.rows());
        std::iota(natural.begin(), natural.end(), std::size_t{0});
    }
    if (input.rows() == 0)
        throw ConsistencyError("layer " + name_ + ": empty batch");

    std::vector<std::size_t> all(input.rows());
    std::iota(all.begin(), all.end(), std::size_t{0});

    groups_.clear();
    bool update_running = false;
    if (universum.empty()) {
        groups_.push_back({all, all, {}, {}});
        update_running = true;
    } else if (natural.empty()) {
        groups_.push_back({all, all, {}, {}});
    } else {
        const bool nat_own = natural.size() >= 2;
        const bool uni_own = universum.size() >= 2;
        if (nat_own && uni_own) {
            groups_.push_back({natural, natural, {}, {}});
            groups_.push_back({universum, universum, {}, {}});
            update_running = true;
        } else if (nat_own) { // lone Universum row borrows the natural statistics
            groups_.push_back({natural, all, {}, {}});
            update_running = true;
        } else if (uni_own) { // lone natural row borrows the Universum statistics
            groups_.push_back({universum, all, {}, {}});
        } else { // one row on each side: fall back to full-batch statistics
            groups_.push_back({all, all, {}, {}});
        }
    }

    for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
        StatGroup &grp = groups_[gi];
        grp.mean.assign(channels_, 0.0);
        grp.rstd.assign(channels_, 0.0);
        const double m = static_cast<double>(grp.stat_rows.size() * spatial_);
        for (std::size_t c = 0; c < channels_; ++c) {
            double sum = 0.0;
            for (std::size_t n : grp.stat_rows) {
                const double *x = input.row(n).data() + c * spatial_;
                for (std::size_t s = 0; s < spatial_; ++s)
                    sum += x[s];
            }
            const double mu = sum / m;
            double sq = 0.0;
            for (std::size_t n : grp.stat_rows) {
                const double *x = input.row(n).data() + c * spatial_;
                for (std::size_t s = 0; s < spatial_; ++s)
                    sq += (x[s] - mu) * (x[s] - mu);
            }
            const double var = sq / m; // biased, as in batch statistics
            grp.mean[c] = mu;
            grp.rstd[c] = 1.0 / std::sqrt(var + epsilon_);
            if (gi == 0 && update_running) {
                running_mean_.value[c] = momentum_ * running_mean_.value[c] + (1.0 - momentum_) * mu;
                running_var_.value[c] = momentum_ * running_var_.value[c] + (1.0 - momentum_) * var;
            }
        }
        for (std::size_t c = 0; c < channels_; ++c) {
            const double mu = grp.mean[c], r = grp.rstd[c];
            const double g = gamma_.value[c], b = beta_.value[c];
            for (std::size_t n : grp.consumer_rows) {
                const double *x = input.row(n).data() + c * spatial_;
                double *y = out.row(n).data() + c * spatial_;
                for (std::size_t s = 0; s < spatial_; ++s)
                    y[s] = g * (x[s] - mu) * r + b;
            }
        }
    }
    return out;
}

Matrix DarBatchNorm::backward(const Matrix &grad_output) {
    Matrix grad_in(input_.rows(), input_.cols());
    if (!cached_training_) {
        // running statistics are constants here, so the layer is affine
        for (std::size_t c = 0; c < channels_; ++c) {
            const double r = 1.0 / std::sqrt(running_var_.value[c] + epsilon_);
            const double mu = running_mean_.value[c];
            const double scale = gamma_.value[c] * r;
            for (std::size_t n = 0; n < input_.rows(); ++n) {
                const double *x = input_.row(n).data() + c * spatial_;
                const double *go = grad_output.row(n).data() + c * spatial_;
                double *gi = grad_in.row(n).data() + c * spatial_;
                for (std::size_t s = 0; s < spatial_; ++s) {
                    gamma_.grad[c] += go[s] * (x[s] - mu) * r;
                    beta_.grad[c] += go[s];
                    gi[s] = go[s] * scale;
                }
            }
        }
        return grad_in;
    }

    for (const StatGroup &grp : groups_) {
        const double m = static_cast<double>(grp.stat_rows.size() * spatial_);
        for (std::size_t c = 0; c < channels_; ++c) {
            const double mu = grp.mean[c], r = grp.rstd[c];
            const double g = gamma_.value[c];
            double sum_g = 0.0;    // sum of dL/dxhat over consumers
            double sum_gx = 0.0;   // sum of dL/dxhat * (x - mu)
            for (std::size_t n : grp.consumer_rows) {
                const double *x = input_.row(n).data() + c * spatial_;
                const double *go = grad_output.row(n).data() + c * spatial_;
                for (std::size_t s = 0; s < spatial_; ++s) {
                    const double gl = go[s] * g;
                    sum_g += gl;
                    sum_gx += gl * (x[s] - mu);
                    gamma_.grad[c] += go[s] * (x[s] - mu) * r;
                    beta_.grad[c] += go[s];
                }
            }
            // direct term for consumers
            for (std::size_t n : grp.consumer_rows) {
                const double *go = grad_output.row(n).data() + c * spatial_;
                double *gi = grad_in.row(n).data() + c * spatial_;
                for (std::size_t s = 0; s < spatial_; ++s)
                    gi[s] += r * go[s] * g;
            }
            // statistic terms for the rows the mean/variance came from
            const double mean_term = r * sum_g / m;
            const double var_term = r * r * r * sum_gx / m;
            for (std::size_t n : grp.stat_rows) {
                const double *x = input_.row(n).data() + c * spatial_;
                double *gi = grad_in.row(n).data() + c * spatial_;
                for (std::size_t s = 0; s < spatial_; ++s)
                    gi[s] -= mean_term + var_term * (x[s] - mu);
            }
        }
    }
    return grad_in;
}

Matrix batchnorm_reference(const Matrix &input, const std::vector<double> &gamma,
                           const std::vector<double> &beta, std::size_t channels, double epsilon) {
    if (channels == 0 || input.cols() % channels != 0)
        throw ArchitectureError("batchnorm_reference: width " + std::to_string(input.cols()) +
                                " is not a multiple of " + std::to_string(channels) + " channels");
    const std::size_t spatial = input.cols() / channels;
    const double m = static_cast<double>(input.rows() * spatial);
    Matrix out(input.rows(), input.cols());
    for (std::size_t c = 0; c < channels; ++c) {
        double sum = 0.0;
        for (std::size_t n = 0; n < input.rows(); ++n) {
            const double *x = input.row(n).data() + c * spatial;
            for (std::size_t s = 0; s < spatial; ++s)
                sum += x[s];
        }
        const double mu = sum / m;
        double sq = 0.0;
        for (std::size_t n = 0; n < input.rows(); ++n) {
            const double *x = input.row(n).data() + c * spatial;
            for (std::size_t s = 0; s < spatial; ++s)
                sq += (x[s] - mu) * (x[s] - mu);
        }
        const double r = 1.0 / std::sqrt(sq / m + epsilon);
        for (std::size_t n = 0; n < input.rows(); ++n) {
            const double *x = input.row(n).data() + c * spatial;
            double *y = out.row(n).data() + c * spatial;
            for (std::size_t s = 0; s < spatial; ++s)
                y[s] = gamma[c] * (x[s] - mu) * r + beta[c];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Config

std::size_t ArchConfig::input_dim() const {
    std::size_t d = 1;
    for (std::size_t s : input_shape)
        d *= s;
    return d;
}

std::string ArchConfig::to_json() const {
    nlohmann::json j;
    j["kind"] = kind;
    j["input_shape"] = input_shape;
    j["num_classes"] = num_classes;
    j["conv_channels"] = conv_channels;
    j["hidden"] = hidden;
    j["bn_momentum"] = bn_momentum;
    j["bn_epsilon"] = bn_epsilon;
    return j.dump();
}

ArchConfig ArchConfig::from_json(const std::string &text) {
    try {
        nlohmann::json j = nlohmann::json::parse(text);
        ArchConfig c;
        c.kind = j.at("kind").get<std::string>();
        c.input_shape = j.at("input_shape").get<std::vector<std::size_t>>();
        c.num_classes = j.at("num_classes").get<std::size_t>();
        c.conv_channels = j.at("conv_channels").get<std::vector<std::size_t>>();
        c.hidden = j.at("hidden").get<std::vector<std::size_t>>();
        c.bn_momentum = j.at("bn_momentum").get<double>();
        c.bn_epsilon = j.at("bn_epsilon").get<double>();
        return c;
    } catch (const nlohmann::json::exception &e) {
        throw FormatError(std::string("architecture json: ") + e.what());
    }
}

void TrainConfig::validate() const {
    if (epochs <= 0)
        throw ParameterError("epochs must be positive, got " + std::to_string(epochs));
    if (batch_size <= 0)
        throw ParameterError("batch_size must be positive, got " + std::to_string(batch_size));
    if (learning_rate <= 0.0)
        throw ParameterError("learning_rate must be positive");
    if (decay_factor <= 0.0 || decay_factor > 1.0)
        throw ParameterError("decay_factor must lie in (0, 1]");
    if (momentum < 0.0 || momentum >= 1.0)
        throw ParameterError("momentum must lie in [0, 1)");
    if (weight_decay < 0.0)
        throw ParameterError("weight_decay must be non-negative");
    if (warmup_epochs < 0 || warmup_epochs > epochs)
        throw ParameterError("warmup_epochs must lie in [0, epochs]");
    for (std::size_t i = 0; i < milestones.size(); ++i) {
        if (milestones[i] <= 0 || milestones[i] >= epochs)
            throw ParameterError("milestone " + std::to_string(milestones[i]) +
                                 " outside (0, epochs)");
        if (i > 0 && milestones[i] <= milestones[i - 1])
            throw ParameterError("milestones must be strictly increasing");
    }
}

double scheduled_lr(const TrainConfig &config, int epoch) {
    if (epoch < 0 || epoch >= config.epochs)
        throw ParameterError("epoch " + std::to_string(epoch) + " outside [0, " +
                             std::to_string(config.epochs) + ")");
    if (epoch < config.warmup_epochs)
        return config.learning_rate * static_cast<double>(epoch + 1) /
               static_cast<double>(config.warmup_epochs);
    double lr = config.learning_rate;
    for (int m : config.milestones)
        if (epoch >= m)
            lr *= config.decay_factor;
    return lr;
}

// ---------------------------------------------------------------------------
// Loss

CrossEntropyResult cross_entropy(const Matrix &probabilities, const std::vector<int> &labels,
                                 std::size_t num_classes) {
    if (probabilities.rows() != labels.size())
        throw ConsistencyError("cross_entropy: " + std::to_string(probabilities.rows()) +
                               " probability rows vs " + std::to_string(labels.size()) + " labels");
    if (probabilities.cols() != num_classes)
        throw ConsistencyError("cross_entropy: probability width " +
                               std::to_string(probabilities.cols()) + " vs " +
                               std::to_string(num_classes) + " classes");
    CrossEntropyResult res;
    res.per_class_loss.assign(num_classes, 0.0);
    res.per_class_counts.assign(num_classes, 0);
    constexpr double kFloor = 1e-12;
    for (std::size_t n = 0; n < labels.size(); ++n) {
        const int y = labels[n];
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
            throw ConsistencyError("cross_entropy: label " + std::to_string(y) + " at row " +
                                   std::to_string(n) + " outside [0, " +
                                   std::to_string(num_classes) + ")");
        double p = probabilities(n, static_cast<std::size_t>(y));
        if (p < kFloor) {
            p = kFloor;
            ++res.clamped;
        }
        const double l = -std::log(p);
        res.loss += l;
        res.per_class_loss[static_cast<std::size_t>(y)] += l;
        ++res.per_class_counts[static_cast<std::size_t>(y)];
    }
    res.loss /= static_cast<double>(labels.size());
    for (std::size_t c = 0; c < num_classes; ++c)
        if (res.per_class_counts[c] > 0)
            res.per_class_loss[c] /= static_cast<double>(res.per_class_counts[c]);
    return res;
}

// ---------------------------------------------------------------------------
// Network

Network Network::build(const ArchConfig &config, std::uint64_t init_seed) {
    Network net;
    net.arch_ = config;
    const std::size_t in_dim = config.input_dim();
    if (in_dim == 0)
        throw ArchitectureError("input_shape must describe a non-empty input");
    if (config.num_classes < 2)
        throw ArchitectureError("num_classes must be at least 2");

    if (config.kind == "cnn") {
        if (config.input_shape.size() != 3)
            throw ArchitectureError("cnn input_shape must be {channels, height, width}");
        if (config.conv_channels.empty())
            throw ArchitectureError("cnn needs at least one block");
        std::size_t c = config.input_shape[0];
        std::size_t h = config.input_shape[1];
        std::size_t w = config.input_shape[2];
        for (std::size_t b = 0; b < config.conv_channels.size(); ++b) {
            const std::size_t oc = config.conv_channels[b];
            const std::string tag = "b" + std::to_string(b + 1);
            net.layers_.push_back(std::make_unique<Conv3x3>(tag + ".conv1", c, oc, h, w));
            net.layers_.push_back(std::make_unique<DarBatchNorm>(tag + ".bn1", oc, h * w,
                                                                 config.bn_momentum,
                                                                 config.bn_epsilon));
            net.layers_.push_back(std::make_unique<ReLU>(tag + ".relu1", oc * h * w));
            net.layers_.push_back(std::make_unique<Conv3x3>(tag + ".conv2", oc, oc, h, w));
            net.layers_.push_back(std::make_unique<DarBatchNorm>(tag + ".bn2", oc, h * w,
                                                                 config.bn_momentum,
                                                                 config.bn_epsilon));
            net.layers_.push_back(std::make_unique<ReLU>(tag + ".relu2", oc * h * w));
            net.layers_.push_back(std::make_unique<MaxPool2>(tag + ".pool", oc, h, w));
            c = oc;
            h /= 2;
            w /= 2;
            if (h == 0 || w == 0)
                throw ArchitectureError("input too small for " + std::to_string(b + 1) +
                                        " pooling stages");
        }
        net.layers_.push_back(std::make_unique<GlobalAvgPool>("gap", c, h * w));
        net.feature_dim_ = c;
    } else if (config.kind == "mlp") {
        std::size_t d = in_dim;
        for (std::size_t i = 0; i < config.hidden.size(); ++i) {
            const std::string tag = "fc" + std::to_string(i + 1);
            net.layers_.push_back(std::make_unique<Linear>(tag, d, config.hidden[i]));
            net.layers_.push_back(std::make_unique<ReLU>(tag + ".relu", config.hidden[i]));
            d = config.hidden[i];
        }
        net.feature_dim_ = d;
    } else if (config.kind == "passthrough") {
        net.feature_dim_ = in_dim;
    } else {
        throw ArchitectureError("unknown architecture kind '" + config.kind + "'");
    }
    net.layers_.push_back(std::make_unique<Linear>("head", net.feature_dim_, config.num_classes));

    // Uniform(-sqrt(1/fan_in), sqrt(1/fan_in)) for weights and biases, in
    // layer order, so a given seed always produces the same network.
    Rng rng(init_seed);
    for (auto &layer : net.layers_) {
        auto *conv = dynamic_cast<Conv3x3 *>(layer.get());
        auto *lin = dynamic_cast<Linear *>(layer.get());
        if (conv == nullptr && lin == nullptr)
            continue;
        std::size_t fan_in;
        if (conv != nullptr)
            fan_in = conv->fan_in();
        else
            fan_in = layer->params()[0]->value.size() / layer->output_dim();
        const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
        for (ParamTensor *t : layer->params())
            for (double &v : t->value)
                v = (2.0 * rng.uniform() - 1.0) * bound;
    }
    return net;
}

ForwardResult Network::forward(const Matrix &inputs, const LayerContext &ctx) {
    check_width(inputs, arch_.input_dim(), "input");
    ForwardResult res;
    Matrix x = inputs;
    for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
        x = layers_[i]->forward(x, ctx);
        if (!all_finite(x.storage()))
            throw NumericError("non-finite activation after layer " + layers_[i]->name());
    }
    res.features = x;
    res.logits = layers_.back()->forward(x, ctx);
    if (!all_finite(res.logits.storage()))
        throw NumericError("non-finite activation after layer " + layers_.back()->name());
    res.probabilities = res.logits;
    softmax_rows(res.probabilities);
    return res;
}

void Network::backward(const Matrix &probabilities, const std::vector<int> &labels) {
    if (probabilities.rows() != labels.size())
        throw ConsistencyError("backward: " + std::to_string(probabilities.rows()) +
                               " rows vs " + std::to_string(labels.size()) + " labels");
    const double inv_n = 1.0 / static_cast<double>(probabilities.rows());
    Matrix grad = probabilities;
    for (std::size_t n = 0; n < grad.rows(); ++n) {
        grad(n, static_cast<std::size_t>(labels[n])) -= 1.0;
        for (std::size_t c = 0; c < grad.cols(); ++c)
            grad(n, c) *= inv_n;
    }
    for (std::size_t i = layers_.size(); i-- > 0;)
        grad = layers_[i]->backward(grad);
}

std::vector<ParamTensor *> Network::parameters() {
    std::vector<ParamTensor *> out;
    for (auto &layer : layers_)
        for (ParamTensor *t : layer->params())
            out.push_back(t);
    return out;
}

std::vector<ParamTensor *> Network::state_tensors() {
    std::vector<ParamTensor *> out;
    for (auto &layer : layers_)
        for (ParamTensor *t : layer->state())
            out.push_back(t);
    return out;
}

void Network::zero_grad() {
    for (ParamTensor *t : parameters())
        t->zero_grad();
}

const ParamTensor &Network::head_weight() const {
    auto params = const_cast<Layer &>(*layers_.back()).params();
    return *params.at(0);
}

const ParamTensor &Network::head_bias() const {
    auto params = const_cast<Layer &>(*layers_.back()).params();
    return *params.at(1);
}

Matrix Network::extract_features(const Matrix &inputs) {
    LayerContext ctx; // eval mode
    return forward(inputs, ctx).features;
}

namespace {

void write_u64(std::ofstream &out, std::uint64_t v) {
    out.write(reinterpret_cast<const char *>(&v), sizeof(v));
}

std::uint64_t read_u64(std::ifstream &in, const std::string &what) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char *>(&v), sizeof(v));
    if (!in)
        throw FormatError("checkpoint truncated while reading " + what);
    return v;
}

constexpr char kCheckpointMagic[8] = {'C', 'A', 'U', 'N', 'E', 'T', '0', '1'};

} // namespace

void Network::save(const std::filesystem::path &path) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw FormatError("cannot open " + path.string() + " for writing");
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    const std::string arch = arch_.to_json();
    write_u64(out, arch.size());
    out.write(arch.data(), static_cast<std::streamsize>(arch.size()));

    std::vector<ParamTensor *> tensors = parameters();
    for (ParamTensor *t : state_tensors())
        tensors.push_back(t);
    write_u64(out, tensors.size());
    for (const ParamTensor *t : tensors) {
        write_u64(out, t->name.size());
        out.write(t->name.data(), static_cast<std::streamsize>(t->name.size()));
        write_u64(out, t->value.size());
        out.write(reinterpret_cast<const char *>(t->value.data()),
                  static_cast<std::streamsize>(t->value.size() * sizeof(double)));
    }
    if (!out)
        throw FormatError("failed to write checkpoint " + path.string());
}

Network Network::load(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw FormatError("cannot open checkpoint " + path.string());
    char magic[sizeof(kCheckpointMagic)];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw FormatError(path.string() + " is not a network checkpoint");
    const std::uint64_t arch_len = read_u64(in, "architecture length");
    std::string arch_text(arch_len, '\0');
    in.read(arch_text.data(), static_cast<std::streamsize>(arch_len));
    if (!in)
        throw FormatError("checkpoint truncated while reading architecture");

    Network net = build(ArchConfig::from_json(arch_text), 0);
    std::vector<ParamTensor *> tensors = net.parameters();
    for (ParamTensor *t : net.state_tensors())
        tensors.push_back(t);

    const std::uint64_t count = read_u64(in, "tensor count");
    if (count != tensors.size())
        throw FormatError("checkpoint holds " + std::to_string(count) + " tensors, expected " +
                          std::to_string(tensors.size()));
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint64_t name_len = read_u64(in, "tensor name length");
        std::string name(name_len, '\0');
        in.read(name.data(), static_cast<std::streamsize>(name_len));
        const std::uint64_t size = read_u64(in, "tensor size");
        if (!in)
            throw FormatError("checkpoint truncated while reading tensor " + name);
        if (name != tensors[i]->name || size != tensors[i]->value.size())
            throw FormatError("checkpoint tensor " + name + " (" + std::to_string(size) +
                              " values) does not match expected " + tensors[i]->name + " (" +
                              std::to_string(tensors[i]->value.size()) + ")");
        in.read(reinterpret_cast<char *>(tensors[i]->value.data()),
                static_cast<std::streamsize>(size * sizeof(double)));
        if (!in)
            throw FormatError("checkpoint truncated inside tensor " + name);
    }
    return net;
}

// ---------------------------------------------------------------------------
// Optimization

void SgdOptimizer::step(const std::vector<ParamTensor *> &params, double lr) {
    if (velocity_.size() != params.size())
        velocity_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        ParamTensor &p = *params[i];
        std::vector<double> &v = velocity_[i];
        if (v.size() != p.value.size())
            v.assign(p.value.size(), 0.0);
        for (std::size_t k = 0; k < p.value.size(); ++k) {
            const double g = p.grad[k] + weight_decay_ * p.value[k];
            v[k] = momentum_ * v[k] + g;
            p.value[k] -= lr * v[k];
        }
    }
}

StepResult train_step(Network &net, SgdOptimizer &opt, const sampling::Batch &batch, double lr) {
    LayerContext ctx;
    ctx.training = true;
    ctx.universum_mask = batch.universum_mask.empty() ? nullptr : &batch.universum_mask;
    ForwardResult fwd = net.forward(batch.samples, ctx);
    CrossEntropyResult ce = cross_entropy(fwd.probabilities, batch.labels, net.arch().num_classes);

    net.zero_grad();
    net.backward(fwd.probabilities, batch.labels);

    StepResult res;
    res.loss = ce.loss;
    res.clamped = ce.clamped;
    std::vector<ParamTensor *> params = net.parameters();
    for (const ParamTensor *t : params) {
        double sq = 0.0;
        for (double g : t->grad) {
            if (!std::isfinite(g))
                throw NumericError("non-finite gradient in " + t->name);
            sq += g * g;
        }
        res.gradient_norms.emplace_back(t->name, std::sqrt(sq));
    }
    opt.step(params, lr);
    return res;
}

Matrix extract_features(Network &net, const data::LabeledDataset &dataset, std::size_t batch_size) {
    Matrix out(dataset.size(), net.feature_dim());
    LayerContext ctx; // eval mode
    for (std::size_t start = 0; start < dataset.size(); start += batch_size) {
        const std::size_t n = std::min(batch_size, dataset.size() - start);
        Matrix chunk(n, dataset.samples.cols());
        for (std::size_t i = 0; i < n; ++i)
            chunk.set_row(i, dataset.samples.row(start + i));
        ForwardResult fwd = net.forward(chunk, ctx);
        for (std::size_t i = 0; i < n; ++i)
            out.set_row(start + i, fwd.features.row(i));
    }
    return out;
}

std::vector<int> predict(Network &net, const data::LabeledDataset &dataset,
                         std::size_t batch_size) {
    std::vector<int> preds(dataset.size(), 0);
    LayerContext ctx;
    for (std::size_t start = 0; start < dataset.size(); start += batch_size) {
        const std::size_t n = std::min(batch_size, dataset.size() - start);
        Matrix chunk(n, dataset.samples.cols());
        for (std::size_t i = 0; i < n; ++i)
            chunk.set_row(i, dataset.samples.row(start + i));
        ForwardResult fwd = net.forward(chunk, ctx);
        for (std::size_t i = 0; i < n; ++i) {
            auto row = fwd.logits.row(i);
            std::size_t best = 0;
            for (std::size_t c = 1; c < row.size(); ++c)
                if (row[c] > row[best])
                    best = c;
            preds[start + i] = static_cast<int>(best);
        }
    }
    return preds;
}

} // namespace cauirl::model
