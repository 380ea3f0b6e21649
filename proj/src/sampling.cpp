#include "cauirl/sampling.hpp"

#include <string>

#include "cauirl/errors.hpp"

namespace cauirl::sampling {

ClassStats compute_class_stats(const data::LabeledDataset &dataset, double delta) {
    if (delta < 0.0 || delta > 1.0)
        throw ParameterError("class stats: delta must lie in [0,1]");
    const auto &counts = dataset.class_counts;
    std::size_t n_max = 0;
    for (std::size_t c = 0; c < counts.size(); ++c) {
        if (counts[c] == 0)
            throw ParameterError("class stats: class " + std::to_string(c) + " is empty");
        n_max = std::max(n_max, counts[c]);
    }

    ClassStats stats;
    stats.counts = counts;
    stats.delta = delta;
    stats.sampling_prob.resize(counts.size());
    stats.representation_rate.resize(counts.size());
    stats.replacement_prob.resize(counts.size());

    double inv_sum = 0.0;
    for (std::size_t c = 0; c < counts.size(); ++c)
        inv_sum += 1.0 / static_cast<double>(counts[c]);
    for (std::size_t c = 0; c < counts.size(); ++c) {
        stats.sampling_prob[c] = (1.0 / static_cast<double>(counts[c])) / inv_sum;
        stats.representation_rate[c] =
            static_cast<double>(counts[c]) / static_cast<double>(n_max);
        stats.replacement_prob[c] = (1.0 - stats.representation_rate[c]) * delta;
    }
    return stats;
}

std::vector<std::size_t> oversample_epoch(const data::LabeledDataset &dataset,
                                          const ClassStats &stats, std::size_t epoch_len,
                                          std::uint64_t seed) {
    if (epoch_len == 0)
        throw ParameterError("oversample: epoch_len must be positive");
    const std::size_t num_classes = stats.counts.size();

    std::vector<std::vector<std::size_t>> by_class(num_classes);
    for (std::size_t i = 0; i < dataset.size(); ++i)
        by_class[static_cast<std::size_t>(dataset.labels[i])].push_back(i);

    Rng rng(seed);
    std::vector<std::size_t> stream;
    stream.reserve(epoch_len);
    for (std::size_t i = 0; i < epoch_len; ++i) {
        const std::size_t c = rng.uniform_index(num_classes);
        stream.push_back(by_class[c][rng.uniform_index(by_class[c].size())]);
    }
    return stream;
}

Batch apply_replacement(Batch batch, const ClassStats &stats, UniversumSource &universum_source,
                        int epoch, std::size_t batch_index, const ReplacementSchedule &schedule) {
    if (epoch < 0 || epoch >= schedule.total_epochs)
        throw ParameterError("replacement: epoch " + std::to_string(epoch) +
                             " outside schedule of " + std::to_string(schedule.total_epochs) +
                             " epochs");
    if (!schedule.active(epoch))
        return batch;

    const Batch pristine = batch;
    Rng rng(derive_seed(schedule.rng_seed, static_cast<std::uint64_t>(epoch), batch_index));
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto c = static_cast<std::size_t>(batch.labels[i]);
        if (rng.bernoulli(stats.replacement_prob[c])) {
            const auto sample = universum_source.generate(pristine, i, rng);
            batch.samples.set_row(i, sample);
            batch.universum_mask[i] = 1;
        }
    }
    return batch;
}

} // namespace cauirl::sampling
