#pragma once

#include <cstdint>
#include <vector>

#include "cauirl/dataset.hpp"
#include "cauirl/matrix.hpp"
#include "cauirl/rng.hpp"

namespace cauirl::sampling {

// Per-class rebalance statistics.
//   sampling_prob[c]       ~ 1/N_c, normalized over classes
//   representation_rate[c] = N_c / N_max
//   replacement_prob[c]    = (1 - representation_rate[c]) * delta
struct ClassStats {
    std::vector<std::size_t> counts;
    std::vector<double> sampling_prob;
    std::vector<double> representation_rate;
    std::vector<double> replacement_prob;
    double delta = 0.0;
};

// A mini-batch. universum_mask[i] is true once samples.row(i) has been
// replaced by a Universum sample; labels are never touched by replacement.
struct Batch {
    Matrix samples;
    std::vector<int> labels;
    std::vector<std::uint8_t> universum_mask;

    std::size_t size() const { return labels.size(); }
};

// When and how strongly replacement is applied. Replacement is active only
// in the deferred window: epoch >= total_epochs - defer_epochs.
struct ReplacementSchedule {
    double delta = 0.9;
    int defer_epochs = 0;
    int total_epochs = 0;
    std::uint64_t rng_seed = 0;

    bool active(int epoch) const { return epoch >= total_epochs - defer_epochs; }
};

// Produces one Universum sample for a flagged batch slot. Implementations
// must read only the pristine (pre-replacement) batch passed in.
class UniversumSource {
public:
    virtual ~UniversumSource() = default;
    virtual std::vector<double> generate(const Batch &pristine, std::size_t slot, Rng &rng) = 0;
};

ClassStats compute_class_stats(const data::LabeledDataset &dataset, double delta);

// epoch_len indices drawn i.i.d.: class uniform, then a uniform instance
// within the class, with replacement. Deterministic per seed.
std::vector<std::size_t> oversample_epoch(const data::LabeledDataset &dataset,
                                          const ClassStats &stats, std::size_t epoch_len,
                                          std::uint64_t seed);

// Bernoulli(replacement_prob[class]) per slot; flagged slots are overwritten
// with a Universum sample carrying the same label. All Universum generation
// sees the pristine batch, so replacement order cannot matter. Randomness
// comes from the (epoch, batch_index) sub-stream of the schedule seed.
Batch apply_replacement(Batch batch, const ClassStats &stats, UniversumSource &universum_source,
                        int epoch, std::size_t batch_index, const ReplacementSchedule &schedule);

} // namespace cauirl::sampling
