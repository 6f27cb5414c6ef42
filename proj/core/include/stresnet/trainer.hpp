#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "stresnet/dataset.hpp"
#include "stresnet/model.hpp"

namespace stresnet {

/// Optimizer and loop settings. Per-QP defaults follow the per-quality
/// training recipe; anything can be overridden before calling train().
struct HyperParams {
    int qp = 37;
    double base_learning_rate = 1e-8;
    double beta1 = 0.9;
    double beta2 = 0.988;
    long iterations = 300000;
    int batch_size = 128;
    double adam_epsilon = 1e-8;
    std::uint64_t seed = 0;
    /// Samples held out from training at the end of the store; the final
    /// report loss is computed there. 0 = evaluate on the full store.
    int holdout_count = 0;
    /// Worker threads for per-sample forward/backward inside a batch.
    int threads = 1;

    /// qp 22 -> (1e-6, 0.999, 600k); 27 -> (1e-7, 0.990, 600k);
    /// 32, 37 -> (1e-8, 0.988, 300k). beta1 = 0.9, batch 128 throughout.
    /// Other qp values pick the nearest of the four rows.
    static HyperParams defaults_for_qp(int qp);
};

/// Per-parameter Adam accumulators, aligned with the canonical parameter
/// order of param_ptrs().
struct AdamState {
    long step = 0;
    StresNetWeights first_moment;  // qp field unused
    StresNetWeights second_moment; // qp field unused
};

/// One (colocated, current, target) batch element as tensors in the
/// normalized domain. Blocks of any size, single channel.
struct Triplet {
    Tensor colocated;
    Tensor current;
    Tensor target;
};

Triplet sample_to_triplet(const TrainingSample& s, int block_size = kSampleBlockSize);

/// Mean over the batch of the per-sample squared error summed over all
/// pixels (no per-pixel normalization).
double loss(const StresNetWeights& weights, std::span<const Triplet> batch);

/// Exact gradient of loss() with respect to every weight and bias,
/// averaged over the batch. Layout matches StresNetWeights.
StresNetWeights backward(const StresNetWeights& weights, std::span<const Triplet> batch);

/// Bias-corrected Adam update, applied in place; state.step is incremented.
void adam_step(StresNetWeights& weights, const StresNetWeights& gradient, AdamState& state,
               const HyperParams& hp);

struct TrainReport {
    struct LogEntry {
        long iteration;
        double mean_batch_loss;
    };
    std::vector<LogEntry> log; // iteration 1, every 100th, and the last
    double initial_loss = 0.0; // evaluation-slice loss before training
    double final_loss = 0.0;   // evaluation-slice loss after training
    int holdout_count = 0;
};

struct TrainCallbacks {
    /// Called every 10000 iterations and after the last one.
    std::function<void(long iteration, const StresNetWeights&)> checkpoint;
    /// Called for every TrainReport log entry as it is produced.
    std::function<void(long iteration, double mean_batch_loss)> log;
};

/// Initializes from (hp.qp, hp.seed), then runs hp.iterations batches drawn
/// sequentially from the pre-shuffled store with wraparound at a constant
/// learning rate. Returns the final weights tagged with hp.qp.
std::pair<StresNetWeights, TrainReport> train(const SampleStore& store, const HyperParams& hp,
                                              const TrainCallbacks& callbacks = {});

} // namespace stresnet
