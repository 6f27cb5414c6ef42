#include "stresnet/trainer.hpp"

#include <cmath>
#include <thread>

namespace stresnet {

HyperParams HyperParams::defaults_for_qp(int qp) {
    HyperParams hp;
    hp.qp = qp;
    if (qp <= 24) {
        hp.base_learning_rate = 1e-6;
        hp.beta2 = 0.999;
        hp.iterations = 600000;
    } else if (qp <= 29) {
        hp.base_learning_rate = 1e-7;
        hp.beta2 = 0.990;
        hp.iterations = 600000;
    } else {
        // the 32 and 37 rows coincide
        hp.base_learning_rate = 1e-8;
        hp.beta2 = 0.988;
        hp.iterations = 300000;
    }
    return hp;
}

Triplet sample_to_triplet(const TrainingSample& s, int block_size) {
    return Triplet{block_to_tensor(s.colocated, block_size), block_to_tensor(s.current, block_size),
                   block_to_tensor(s.target, block_size)};
}

namespace {

void check_batch(std::span<const Triplet> batch) {
    if (batch.empty())
        throw PreconditionError("loss: batch must be non-empty");
    for (const Triplet& t : batch) {
        if (!t.current.same_shape(batch.front().current) || !t.current.same_shape(t.colocated) ||
            !t.current.same_shape(t.target))
            throw PreconditionError("loss: all batch blocks must share one shape");
    }
}

double sample_loss(const StresNetWeights& weights, const Triplet& t) {
    Tensor prediction = forward(weights, t.current, t.colocated);
    double sum = 0.0;
    const double* p = prediction.data().data();
    const double* y = t.target.data().data();
    for (std::size_t i = 0; i < prediction.size(); ++i) {
        const double d = p[i] - y[i];
        sum += d * d;
    }
    return sum;
}

// Gradient of one sample's summed squared error; not yet batch-averaged.
// Returns the sample's loss through the same forward pass.
StresNetWeights sample_backward(const StresNetWeights& w, const Triplet& t, double* loss_out = nullptr) {
    const ForwardTrace trace = forward_with_intermediates(w, t.current, t.colocated);

    // d/d output of sum((out - y)^2)
    Tensor up = trace.output;
    {
        double* u = up.data().data();
        const double* y = t.target.data().data();
        double sum = 0.0;
        for (std::size_t i = 0; i < up.size(); ++i) {
            const double d = u[i] - y[i];
            sum += d * d;
            u[i] = 2.0 * d;
        }
        if (loss_out)
            *loss_out = sum;
    }

    StresNetWeights g; // zero-initialized, same layout
    // output = current + residue, so the residue branch sees `up` unchanged.
    Tensor residue_up = up;
    if constexpr (kReluAfterLastConv) {
        // post-activation residue = output - current
        Tensor post(trace.output.height(), trace.output.width(), 1);
        const double* o = trace.output.data().data();
        const double* c = t.current.data().data();
        double* p = post.data().data();
        for (std::size_t i = 0; i < post.size(); ++i)
            p[i] = o[i] - c[i];
        residue_up = relu_backward(post, residue_up);
    }

    ConvGradients g5 = conv2d_same_backward(trace.f4, w.conv5, residue_up);
    g.conv5 = std::move(g5.kernel_grad);

    Tensor f4_up = relu_backward(trace.f4, g5.input_grad);
    ConvGradients g4 = conv2d_same_backward(trace.fused, w.conv4, f4_up);
    g.conv4 = std::move(g4.kernel_grad);

    Tensor fused_up = relu_backward(trace.fused, g4.input_grad);
    Tensor fusion_input = concat_channels(trace.f1, trace.f2);
    ConvGradients g3 = conv2d_same_backward(fusion_input, w.conv3, fused_up);
    g.conv3 = std::move(g3.kernel_grad);

    auto [f1_up_post, f2_up_post] = split_channels(g3.input_grad, trace.f1.channels());
    Tensor f1_up = relu_backward(trace.f1, f1_up_post);
    Tensor f2_up = relu_backward(trace.f2, f2_up_post);

    ConvGradients g1 = conv2d_same_backward(t.current, w.conv1, f1_up);
    g.conv1 = std::move(g1.kernel_grad);
    ConvGradients g2 = conv2d_same_backward(t.colocated, w.conv2, f2_up);
    g.conv2 = std::move(g2.kernel_grad);
    return g;
}

// Runs fn(i) for i in [0, n) on up to `threads` workers over contiguous
// index ranges. Results must be written to per-index slots so that callers
// can reduce them in fixed order.
template <typename F>
void parallel_indexed(std::size_t n, int threads, F&& fn) {
    const int workers = std::min<std::size_t>(std::max(threads, 1), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i)
            fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int t = 0; t < workers; ++t) {
        const std::size_t lo = n * t / workers;
        const std::size_t hi = n * (t + 1) / workers;
        pool.emplace_back([lo, hi, &fn] {
            for (std::size_t i = lo; i < hi; ++i)
                fn(i);
        });
    }
    for (std::thread& t : pool)
        t.join();
}

void accumulate(StresNetWeights& into, const StresNetWeights& from) {
    auto add_vec = [](std::vector<double>& a, const std::vector<double>& b) {
        for (std::size_t i = 0; i < a.size(); ++i)
            a[i] += b[i];
    };
    const ConvKernel* src[5] = {&from.conv1, &from.conv2, &from.conv3, &from.conv4, &from.conv5};
    ConvKernel* dst[5] = {&into.conv1, &into.conv2, &into.conv3, &into.conv4, &into.conv5};
    for (int k = 0; k < 5; ++k) {
        add_vec(dst[k]->weights, src[k]->weights);
        add_vec(dst[k]->bias, src[k]->bias);
    }
}

void scale_params(StresNetWeights& w, double factor) {
    w.for_each_layer([factor](ConvKernel& k) {
        for (double& v : k.weights)
            v *= factor;
        for (double& v : k.bias)
            v *= factor;
    });
}

} // namespace

double loss(const StresNetWeights& weights, std::span<const Triplet> batch) {
    check_batch(batch);
    double total = 0.0;
    for (const Triplet& t : batch)
        total += sample_loss(weights, t);
    return total / static_cast<double>(batch.size());
}

StresNetWeights backward(const StresNetWeights& weights, std::span<const Triplet> batch) {
    check_batch(batch);
    StresNetWeights grad;
    for (const Triplet& t : batch)
        accumulate(grad, sample_backward(weights, t));
    scale_params(grad, 1.0 / static_cast<double>(batch.size()));
    return grad;
}

void adam_step(StresNetWeights& weights, const StresNetWeights& gradient, AdamState& state,
               const HyperParams& hp) {
    state.step += 1;
    const double b1 = hp.beta1, b2 = hp.beta2;
    const double m_corr = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double v_corr = 1.0 - std::pow(b2, static_cast<double>(state.step));
    const double lr = hp.base_learning_rate, eps = hp.adam_epsilon;

    auto update = [&](std::vector<double>& theta, const std::vector<double>& g, std::vector<double>& m,
                      std::vector<double>& v) {
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double gi = g[i];
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            const double m_hat = m[i] / m_corr;
            const double v_hat = v[i] / v_corr;
            theta[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
        }
    };

    ConvKernel* th[5] = {&weights.conv1, &weights.conv2, &weights.conv3, &weights.conv4, &weights.conv5};
    const ConvKernel* g[5] = {&gradient.conv1, &gradient.conv2, &gradient.conv3, &gradient.conv4,
                              &gradient.conv5};
    ConvKernel* m[5] = {&state.first_moment.conv1, &state.first_moment.conv2, &state.first_moment.conv3,
                        &state.first_moment.conv4, &state.first_moment.conv5};
    ConvKernel* v[5] = {&state.second_moment.conv1, &state.second_moment.conv2, &state.second_moment.conv3,
                        &state.second_moment.conv4, &state.second_moment.conv5};
    for (int k = 0; k < 5; ++k) {
        update(th[k]->weights, g[k]->weights, m[k]->weights, v[k]->weights);
        update(th[k]->bias, g[k]->bias, m[k]->bias, v[k]->bias);
    }
}

namespace {

constexpr long kLogInterval = 100;
constexpr long kCheckpointInterval = 10000;

double eval_loss(const StresNetWeights& w, const std::vector<Triplet>& pool, std::size_t lo, std::size_t hi,
                 int threads) {
    std::vector<double> losses(hi - lo);
    parallel_indexed(hi - lo, threads, [&](std::size_t i) { losses[i] = sample_loss(w, pool[lo + i]); });
    double total = 0.0;
    for (double l : losses)
        total += l;
    return total / static_cast<double>(hi - lo);
}

} // namespace

std::pair<StresNetWeights, TrainReport> train(const SampleStore& store, const HyperParams& hp,
                                              const TrainCallbacks& callbacks) {
    if (store.samples.empty())
        throw ConfigError("train: sample store is empty");
    if (hp.batch_size < 1 || hp.iterations < 1)
        throw ConfigError("train: batch size and iteration count must be positive");
    if (hp.holdout_count < 0 || static_cast<std::size_t>(hp.holdout_count) >= store.samples.size())
        throw ConfigError("train: holdout count must leave at least one training sample");

    const std::size_t pool_size = store.samples.size() - hp.holdout_count;
    if (pool_size < static_cast<std::size_t>(hp.batch_size))
        throw ConfigError("train: dataset too small for one batch (" + std::to_string(pool_size) +
                          " samples, batch " + std::to_string(hp.batch_size) + ")");

    // Decode every record once; the store is already shuffled.
    std::vector<Triplet> pool(store.samples.size());
    parallel_indexed(store.samples.size(), hp.threads,
                     [&](std::size_t i) { pool[i] = sample_to_triplet(store.samples[i], store.block_size); });
    const std::size_t eval_lo = hp.holdout_count > 0 ? pool_size : 0;
    const std::size_t eval_hi = pool.size();

    StresNetWeights weights = init_weights(hp.qp, hp.seed);
    AdamState state;
    TrainReport report;
    report.holdout_count = hp.holdout_count;
    report.initial_loss = eval_loss(weights, pool, eval_lo, eval_hi, hp.threads);

    const int batch = hp.batch_size;
    std::vector<double> sample_losses(batch);
    std::vector<StresNetWeights> sample_grads(batch);
    std::size_t cursor = 0;

    for (long iter = 1; iter <= hp.iterations; ++iter) {
        // per-sample work in parallel, reduction in fixed index order
        parallel_indexed(batch, hp.threads, [&](std::size_t i) {
            const Triplet& t = pool[(cursor + i) % pool_size];
            sample_grads[i] = sample_backward(weights, t, &sample_losses[i]);
        });
        cursor = (cursor + batch) % pool_size;

        double batch_loss = 0.0;
        StresNetWeights grad;
        for (int i = 0; i < batch; ++i) {
            batch_loss += sample_losses[i];
            accumulate(grad, sample_grads[i]);
        }
        batch_loss /= batch;
        scale_params(grad, 1.0 / batch);

        adam_step(weights, grad, state, hp);

        if (iter == 1 || iter % kLogInterval == 0 || iter == hp.iterations) {
            report.log.push_back({iter, batch_loss});
            if (callbacks.log)
                callbacks.log(iter, batch_loss);
        }
        if (callbacks.checkpoint && (iter % kCheckpointInterval == 0 || iter == hp.iterations))
            callbacks.checkpoint(iter, weights);
    }

    report.final_loss = eval_loss(weights, pool, eval_lo, eval_hi, hp.threads);
    return {std::move(weights), std::move(report)};
}

} // namespace stresnet
