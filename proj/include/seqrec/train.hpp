#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "seqrec/metrics.hpp"
#include "seqrec/model.hpp"

namespace seqrec {

struct TrainConfig {
    double learning_rate = 1e-3;
    int batch_size = 64;
    int max_epochs = 300;
    int patience = 10;
    std::uint64_t seed = 42;
    int metric_k = 10;
    int threads = 0;  // 0: hardware default (capped by SEQREC_MAX_THREADS)

    void validate() const {
        SEQREC_CHECK(learning_rate >= 0.0, "config", "train: negative learning rate");
        SEQREC_CHECK(batch_size >= 1, "config", "train: batch_size must be >= 1");
        SEQREC_CHECK(max_epochs >= 1, "config", "train: max_epochs must be >= 1");
        SEQREC_CHECK(patience >= 1, "config", "train: patience must be >= 1");
    }
};

// Textbook Adam with bias correction; betas (0.9, 0.999), epsilon 1e-8.
template <typename S>
struct AdamState {
    std::vector<Tensor<S>> m, v;
    std::int64_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    explicit AdamState(const ParamRegistry<S>& registry) {
        for (const auto* p : registry.params) {
            m.push_back(Tensor<S>::zeros(p->value.shape));
            v.push_back(Tensor<S>::zeros(p->value.shape));
        }
    }
};

template <typename S>
void adam_step(AdamState<S>& state, ParamRegistry<S>& registry,
               const std::vector<Tensor<S>>& grads, double lr) {
    SEQREC_CHECK(grads.size() == registry.params.size(), "shape",
                 "adam_step: ", grads.size(), " gradients for ",
                 registry.params.size(), " parameters");
    ++state.step;
    double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < registry.params.size(); ++i) {
        Parameter<S>& p = *registry.params[i];
        const Tensor<S>& g = grads[i];
        for (std::size_t j = 0; j < p.value.numel(); ++j) {
            double gj = static_cast<double>(g.data[j]);
            SEQREC_CHECK(std::isfinite(gj), "numeric",
                         "adam_step: non-finite gradient in '", p.name,
                         "' at step ", state.step);
            double mj = state.beta1 * static_cast<double>(state.m[i].data[j]) +
                        (1.0 - state.beta1) * gj;
            double vj = state.beta2 * static_cast<double>(state.v[i].data[j]) +
                        (1.0 - state.beta2) * gj * gj;
            state.m[i].data[j] = static_cast<S>(mj);
            state.v[i].data[j] = static_cast<S>(vj);
            double update = lr * (mj / bc1) / (std::sqrt(vj / bc2) + state.eps);
            p.value.data[j] = static_cast<S>(static_cast<double>(p.value.data[j]) -
                                             update);
        }
    }
}

namespace detail {
inline std::uint64_t window_dropout_seed(std::uint64_t run_seed, int epoch,
                                         std::size_t window_index) {
    return splitmix64(run_seed ^ splitmix64(0x9e3779b9ULL + epoch) ^
                      splitmix64(0x51ed2701ULL + window_index));
}
}  // namespace detail

// Mean cross-entropy over every position of every window in the batch, with
// gradients accumulated into `grad_sink`. Windows are processed in parallel
// groups; the reduction runs serially in window order, so results are
// bit-identical for any thread count.
template <typename S>
double batch_loss_and_grads(Model<S>& model,
                            std::span<const TrainWindow* const> batch,
                            std::vector<Tensor<S>>& grad_sink,
                            std::span<const std::uint64_t> dropout_seeds,
                            int threads) {
    SEQREC_CHECK(!batch.empty(), "shape", "batch_loss: empty batch");
    SEQREC_CHECK(dropout_seeds.size() == batch.size(), "shape",
                 "batch_loss: seed count mismatch");
    std::size_t total_positions = 0;
    for (const auto* w : batch) total_positions += w->inputs.size();

    const auto& registry = model.registry();
    for (auto& g : grad_sink) g.fill(S(0));

    double loss_value = 0.0;
    std::size_t group = std::max(1, threads);
    std::vector<std::vector<Tensor<S>>> local(group);
    std::vector<double> local_loss(group);
    for (auto& sink : local) {
        sink.reserve(registry.params.size());
        for (const auto* p : registry.params)
            sink.push_back(Tensor<S>::zeros(p->value.shape));
    }

    for (std::size_t start = 0; start < batch.size(); start += group) {
        std::size_t count = std::min(group, batch.size() - start);
        for (std::size_t i = 0; i < count; ++i)
            for (auto& g : local[i]) g.fill(S(0));
#ifdef _OPENMP
#pragma omp parallel for num_threads(static_cast<int>(count)) schedule(static, 1)
#endif
        for (std::size_t i = 0; i < count; ++i) {
            const TrainWindow& w = *batch[start + i];
            Rng dropout_rng(dropout_seeds[start + i]);
            Tape<S> tape;
            Var loss = model.window_loss(tape, w, true, &dropout_rng);
            S weight = static_cast<S>(static_cast<double>(w.inputs.size()) /
                                      static_cast<double>(total_positions));
            Var scaled = tape.scale(loss, weight);
            tape.backward(scaled, &local[i]);
            local_loss[i] = static_cast<double>(tape.val(scaled).data[0]);
        }
        for (std::size_t i = 0; i < count; ++i) {
            loss_value += local_loss[i];
            for (std::size_t j = 0; j < grad_sink.size(); ++j)
                accumulate(grad_sink[j], local[i][j]);
        }
    }
    return loss_value;
}

// Full-catalog ranks for a set of evaluation instances, parallel over users.
template <typename S>
std::vector<int> rank_instances(Model<S>& model,
                                std::span<const EvalInstance> instances,
                                int threads) {
    std::vector<int> ranks(instances.size());
#ifdef _OPENMP
#pragma omp parallel for num_threads(std::max(1, threads)) schedule(static)
#endif
    for (std::size_t i = 0; i < instances.size(); ++i) {
        Tensor<S> probs = model.score_next(instances[i].inputs);
        ranks[i] = full_rank<S>(std::span<const S>(probs.data),
                                instances[i].target);
    }
    return ranks;
}

template <typename S>
MetricSummary evaluate_split(Model<S>& model,
                             std::span<const EvalInstance> instances, int k,
                             int threads) {
    std::vector<int> ranks = rank_instances(model, instances, threads);
    return summarize_ranks(ranks, k);
}

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double valid_ndcg = 0.0;
};

template <typename S>
struct TrainResult {
    std::vector<EpochRecord> history;
    int best_epoch = 0;
    double best_valid_ndcg = 0.0;
    std::vector<Tensor<S>> best_params;  // registry order
    int epochs_run = 0;
};

// Shuffled seeded batches, Adam updates, per-epoch validation NDCG@k, and
// patience-based early stopping. The model is left holding the best
// checkpoint's parameters.
template <typename S>
TrainResult<S> train(Model<S>& model, const SplitDataset& split,
                     const TrainConfig& cfg) {
    cfg.validate();
    SEQREC_CHECK(!split.train.empty(), "data", "train: no training windows");
    int threads = resolve_threads(cfg.threads);

    auto& registry = model.registry();
    AdamState<S> adam(registry);
    std::vector<Tensor<S>> grads;
    for (const auto* p : registry.params)
        grads.push_back(Tensor<S>::zeros(p->value.shape));

    auto snapshot = [&] {
        std::vector<Tensor<S>> out;
        out.reserve(registry.params.size());
        for (const auto* p : registry.params) out.push_back(p->value);
        return out;
    };

    TrainResult<S> result;
    result.best_params = snapshot();

    std::vector<std::size_t> order(split.train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    int epochs_without_improvement = 0;
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        Rng shuffle_rng(splitmix64(cfg.seed) ^ splitmix64(7777ULL + epoch));
        shuffle_rng.shuffle(order);

        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            std::size_t count = std::min(static_cast<std::size_t>(cfg.batch_size),
                                         order.size() - start);
            std::vector<const TrainWindow*> batch(count);
            std::vector<std::uint64_t> seeds(count);
            for (std::size_t i = 0; i < count; ++i) {
                batch[i] = &split.train[order[start + i]];
                seeds[i] = detail::window_dropout_seed(cfg.seed, epoch,
                                                       order[start + i]);
            }
            epoch_loss += batch_loss_and_grads(
                model, std::span<const TrainWindow* const>(batch), grads,
                std::span<const std::uint64_t>(seeds), threads);
            adam_step(adam, registry, grads, cfg.learning_rate);
            ++batches;
        }
        epoch_loss /= static_cast<double>(batches);

        double valid_ndcg = 0.0;
        if (!split.valid.empty()) {
            valid_ndcg = evaluate_split(model,
                                        std::span<const EvalInstance>(split.valid),
                                        cfg.metric_k, threads)
                             .ndcg;
        }
        result.history.push_back({epoch, epoch_loss, valid_ndcg});
        result.epochs_run = epoch;

        if (result.best_epoch == 0 || valid_ndcg > result.best_valid_ndcg) {
            result.best_epoch = epoch;
            result.best_valid_ndcg = valid_ndcg;
            result.best_params = snapshot();
            epochs_without_improvement = 0;
        } else {
            ++epochs_without_improvement;
            if (epochs_without_improvement >= cfg.patience) break;
        }
    }

    for (std::size_t i = 0; i < registry.params.size(); ++i)
        registry.params[i]->value = result.best_params[i];
    return result;
}

}  // namespace seqrec
