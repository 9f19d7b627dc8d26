#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "seqrec/train.hpp"
#include "support/synthetic.hpp"

using namespace seqrec;

namespace {

using T64 = Tensor<double>;

ModelConfig tiny_config(HeadVariant variant, int items = 16) {
    ModelConfig cfg;
    cfg.encoder = EncoderKind::Gru;
    cfg.gru.hidden_size = 6;
    cfg.gru.item_embedding_size = 6;
    cfg.item_count = items;
    cfg.head.variant = variant;
    return cfg;
}

std::vector<const TrainWindow*> to_ptrs(const std::vector<TrainWindow>& ws) {
    std::vector<const TrainWindow*> out;
    for (const auto& w : ws) out.push_back(&w);
    return out;
}

std::vector<std::uint64_t> zero_seeds(std::size_t n) {
    return std::vector<std::uint64_t>(n, 1);
}

}  // namespace

TEST_CASE("batch loss on a zero model is ln(item_count)") {
    ModelConfig cfg = tiny_config(HeadVariant::Vanilla, 4);
    Model<double> model(cfg, 1);
    for (auto* p : model.registry().params) p->value.fill(0.0);

    std::vector<TrainWindow> windows = {{0, {1}, {2}}};
    std::vector<Tensor<double>> grads;
    for (auto* p : model.registry().params)
        grads.push_back(T64::zeros(p->value.shape));
    double loss = batch_loss_and_grads(
        model, std::span<const TrainWindow* const>(to_ptrs(windows)), grads,
        std::span<const std::uint64_t>(zero_seeds(1)), 1);
    REQUIRE_THAT(loss, Catch::Matchers::WithinAbs(std::log(4.0), 1e-12));
}

TEST_CASE("untrained loss is close to ln(item_count)") {
    ModelConfig cfg = tiny_config(HeadVariant::Context, 50);
    Model<double> model(cfg, 2);
    auto data = synthetic::make_copy_corpus(40, 50, 3, 10, 7);
    auto split = split_leave_one_out(data, 20);
    std::vector<Tensor<double>> grads;
    for (auto* p : model.registry().params)
        grads.push_back(T64::zeros(p->value.shape));
    double loss = batch_loss_and_grads(
        model, std::span<const TrainWindow* const>(to_ptrs(split.train)), grads,
        std::span<const std::uint64_t>(zero_seeds(split.train.size())), 2);
    REQUIRE(std::abs(loss - std::log(50.0)) / std::log(50.0) < 0.05);
}

TEST_CASE("batch loss matches the per-position oracle") {
    ModelConfig cfg = tiny_config(HeadVariant::CPR, 20);
    cfg.head.k_list = {4};
    Model<double> model(cfg, 3);
    std::vector<TrainWindow> windows = {
        {0, {3, 7, 3}, {7, 3, 11}},
        {1, {1, 2}, {2, 1}},
        {2, {19, 4, 4, 6, 0}, {4, 4, 6, 0, 19}},
    };

    std::vector<Tensor<double>> grads;
    for (auto* p : model.registry().params)
        grads.push_back(T64::zeros(p->value.shape));
    double loss = batch_loss_and_grads(
        model, std::span<const TrainWindow* const>(to_ptrs(windows)), grads,
        std::span<const std::uint64_t>(zero_seeds(3)), 2);

    // oracle: softmax cross-entropy recomputed from raw logits, averaged over
    // all 10 positions
    double expect = 0.0;
    std::size_t positions = 0;
    for (const auto& w : windows) {
        Tape<double> tape(false);
        Var logits = model.window_logits(tape, w.inputs, false, nullptr);
        const T64& rows = tape.val(logits);
        for (std::size_t t = 0; t < w.inputs.size(); ++t) {
            double mx = rows.at(t, 0);
            for (int x = 1; x < 20; ++x) mx = std::max(mx, rows.at(t, x));
            double lse = 0.0;
            for (int x = 0; x < 20; ++x) lse += std::exp(rows.at(t, x) - mx);
            expect += std::log(lse) + mx - rows.at(t, w.targets[t]);
            ++positions;
        }
    }
    expect /= static_cast<double>(positions);
    REQUIRE_THAT(loss, Catch::Matchers::WithinAbs(expect, 1e-12));
}

TEST_CASE("batch gradients are identical for any thread count") {
    ModelConfig cfg = tiny_config(HeadVariant::Context, 20);
    Model<double> model(cfg, 4);
    std::vector<TrainWindow> windows;
    Rng rng(5);
    for (int i = 0; i < 7; ++i) {
        TrainWindow w;
        w.user = i;
        for (int j = 0; j < 4; ++j) {
            w.inputs.push_back(static_cast<int>(rng.next_below(20)));
            w.targets.push_back(static_cast<int>(rng.next_below(20)));
        }
        windows.push_back(w);
    }
    auto run = [&](int threads) {
        std::vector<Tensor<double>> grads;
        for (auto* p : model.registry().params)
            grads.push_back(T64::zeros(p->value.shape));
        double loss = batch_loss_and_grads(
            model, std::span<const TrainWindow* const>(to_ptrs(windows)), grads,
            std::span<const std::uint64_t>(zero_seeds(7)), threads);
        return std::make_pair(loss, grads);
    };
    auto [l1, g1] = run(1);
    auto [l2, g2] = run(2);
    auto [l4, g4] = run(4);
    REQUIRE(l1 == l2);
    REQUIRE(l1 == l4);
    for (std::size_t i = 0; i < g1.size(); ++i) {
        REQUIRE(g1[i].data == g2[i].data);
        REQUIRE(g1[i].data == g4[i].data);
    }
}

TEST_CASE("adam first step has magnitude close to the learning rate") {
    ModelConfig cfg = tiny_config(HeadVariant::Vanilla, 4);
    Model<double> model(cfg, 6);
    auto& registry = model.registry();
    AdamState<double> adam(registry);
    std::vector<Tensor<double>> grads;
    for (auto* p : registry.params) grads.push_back(T64::zeros(p->value.shape));
    grads[0].data[0] = 0.37;  // one nonzero gradient coordinate
    std::vector<double> before = registry.params[0]->value.data;
    adam_step(adam, registry, grads, 0.01);
    double delta = registry.params[0]->value.data[0] - before[0];
    REQUIRE_THAT(delta, Catch::Matchers::WithinAbs(-0.01, 1e-6));
    // untouched coordinates stay put
    REQUIRE(registry.params[0]->value.data[1] == before[1]);
}

TEST_CASE("adam with zero gradients leaves parameters unchanged") {
    ModelConfig cfg = tiny_config(HeadVariant::Vanilla, 4);
    Model<double> model(cfg, 7);
    auto& registry = model.registry();
    AdamState<double> adam(registry);
    std::vector<Tensor<double>> grads;
    for (auto* p : registry.params) grads.push_back(T64::zeros(p->value.shape));

    std::vector<double> before = registry.params[0]->value.data;
    // seed the moments, then apply a zero-gradient step
    grads[0].data[0] = 1.0;
    adam_step(adam, registry, grads, 0.0);
    grads[0].data[0] = 0.0;
    double m_before = adam.m[0].data[0];
    adam_step(adam, registry, grads, 0.1);
    REQUIRE(registry.params[0]->value.data[1] == before[1]);
    // moments decay toward zero
    REQUIRE(std::abs(adam.m[0].data[0]) < std::abs(m_before));
}

TEST_CASE("5 adam steps on f(w)=w^2 walk toward zero") {
    Parameter<double> w("w", T64::vector_of({1.0}));
    ParamRegistry<double> reg;
    reg.add(w);
    AdamState<double> adam(reg);
    std::vector<double> trajectory = {1.0};
    for (int step = 0; step < 5; ++step) {
        std::vector<Tensor<double>> grads = {
            T64::vector_of({2.0 * w.value.data[0]})};
        adam_step(adam, reg, grads, 0.1);
        trajectory.push_back(w.value.data[0]);
    }
    for (std::size_t i = 1; i < trajectory.size(); ++i) {
        REQUIRE(trajectory[i] < trajectory[i - 1]);
        REQUIRE(trajectory[i] > -0.5);
    }
}

TEST_CASE("adam rejects non-finite gradients with diagnostics") {
    ModelConfig cfg = tiny_config(HeadVariant::Vanilla, 4);
    Model<double> model(cfg, 8);
    auto& registry = model.registry();
    AdamState<double> adam(registry);
    std::vector<Tensor<double>> grads;
    for (auto* p : registry.params) grads.push_back(T64::zeros(p->value.shape));
    grads[0].data[0] = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_THROWS_WITH(adam_step(adam, registry, grads, 0.01),
                        Catch::Matchers::ContainsSubstring("item_embeddings"));
}

TEST_CASE("one adam step with small lr changes the loss by O(lr)") {
    ModelConfig cfg = tiny_config(HeadVariant::Vanilla, 20);
    auto data = synthetic::make_copy_corpus(20, 20, 3, 8, 17);
    auto split = split_leave_one_out(data, 10);
    auto batch = to_ptrs(split.train);
    auto seeds = zero_seeds(batch.size());

    auto loss_of = [&](Model<double>& m, std::vector<Tensor<double>>& grads) {
        return batch_loss_and_grads(m,
                                    std::span<const TrainWindow* const>(batch),
                                    grads,
                                    std::span<const std::uint64_t>(seeds), 2);
    };
    auto delta_for = [&](double lr) {
        Model<double> model(cfg, 9);
        AdamState<double> adam(model.registry());
        std::vector<Tensor<double>> grads;
        for (auto* p : model.registry().params)
            grads.push_back(T64::zeros(p->value.shape));
        double before = loss_of(model, grads);
        adam_step(adam, model.registry(), grads, lr);
        std::vector<Tensor<double>> scratch = grads;
        double after = loss_of(model, scratch);
        return std::abs(after - before);
    };

    double base_ratio = delta_for(1e-4) / 1e-4;
    REQUIRE(delta_for(1e-5) <= 3.0 * base_ratio * 1e-5 + 1e-12);
    REQUIRE(delta_for(1e-6) <= 3.0 * base_ratio * 1e-6 + 1e-12);
}

TEST_CASE("early stopping: patience 1 with a frozen model stops at epoch 2") {
    ModelConfig cfg = tiny_config(HeadVariant::Vanilla, 20);
    Model<double> model(cfg, 10);
    auto data = synthetic::make_copy_corpus(30, 20, 3, 8, 27);
    auto split = split_leave_one_out(data, 10);

    TrainConfig tc;
    tc.learning_rate = 0.0;  // the metric can never improve after epoch 1
    tc.batch_size = 16;
    tc.max_epochs = 50;
    tc.patience = 1;
    tc.seed = 5;
    tc.threads = 1;
    auto result = train(model, split, tc);
    REQUIRE(result.epochs_run == 2);
    REQUIRE(result.best_epoch == 1);
}

TEST_CASE("training is deterministic for a fixed seed") {
    auto data = synthetic::make_copy_corpus(40, 24, 3, 10, 31);
    auto split = split_leave_one_out(data, 12);
    ModelConfig cfg = tiny_config(HeadVariant::Context, 24);
    cfg.gru.dropout = 0.2;  // exercise the seeded dropout path too

    auto run = [&] {
        Model<double> model(cfg, 77);
        TrainConfig tc;
        tc.learning_rate = 1e-3;
        tc.batch_size = 8;
        tc.max_epochs = 3;
        tc.patience = 10;
        tc.seed = 99;
        tc.threads = 2;
        auto result = train(model, split, tc);
        std::vector<double> out;
        for (const auto& e : result.history) {
            out.push_back(e.train_loss);
            out.push_back(e.valid_ndcg);
        }
        for (auto* p : model.registry().params)
            out.insert(out.end(), p->value.data.begin(), p->value.data.end());
        return out;
    };
    REQUIRE(run() == run());
}

TEST_CASE("copy task: validation NDCG@10 climbs over the first epochs") {
    auto data = synthetic::make_copy_corpus(300, 100, 3, 12, 41);
    auto split = split_leave_one_out(data, 12);
    ModelConfig cfg;
    cfg.encoder = EncoderKind::Gru;
    cfg.gru.hidden_size = 8;
    cfg.gru.item_embedding_size = 8;
    cfg.item_count = 100;
    cfg.head.variant = HeadVariant::Context;
    Model<double> model(cfg, 13);

    TrainConfig tc;
    tc.learning_rate = 3e-4;
    tc.batch_size = 32;
    tc.max_epochs = 3;
    tc.patience = 10;
    tc.seed = 1;
    auto result = train(model, split, tc);
    REQUIRE(result.history.size() == 3);
    REQUIRE(result.history[2].valid_ndcg > result.history[0].valid_ndcg);
}
