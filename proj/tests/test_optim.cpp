#include <catch_amalgamated.hpp>

#include "trajden/optim.hpp"
#include "trajden/rng.hpp"
#include "trajden/tape.hpp"

using namespace trajden;

TEST_CASE("zero grad with zero weight decay leaves parameters unchanged") {
    ParamStore store(1);
    auto& p = store.ensure("p", {4}, 4);
    const auto before = p.data;
    AdamW opt;
    AdamW::Config cfg;
    cfg.weight_decay = 0.0;
    p.zero_grad();
    opt.step(store, cfg);
    CHECK(p.data == before);
}

TEST_CASE("first step moves by about -lr*sign(g) - lr*wd*p") {
    ParamStore store(2);
    auto& p = store.ensure("p", {3}, 3);
    p.data = {0.5f, -0.25f, 1.0f};
    const auto before = p.data;
    AdamW opt;
    AdamW::Config cfg;
    cfg.lr = 1e-3;
    cfg.weight_decay = 1e-2;
    p.grad = {0.2f, -0.4f, 0.001f};
    opt.step(store, cfg);
    for (int i = 0; i < 3; ++i) {
        const double sign = i == 1 ? -1.0 : 1.0;
        const double delta = static_cast<double>(p.data[i]) - before[i];
        const double want = -cfg.lr * sign - cfg.lr * cfg.weight_decay * before[i];
        CHECK(delta == Catch::Approx(want).margin(1e-6));
    }
}

TEST_CASE("adamw converges on a convex quadratic") {
    ParamStore store(3);
    auto& p = store.ensure("p", {6}, 6);
    Grid target({6});
    Rng rng(5);
    for (auto& v : target.data) v = static_cast<float>(rng.uniform(-1.5, 1.5));
    AdamW opt;
    AdamW::Config cfg;
    cfg.lr = 0.05;
    cfg.weight_decay = 0.0;
    for (int it = 0; it < 500; ++it) {
        Tape<float> tp;
        auto pv = tp.param(p);
        auto diff = add(tp, pv, scale(tp, tp.leaf(target), -1.0));
        auto loss = sum_all(tp, mul(tp, diff, diff));
        tp.backward(loss);
        opt.step(store, cfg);
    }
    double dist = 0;
    for (int i = 0; i < 6; ++i) {
        const double d = static_cast<double>(p.data[i]) - target.data[i];
        dist += d * d;
    }
    CHECK(std::sqrt(dist) < 1e-2);
}

TEST_CASE("weight decay is decoupled from the gradient path") {
    // With zero gradient, a step shrinks parameters by exactly lr*wd*p.
    ParamStore store(4);
    auto& p = store.ensure("p", {2}, 2);
    p.data = {2.0f, -4.0f};
    AdamW opt;
    AdamW::Config cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.5;
    p.zero_grad();
    opt.step(store, cfg);
    CHECK(p.data[0] == Catch::Approx(2.0 * (1 - 0.05)));
    CHECK(p.data[1] == Catch::Approx(-4.0 * (1 - 0.05)));
}

TEST_CASE("grads zeroed after a step") {
    ParamStore store(5);
    auto& p = store.ensure("p", {2}, 2);
    p.grad = {1.0f, 2.0f};
    AdamW opt;
    opt.step(store, AdamW::Config{});
    CHECK(p.grad == std::vector<float>{0.0f, 0.0f});
}
