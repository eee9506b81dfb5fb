#include "doctest.h"

#include <cmath>

#include "test_util.hpp"
#include "uvq/objective.hpp"
#include "uvq/optim.hpp"

using namespace uvq;
using test::close_rel;
using test::random_tensor;
using test::random_tensor_off_kink;

namespace {

// 3 -> 4 -> relu -> 2 net with both dense layers compressible.
TinyNet tiny_quant_net(Rng& rng) {
    TinyNet net;
    net.name = "tiny";
    net.task = TaskKind::regression;
    net.input_shape = {3};
    LayerSpec d0;
    d0.kind = LayerKind::dense;
    d0.compressible = true;
    d0.weight = random_tensor(rng, {4, 3}, 0.7);
    d0.bias = random_tensor(rng, {4}, 0.2);
    LayerSpec relu;
    relu.kind = LayerKind::relu;
    LayerSpec d1;
    d1.kind = LayerKind::dense;
    d1.compressible = true;
    d1.output_head = true;
    d1.weight = random_tensor(rng, {2, 4}, 0.7);
    d1.bias = random_tensor(rng, {2}, 0.2);
    net.layers = {d0, relu, d1};
    net.blocks = {{"b0", 0, 1}, {"head", 2, 2}};
    return net;
}

AssignmentSet build_set(const TinyNet& net, Rng& rng, std::size_t k, std::size_t n) {
    AssignmentSet set;
    set.universal.k = k;
    set.universal.d = 1;
    set.universal.words = random_tensor(rng, {k}, 0.7).data;
    for (std::size_t li : net.compressible_layers()) {
        set.layers.push_back(
            build_assignment(li, canonical_weight(net.layers[li]), set.universal, n));
    }
    return set;
}

}  // namespace

TEST_CASE("task loss is the element-mean squared error") {
    Tensor a({2, 2}, {1, 2, 3, 4});
    CHECK(task_loss(a, a) == 0.0);

    Tensor b({2, 2}, {2, 3, 4, 5});
    CHECK(task_loss(b, a) == doctest::Approx(1.0));

    // Per-sample squared errors 0.5 and 1.5 average to 1.
    Tensor out({2, 1}, {std::sqrt(0.5), 0.0});
    Tensor tgt({2, 1}, {0.0, std::sqrt(1.5)});
    CHECK(task_loss(out, tgt) == doctest::Approx(1.0));
}

TEST_CASE("kd loss sums blocks and averages over the batch") {
    std::map<std::string, Tensor> fp, q;
    fp["a"] = Tensor({1, 4}, {1, 1, 1, 1});
    q["a"] = fp["a"];
    CHECK(kd_loss(fp, q) == 0.0);

    q["a"] = Tensor({1, 4}, {2, 2, 2, 2});  // unit offset on 4 elements
    CHECK(kd_loss(fp, q) == doctest::Approx(4.0));

    fp["b"] = Tensor({1, 3}, {5, 6, 7});
    q["b"] = fp["b"];  // zero-difference block leaves the loss unchanged
    CHECK(kd_loss(fp, q) == doctest::Approx(4.0));

    q.erase("b");
    CHECK_THROWS_AS(kd_loss(fp, q), DataError);
}

TEST_CASE("regularizer scores unfrozen soft ratios only") {
    LayerAssignment la;
    la.d = 1;
    la.rows = 2;
    la.cols = 3;
    la.src_cols = 3;
    la.valid_tail = 1;
    la.n = 4;
    la.k = 8;
    la.candidates.assign(la.count() * 4, 0);
    for (std::size_t sv = 0; sv < la.count(); ++sv) {
        for (std::size_t m = 0; m < 4; ++m) {
            la.candidates[sv * 4 + m] = static_cast<std::uint32_t>(m);
        }
    }
    la.logits.assign(la.count() * 4, 0.0);  // uniform ratios
    la.frozen.assign(la.count(), kUnfrozen);

    // n * (1 - 1/n) per sub-vector, averaged: n - 1 = 3.
    CHECK(reg_loss({la}) == doctest::Approx(3.0));

    for (std::size_t sv = 0; sv < la.count(); ++sv) la.frozen[sv] = 1;
    CHECK(reg_loss({la}) == 0.0);
}

TEST_CASE("total loss is the plain sum and reproduces its parts") {
    const LossBreakdown zero = total_loss(0, 0, 0);
    CHECK(zero.total == 0.0);
    const LossBreakdown b = total_loss(1, 2, 3);
    CHECK(b.total == 6.0);
    CHECK(b.task == 1.0);
    CHECK(b.kd == 2.0);
    CHECK(b.reg == 3.0);

    const LossWeights off{1.0, 0.0, 1.0};
    CHECK(total_loss(1, 2, 3, off).total == 4.0);
}

TEST_CASE("backward_to_logits: frozen sub-vectors get exactly zero gradients") {
    Rng rng(7);
    TinyNet net = tiny_quant_net(rng);
    AssignmentSet set = build_set(net, rng, 16, 4);
    for (LayerAssignment& la : set.layers) {
        for (std::size_t sv = 0; sv < la.count(); ++sv) la.frozen[sv] = 0;
    }

    TinyNet net_q = net;
    inject_soft(net_q, set);
    Tensor x = random_tensor(rng, {4, 3});
    Tensor y = random_tensor(rng, {4, 2});
    const auto taps = all_block_names(net);
    const ForwardTrace tfp = forward(net, x, taps);
    const ForwardTrace tq = forward(net_q, x, taps);
    const ObjectiveGradients g =
        backward_to_logits(net_q, tq, y, tfp.block_features, set);
    for (const auto& lg : g.logit_grads) {
        for (double v : lg) CHECK(v == 0.0);
    }
    CHECK(g.loss.reg == 0.0);
}

TEST_CASE("backward_to_logits matches central finite differences") {
    Rng rng(17);
    for (int rep = 0; rep < 3; ++rep) {
        TinyNet net = tiny_quant_net(rng);
        AssignmentSet set = build_set(net, rng, 16, 4);
        Tensor x = random_tensor_off_kink(rng, {4, 3});
        Tensor y = random_tensor(rng, {4, 2});
        const auto taps = all_block_names(net);
        const ForwardTrace tfp = forward(net, x, taps);

        TinyNet net_q = net;
        inject_soft(net_q, set);
        const ForwardTrace tq = forward(net_q, x, taps);
        const ObjectiveGradients g =
            backward_to_logits(net_q, tq, y, tfp.block_features, set);

        const auto loss_at = [&] {
            TinyNet probe = net;
            inject_soft(probe, set);
            const ForwardTrace t = forward(probe, x, taps);
            return evaluate_losses(t, y, tfp.block_features, set).total;
        };

        const double h = 1e-5;
        for (std::size_t ai = 0; ai < set.layers.size(); ++ai) {
            LayerAssignment& la = set.layers[ai];
            const std::size_t checks = std::min<std::size_t>(la.logits.size(), 8);
            for (std::size_t c = 0; c < checks; ++c) {
                const std::size_t i = rng.uniform_int(la.logits.size());
                const double orig = la.logits[i];
                la.logits[i] = orig + h;
                const double up = loss_at();
                la.logits[i] = orig - h;
                const double dn = loss_at();
                la.logits[i] = orig;
                CHECK(close_rel(g.logit_grads[ai][i], (up - dn) / (2 * h), 1e-4));
            }
        }

        // Aux parameters flow through the same combined loss.
        LayerSpec& head = net_q.layers[2];
        const double orig = head.bias[0];
        head.bias[0] = orig + h;
        const double up = evaluate_losses(forward(net_q, x, taps), y,
                                          tfp.block_features, set)
                              .total;
        head.bias[0] = orig - h;
        const double dn = evaluate_losses(forward(net_q, x, taps), y,
                                          tfp.block_features, set)
                              .total;
        head.bias[0] = orig;
        CHECK(close_rel(g.aux.layers[2].bias[0], (up - dn) / (2 * h), 1e-4));
    }
}

TEST_CASE("per-sub-vector logit gradients sum to zero") {
    Rng rng(27);
    TinyNet net = tiny_quant_net(rng);
    AssignmentSet set = build_set(net, rng, 16, 4);
    Tensor x = random_tensor(rng, {4, 3});
    Tensor y = random_tensor(rng, {4, 2});
    const auto taps = all_block_names(net);
    const ForwardTrace tfp = forward(net, x, taps);
    TinyNet net_q = net;
    inject_soft(net_q, set);
    const ForwardTrace tq = forward(net_q, x, taps);
    const ObjectiveGradients g =
        backward_to_logits(net_q, tq, y, tfp.block_features, set);

    for (std::size_t ai = 0; ai < set.layers.size(); ++ai) {
        const LayerAssignment& la = set.layers[ai];
        for (std::size_t sv = 0; sv < la.count(); ++sv) {
            double sum = 0.0, scale = 0.0;
            for (std::size_t m = 0; m < la.n; ++m) {
                sum += g.logit_grads[ai][sv * la.n + m];
                scale = std::max(scale, std::fabs(g.logit_grads[ai][sv * la.n + m]));
            }
            CHECK(std::fabs(sum) <= 1e-9 * std::max(1.0, scale));
        }
    }
}

TEST_CASE("adamax: zero gradients leave parameters untouched") {
    Adamax opt(0.3);
    std::vector<double> p = {1.0, -2.0, 3.0};
    opt.step(p, {0.0, 0.0, 0.0});
    CHECK(p == std::vector<double>{1.0, -2.0, 3.0});
}

TEST_CASE("adamax first step moves by lr in the gradient sign direction") {
    Adamax opt(0.3);
    std::vector<double> p = {0.0, 0.0};
    opt.step(p, {0.5, -2.0});
    CHECK(close_rel(p[0], -0.3, 1e-6));
    CHECK(close_rel(p[1], 0.3, 1e-6));
}

TEST_CASE("adamax is deterministic") {
    Rng rng(1);
    std::vector<double> g1(8), g2(8);
    for (std::size_t i = 0; i < 8; ++i) g1[i] = g2[i] = rng.normal();
    Adamax a(0.3), b(0.3);
    std::vector<double> pa(8, 0.1), pb(8, 0.1);
    for (int s = 0; s < 5; ++s) {
        a.step(pa, g1);
        b.step(pb, g2);
    }
    CHECK(pa == pb);
}

TEST_CASE("cosine schedule decays from the base rate toward zero") {
    CHECK(scheduled_lr(0.3, LrSchedule::constant, 50, 100) == 0.3);
    CHECK(scheduled_lr(0.3, LrSchedule::cosine, 0, 100) == doctest::Approx(0.3));
    CHECK(scheduled_lr(0.3, LrSchedule::cosine, 50, 100) == doctest::Approx(0.15));
    CHECK(scheduled_lr(0.3, LrSchedule::cosine, 100, 100) == doctest::Approx(0.0));
}
