#include <gtest/gtest.h>

#include <cmath>

#include "mmtrain/gradcheck.hpp"
#include "mmtrain/ops.hpp"
#include "op_cases.hpp"
#include "test_support.hpp"

using namespace mmtrain;
using mmtrain::testing::param;
using mmtrain::testing::random_tensor;

namespace {

Tensor run_backward(const std::function<Tensor()>& f) {
    Tape tape;
    Tensor loss;
    {
        TapeScope scope(tape);
        loss = f();
    }
    tape.backward(loss);
    return loss;
}

}  // namespace

TEST(Ops, TanhAtZeroIsZero) {
    const Tensor y = ops::tanh(Tensor({1}, {0.0}));
    EXPECT_EQ(y[0], 0.0);
}

TEST(Ops, MatmulOfOnesCountsInnerDim) {
    const Tensor y = ops::matmul(Tensor::ones({2, 3}), Tensor::ones({3, 2}));
    ASSERT_EQ(y.shape(), (Shape{2, 2}));
    for (double v : y.data()) EXPECT_EQ(v, 3.0);
}

TEST(Ops, VarianceIsPopulationVariance) {
    const Tensor y = ops::variance(Tensor({2}, {1.0, 3.0}), 0);
    EXPECT_DOUBLE_EQ(y.item(), 1.0);
}

TEST(Ops, ShapeMismatchNamesOpAndShapes) {
    try {
        ops::add(Tensor::ones({2, 3}), Tensor::ones({3, 2}));
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("add"), std::string::npos) << msg;
        EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
        EXPECT_NE(msg.find("[3,2]"), std::string::npos) << msg;
    }
    EXPECT_THROW(ops::matmul(Tensor::ones({2, 3}), Tensor::ones({2, 3})), ShapeError);
    EXPECT_THROW(ops::mse(Tensor::ones({2}), Tensor::ones({3})), ShapeError);
    EXPECT_THROW(ops::concat_last(Tensor::ones({2, 3}), Tensor::ones({3, 3})), ShapeError);
    EXPECT_THROW(ops::reshape(Tensor::ones({2, 3}), {4}), ShapeError);
}

TEST(Ops, LogAndSqrtRejectOutOfDomain) {
    EXPECT_THROW(ops::log(Tensor({2}, {1.0, -1.0})), DomainError);
    EXPECT_THROW(ops::log(Tensor({1}, {0.0})), DomainError);
    EXPECT_THROW(ops::sqrt(Tensor({1}, {-1e-3})), DomainError);
    EXPECT_NO_THROW(ops::sqrt(Tensor({1}, {0.0})));
}

TEST(Ops, SoftplusStaysFiniteForLargeInputs) {
    const Tensor y = ops::softplus(Tensor({3}, {-800.0, 0.0, 800.0}));
    EXPECT_GE(y[0], 0.0);
    EXPECT_NEAR(y[1], std::log(2.0), 1e-15);
    EXPECT_DOUBLE_EQ(y[2], 800.0);
}

TEST(Backward, SumGivesOnes) {
    Tensor p = Tensor::zeros({2, 3}).set_requires_grad(true);
    run_backward([&] { return ops::sum_all(p); });
    for (double g : p.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, StationaryPointOfTanhMse) {
    Tensor p = Tensor::zeros({4}).set_requires_grad(true);
    run_backward([&] { return ops::mse(ops::tanh(p), Tensor::zeros({4})); });
    for (double g : p.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, NonScalarLossIsContractError) {
    Tensor p = Tensor::ones({2}).set_requires_grad(true);
    Tape tape;
    Tensor y;
    {
        TapeScope scope(tape);
        y = ops::scale(p, 2.0);
    }
    EXPECT_THROW(tape.backward(y), ContractError);
}

TEST(Backward, EmptyTapeIsContractError) {
    Tape tape;
    EXPECT_THROW(tape.backward(Tensor::scalar(1.0)), ContractError);
}

TEST(Backward, TapeIsConsumed) {
    Tensor p = Tensor::ones({2}).set_requires_grad(true);
    Tape tape;
    Tensor loss;
    {
        TapeScope scope(tape);
        loss = ops::sum_all(ops::square(p));
    }
    EXPECT_FALSE(tape.empty());
    tape.backward(loss);
    EXPECT_TRUE(tape.empty());
}

TEST(Backward, UnreachableParameterHoldsZero) {
    Tensor p = Tensor::ones({2}).set_requires_grad(true);
    Tensor q = Tensor::ones({3}).set_requires_grad(true);
    Tensor unused = Tensor::ones({2}).set_requires_grad(true);
    run_backward([&] { return ops::add(ops::sum_all(p), ops::scale(ops::sum_all(q), 0.0)); });
    for (double g : q.grad()) EXPECT_EQ(g, 0.0);
    unused.zero_grad();
    for (double g : unused.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, RecordsInTopologicalOrder) {
    Tensor p = Tensor::ones({2}).set_requires_grad(true);
    Tape tape;
    {
        TapeScope scope(tape);
        ops::sum_all(ops::tanh(ops::scale(p, 2.0)));
    }
    const auto& recs = tape.records();
    ASSERT_EQ(recs.size(), 3u);
    for (std::size_t i = 1; i < recs.size(); ++i) {
        ASSERT_EQ(recs[i].inputs.size(), 1u);
        EXPECT_EQ(recs[i].inputs[0], recs[i - 1].output);
    }
}

TEST(Backward, NoGradScopeSuspendsRecording) {
    Tensor p = Tensor::ones({2}).set_requires_grad(true);
    Tape tape;
    {
        TapeScope scope(tape);
        NoGradScope no_grad;
        ops::sum_all(p);
    }
    EXPECT_TRUE(tape.empty());
}

TEST(Backward, RandomTwoLayerNetMatchesFiniteDifferences) {
    Rng rng(11);
    Tensor x = random_tensor({5, 3}, rng);
    Tensor w1 = param({3, 4}, rng), b1 = param({4}, rng);
    Tensor w2 = param({4, 1}, rng), b2 = param({1}, rng);
    Tensor y = random_tensor({5, 1}, rng);
    auto loss = [&] { return ops::mse(ops::linear(ops::tanh(ops::linear(x, w1, b1)), w2, b2), y); };
    run_backward(loss);
    for (Tensor* t : {&w1, &b1, &w2, &b2}) {
        const std::vector<double> analytic(t->grad().begin(), t->grad().end());
        const auto numeric = mmtrain::testing::numeric_grad(
            [&] {
                NoGradScope ng;
                return loss().item();
            },
            *t);
        EXPECT_LT(mmtrain::testing::max_rel_error(analytic, numeric), 1e-5);
    }
}

// Every op kind on 100 random instances.
TEST(GradientProperty, EveryOpMatchesCentralDifferences) {
    for (const auto& c : mmtrain::testing::op_cases()) {
        Rng rng(derive_seed(123, std::hash<std::string>{}(c.name)));
        double worst = 0.0;
        for (int i = 0; i < 100; ++i) worst = std::max(worst, mmtrain::testing::check_op_instance(c, rng));
        EXPECT_LT(worst, 1e-5) << c.name;
    }
}

TEST(GradientProperty, ScalingTheLossScalesGradientsExactly) {
    Rng rng(5);
    Tensor w = param({3, 3}, rng);
    Tensor x = random_tensor({4, 3}, rng);
    auto base = [&] { return ops::sum_all(ops::square(ops::tanh(ops::matmul(x, w)))); };
    run_backward(base);
    const std::vector<double> g1(w.grad().begin(), w.grad().end());
    run_backward([&] { return ops::scale(base(), 4.0); });
    for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_EQ(w.grad()[i], 4.0 * g1[i]);
}

TEST(GradientProperty, IdenticalTapesGiveBitIdenticalGradients) {
    Rng rng(6);
    Tensor w = param({3, 2}, rng);
    Tensor x = random_tensor({2, 4, 3}, rng);
    auto loss = [&] { return ops::mean_all(ops::softplus(ops::layer_norm(ops::matmul(x, w), Tensor::ones({2}), Tensor::zeros({2})))); };
    run_backward(loss);
    const std::vector<double> g1(w.grad().begin(), w.grad().end());
    run_backward(loss);
    for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_EQ(w.grad()[i], g1[i]);
}

TEST(GradNorm, SingleTensorIsL2) {
    Tensor t = Tensor::zeros({2}).set_requires_grad(true);
    t.zero_grad();
    t.grad()[0] = 3.0;
    t.grad()[1] = 4.0;
    EXPECT_DOUBLE_EQ(grad_norm({t}), 5.0);
}

TEST(GradNorm, MeanOfNormsAndNormOfAll) {
    Tensor a = Tensor::zeros({1}).set_requires_grad(true);
    Tensor b = Tensor::zeros({1}).set_requires_grad(true);
    a.zero_grad();
    b.zero_grad();
    a.grad()[0] = 2.0;
    b.grad()[0] = 4.0;
    EXPECT_DOUBLE_EQ(grad_norm({a, b}, GradNormMode::MeanOfNorms), 3.0);
    EXPECT_DOUBLE_EQ(grad_norm({a, b}, GradNormMode::NormOfAll), std::sqrt(20.0));
}

TEST(GradNorm, ZeroGradsGiveZero) {
    Tensor a = Tensor::ones({3}).set_requires_grad(true);
    a.zero_grad();
    EXPECT_EQ(grad_norm({a}), 0.0);
}

TEST(GradNorm, EmptyGroupOrMissingGradIsContractError) {
    EXPECT_THROW(grad_norm({}), ContractError);
    EXPECT_THROW(grad_norm({Tensor::ones({2})}), ContractError);
}

TEST(FiniteDiffCheck, QuadraticIsNearlyExact) {
    Rng rng(2);
    Tensor p = param({6}, rng);
    Tensor target = random_tensor({6}, rng);
    const auto report = finite_diff_check([&] { return ops::sum_all(ops::square(ops::sub(p, target))); },
                                          {{"p", p}}, GradCheckOptions{.h = 1e-5, .tol = 1e-6});
    EXPECT_LT(report.max_rel_error, 1e-6);
    EXPECT_TRUE(report.passed());
}

TEST(FiniteDiffCheck, ZeroToleranceFlagsEverything) {
    Rng rng(3);
    Tensor p = param({3}, rng);
    Tensor q = param({2}, rng);
    const auto report = finite_diff_check(
        [&] { return ops::add(ops::sum_all(ops::square(p)), ops::sum_all(q)); }, {{"p", p}, {"q", q}},
        GradCheckOptions{.h = 1e-5, .tol = 0.0});
    ASSERT_EQ(report.params.size(), 2u);
    for (const auto& c : report.params) EXPECT_TRUE(c.flagged) << c.name;
    EXPECT_FALSE(report.passed());
}

TEST(FiniteDiffCheck, FlagsAWrongGradient) {
    // Detaching inside the closure hides a dependency from the tape.
    Tensor p = Tensor({2}, {0.5, -0.3}).set_requires_grad(true);
    const auto report = finite_diff_check(
        [&] { return ops::add(ops::sum_all(ops::square(p)), ops::sum_all(ops::exp(p.detach()))); },
        {{"p", p}}, GradCheckOptions{});
    EXPECT_FALSE(report.passed());
}

TEST(FiniteDiffCheck, LeavesParametersUnchanged) {
    Rng rng(4);
    Tensor p = param({5}, rng);
    const std::vector<double> before(p.data().begin(), p.data().end());
    finite_diff_check([&] { return ops::sum_all(ops::tanh(p)); }, {{"p", p}});
    for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(p.data()[i], before[i]);
}
