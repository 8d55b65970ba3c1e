#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

using namespace gem;
using gem::test::grads_of;
using gem::test::snapshot_of;
using gem::test::tensor;

namespace {

using Idx = std::vector<std::uint64_t>;

struct Instance {
    ModelSnapshot w;
    GradientSnapshot g;
};

Instance random_instance(Rng& rng, std::size_t layers, std::size_t max_size) {
    std::vector<LayerTensor> ws, gs;
    for (std::size_t l = 0; l < layers; ++l) {
        const std::size_t n = 1 + rng.below(max_size);
        const std::string name = "layer" + std::to_string(l);
        ws.push_back(tensor(name, gem::test::normals(rng, n)));
        gs.push_back(tensor(name, gem::test::normals(rng, n, std::exp(rng.normal()))));
    }
    return {snapshot_of(ws), grads_of(gs)};
}

}  // namespace

TEST(Strategies, Catalogue) {
    const auto names = strategy_names();
    for (auto n : {"gem", "random", "top_gradient", "gwr_uniform", "gwr_norm_only", "gwr_entropy_only"})
        EXPECT_NE(std::find(names.begin(), names.end(), n), names.end()) << n;
    EXPECT_THROW(strategy_info("lora"), UsageError);
    EXPECT_THROW(recipe_for({"gem", 0.0}), UsageError);
    EXPECT_THROW(recipe_for({"gem", 1.01}), UsageError);
    EXPECT_EQ(recipe_for({"random", 0.1, kDefaultEps, 5}).seed, 5u);
    EXPECT_EQ(recipe_for({"gem", 0.1, kDefaultEps, 5}).seed, 0u);
}

TEST(Strategies, TopGradientVersusGemFlip) {
    const auto w = snapshot_of({tensor("l", {1.0, 0.2})});
    const auto g = grads_of({tensor("l", {0.5, 0.3})});
    EXPECT_EQ(make_mask({"top_gradient", 0.5}, w, g).layers[0].indices, Idx{0});
    EXPECT_EQ(make_mask({"gem", 0.5}, w, g).layers[0].indices, Idx{1});
    EXPECT_EQ(make_mask({"top_gradient_global", 0.5}, w, g).layers[0].indices, Idx{0});
}

TEST(Strategies, RandomSeeds) {
    Rng rng(1);
    const auto inst = random_instance(rng, 3, 400);
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto a = make_mask({"random", 0.1, kDefaultEps, s}, inst.w, inst.g);
        EXPECT_EQ(a, make_mask({"random", 0.1, kDefaultEps, s}, inst.w, inst.g));
        const auto b = make_mask({"random", 0.1, kDefaultEps, s + 1000}, inst.w, inst.g);
        EXPECT_NE(a.layers, b.layers) << "seeds " << s << " and " << s + 1000;
        EXPECT_EQ(a.total_selected(), b.total_selected());
    }
}

TEST(Strategies, UniformVersusImportanceOnConcentratedLayer) {
    const auto w = snapshot_of({LayerTensor("A", {4}, {1, 1, 1, 1}), LayerTensor("B", {4}, {1, 1, 1, 1})});
    const auto g = grads_of({LayerTensor("A", {4}, {4, 0, 0, 0}), LayerTensor("B", {4}, {1, 1, 1, 1})});
    const auto u = make_mask({"gwr_uniform", 0.25}, w, g);
    const auto e = make_mask({"gem", 0.25}, w, g);
    EXPECT_EQ(u.provenance.plan.budgets(), (Idx{1, 1}));
    EXPECT_EQ(e.provenance.plan.budgets(), (Idx{0, 2}));
    EXPECT_EQ(u.layers[0].indices, Idx{0});
    EXPECT_EQ(u.layers[1].indices, Idx{0});
}

TEST(Strategies, AllProduceFloorRN) {
    Rng rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        const auto inst = random_instance(rng, 1 + rng.below(6), 300);
        const double r = trial % 7 == 0 ? 1.0 : rng.uniform(1e-3, 1.0);
        const auto N = inst.w.total_params();
        const auto want = static_cast<std::uint64_t>(std::floor(detail::scaled_budget(r, N)));
        for (const auto& name : strategy_names()) {
            const auto ms = make_mask({name, r, kDefaultEps, 3}, inst.w, inst.g);
            EXPECT_EQ(ms.total_selected(), want) << name << " trial " << trial;
            EXPECT_EQ(ms.provenance.strategy, name);
            for (std::size_t l = 0; l < ms.layers.size(); ++l)
                EXPECT_EQ(ms.layers[l].count(), ms.provenance.plan.layers[l].budget);
        }
    }
}

TEST(Strategies, GemEqualsNormOnlyWhenEntropiesMatch) {
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        // Every layer has a constant rho, so every entropy is ln(n).
        const std::size_t L = 2 + rng.below(5), n = 2 + rng.below(63);
        std::vector<LayerTensor> ws, gs;
        for (std::size_t l = 0; l < L; ++l) {
            const std::string name = "l" + std::to_string(l);
            ws.push_back(tensor(name, std::vector<double>(n, 1.0)));
            gs.push_back(tensor(name, std::vector<double>(n, std::exp(rng.normal(0.0, 2.0)))));
        }
        const auto w = snapshot_of(ws);
        const auto g = grads_of(gs);
        const double r = rng.uniform(0.01, 1.0);
        EXPECT_EQ(make_mask({"gem", r}, w, g).layers, make_mask({"gwr_norm_only", r}, w, g).layers) << trial;
    }
}

TEST(Strategies, GemEqualsEntropyOnlyWhenNormsMatch) {
    Rng rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        // Scale each layer's rho to unit L2 norm.
        const std::size_t L = 2 + rng.below(5);
        std::vector<LayerTensor> ws, gs;
        for (std::size_t l = 0; l < L; ++l) {
            const std::size_t n = 2 + rng.below(64);
            std::vector<double> rho(n);
            for (auto& x : rho) x = std::exp(rng.normal(0.0, 1.5));
            const double nrm = std::sqrt(std::inner_product(rho.begin(), rho.end(), rho.begin(), 0.0));
            for (auto& x : rho) x /= nrm;
            const std::string name = "l" + std::to_string(l);
            ws.push_back(tensor(name, std::vector<double>(n, 1.0)));
            gs.push_back(tensor(name, rho));
        }
        const auto w = snapshot_of(ws);
        const auto g = grads_of(gs);
        const double r = rng.uniform(0.01, 1.0);
        EXPECT_EQ(make_mask({"gem", r}, w, g).layers, make_mask({"gwr_entropy_only", r}, w, g).layers) << trial;
    }
}

TEST(Strategies, GlobalTopGradientTakesLargestOverall) {
    const auto w = snapshot_of({tensor("a", {1, 1, 1}), tensor("b", {1, 1, 1})});
    const auto g = grads_of({tensor("a", {0.1, 0.2, 0.3}), tensor("b", {5, 4, 0.0})});
    const auto ms = make_mask({"top_gradient_global", 2.0 / 6.0}, w, g);
    EXPECT_EQ(ms.layers[0].indices, Idx{});
    EXPECT_EQ(ms.layers[1].indices, (Idx{0, 1}));
    EXPECT_EQ(ms.provenance.plan.budgets(), (Idx{0, 2}));
}

TEST(Strategies, AllocatorRecordedInPlan) {
    Rng rng(5);
    const auto inst = random_instance(rng, 3, 50);
    EXPECT_EQ(make_mask({"gem", 0.2}, inst.w, inst.g).provenance.plan.allocator, "importance");
    EXPECT_EQ(make_mask({"gwr_norm_only", 0.2}, inst.w, inst.g).provenance.plan.allocator, "norm_only");
    EXPECT_EQ(make_mask({"gwr_uniform_equal", 0.2}, inst.w, inst.g).provenance.plan.allocator, "uniform_equal");
    EXPECT_EQ(make_mask({"random", 0.2}, inst.w, inst.g).provenance.plan.allocator, "uniform");
}
