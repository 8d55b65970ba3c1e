#include <gtest/gtest.h>

#include <cstring>

#include "oracles.hpp"
#include "support.hpp"

using namespace gem;
using gem::test::grads_of;
using gem::test::snapshot_of;
using gem::test::tensor;

namespace {

using Idx = std::vector<std::uint64_t>;

// Two 4-parameter layers: A concentrated (rho = [4,0,0,0]), B uniform.
struct TwoLayer {
    ModelSnapshot w;
    GradientSnapshot g;
    TwoLayer() {
        w = snapshot_of({LayerTensor("A", {4}, {1, 1, 1, 1}), LayerTensor("B", {2, 2}, {1, 1, 1, 1})});
        g = grads_of({LayerTensor("A", {4}, {4, 0, 0, 0}), LayerTensor("B", {2, 2}, {1, 1, 1, 1})});
    }
};

MaskRecipe gem_recipe(double r) { return MaskRecipe{"gem", Scorer::gwr, Allocator::importance, r, kDefaultEps, 0, ""}; }

MaskSet golden_two_layer() {
    MaskSet ms;
    ms.layers = {LayerMask{"A", {4}, {}}, LayerMask{"B", {2, 2}, {0, 1}}};
    auto& p = ms.provenance;
    p.ratio = 0.25;
    p.strategy = "gem";
    p.eps = 1e-12;
    p.seed = 0;
    p.gradient_source = "test";
    p.plan.allocator = "importance";
    p.plan.ratio = 0.25;
    p.plan.total_params = 8;
    p.plan.total_budget = 2;
    p.plan.layers = {LayerAllocation{"A", 4, 4.0, 0.0, 0.0, 0.0, 0},
                     LayerAllocation{"B", 4, 2.0, 1.3862943611198906, 2.772588722239781, 1.0, 2}};
    return ms;
}

MaskSet golden_empty() {
    MaskSet ms;
    ms.provenance.ratio = 0.01;
    ms.provenance.strategy = "random";
    ms.provenance.eps = 1e-12;
    ms.provenance.seed = 7;
    ms.provenance.plan.allocator = "uniform";
    ms.provenance.plan.ratio = 0.01;
    return ms;
}

std::string golden_bytes(const std::string& name) {
    return detail::read_file(std::filesystem::path(GEM_GOLDEN_DIR) / name);
}

}  // namespace

TEST(TopK, Examples) {
    EXPECT_EQ(select_top_k({"l", {0.5, 1.5, 0.1}}, 2).indices, (Idx{0, 1}));
    EXPECT_EQ(select_top_k({"l", {1, 1, 1}}, 2).indices, (Idx{0, 1}));
    EXPECT_EQ(select_top_k({"l", {1, 2, 3}}, 0).indices, Idx{});
    EXPECT_EQ(select_top_k({"l", {1, 2, 3}}, 3).indices, (Idx{0, 1, 2}));
    EXPECT_THROW(select_top_k({"l", {1, 2, 3}}, 4), UsageError);
    const auto m = select_top_k({"l", {1, 2, 3, 4}}, 1, {2, 2});
    EXPECT_EQ(m.shape, (Shape{2, 2}));
    EXPECT_EQ(m.indices, Idx{3});
}

TEST(TopK, MatchesExhaustiveSearch) {
    Rng rng(123);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 1 + rng.below(14);
        std::vector<double> s(n);
        const bool ties = trial % 2 == 0;
        for (auto& x : s) x = ties ? static_cast<double>(rng.below(4)) : rng.uniform();
        const std::size_t k = rng.below(n + 1);
        EXPECT_EQ(top_k_indices(s, k), oracle::best_k_subset(s, k)) << "trial " << trial;
    }
}

TEST(BuildMasks, ConcentratedVersusUniformLayer) {
    TwoLayer t;
    const auto ms = build_masks(t.w, t.g, gem_recipe(0.25));
    EXPECT_EQ(ms.provenance.plan.total_budget, 2u);
    EXPECT_EQ(ms.provenance.plan.budgets(), (Idx{0, 2}));
    EXPECT_EQ(ms.layers[0].indices, Idx{});
    EXPECT_EQ(ms.layers[1].indices, (Idx{0, 1}));
    EXPECT_EQ(ms.layers[1].shape, (Shape{2, 2}));
    EXPECT_EQ(ms.provenance.plan.layers[0].entropy, 0.0);
    EXPECT_NEAR(ms.provenance.plan.layers[1].importance, 2.0 * std::log(4.0), 1e-14);
}

TEST(BuildMasks, RandomIsSeedDeterministic) {
    TwoLayer t;
    MaskRecipe rr{"random", Scorer::random, Allocator::uniform, 0.25, kDefaultEps, 42, ""};
    const auto a = build_masks(t.w, t.g, rr);
    const auto b = build_masks(t.w, t.g, rr);
    EXPECT_EQ(a.total_selected(), 2u);
    EXPECT_EQ(a, b);
    EXPECT_EQ(encode_masks(a), encode_masks(b));
}

TEST(BuildMasks, SelectionFlip) {
    const auto w = snapshot_of({tensor("l", {1.0, 0.2})});
    const auto g = grads_of({tensor("l", {0.5, 0.3})});
    const auto top = build_masks(w, g, MaskRecipe{"top_gradient", Scorer::grad_magnitude, Allocator::uniform, 0.5, kDefaultEps, 0, ""});
    const auto gem = build_masks(w, g, gem_recipe(0.5));
    EXPECT_EQ(top.layers[0].indices, Idx{0});
    EXPECT_EQ(gem.layers[0].indices, Idx{1});
}

TEST(BuildMasks, GradientScaleInvariance) {
    Rng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<LayerTensor> ws, gs;
        const std::size_t L = 1 + rng.below(5);
        for (std::size_t l = 0; l < L; ++l) {
            const std::size_t n = 4 + rng.below(60);
            const std::string name = "l" + std::to_string(l);
            ws.push_back(tensor(name, gem::test::normals(rng, n)));
            gs.push_back(tensor(name, gem::test::normals(rng, n, std::exp(rng.normal()))));
        }
        const auto w = snapshot_of(ws);
        const auto base = build_masks(w, grads_of(gs), gem_recipe(0.1));
        for (double c : {0.5, 4.0, 3.0, 1e-3}) {
            auto scaled = gs;
            for (auto& t : scaled)
                for (auto& x : t.values) x *= c;
            const auto ms = build_masks(w, grads_of(scaled), gem_recipe(0.1));
            EXPECT_EQ(ms.layers, base.layers) << "c=" << c;
            EXPECT_EQ(ms.provenance.plan.budgets(), base.provenance.plan.budgets());
        }
    }
}

TEST(BuildMasks, FrozenLayersAreNotMasked) {
    ModelSnapshot w;
    w.add_layer(tensor("q_proj", {1, 2, 3, 4}), true);
    w.add_layer(tensor("k_proj", {1, 2, 3, 4}), false);
    const auto g = grads_of({tensor("q_proj", {1, 1, 1, 1}), tensor("k_proj", {9, 9, 9, 9})});
    const auto ms = build_masks(w, g, gem_recipe(0.5));
    ASSERT_EQ(ms.layers.size(), 1u);
    EXPECT_EQ(ms.layers[0].layer_name, "q_proj");
    EXPECT_EQ(ms.total_selected(), 2u);

    ModelSnapshot frozen;
    frozen.add_layer(tensor("k_proj", {1}), false);
    EXPECT_THROW(build_masks(frozen, GradientSnapshot{}, gem_recipe(0.5)), DataError);
}

TEST(BuildMasks, AllZeroGradientsFallBack) {
    TwoLayer t;
    for (auto& l : t.g.layers) std::fill(l.values.begin(), l.values.end(), 0.0);
    const auto ms = build_masks(t.w, t.g, gem_recipe(0.5));
    EXPECT_TRUE(ms.provenance.plan.fallback_uniform);
    EXPECT_EQ(ms.total_selected(), 4u);
}

TEST(TunablePatterns, DefaultQueryValue) {
    ModelSnapshot m;
    for (auto n : {"layers.0.self_attn.q_proj.weight", "layers.0.self_attn.k_proj.weight",
                   "layers.0.self_attn.v_proj.weight", "encoder.attention.self.query.weight", "fc1.weight"})
        m.add_layer(LayerTensor(n, {1}), true);
    EXPECT_EQ(apply_tunable_patterns(m, kDefaultTunablePatterns), 3u);
    EXPECT_TRUE(m.tunable(0));
    EXPECT_FALSE(m.tunable(1));
    EXPECT_TRUE(m.tunable(2));
    EXPECT_TRUE(m.tunable(3));
    EXPECT_FALSE(m.tunable(4));
    EXPECT_THROW(apply_tunable_patterns(m, {"("}), UsageError);
}

TEST(MaskedSgd, Examples) {
    const auto w = tensor("l", {1.0, 2.0});
    const auto g = tensor("l", {0.5, 0.5});
    const auto a = apply_masked_sgd(w, g, LayerMask{"l", {2}, {0}}, 0.1);
    EXPECT_EQ(a.values, (std::vector<double>{0.95, 2.0}));

    const auto none = apply_masked_sgd(w, g, LayerMask{"l", {2}, {}}, 0.1);
    EXPECT_TRUE(bitwise_equal(none, w));

    const auto full = apply_masked_sgd(w, g, LayerMask{"l", {2}, {0, 1}}, 0.1);
    EXPECT_EQ(full.values, (std::vector<double>{1.0 - 0.1 * 0.5, 2.0 - 0.1 * 0.5}));
    EXPECT_THROW(apply_masked_sgd(w, g, LayerMask{"l", {2}, {2}}, 0.1), DataError);
}

TEST(MaskedAdamW, FrozenEntryAndMoments) {
    auto w = tensor("l", {1.0, 1.0});
    AdamWState st(2);
    apply_masked_adamw(st, w, tensor("l", {1.0, 1.0}), LayerMask{"l", {2}, {0}}, AdamWHyper{});
    EXPECT_NE(w.values[0], 1.0);
    EXPECT_EQ(w.values[1], 1.0);
    EXPECT_EQ(st.m[1], 0.0);
    EXPECT_EQ(st.v[1], 0.0);
    EXPECT_EQ(st.step, 1u);
}

TEST(MaskedAdamW, DecayIsGatedByMask) {
    auto w = tensor("l", {1.0, -3.0});
    const auto w0 = w;
    AdamWState st(2);
    AdamWHyper h;
    h.weight_decay = 0.01;
    apply_masked_adamw(st, w, tensor("l", {0.3, 0.7}), LayerMask{"l", {2}, {}}, h);
    EXPECT_TRUE(bitwise_equal(w, w0));
}

TEST(MaskedAdamW, MatchesScalarReference) {
    for (double wd : {0.0, 0.01}) {
        auto w = tensor("l", {0.7});
        AdamWState st(1);
        AdamWHyper h{0.01, 0.9, 0.999, 1e-8, wd};
        oracle::ScalarAdamW ref{h.lr, h.beta1, h.beta2, h.eps, h.weight_decay};
        double rw = 0.7;
        for (int t = 0; t < 100; ++t) {
            const double g = 2.0 * (w.values[0] - 0.25) + 0.1 * std::sin(t);  // d/dw of (w - 0.25)^2 plus a wobble
            apply_masked_adamw(st, w, tensor("l", {g}), LayerMask{"l", {1}, {0}}, h);
            rw = ref.step(rw, 2.0 * (rw - 0.25) + 0.1 * std::sin(t));
            ASSERT_DOUBLE_EQ(w.values[0], rw) << "step " << t;
        }
    }
}

TEST(FrozenBits, RandomStartsAllStepCounts) {
    Rng rng(77);
    for (std::uint64_t T : {1, 10, 1000}) {
        for (int trial = 0; trial < 5; ++trial) {
            const std::size_t n = 1 + rng.below(50);
            auto w_sgd = tensor("l", gem::test::normals(rng, n));
            w_sgd.values[0] = -0.0;
            auto w_adam = w_sgd;
            const auto w0 = w_sgd;
            std::vector<std::uint64_t> idx;
            for (std::size_t i = 0; i < n; ++i)
                if (rng.below(3) == 0) idx.push_back(i);
            const LayerMask m{"l", {n}, idx};
            AdamWState st(n);
            AdamWHyper h{1e-2, 0.9, 0.999, 1e-8, 0.1};
            for (std::uint64_t t = 0; t < T; ++t) {
                const auto g = tensor("l", gem::test::normals(rng, n));
                masked_sgd_step(w_sgd, g, m, 1e-2);
                apply_masked_adamw(st, w_adam, g, m, h);
            }
            const auto dense = m.dense();
            for (std::size_t i = 0; i < n; ++i) {
                if (dense[i]) continue;
                EXPECT_EQ(std::memcmp(&w_sgd.values[i], &w0.values[i], sizeof(double)), 0);
                EXPECT_EQ(std::memcmp(&w_adam.values[i], &w0.values[i], sizeof(double)), 0);
                EXPECT_EQ(st.m[i], 0.0);
                EXPECT_EQ(st.v[i], 0.0);
            }
        }
    }
}

TEST(MaskFile, GoldenBytes) {
    EXPECT_EQ(encode_masks(golden_two_layer()), golden_bytes("two_layer.gemm"));
    EXPECT_EQ(decode_masks(golden_bytes("two_layer.gemm")), golden_two_layer());
    EXPECT_EQ(encode_masks(golden_empty()), golden_bytes("empty.gemm"));
    EXPECT_EQ(decode_masks(golden_bytes("empty.gemm")), golden_empty());
}

TEST(MaskFile, BuiltExampleRoundTrips) {
    TwoLayer t;
    const auto ms = build_masks(t.w, t.g, gem_recipe(0.25));
    gem::test::TempDir d("mask");
    save_masks(ms, d / "m.gemm");
    const auto back = load_masks(d / "m.gemm");
    EXPECT_EQ(back, ms);
    EXPECT_EQ(encode_masks(back), encode_masks(ms));
    // Same layers and plan as the committed golden file.
    const auto golden = golden_two_layer();
    EXPECT_EQ(back.layers, golden.layers);
    EXPECT_EQ(back.provenance.plan.budgets(), golden.provenance.plan.budgets());
}

TEST(MaskFile, ZeroBudgetRoundTrips) {
    TwoLayer t;
    const auto ms = build_masks(t.w, t.g, gem_recipe(0.01));
    EXPECT_EQ(ms.total_selected(), 0u);
    EXPECT_EQ(decode_masks(encode_masks(ms)), ms);
}

TEST(MaskFile, RejectsCorruption) {
    const std::string good = golden_bytes("two_layer.gemm");

    // Swap B's two indices (0, 1) to (1, 0).
    std::string swapped = good;
    const std::size_t first = 20 + (4 + 1 + 4 + 8 + 8) + (4 + 1 + 4 + 16 + 8);
    ASSERT_EQ(static_cast<unsigned char>(swapped[first]), 0);
    ASSERT_EQ(static_cast<unsigned char>(swapped[first + 8]), 1);
    std::swap(swapped[first], swapped[first + 8]);
    EXPECT_THROW(decode_masks(swapped), DataError);

    std::string dup = good;
    dup[first + 8] = 0;
    EXPECT_THROW(decode_masks(dup), DataError);

    std::string version = good;
    version[4] = 2;
    try {
        decode_masks(version);
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
    }

    std::string magic = good;
    magic[0] = 'X';
    EXPECT_THROW(decode_masks(magic), DataError);
    EXPECT_THROW(decode_masks(good.substr(0, 40)), DataError);
    EXPECT_THROW(decode_masks(good.substr(0, good.size() - 3)), DataError);

    std::string offset = good;
    offset[12] = static_cast<char>(offset[12] + 1);
    EXPECT_THROW(decode_masks(offset), DataError);

    // Index past the layer size.
    std::string range = good;
    range[first + 8] = 9;
    EXPECT_THROW(decode_masks(range), DataError);
}

TEST(MaskFile, BudgetMustMatchSelection) {
    auto ms = golden_two_layer();
    ms.provenance.plan.total_budget = 3;
    EXPECT_THROW(encode_masks(ms), DataError);
}
