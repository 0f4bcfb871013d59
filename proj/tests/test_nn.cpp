#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "cibr/errors.hpp"
#include "cibr/gradcheck.hpp"
#include "cibr/nn.hpp"
#include "cibr/rng.hpp"

using namespace cibr;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, std::uint64_t index) {
    StreamRng rng(17, "nn-test", index);
    Tensor t(r, c);
    for (auto& v : t.data()) v = rng.uniform(-1.0, 1.0);
    return t;
}

std::filesystem::path temp_path(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("cibr_nn_" + name);
}

}  // namespace

TEST(MlpSpec, Validation) {
    EXPECT_THROW(MlpSpec({{4}}).validate(), ConfigError);
    EXPECT_THROW(MlpSpec({{4, 0, 2}}).validate(), ConfigError);
    EXPECT_NO_THROW(MlpSpec({{4, 8, 2}}).validate());
}

TEST(InitMlp, SameSeedIdenticalBytes) {
    const MlpSpec spec{{4, 8, 2}};
    const MlpParams a = init_mlp(spec, 42), b = init_mlp(spec, 42);
    for (std::size_t l = 0; l < 2; ++l) {
        ASSERT_EQ(a.weights[l].size(), b.weights[l].size());
        EXPECT_EQ(std::memcmp(a.weights[l].data().data(), b.weights[l].data().data(),
                              a.weights[l].size() * sizeof(double)),
                  0);
    }
    EXPECT_NE(init_mlp(spec, 43).weights[0], a.weights[0]);
}

TEST(InitMlp, ShapesBoundsAndZeroBiases) {
    const MlpSpec spec{{4, 8, 2}};
    const MlpParams p = init_mlp(spec, 3);
    ASSERT_EQ(p.weights.size(), 2u);
    EXPECT_EQ(p.weights[0].rows(), 4u);
    EXPECT_EQ(p.weights[0].cols(), 8u);
    EXPECT_EQ(p.weights[1].rows(), 8u);
    EXPECT_EQ(p.weights[1].cols(), 2u);
    EXPECT_EQ(p.biases[0], Tensor::zeros(1, 8));
    EXPECT_EQ(p.biases[1], Tensor::zeros(1, 2));
    const double bound0 = std::sqrt(6.0 / 12.0), bound1 = std::sqrt(6.0 / 10.0);
    for (double w : p.weights[0].data()) EXPECT_LE(std::abs(w), bound0);
    for (double w : p.weights[1].data()) EXPECT_LE(std::abs(w), bound1);
}

TEST(MlpForward, ZeroParamsGiveZeroOutput) {
    MlpParams p = zeros_like(init_mlp(MlpSpec{{3, 5, 2}}, 0));
    EXPECT_EQ(mlp_forward(p, random_tensor(4, 3, 1)), Tensor::zeros(4, 2));
}

TEST(MlpForward, SingleLayerIsAffine) {
    MlpParams p = init_mlp(MlpSpec{{2, 2}}, 0);
    p.weights[0] = Tensor::from_rows({{1, 2}, {3, 4}});
    p.biases[0] = Tensor::from_rows({{0.5, -1}});
    // [1, -1] W = [-2, -2]; plus bias.
    EXPECT_EQ(mlp_forward(p, Tensor::from_rows({{1, -1}})), Tensor::from_rows({{-1.5, -3}}));
}

TEST(MlpForward, HiddenRelu) {
    MlpParams p = init_mlp(MlpSpec{{1, 2, 1}}, 0);
    p.weights[0] = Tensor::from_rows({{1, -1}});
    p.weights[1] = Tensor::from_rows({{1}, {1}});
    EXPECT_EQ(mlp_forward(p, Tensor::from_rows({{2}, {-3}})), Tensor::from_rows({{2}, {3}}));
}

TEST(MlpForward, TapeAndTapeFreeAgree) {
    const MlpParams p = init_mlp(MlpSpec{{3, 7, 4, 2}}, 9);
    const Tensor x = random_tensor(5, 3, 2);
    Tape t;
    EXPECT_EQ(mlp_forward(bind_mlp(t, p, false), t.constant(x)).value(), mlp_forward(p, x));
}

TEST(MlpForward, WrongInputWidthIsDimensionError) {
    const MlpParams p = init_mlp(MlpSpec{{3, 5, 2}}, 0);
    EXPECT_THROW(mlp_forward(p, Tensor::zeros(2, 4)), DimensionError);
    Tape t;
    EXPECT_THROW(mlp_forward(bind_mlp(t, p, false), t.constant(Tensor::zeros(2, 4))), DimensionError);
}

TEST(MlpForward, GradCheckUpToThreeHiddenLayers) {
    GradSuiteOptions opt;
    std::size_t mlp_cases = 0;
    const auto cases = default_grad_cases();
    for (std::size_t i = 0; i < cases.size(); ++i) {
        if (cases[i].name.rfind("mlp_forward", 0) != 0) continue;
        ++mlp_cases;
        const auto r = run_grad_case(cases[i], i, opt);
        EXPECT_TRUE(r.passed) << r.name << " " << r.max_rel_error << " " << r.error;
    }
    EXPECT_GE(mlp_cases, 12u);
}

TEST(CollectGrads, MatchesFrozenAndTrainable) {
    const MlpParams p = init_mlp(MlpSpec{{3, 4, 1}}, 1);
    Tape t;
    MlpVars net = bind_mlp(t, p, true);
    t.backward(sum(mlp_forward(net, t.constant(random_tensor(6, 3, 3)))));
    const MlpParams g = collect_grads(t, net, p);
    // d sum / d b_out = batch size.
    EXPECT_DOUBLE_EQ(g.biases[1].item(), 6.0);

    Tape f;
    MlpVars frozen = bind_mlp(f, p, false);
    f.backward(sum(mlp_forward(frozen, f.leaf(random_tensor(6, 3, 3), true))));
    EXPECT_EQ(collect_grads(f, frozen, p).weights[0], Tensor::zeros(3, 4));
}

TEST(Adam, ZeroGradientIsFixedPoint) {
    MlpParams p = init_mlp(MlpSpec{{3, 4, 2}}, 5);
    const MlpParams before = p;
    AdamState s = init_adam(p, AdamHyper{});
    adam_step(p, zeros_like(p), s);
    EXPECT_EQ(p, before);
    EXPECT_EQ(s.step_count, 1u);
}

TEST(Adam, OneStepOnSquareDescends) {
    MlpParams p = init_mlp(MlpSpec{{1, 1}}, 0);
    p.weights[0] = Tensor::scalar(1.0);
    AdamState s = init_adam(p, AdamHyper{0.1});
    MlpParams g = zeros_like(p);
    g.weights[0] = Tensor::scalar(2.0);  // d/dw w^2 at 1
    adam_step(p, g, s);
    EXPECT_LT(std::abs(p.weights[0].item()), 1.0);
}

TEST(Adam, DeterministicFromIdenticalState) {
    MlpParams p1 = init_mlp(MlpSpec{{3, 4, 2}}, 8), p2 = p1;
    AdamState s1 = init_adam(p1, AdamHyper{}), s2 = s1;
    MlpParams g = init_mlp(MlpSpec{{3, 4, 2}}, 9);
    adam_step(p1, g, s1);
    adam_step(p2, g, s2);
    EXPECT_EQ(p1, p2);
    EXPECT_EQ(s1, s2);
}

TEST(Adam, NonFiniteGradientNamesParameterAndLeavesParamsUntouched) {
    MlpParams p = init_mlp(MlpSpec{{3, 4, 2}}, 8);
    const MlpParams before = p;
    AdamState s = init_adam(p, AdamHyper{});
    MlpParams g = zeros_like(p);
    g.biases[1][1] = std::nan("");
    try {
        adam_step(p, g, s, "encoder_v");
        FAIL() << "expected DivergenceError";
    } catch (const DivergenceError& e) {
        EXPECT_NE(std::string(e.what()).find("encoder_v"), std::string::npos) << e.what();
    }
    EXPECT_EQ(p, before);
}

TEST(Adam, PropertyConvexProbeConverges) {
    // One fixed Glorot-scale target, many starting points.
    const MlpSpec spec{{8, 8}};
    const MlpParams target = init_mlp(spec, 12345);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        MlpParams w = init_mlp(spec, seed);
        AdamState s = init_adam(w, AdamHyper{1e-2});
        for (int it = 0; it < 500; ++it) {
            MlpParams g = zeros_like(w);
            for (std::size_t i = 0; i < w.weights[0].size(); ++i) {
                g.weights[0][i] = 2.0 * (w.weights[0][i] - target.weights[0][i]);
            }
            adam_step(w, g, s);
        }
        double sq = 0.0;
        for (std::size_t i = 0; i < w.weights[0].size(); ++i) {
            sq += std::pow(w.weights[0][i] - target.weights[0][i], 2);
        }
        EXPECT_LT(std::sqrt(sq), 1e-3) << "seed " << seed;
    }
}

TEST(Checkpoint, RoundTripIsBitExact) {
    Checkpoint c{77, {{"encoder_v", init_mlp(MlpSpec{{5, 8, 3}}, 1)}, {"encoder_t", init_mlp(MlpSpec{{4, 3}}, 2)}}};
    const auto path = temp_path("roundtrip.bin");
    save_checkpoint(path, c);
    const Checkpoint back = load_checkpoint(path);
    EXPECT_EQ(back.seed, 77u);
    ASSERT_EQ(back.networks.size(), 2u);
    EXPECT_EQ(back.get("encoder_v"), c.get("encoder_v"));
    EXPECT_EQ(back.get("encoder_t"), c.get("encoder_t"));
    std::filesystem::remove(path);
}

TEST(Checkpoint, HeaderIsLittleEndianAndVersioned) {
    Checkpoint c{0x0102030405060708ULL, {{"n", init_mlp(MlpSpec{{1, 1}}, 0)}}};
    const auto path = temp_path("header.bin");
    save_checkpoint(path, c);
    std::ifstream in(path, std::ios::binary);
    char head[24];
    in.read(head, 24);
    EXPECT_EQ(std::string(head, 8), "CIBRCKPT");
    EXPECT_EQ(static_cast<unsigned char>(head[8]), kCheckpointVersion);
    EXPECT_EQ(static_cast<unsigned char>(head[12]), 0x08);
    EXPECT_EQ(static_cast<unsigned char>(head[19]), 0x01);
    std::filesystem::remove(path);
}

TEST(Checkpoint, Errors) {
    EXPECT_THROW(load_checkpoint(temp_path("does_not_exist.bin")), IoError);
    const auto path = temp_path("garbage.bin");
    {
        std::ofstream out(path, std::ios::binary);
        out << "not a checkpoint";
    }
    EXPECT_THROW(load_checkpoint(path), IoError);
    std::filesystem::remove(path);
    Checkpoint c{0, {}};
    EXPECT_THROW(c.get("missing"), Error);
}
