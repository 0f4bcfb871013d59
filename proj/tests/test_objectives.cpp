#include <cmath>

#include <gtest/gtest.h>

#include "cibr/data.hpp"
#include "cibr/errors.hpp"
#include "cibr/objectives.hpp"
#include "cibr/rng.hpp"

using namespace cibr;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, std::uint64_t index, double lo = -1.0, double hi = 1.0) {
    StreamRng rng(23, "obj-test", index);
    Tensor t(r, c);
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

double nce(const Tensor& s, LossConfig cfg) {
    Tape t;
    return info_nce_loss(t.constant(s), cfg).value().item();
}

}  // namespace

TEST(CosineSimilarity, OrthonormalSelfSimilarityIsIdentity) {
    Tape t;
    const Tensor z = Tensor::from_rows({{0.6, 0.8, 0}, {-0.8, 0.6, 0}, {0, 0, 1}});
    EXPECT_LT(max_abs_diff(cosine_similarity_matrix(t.constant(z), t.constant(z)).value(), Tensor::identity(3)),
              1e-15);
}

TEST(CosineSimilarity, AntipodalIsMinusOne) {
    Tape t;
    Var s = cosine_similarity_matrix(t.constant(Tensor::from_rows({{1, 2}})), t.constant(Tensor::from_rows({{-1, -2}})));
    EXPECT_NEAR(s.value().item(), -1.0, 1e-15);
}

TEST(CosineSimilarity, ScaleInvariantAndBounded) {
    Tape t;
    const Tensor zv = random_tensor(5, 4, 1), zt = random_tensor(5, 4, 2);
    Tensor zv7 = zv;
    for (auto& v : zv7.data()) v *= 7.0;
    const Tensor s = cosine_similarity_matrix(t.constant(zv), t.constant(zt)).value();
    EXPECT_LT(max_abs_diff(s, cosine_similarity_matrix(t.constant(zv7), t.constant(zt)).value()), 1e-15);
    for (double v : s.data()) {
        EXPECT_LE(v, 1.0);
        EXPECT_GE(v, -1.0);
    }
}

TEST(CosineSimilarity, DegenerateRowThrows) {
    Tape t;
    EXPECT_THROW(cosine_similarity_matrix(t.constant(Tensor::from_rows({{0, 0}})), t.constant(Tensor::from_rows({{1, 0}}))),
                 DegenerateEmbeddingError);
}

TEST(InfoNce, SinglePairIsZero) {
    EXPECT_EQ(nce(Tensor::scalar(0.37), LossConfig{}), 0.0);
    LossConfig rows_only;
    rows_only.symmetric = false;
    EXPECT_EQ(nce(Tensor::scalar(-0.9), rows_only), 0.0);
}

TEST(InfoNce, ConstantMatrixIsLogN) {
    for (bool symmetric : {true, false}) {
        LossConfig cfg;
        cfg.symmetric = symmetric;
        EXPECT_NEAR(nce(Tensor(4, 4, 0.3), cfg), std::log(4.0), 1e-9);
        for (std::size_t n : {2u, 7u, 64u, 256u}) EXPECT_NEAR(nce(Tensor(n, n, -0.8), cfg), std::log(double(n)), 1e-9);
    }
}

TEST(InfoNce, IdentityAtUnitTemperature) {
    LossConfig cfg;
    cfg.tau = 1.0;
    EXPECT_NEAR(nce(Tensor::identity(2), cfg), std::log(1.0 + std::exp(-1.0)), 1e-12);
    EXPECT_NEAR(std::log(1.0 + std::exp(-1.0)), 0.3133, 1e-4);
}

TEST(InfoNce, HandComputedAsymmetric) {
    // rows: -log softmax of the diagonal with tau = 1.
    const Tensor s = Tensor::from_rows({{1.0, 0.0}, {0.5, -0.5}});
    LossConfig cfg;
    cfg.tau = 1.0;
    cfg.symmetric = false;
    const double r0 = -(1.0 - std::log(std::exp(1.0) + std::exp(0.0)));
    const double r1 = -(-0.5 - std::log(std::exp(0.5) + std::exp(-0.5)));
    EXPECT_NEAR(nce(s, cfg), 0.5 * (r0 + r1), 1e-14);
    cfg.symmetric = true;
    const double c0 = -(1.0 - std::log(std::exp(1.0) + std::exp(0.5)));
    const double c1 = -(-0.5 - std::log(std::exp(0.0) + std::exp(-0.5)));
    EXPECT_NEAR(nce(s, cfg), 0.5 * (0.5 * (r0 + r1) + 0.5 * (c0 + c1)), 1e-14);
}

TEST(InfoNce, NonSquareIsDimensionError) {
    Tape t;
    EXPECT_THROW(info_nce_loss(t.constant(Tensor(2, 3)), LossConfig{}), DimensionError);
}

TEST(InfoNce, PropertyRowShiftInvariance) {
    LossConfig cfg;
    cfg.symmetric = false;
    for (std::uint64_t i = 0; i < 30; ++i) {
        const std::size_t n = 2 + i % 6;
        const Tensor s = random_tensor(n, n, 100 + i);
        Tensor shifted = s;
        StreamRng rng(1, "shift", i);
        for (std::size_t r = 0; r < n; ++r) {
            const double c = rng.uniform(-50.0, 50.0) * cfg.tau;
            for (std::size_t j = 0; j < n; ++j) shifted(r, j) += c;
        }
        EXPECT_NEAR(nce(s, cfg), nce(shifted, cfg), 1e-9);
    }
}

TEST(InfoNce, PropertyNonNegativeAndScaleInvariantEmbeddings) {
    for (std::uint64_t i = 0; i < 30; ++i) {
        const std::size_t n = 1 + i % 8;
        const Tensor zv = random_tensor(n, 3, 200 + i), zt = random_tensor(n, 3, 300 + i);
        Tensor zv_scaled = zv;
        const double c = 0.01 + 10.0 * (i + 1);
        for (auto& v : zv_scaled.data()) v *= c;
        for (bool symmetric : {true, false}) {
            LossConfig cfg;
            cfg.symmetric = symmetric;
            Tape t;
            const double a = info_nce_loss(cosine_similarity_matrix(t.constant(zv), t.constant(zt)), cfg).value().item();
            const double b =
                info_nce_loss(cosine_similarity_matrix(t.constant(zv_scaled), t.constant(zt)), cfg).value().item();
            EXPECT_GE(a, 0.0);
            EXPECT_NEAR(a, b, 1e-9);
        }
    }
}

TEST(LossConfig, Validation) {
    LossConfig cfg;
    cfg.tau = 0.0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg.tau = 0.1;
    cfg.clamp_T = -1;
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(DvEstimate, ConstantCriticIsExactlyZero) {
    Tape t;
    const DvTerm d = dv_mi_estimate(t.constant(Tensor(5, 1, 2.5)), t.constant(Tensor(7, 1, 2.5)), LossConfig{});
    EXPECT_EQ(d.estimate.value_nats, 0.0);
    EXPECT_EQ(d.estimate.n_joint, 5u);
    EXPECT_EQ(d.estimate.n_marginal, 7u);
}

TEST(DvEstimate, HandEvaluation) {
    Tape t;
    const DvTerm d = dv_mi_estimate(t.constant(Tensor(2, 1, 1.0)), t.constant(Tensor(2, 1, 0.0)), LossConfig{});
    EXPECT_DOUBLE_EQ(d.estimate.value_nats, 1.0);
}

TEST(DvEstimate, ClampBoundsCriticOutputs) {
    Tape t;
    const DvTerm d = dv_mi_estimate(t.constant(Tensor(2, 1, 1e4)), t.constant(Tensor(2, 1, 1e4)), LossConfig{});
    EXPECT_EQ(d.estimate.value_nats, 0.0);
    const DvTerm e = dv_mi_estimate(t.constant(Tensor(2, 1, 1e4)), t.constant(Tensor(2, 1, -1e4)), LossConfig{});
    EXPECT_DOUBLE_EQ(e.estimate.value_nats, 100.0);
}

TEST(DvEstimate, TooFewSamples) {
    Tape t;
    EXPECT_THROW(dv_mi_estimate(t.constant(Tensor(1, 1)), t.constant(Tensor(3, 1)), LossConfig{}),
                 InsufficientSampleError);
    EXPECT_THROW(dv_mi_estimate(t.constant(Tensor(3, 1)), t.constant(Tensor(1, 1)), LossConfig{}),
                 InsufficientSampleError);
}

TEST(ShiftDerangement, NoFixedPoints) {
    for (std::size_t n = 2; n < 20; ++n) {
        const auto p = shift_derangement(n);
        std::vector<bool> hit(n, false);
        for (std::size_t i = 0; i < n; ++i) {
            EXPECT_NE(p[i], i);
            hit[p[i]] = true;
        }
        for (bool h : hit) EXPECT_TRUE(h);
    }
}

// Fixed critics, including the optimal log density ratio and rescaled
// versions of it, evaluated on fresh Gaussian samples. DV is a lower bound;
// Monte Carlo error at n = 4096 stays well under 3 / sqrt(n).
TEST(DvEstimate, PropertyNeverExceedsGaussianOracle) {
    const std::size_t n = 4096;
    const double slack = 3.0 / std::sqrt(double(n));
    for (double rho : {0.5, 0.9}) {
        const auto spec = GaussianPairSpec::correlated(1, rho, 0, 0, n, 3);
        const double oracle = -0.5 * std::log(1.0 - rho * rho);
        for (std::uint64_t rep = 0; rep < 5; ++rep) {
            const PairedDataset ds = sample_gaussian_pairs(spec, "dv-bound", rep * n, n);
            const auto perm = shift_derangement(n);
            for (double scale_by : {1.0, 0.5, 1.5, -1.0}) {
                auto ratio = [&](double x, double y) {
                    const double r2 = 1.0 - rho * rho;
                    return scale_by * (-0.5 * std::log(r2) - (rho * rho * (x * x + y * y) - 2.0 * rho * x * y) / (2.0 * r2));
                };
                Tensor tj(n, 1), tm(n, 1);
                for (std::size_t i = 0; i < n; ++i) {
                    tj[i] = ratio(ds.xv[i], ds.xt[i]);
                    tm[i] = ratio(ds.xv[i], ds.xt[perm[i]]);
                }
                Tape t;
                const double est = dv_mi_estimate(t.constant(tj), t.constant(tm), LossConfig{}).estimate.value_nats;
                EXPECT_LE(est, oracle + slack) << "rho " << rho << " scale " << scale_by << " rep " << rep;
            }
        }
    }
}

namespace {

MlpParams critic_params(std::size_t in, std::uint64_t seed) { return init_mlp(MlpSpec{{in, 8, 1}}, seed); }

}  // namespace

TEST(ConditionalMi, EqualsDifferenceOfTheTwoTerms) {
    Tape t;
    ConditionalCriticParams p{critic_params(3 + 2 + 2, 1), critic_params(3 + 2, 2)};
    const Tensor z = random_tensor(6, 3, 10), x = random_tensor(6, 2, 11), xc = random_tensor(6, 2, 12);
    ConditionalCritics c = bind_conditional(t, p, false);
    const double cond =
        conditional_mi_estimate(t.constant(z), t.constant(x), t.constant(xc), c, LossConfig{}).estimate.value_nats;
    const double joint =
        critic_dv_estimate(c.with_cond, t.constant(z), t.constant(hconcat(x, xc)), LossConfig{}, "a").estimate.value_nats;
    const double only = critic_dv_estimate(c.cond_only, t.constant(z), t.constant(xc), LossConfig{}, "b").estimate.value_nats;
    EXPECT_DOUBLE_EQ(cond, joint - only);
    EXPECT_DOUBLE_EQ(
        conditional_mi_estimate(t.constant(z), t.constant(x), t.constant(xc), p, LossConfig{}).estimate.value_nats, cond);
}

TEST(ConditionalMi, MisalignedRowsThrow) {
    Tape t;
    ConditionalCriticParams p{critic_params(3 + 2 + 2, 1), critic_params(3 + 2, 2)};
    EXPECT_THROW(conditional_mi_estimate(t.constant(random_tensor(6, 3, 1)), t.constant(random_tensor(5, 2, 2)),
                                         t.constant(random_tensor(6, 2, 3)), p, LossConfig{}),
                 AlignmentError);
}

namespace {

struct Fixture {
    Tape tape;
    CibrBatch batch;
    CibrCritics critics;
    Tensor zv, zt;
};

void build(Fixture& f, std::uint64_t seed) {
    const std::size_t n = 8, dv = 3, dt = 2, e = 4;
    f.zv = random_tensor(n, e, seed * 10 + 1);
    f.zt = random_tensor(n, e, seed * 10 + 2);
    Tape& t = f.tape;
    f.batch = CibrBatch{t.leaf(f.zv, true), t.leaf(f.zt, true), t.constant(random_tensor(n, dv, seed * 10 + 3)),
                        t.constant(random_tensor(n, dt, seed * 10 + 4))};
    ConditionalCriticParams cv{critic_params(e + dv + dt, seed + 1), critic_params(e + dt, seed + 2)};
    ConditionalCriticParams ct{critic_params(e + dt + dv, seed + 3), critic_params(e + dv, seed + 4)};
    f.critics = CibrCritics{bind_conditional(t, cv, false), bind_conditional(t, ct, false),
                            bind_mlp(t, critic_params(2 * e, seed + 5), false)};
}

}  // namespace

TEST(CibrTotalLoss, LambdaZeroBitEqualsInfoNce) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Fixture f;
        build(f, seed);
        const CibrLoss l = cibr_total_loss(f.batch, f.critics, 0.0, 1.0, LossConfig{});
        Tape t;
        const double plain =
            info_nce_loss(cosine_similarity_matrix(t.constant(f.zv), t.constant(f.zt)), LossConfig{}).value().item();
        EXPECT_EQ(l.total.value().item(), plain);
        EXPECT_EQ(l.total.id(), l.clip.id());
    }
}

TEST(CibrTotalLoss, WeightedSumOfRegularizers) {
    Fixture f;
    build(f, 4);
    const CibrLoss l = cibr_total_loss(f.batch, f.critics, 0.5, 1.0, LossConfig{});
    const double expected = l.clip.value().item() + 0.5 * (l.reg_v.value().item() + l.reg_t.value().item());
    EXPECT_NEAR(l.total.value().item(), expected, 1e-14);
    EXPECT_DOUBLE_EQ(l.diagnostics.i_zv_xv_given_xt, l.reg_v.value().item());
    EXPECT_DOUBLE_EQ(l.diagnostics.i_zt_xt_given_xv, l.reg_t.value().item());
    EXPECT_DOUBLE_EQ(l.diagnostics.i_zv_zt, l.i_zv_zt.value().item());
    EXPECT_DOUBLE_EQ(l.diagnostics.cib_value, cib_objective(l.diagnostics));
}

TEST(CibrTotalLoss, NegativeLambdaIsConfigError) {
    Fixture f;
    build(f, 1);
    EXPECT_THROW(cibr_total_loss(f.batch, f.critics, -0.1, 1.0, LossConfig{}), ConfigError);
}

TEST(CibrTotalLoss, FrozenCriticsReceiveNoGradient) {
    Fixture f;
    build(f, 2);
    const CibrLoss l = cibr_total_loss(f.batch, f.critics, 0.5, 1.0, LossConfig{});
    f.tape.backward(l.total);
    for (Var w : f.critics.v.with_cond.weights) EXPECT_FALSE(f.tape.has_grad(w));
    EXPECT_TRUE(f.tape.has_grad(f.batch.zv));
}

TEST(CibObjective, Arithmetic) {
    CIBDiagnostics d;
    EXPECT_EQ(cib_objective(d), 0.0);
    d.beta = 0.0;
    d.i_zv_zt = 0.3;
    d.i_zv_xv_given_xt = 0.1;
    d.i_zt_xt_given_xv = 0.1;
    EXPECT_NEAR(cib_objective(d), 0.5, 1e-15);
    d.beta = 1.0;
    EXPECT_NEAR(cib_objective(d), 0.2, 1e-15);
    EXPECT_DOUBLE_EQ(ib_objective(1.0, 0.25, 2.0), 0.5);
}
