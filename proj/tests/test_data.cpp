#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include <gtest/gtest.h>

#include "cibr/data.hpp"
#include "cibr/errors.hpp"
#include "cibr/eval.hpp"

using namespace cibr;

namespace {

// Quadrature oracles. Densities are written out by hand from explicit 2x2 and
// 3x3 inverses so nothing here shares code with the library.

double normal_pdf(double x, double var) { return std::exp(-0.5 * x * x / var) / std::sqrt(2.0 * std::numbers::pi * var); }

double bivariate_pdf(double x, double y, double sxx, double syy, double sxy) {
    const double det = sxx * syy - sxy * sxy;
    const double q = (syy * x * x - 2.0 * sxy * x * y + sxx * y * y) / det;
    return std::exp(-0.5 * q) / (2.0 * std::numbers::pi * std::sqrt(det));
}

/// I(X;Y) = integral p log(p / (px py)) on a tensor-product trapezoid grid.
double quadrature_mi_2d(double sxx, double syy, double sxy) {
    const int n = 801;
    const double hx = 16.0 * std::sqrt(sxx) / (n - 1), hy = 16.0 * std::sqrt(syy) / (n - 1);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = -8.0 * std::sqrt(sxx) + i * hx;
        const double px = normal_pdf(x, sxx);
        for (int j = 0; j < n; ++j) {
            const double y = -8.0 * std::sqrt(syy) + j * hy;
            const double p = bivariate_pdf(x, y, sxx, syy, sxy);
            if (p > 1e-300) acc += p * std::log(p / (px * normal_pdf(y, syy)));
        }
    }
    return acc * hx * hy;
}

using Mat3 = std::array<std::array<double, 3>, 3>;

double det3(const Mat3& m) {
    return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

Mat3 inv3(const Mat3& m) {
    const double d = det3(m);
    Mat3 r{};
    r[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / d;
    r[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / d;
    r[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / d;
    r[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / d;
    r[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / d;
    r[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / d;
    r[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / d;
    r[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / d;
    r[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / d;
    return r;
}

/// I(Z;X|C) for scalar (Z, X, C) with covariance m, by trapezoid quadrature
/// of p(z,x,c) log[p(z,x,c) p(c) / (p(z,c) p(x,c))].
double quadrature_conditional_mi_3d(const Mat3& m) {
    const int n = 161;
    const Mat3 inv = inv3(m);
    const double norm = 1.0 / std::sqrt(std::pow(2.0 * std::numbers::pi, 3) * det3(m));
    std::array<double, 3> lo{}, h{};
    for (int k = 0; k < 3; ++k) {
        lo[k] = -7.0 * std::sqrt(m[k][k]);
        h[k] = 14.0 * std::sqrt(m[k][k]) / (n - 1);
    }
    double acc = 0.0;
    for (int a = 0; a < n; ++a) {
        const double z = lo[0] + a * h[0];
        for (int b = 0; b < n; ++b) {
            const double x = lo[1] + b * h[1];
            for (int c = 0; c < n; ++c) {
                const double w = lo[2] + c * h[2];
                const double v[3] = {z, x, w};
                double q = 0.0;
                for (int i = 0; i < 3; ++i)
                    for (int j = 0; j < 3; ++j) q += v[i] * inv[i][j] * v[j];
                const double p = norm * std::exp(-0.5 * q);
                if (p < 1e-300) continue;
                const double pzc = bivariate_pdf(z, w, m[0][0], m[2][2], m[0][2]);
                const double pxc = bivariate_pdf(x, w, m[1][1], m[2][2], m[1][2]);
                acc += p * std::log(p * normal_pdf(w, m[2][2]) / (pzc * pxc));
            }
        }
    }
    return acc * h[0] * h[1] * h[2];
}

Tensor to_tensor(const Mat3& m) {
    return Tensor::from_rows({{m[0][0], m[0][1], m[0][2]}, {m[1][0], m[1][1], m[1][2]}, {m[2][0], m[2][1], m[2][2]}});
}

std::filesystem::path temp_dir() {
    auto d = std::filesystem::temp_directory_path() / "cibr_data_test";
    std::filesystem::create_directories(d);
    return d;
}

std::filesystem::path write_file(const std::string& name, const std::string& body) {
    const auto p = temp_dir() / name;
    std::ofstream(p) << body;
    return p;
}

}  // namespace

TEST(GaussianPairs, FullySharedSignalDuplicatesRows) {
    const auto spec = GaussianPairSpec::mixing(Tensor::identity(3), Tensor::identity(3), {0, 0, 0}, {0, 0, 0}, 50, 4);
    const PairedDataset ds = gen_gaussian_pairs(spec);
    EXPECT_EQ(ds.xv, ds.xt);
    EXPECT_EQ(ds.size(), 50u);
}

TEST(GaussianPairs, NoSharedDimsGivesNearZeroCorrelation) {
    const PairedDataset ds = gen_gaussian_pairs(GaussianPairSpec::correlated(0, 0.0, 3, 3, 1000, 8));
    for (std::size_t a = 0; a < 3; ++a) {
        for (std::size_t b = 0; b < 3; ++b) {
            double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
            for (std::size_t i = 0; i < ds.size(); ++i) {
                const double x = ds.xv(i, a), y = ds.xt(i, b);
                sa += x, sb += y, saa += x * x, sbb += y * y, sab += x * y;
            }
            const double n = double(ds.size());
            const double corr = (sab / n - sa * sb / (n * n)) /
                                std::sqrt((saa / n - sa * sa / (n * n)) * (sbb / n - sb * sb / (n * n)));
            EXPECT_LT(std::abs(corr), 0.1);
        }
    }
}

TEST(GaussianPairs, PureFunctionOfSpec) {
    const auto spec = GaussianPairSpec::correlated(2, 0.7, 1, 3, 200, 11);
    const PairedDataset a = gen_gaussian_pairs(spec), b = gen_gaussian_pairs(spec);
    EXPECT_EQ(a.xv, b.xv);
    EXPECT_EQ(a.xt, b.xt);
    auto other = spec;
    other.seed = 12;
    EXPECT_NE(gen_gaussian_pairs(other).xv, a.xv);
    // Streams are addressable: a later window equals the tail of a longer draw.
    const PairedDataset tail = sample_gaussian_pairs(spec, "data", 150, 50);
    EXPECT_EQ(tail.xv, select_rows(a.xv, [] {
                  std::vector<std::size_t> r;
                  for (std::size_t i = 150; i < 200; ++i) r.push_back(i);
                  return r;
              }()));
}

TEST(GaussianPairs, InvalidSpecsRejected) {
    EXPECT_THROW(GaussianPairSpec::correlated(1, 1.0, 0, 0, 10, 0), ConfigError);
    EXPECT_THROW(GaussianPairSpec::mixing(Tensor::identity(2), Tensor::identity(3), {0, 0}, {0, 0, 0}, 10, 0),
                 ConfigError);
    EXPECT_THROW(GaussianPairSpec::mixing(Tensor::identity(2), Tensor::identity(2), {-1, 0}, {0, 0}, 10, 0),
                 ConfigError);
}

TEST(GaussianPairs, PropertySampleCovarianceConverges) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto spec = GaussianPairSpec::correlated(1, 0.9, 0, 0, 10000, seed);
        const PairedDataset ds = gen_gaussian_pairs(spec);
        const Tensor x = hconcat(ds.xv, ds.xt);
        const Tensor target = spec.joint_covariance();
        const std::size_t d = x.cols();
        const double n = double(x.rows());
        double frob = 0.0;
        for (std::size_t a = 0; a < d; ++a) {
            for (std::size_t b = 0; b < d; ++b) {
                double s = 0.0;
                for (std::size_t i = 0; i < x.rows(); ++i) s += x(i, a) * x(i, b);
                frob += std::pow(s / n - target(a, b), 2);
            }
        }
        EXPECT_LT(std::sqrt(frob), 0.1) << "seed " << seed;
    }
}

TEST(GaussianMi, ClosedFormExamples) {
    EXPECT_NEAR(gaussian_mi(GaussianPairSpec::correlated(0, 0.0, 2, 3, 10, 0)), 0.0, 1e-12);
    EXPECT_NEAR(gaussian_mi(GaussianPairSpec::correlated(1, 0.5, 0, 0, 10, 0)), -0.5 * std::log(0.75), 1e-12);
    EXPECT_NEAR(gaussian_mi(GaussianPairSpec::correlated(1, 0.5, 0, 0, 10, 0)), 0.1438, 1e-4);
    EXPECT_NEAR(gaussian_mi(GaussianPairSpec::correlated(1, 0.9, 0, 0, 10, 0)), 0.8304, 1e-4);
    // Independent coordinates add.
    EXPECT_NEAR(gaussian_mi(GaussianPairSpec::correlated(3, 0.9, 2, 1, 10, 0)), -1.5 * std::log(0.19), 1e-10);
}

TEST(GaussianMi, SingularCovarianceIsIllConditioned) {
    const auto spec = GaussianPairSpec::mixing(Tensor::identity(2), Tensor::identity(2), {0, 0}, {0, 0}, 10, 0);
    EXPECT_THROW(gaussian_mi(spec), IllConditionedError);
}

TEST(GaussianMi, PropertyAgreesWithQuadrature) {
    const std::vector<GaussianPairSpec> specs = {
        GaussianPairSpec::correlated(1, 0.5, 0, 0, 10, 0),
        GaussianPairSpec::correlated(1, -0.9, 0, 0, 10, 0),
        GaussianPairSpec::mixing(Tensor::from_rows({{1.0}}), Tensor::from_rows({{0.6}}), {0.5}, {0.8}, 10, 0),
    };
    for (const auto& spec : specs) {
        const Tensor c = spec.joint_covariance();
        EXPECT_NEAR(gaussian_mi(spec), quadrature_mi_2d(c(0, 0), c(1, 1), c(0, 1)), 1e-3);
    }
}

TEST(ConditionalMi, MarkovChainIsZero) {
    // X' ~ N(0,1); Z = 0.8 X' + 0.6 e1; X = -0.5 X' + 0.7 e2.
    const double a = 0.8, b = -0.5;
    const Tensor cov = Tensor::from_rows(
        {{a * a + 0.36, a * b, a}, {a * b, b * b + 0.49, b}, {a, b, 1.0}});
    EXPECT_NEAR(gaussian_conditional_mi(cov, 1, 1, 1), 0.0, 1e-9);
}

TEST(ConditionalMi, DuplicateBlockIsIllConditioned) {
    const Tensor cov = Tensor::from_rows({{1.0, 1.0, 0.5}, {1.0, 1.0, 0.5}, {0.5, 0.5, 1.0}});
    EXPECT_THROW(gaussian_conditional_mi(cov, 1, 1, 1), IllConditionedError);
}

TEST(ConditionalMi, PropertyAgreesWithQuadrature) {
    const std::vector<Mat3> covs = {
        Mat3{{{1.0, 0.5, 0.5}, {0.5, 1.0, 0.5}, {0.5, 0.5, 1.0}}},
        Mat3{{{2.0, 0.9, -0.3}, {0.9, 1.0, 0.2}, {-0.3, 0.2, 0.5}}},
        Mat3{{{1.0, -0.7, 0.1}, {-0.7, 1.5, 0.6}, {0.1, 0.6, 1.0}}},
    };
    for (const auto& m : covs) {
        EXPECT_NEAR(gaussian_conditional_mi(to_tensor(m), 1, 1, 1), quadrature_conditional_mi_3d(m), 1e-3);
    }
}

TEST(ConditionalMi, PropertyChainRule) {
    // Random PD covariances over (Z[2], X[2], X'[1]) built as L L^T + 0.1 I.
    for (std::uint64_t s = 0; s < 20; ++s) {
        Tensor l = sample_multivariate_normal(Tensor::identity(5), s, "chol", 0, 5);
        Tensor cov(5, 5);
        for (std::size_t i = 0; i < 5; ++i)
            for (std::size_t j = 0; j < 5; ++j) {
                double acc = i == j ? 0.1 : 0.0;
                for (std::size_t k = 0; k < 5; ++k) acc += l(i, k) * l(j, k);
                cov(i, j) = acc;
            }
        // Reorder to (Z, X') for the unconditional term.
        Tensor z_c(3, 3);
        const std::size_t idx[3] = {0, 1, 4};
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j) z_c(i, j) = cov(idx[i], idx[j]);
        const double lhs = gaussian_conditional_mi(cov, 2, 2, 1) + gaussian_mi_from_covariance(z_c, 2);
        const double rhs = gaussian_mi_from_covariance(cov, 2);
        EXPECT_NEAR(lhs, rhs, 1e-9);
    }
}

TEST(MultivariateNormal, CovarianceMatches) {
    const Tensor cov = Tensor::from_rows({{1.0, 0.3}, {0.3, 0.5}});
    const Tensor x = sample_multivariate_normal(cov, 1, "mvn", 0, 20000);
    double s00 = 0, s01 = 0, s11 = 0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        s00 += x(i, 0) * x(i, 0);
        s01 += x(i, 0) * x(i, 1);
        s11 += x(i, 1) * x(i, 1);
    }
    const double n = double(x.rows());
    EXPECT_NEAR(s00 / n, 1.0, 0.05);
    EXPECT_NEAR(s01 / n, 0.3, 0.05);
    EXPECT_NEAR(s11 / n, 0.5, 0.05);
}

TEST(ClusteredPairs, ZeroNoiseGivesIdenticalClassMembers) {
    ClusteredPairSpec spec;
    spec.noise_scale = 0.0;
    spec.n_per_class = 5;
    const PairedDataset ds = gen_clustered_pairs(spec);
    ASSERT_TRUE(ds.labels);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const std::size_t first = static_cast<std::size_t>((*ds.labels)[i]);
        for (std::size_t c = 0; c < ds.xv.cols(); ++c) EXPECT_EQ(ds.xv(i, c), ds.xv(first, c));
        for (std::size_t c = 0; c < ds.xt.cols(); ++c) EXPECT_EQ(ds.xt(i, c), ds.xt(first, c));
    }
}

TEST(ClusteredPairs, LargeSeparationIsPerfectlySeparableWithIdentityEncoders) {
    ClusteredPairSpec spec;
    spec.class_separation = 30.0;
    spec.noise_scale = 1.0;
    spec.seed = 5;
    const PairedDataset train = gen_clustered_pairs(spec);
    const PairedDataset test = sample_clustered_pairs(spec, "heldout", 0, 500);
    const Tensor protos = build_prototypes(train.xv, *train.labels, spec.n_classes);
    EXPECT_EQ(prototype_classify(test.xv, protos, *test.labels).accuracy, 1.0);
}

TEST(ClusteredPairs, PureFunctionOfSpecAndLabelsCycle) {
    ClusteredPairSpec spec;
    spec.nuisance_dims = 3;
    spec.nuisance_scale = 2.0;
    const PairedDataset a = gen_clustered_pairs(spec), b = gen_clustered_pairs(spec);
    EXPECT_EQ(a.xv, b.xv);
    EXPECT_EQ(a.xt, b.xt);
    EXPECT_EQ(a.xv.cols(), 19u);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ((*a.labels)[i], int(i % spec.n_classes));
}

TEST(ClusteredPairs, Validation) {
    ClusteredPairSpec spec;
    spec.n_classes = 1;
    EXPECT_THROW(spec.validate(), ConfigError);
    spec.n_classes = 10;
    spec.dim_latent = 5;
    EXPECT_THROW(spec.validate(), ConfigError);
}

TEST(PairedCsv, HappyPathWithHeaderAndLabels) {
    const auto v = write_file("v.csv", "a,b\n1,2\n3,4\n5,6\n");
    const auto t = write_file("t.csv", "7\n8\n9\n");
    const auto l = write_file("l.csv", "0\n1\n1\n");
    const PairedDataset ds = load_paired_csv(v, t, l);
    EXPECT_EQ(ds.size(), 3u);
    EXPECT_EQ(ds.xv, Tensor::from_rows({{1, 2}, {3, 4}, {5, 6}}));
    EXPECT_EQ(ds.xt, Tensor::from_rows({{7}, {8}, {9}}));
    EXPECT_EQ(*ds.labels, (std::vector<int>{0, 1, 1}));
    EXPECT_EQ(ds.n_classes, 2u);
    EXPECT_NE(ds.provenance.find("v.csv"), std::string::npos);
    const auto j = dataset_manifest(ds);
    EXPECT_EQ(j["n"], 3);
    EXPECT_EQ(j["dim_v"], 2);
}

TEST(PairedCsv, RowCountMismatchNamesBothCounts) {
    const auto v = write_file("v3.csv", "1\n2\n3\n");
    const auto t = write_file("t4.csv", "1\n2\n3\n4\n");
    try {
        load_paired_csv(v, t);
        FAIL() << "expected AlignmentError";
    } catch (const AlignmentError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find('3'), std::string::npos);
        EXPECT_NE(msg.find('4'), std::string::npos);
    }
}

TEST(PairedCsv, BadCellNamesRowAndColumn) {
    const auto v = write_file("bad.csv", "1,2\nabc,4\n5,6\n");
    try {
        read_csv_matrix(v);
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("(2,1)"), std::string::npos) << e.what();
    }
}

TEST(PairedCsv, RaggedRowAndMissingFile) {
    EXPECT_THROW(read_csv_matrix(write_file("ragged.csv", "1,2\n3\n")), ParseError);
    EXPECT_THROW(read_csv_matrix(temp_dir() / "nope.csv"), IoError);
}
