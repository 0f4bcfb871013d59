#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cibr/tensor.hpp"

namespace cibr {

/// Linear-Gaussian pair: Xv = A s + sigma_v * eps_v, Xt = B s + sigma_t * eps_t,
/// with s, eps standard normal. Build through correlated() or mixing().
struct GaussianPairSpec {
    Tensor A;  // dim_v x dim_latent
    Tensor B;  // dim_t x dim_latent
    std::vector<double> sigma_v;
    std::vector<double> sigma_t;
    std::size_t n_samples = 1000;
    std::uint64_t seed = 0;

    // Set by correlated(); informational otherwise.
    std::size_t dim_shared = 0;
    std::size_t dim_v_noise = 0;
    std::size_t dim_t_noise = 0;
    double rho = 0.0;
    bool from_rho = false;

    /// First dim_shared coordinates of each modality are unit-variance with
    /// correlation rho per coordinate; the remaining dim_*_noise coordinates
    /// are independent unit normals.
    static GaussianPairSpec correlated(std::size_t dim_shared, double rho, std::size_t dim_v_noise,
                                       std::size_t dim_t_noise, std::size_t n_samples, std::uint64_t seed);
    static GaussianPairSpec mixing(Tensor A, Tensor B, std::vector<double> sigma_v, std::vector<double> sigma_t,
                                   std::size_t n_samples, std::uint64_t seed);

    std::size_t dim_v() const { return A.rows(); }
    std::size_t dim_t() const { return B.rows(); }
    std::size_t dim_latent() const { return A.cols(); }

    /// Covariance of the stacked vector (Xv, Xt).
    Tensor joint_covariance() const;
    void validate() const;
};

struct ClusteredPairSpec {
    std::size_t n_classes = 10;
    std::size_t dim_v = 16;
    std::size_t dim_t = 16;
    /// Prototype dimension; 0 means n_classes.
    std::size_t dim_latent = 0;
    double class_separation = 3.0;
    double noise_scale = 1.0;
    /// Extra modality-specific coordinates carrying pure noise of this scale,
    /// appended to each modality.
    std::size_t nuisance_dims = 0;
    double nuisance_scale = 0.0;
    std::size_t n_per_class = 100;
    std::uint64_t seed = 0;

    std::size_t latent() const { return dim_latent == 0 ? n_classes : dim_latent; }
    std::size_t total_dim_v() const { return dim_v + nuisance_dims; }
    std::size_t total_dim_t() const { return dim_t + nuisance_dims; }
    void validate() const;
};

struct PairedDataset {
    Tensor xv;
    Tensor xt;
    std::optional<std::vector<int>> labels;
    std::size_t n_classes = 0;
    std::string provenance;
    std::optional<std::uint64_t> seed;

    std::size_t size() const { return xv.rows(); }
};

PairedDataset gen_gaussian_pairs(const GaussianPairSpec& spec);

/// Samples [first, first + count) of a named stream. gen_gaussian_pairs is the
/// "data" stream from 0; training and evaluation draw from other labels.
PairedDataset sample_gaussian_pairs(const GaussianPairSpec& spec, std::string_view stream, std::uint64_t first,
                                    std::size_t count);

/// I(Xv; Xt) in nats. Throws IllConditionedError when the joint covariance has
/// condition number above 1e12.
double gaussian_mi(const GaussianPairSpec& spec);

/// I(A; B) of a Gaussian whose covariance stacks A (first dim_first
/// coordinates) over B.
double gaussian_mi_from_covariance(const Tensor& cov, std::size_t dim_first);

/// I(Z; X | X') for a covariance ordered (Z, X, X') with the given block sizes.
double gaussian_conditional_mi(const Tensor& cov, std::size_t dim_z, std::size_t dim_x, std::size_t dim_cond);

/// log det of a symmetric positive definite matrix; condition number must stay
/// below 1e12.
double spd_log_det(const Tensor& m);

inline constexpr double kMaxConditionNumber = 1e12;

/// Rows drawn from N(0, cov) through its Cholesky factor; row i uses stream
/// (seed, stream, first + i).
Tensor sample_multivariate_normal(const Tensor& cov, std::uint64_t seed, std::string_view stream,
                                  std::uint64_t first, std::size_t count);

PairedDataset gen_clustered_pairs(const ClusteredPairSpec& spec);

/// Samples [first, first + count) of a clustered stream; sample i belongs to
/// class i mod n_classes.
PairedDataset sample_clustered_pairs(const ClusteredPairSpec& spec, std::string_view stream, std::uint64_t first,
                                     std::size_t count);

/// Comma-separated reals, optional header (detected when the first line does
/// not parse as numbers). Labels file holds one integer per row.
PairedDataset load_paired_csv(const std::filesystem::path& path_v, const std::filesystem::path& path_t,
                              const std::optional<std::filesystem::path>& path_labels = std::nullopt);

/// Parses one CSV matrix file under the same dialect.
Tensor read_csv_matrix(const std::filesystem::path& path);

nlohmann::json dataset_manifest(const PairedDataset& ds);

}  // namespace cibr
