#include "cibr/data.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "cibr/errors.hpp"
#include "cibr/rng.hpp"

namespace cibr {

namespace {

using Matrix = Eigen::MatrixXd;

Matrix to_eigen(const Tensor& t) {
    Matrix m(static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
    for (std::size_t r = 0; r < t.rows(); ++r) {
        for (std::size_t c = 0; c < t.cols(); ++c) {
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = t(r, c);
        }
    }
    return m;
}

Tensor from_eigen(const Matrix& m) {
    Tensor t(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            t(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = m(r, c);
        }
    }
    return t;
}

double log_det_checked(const Matrix& m) {
    if (m.rows() == 0) return 0.0;
    if (!m.isApprox(m.transpose(), 1e-12)) throw IllConditionedError("covariance block is not symmetric");
    Eigen::SelfAdjointEigenSolver<Matrix> eig(m, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    if (!(lo > 0.0) || hi / lo > kMaxConditionNumber) {
        std::ostringstream os;
        os << "covariance block is ill-conditioned (eigenvalues in [" << lo << ", " << hi << "])";
        throw IllConditionedError(os.str());
    }
    Eigen::LLT<Matrix> llt(m);
    return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

Matrix principal_block(const Matrix& cov, const std::vector<Eigen::Index>& idx) {
    Matrix out(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) {
        for (std::size_t j = 0; j < idx.size(); ++j) {
            out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = cov(idx[i], idx[j]);
        }
    }
    return out;
}

std::vector<Eigen::Index> index_range(Eigen::Index begin, Eigen::Index count) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(count));
    for (Eigen::Index i = 0; i < count; ++i) idx[static_cast<std::size_t>(i)] = begin + i;
    return idx;
}

std::vector<Eigen::Index> join(std::vector<Eigen::Index> a, const std::vector<Eigen::Index>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

}  // namespace

GaussianPairSpec GaussianPairSpec::correlated(std::size_t dim_shared, double rho, std::size_t dim_v_noise,
                                              std::size_t dim_t_noise, std::size_t n_samples, std::uint64_t seed) {
    if (!(rho > -1.0 && rho < 1.0)) throw ConfigError("rho must lie in (-1, 1), got " + std::to_string(rho));
    const std::size_t dv = dim_shared + dim_v_noise;
    const std::size_t dt = dim_shared + dim_t_noise;
    GaussianPairSpec spec;
    spec.A = Tensor(dv, dim_shared);
    spec.B = Tensor(dt, dim_shared);
    spec.sigma_v.assign(dv, 1.0);
    spec.sigma_t.assign(dt, 1.0);
    const double load = std::sqrt(std::abs(rho));
    const double resid = std::sqrt(1.0 - std::abs(rho));
    for (std::size_t j = 0; j < dim_shared; ++j) {
        spec.A(j, j) = load;
        spec.B(j, j) = rho < 0.0 ? -load : load;
        spec.sigma_v[j] = resid;
        spec.sigma_t[j] = resid;
    }
    spec.n_samples = n_samples;
    spec.seed = seed;
    spec.dim_shared = dim_shared;
    spec.dim_v_noise = dim_v_noise;
    spec.dim_t_noise = dim_t_noise;
    spec.rho = rho;
    spec.from_rho = true;
    return spec;
}

GaussianPairSpec GaussianPairSpec::mixing(Tensor A, Tensor B, std::vector<double> sigma_v,
                                          std::vector<double> sigma_t, std::size_t n_samples, std::uint64_t seed) {
    GaussianPairSpec spec;
    spec.A = std::move(A);
    spec.B = std::move(B);
    spec.sigma_v = std::move(sigma_v);
    spec.sigma_t = std::move(sigma_t);
    spec.n_samples = n_samples;
    spec.seed = seed;
    spec.validate();
    return spec;
}

void GaussianPairSpec::validate() const {
    if (A.cols() != B.cols()) {
        throw ConfigError("mixing matrices disagree on latent dim: A " + A.shape_string() + ", B " +
                          B.shape_string());
    }
    if (sigma_v.size() != A.rows() || sigma_t.size() != B.rows()) {
        throw ConfigError("noise scale lengths must match modality dims");
    }
    if (A.rows() == 0 || B.rows() == 0) throw ConfigError("each modality needs at least one coordinate");
    if (!A.all_finite() || !B.all_finite()) throw ConfigError("mixing matrices contain non-finite entries");
    for (double s : sigma_v) {
        if (!(s >= 0.0) || !std::isfinite(s)) throw ConfigError("sigma_v entries must be finite and >= 0");
    }
    for (double s : sigma_t) {
        if (!(s >= 0.0) || !std::isfinite(s)) throw ConfigError("sigma_t entries must be finite and >= 0");
    }
}

Tensor GaussianPairSpec::joint_covariance() const {
    validate();
    const Matrix a = to_eigen(A);
    const Matrix b = to_eigen(B);
    Matrix stacked(a.rows() + b.rows(), a.cols());
    stacked << a, b;
    Matrix cov = stacked * stacked.transpose();
    for (std::size_t i = 0; i < sigma_v.size(); ++i) {
        cov(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) += sigma_v[i] * sigma_v[i];
    }
    for (std::size_t i = 0; i < sigma_t.size(); ++i) {
        const auto k = static_cast<Eigen::Index>(sigma_v.size() + i);
        cov(k, k) += sigma_t[i] * sigma_t[i];
    }
    return from_eigen(cov);
}

PairedDataset sample_gaussian_pairs(const GaussianPairSpec& spec, std::string_view stream, std::uint64_t first,
                                    std::size_t count) {
    spec.validate();
    const std::size_t dv = spec.dim_v();
    const std::size_t dt = spec.dim_t();
    const std::size_t dl = spec.dim_latent();
    PairedDataset ds;
    ds.xv = Tensor(count, dv);
    ds.xt = Tensor(count, dt);
    std::vector<double> s(dl);
    for (std::size_t i = 0; i < count; ++i) {
        StreamRng rng(spec.seed, stream, first + i);
        for (double& v : s) v = rng.normal();
        for (std::size_t r = 0; r < dv; ++r) {
            double acc = 0.0;
            for (std::size_t k = 0; k < dl; ++k) acc += spec.A(r, k) * s[k];
            ds.xv(i, r) = acc + spec.sigma_v[r] * rng.normal();
        }
        for (std::size_t r = 0; r < dt; ++r) {
            double acc = 0.0;
            for (std::size_t k = 0; k < dl; ++k) acc += spec.B(r, k) * s[k];
            ds.xt(i, r) = acc + spec.sigma_t[r] * rng.normal();
        }
    }
    ds.provenance = "gaussian:" + std::string(stream);
    ds.seed = spec.seed;
    return ds;
}

PairedDataset gen_gaussian_pairs(const GaussianPairSpec& spec) {
    return sample_gaussian_pairs(spec, "data", 0, spec.n_samples);
}

double spd_log_det(const Tensor& m) {
    if (m.rows() != m.cols()) throw DimensionError("log det of non-square " + m.shape_string());
    return log_det_checked(to_eigen(m));
}

double gaussian_mi_from_covariance(const Tensor& cov, std::size_t dim_first) {
    if (cov.rows() != cov.cols() || dim_first > cov.rows()) {
        throw DimensionError("bad covariance split " + std::to_string(dim_first) + " of " + cov.shape_string());
    }
    const Matrix m = to_eigen(cov);
    const auto n = m.rows();
    const auto k = static_cast<Eigen::Index>(dim_first);
    const double whole = log_det_checked(m);
    const double a = log_det_checked(m.topLeftCorner(k, k));
    const double b = log_det_checked(m.bottomRightCorner(n - k, n - k));
    return 0.5 * (a + b - whole);
}

double gaussian_mi(const GaussianPairSpec& spec) {
    return gaussian_mi_from_covariance(spec.joint_covariance(), spec.dim_v());
}

double gaussian_conditional_mi(const Tensor& cov, std::size_t dim_z, std::size_t dim_x, std::size_t dim_cond) {
    if (cov.rows() != cov.cols() || cov.rows() != dim_z + dim_x + dim_cond) {
        throw DimensionError("covariance " + cov.shape_string() + " does not match block sizes " +
                             std::to_string(dim_z) + "+" + std::to_string(dim_x) + "+" + std::to_string(dim_cond));
    }
    const Matrix m = to_eigen(cov);
    const auto z = index_range(0, static_cast<Eigen::Index>(dim_z));
    const auto x = index_range(static_cast<Eigen::Index>(dim_z), static_cast<Eigen::Index>(dim_x));
    const auto c = index_range(static_cast<Eigen::Index>(dim_z + dim_x), static_cast<Eigen::Index>(dim_cond));
    const double whole = log_det_checked(m);
    const double zc = log_det_checked(principal_block(m, join(z, c)));
    const double xc = log_det_checked(principal_block(m, join(x, c)));
    const double cc = log_det_checked(principal_block(m, c));
    return 0.5 * (zc + xc - cc - whole);
}

Tensor sample_multivariate_normal(const Tensor& cov, std::uint64_t seed, std::string_view stream,
                                  std::uint64_t first, std::size_t count) {
    if (cov.rows() != cov.cols()) throw DimensionError("covariance must be square, got " + cov.shape_string());
    const Matrix m = to_eigen(cov);
    Eigen::LLT<Matrix> llt(m);
    if (llt.info() != Eigen::Success) throw IllConditionedError("covariance is not positive definite");
    const Matrix L = llt.matrixL();
    const std::size_t d = cov.rows();
    Tensor out(count, d);
    std::vector<double> e(d);
    for (std::size_t i = 0; i < count; ++i) {
        StreamRng rng(seed, stream, first + i);
        for (double& v : e) v = rng.normal();
        for (std::size_t r = 0; r < d; ++r) {
            double acc = 0.0;
            for (std::size_t k = 0; k <= r; ++k) acc += L(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) * e[k];
            out(i, r) = acc;
        }
    }
    return out;
}

void ClusteredPairSpec::validate() const {
    if (n_classes < 2) throw ConfigError("clustered data needs at least 2 classes");
    if (dim_v == 0 || dim_t == 0) throw ConfigError("clustered modality dims must be positive");
    if (latent() < n_classes) throw ConfigError("dim_latent must be at least n_classes for full-rank prototypes");
    if (!(class_separation > 0.0) || !(noise_scale >= 0.0) || !(nuisance_scale >= 0.0)) {
        throw ConfigError("clustered scales must be non-negative (separation positive)");
    }
}

namespace {

struct ClusterGeometry {
    Tensor prototypes;  // n_classes x latent
    Tensor proj_v;      // dim_v x latent
    Tensor proj_t;      // dim_t x latent
};

ClusterGeometry cluster_geometry(const ClusteredPairSpec& spec) {
    const std::size_t L = spec.latent();
    const double unit = 1.0 / std::sqrt(static_cast<double>(L));
    ClusterGeometry g{Tensor(spec.n_classes, L), Tensor(spec.dim_v, L), Tensor(spec.dim_t, L)};
    StreamRng proto(spec.seed, "prototypes");
    for (double& v : g.prototypes.data()) v = spec.class_separation * unit * proto.normal();
    StreamRng pv(spec.seed, "proj_v");
    for (double& v : g.proj_v.data()) v = unit * pv.normal();
    StreamRng pt(spec.seed, "proj_t");
    for (double& v : g.proj_t.data()) v = unit * pt.normal();

    Eigen::FullPivLU<Matrix> lu(to_eigen(g.prototypes));
    if (lu.rank() < static_cast<Eigen::Index>(spec.n_classes)) {
        throw ConfigError("class prototype matrix is rank deficient; choose another seed");
    }
    return g;
}

}  // namespace

PairedDataset sample_clustered_pairs(const ClusteredPairSpec& spec, std::string_view stream, std::uint64_t first,
                                     std::size_t count) {
    spec.validate();
    const ClusterGeometry g = cluster_geometry(spec);
    const std::size_t L = spec.latent();
    PairedDataset ds;
    ds.xv = Tensor(count, spec.total_dim_v());
    ds.xt = Tensor(count, spec.total_dim_t());
    std::vector<int> labels(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint64_t idx = first + i;
        const std::size_t c = static_cast<std::size_t>(idx % spec.n_classes);
        labels[i] = static_cast<int>(c);
        StreamRng rng(spec.seed, stream, idx);
        auto p = g.prototypes.row(c);
        for (std::size_t r = 0; r < spec.dim_v; ++r) {
            double acc = 0.0;
            for (std::size_t k = 0; k < L; ++k) acc += g.proj_v(r, k) * p[k];
            ds.xv(i, r) = acc + spec.noise_scale * rng.normal();
        }
        for (std::size_t r = 0; r < spec.dim_t; ++r) {
            double acc = 0.0;
            for (std::size_t k = 0; k < L; ++k) acc += g.proj_t(r, k) * p[k];
            ds.xt(i, r) = acc + spec.noise_scale * rng.normal();
        }
        for (std::size_t r = 0; r < spec.nuisance_dims; ++r) {
            ds.xv(i, spec.dim_v + r) = spec.nuisance_scale * rng.normal();
        }
        for (std::size_t r = 0; r < spec.nuisance_dims; ++r) {
            ds.xt(i, spec.dim_t + r) = spec.nuisance_scale * rng.normal();
        }
    }
    ds.labels = std::move(labels);
    ds.n_classes = spec.n_classes;
    ds.provenance = "clustered:" + std::string(stream);
    ds.seed = spec.seed;
    return ds;
}

PairedDataset gen_clustered_pairs(const ClusteredPairSpec& spec) {
    return sample_clustered_pairs(spec, "data", 0, spec.n_classes * spec.n_per_class);
}

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split_cells(std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        cells.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos
                                                                                 : comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return cells;
}

bool parse_real(std::string_view cell, double& out) {
    if (cell.empty()) return false;
    if (cell.front() == '+') cell.remove_prefix(1);
    const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), out);
    return ec == std::errc() && ptr == cell.data() + cell.size();
}

struct CsvTable {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;
};

CsvTable read_table(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) lines.push_back(std::move(line));
    while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();

    std::size_t begin = 0;
    if (!lines.empty()) {
        double probe = 0.0;
        for (auto cell : split_cells(lines.front())) {
            if (!parse_real(cell, probe)) {
                begin = 1;  // header row
                break;
            }
        }
    }
    CsvTable table;
    for (std::size_t li = begin; li < lines.size(); ++li) {
        const std::size_t data_row = li - begin + 1;
        const auto cells = split_cells(lines[li]);
        if (table.rows == 0) {
            table.cols = cells.size();
        } else if (cells.size() != table.cols) {
            throw ParseError(path.string() + ": row " + std::to_string(data_row) + " has " +
                             std::to_string(cells.size()) + " cells, expected " + std::to_string(table.cols));
        }
        for (std::size_t c = 0; c < cells.size(); ++c) {
            double v = 0.0;
            if (!parse_real(cells[c], v)) {
                throw ParseError(path.string() + ": cannot parse '" + std::string(cells[c]) + "' at (" +
                                 std::to_string(data_row) + "," + std::to_string(c + 1) + ")");
            }
            table.values.push_back(v);
        }
        ++table.rows;
    }
    return table;
}

}  // namespace

Tensor read_csv_matrix(const std::filesystem::path& path) {
    CsvTable t = read_table(path);
    return Tensor(t.rows, t.cols, std::move(t.values));
}

PairedDataset load_paired_csv(const std::filesystem::path& path_v, const std::filesystem::path& path_t,
                              const std::optional<std::filesystem::path>& path_labels) {
    PairedDataset ds;
    ds.xv = read_csv_matrix(path_v);
    ds.xt = read_csv_matrix(path_t);
    if (ds.xv.rows() != ds.xt.rows()) {
        throw AlignmentError("paired files disagree on row count: " + path_v.string() + " has " +
                             std::to_string(ds.xv.rows()) + ", " + path_t.string() + " has " +
                             std::to_string(ds.xt.rows()));
    }
    ds.provenance = path_v.string() + "|" + path_t.string();
    if (path_labels) {
        const Tensor lab = read_csv_matrix(*path_labels);
        if (lab.cols() != 1) throw ParseError(path_labels->string() + ": labels file must have one column");
        if (lab.rows() != ds.xv.rows()) {
            throw AlignmentError("labels file has " + std::to_string(lab.rows()) + " rows, features have " +
                                 std::to_string(ds.xv.rows()));
        }
        std::vector<int> labels(lab.rows());
        int max_label = -1;
        for (std::size_t i = 0; i < lab.rows(); ++i) {
            const double v = lab[i];
            if (v != std::floor(v) || v < 0) {
                throw ParseError(path_labels->string() + ": label at (" + std::to_string(i + 1) +
                                 ",1) is not a non-negative integer");
            }
            labels[i] = static_cast<int>(v);
            max_label = std::max(max_label, labels[i]);
        }
        ds.labels = std::move(labels);
        ds.n_classes = static_cast<std::size_t>(max_label + 1);
        ds.provenance += "|" + path_labels->string();
    }
    return ds;
}

nlohmann::json dataset_manifest(const PairedDataset& ds) {
    nlohmann::json j;
    j["provenance"] = ds.provenance;
    j["n"] = ds.size();
    j["dim_v"] = ds.xv.cols();
    j["dim_t"] = ds.xt.cols();
    j["labelled"] = ds.labels.has_value();
    if (ds.labels) j["n_classes"] = ds.n_classes;
    if (ds.seed) {
        j["seed"] = *ds.seed;
    } else {
        j["seed"] = nullptr;
    }
    return j;
}

}  // namespace cibr
