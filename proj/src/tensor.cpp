#include "cibr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cibr/errors.hpp"

namespace cibr {

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        std::ostringstream os;
        os << "tensor data length " << data_.size() << " does not match shape [" << rows_ << "x"
           << cols_ << "]";
        throw DimensionError(os.str());
    }
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t(n, n);
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionError("ragged rows in Tensor::from_rows");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor(r, c, std::move(data));
}

Tensor Tensor::column(std::initializer_list<double> values) {
    return Tensor(values.size(), 1, std::vector<double>(values));
}

double Tensor::item() const {
    if (rows_ != 1 || cols_ != 1) {
        throw RankError("item() requires a 1x1 tensor, got " + shape_string());
    }
    return data_[0];
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_string() const {
    return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
}

Tensor row_l2_normalized(const Tensor& m) {
    Tensor out(m.rows(), m.cols());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        double sq = 0.0;
        for (double v : m.row(r)) sq += v * v;
        const double norm = std::sqrt(sq);
        if (!(norm >= kDegenerateNorm)) {
            throw DegenerateEmbeddingError("row " + std::to_string(r) +
                                           " has near-zero norm; cannot normalize");
        }
        auto dst = out.row(r);
        auto src = m.row(r);
        for (std::size_t c = 0; c < m.cols(); ++c) dst[c] = src[c] / norm;
    }
    return out;
}

Tensor select_rows(const Tensor& m, std::span<const std::size_t> indices) {
    Tensor out(indices.size(), m.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= m.rows()) {
            throw DimensionError("row index " + std::to_string(indices[i]) + " out of range for " +
                                 m.shape_string());
        }
        std::copy_n(m.row(indices[i]).begin(), m.cols(), out.row(i).begin());
    }
    return out;
}

Tensor hconcat(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows()) {
        throw DimensionError("hconcat row mismatch: " + a.shape_string() + " vs " +
                             b.shape_string());
    }
    Tensor out(a.rows(), a.cols() + b.cols());
    for (std::size_t r = 0; r < a.rows(); ++r) {
        auto dst = out.row(r);
        std::copy_n(a.row(r).begin(), a.cols(), dst.begin());
        std::copy_n(b.row(r).begin(), b.cols(), dst.begin() + static_cast<std::ptrdiff_t>(a.cols()));
    }
    return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw DimensionError("max_abs_diff shape mismatch: " + a.shape_string() + " vs " +
                             b.shape_string());
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

}  // namespace cibr
