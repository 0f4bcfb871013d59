#include "cibr/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "cibr/errors.hpp"

namespace cibr {

const char* direction_name(Direction d) noexcept { return d == Direction::t2v ? "t2v" : "v2t"; }

Direction parse_direction(std::string_view s) {
    if (s == "t2v") return Direction::t2v;
    if (s == "v2t") return Direction::v2t;
    throw ConfigError("direction must be t2v or v2t, got '" + std::string(s) + "'");
}

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

}  // namespace

std::vector<std::size_t> retrieval_ranks(const Tensor& zq, const Tensor& zg) {
    if (zq.rows() == 0 || zg.rows() == 0) throw ArityError("retrieval on an empty set");
    if (zq.rows() != zg.rows()) {
        throw AlignmentError("retrieval needs aligned query/gallery rows: " + zq.shape_string() + " vs " +
                             zg.shape_string());
    }
    if (zq.cols() != zg.cols()) {
        throw DimensionError("query and gallery dims differ: " + zq.shape_string() + " vs " + zg.shape_string());
    }
    const Tensor q = row_l2_normalized(zq);
    const Tensor g = row_l2_normalized(zg);
    const std::size_t n = q.rows();
    std::vector<std::size_t> ranks(n);
    std::vector<double> sims(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) sims[j] = dot(q.row(i), g.row(j));
        const double target = sims[i];
        std::size_t rank = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (sims[j] > target || (sims[j] == target && j < i)) ++rank;
        }
        ranks[i] = rank;
    }
    return ranks;
}

RetrievalReport retrieval_recall(const Tensor& zq, const Tensor& zg, std::span<const std::size_t> ks,
                                 Direction direction) {
    if (ks.empty()) throw ConfigError("retrieval needs at least one k");
    const auto ranks = retrieval_ranks(zq, zg);
    RetrievalReport report;
    report.n_queries = ranks.size();
    report.direction = direction;
    for (std::size_t k : ks) {
        if (k == 0) throw ConfigError("recall@0 is undefined");
        const auto hits = std::count_if(ranks.begin(), ranks.end(), [k](std::size_t r) { return r < k; });
        report.recall_at[k] = static_cast<double>(hits) / static_cast<double>(ranks.size());
    }
    return report;
}

Tensor build_prototypes(const Tensor& zt, std::span<const int> labels, std::size_t n_classes) {
    if (labels.size() != zt.rows()) {
        throw AlignmentError("labels length " + std::to_string(labels.size()) + " vs " + std::to_string(zt.rows()) +
                             " embeddings");
    }
    Tensor sums(n_classes, zt.cols());
    std::vector<std::size_t> counts(n_classes, 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int c = labels[i];
        if (c < 0 || static_cast<std::size_t>(c) >= n_classes) {
            throw LabelError("label " + std::to_string(c) + " outside [0, " + std::to_string(n_classes) + ")");
        }
        auto dst = sums.row(static_cast<std::size_t>(c));
        auto src = zt.row(i);
        for (std::size_t k = 0; k < zt.cols(); ++k) dst[k] += src[k];
        ++counts[static_cast<std::size_t>(c)];
    }
    for (std::size_t c = 0; c < n_classes; ++c) {
        if (counts[c] == 0) throw CoverageError("class " + std::to_string(c) + " has no samples");
        for (double& v : sums.row(c)) v /= static_cast<double>(counts[c]);
    }
    return row_l2_normalized(sums);
}

ClassificationReport prototype_classify(const Tensor& zv, const Tensor& prototypes, std::span<const int> labels) {
    if (labels.size() != zv.rows()) {
        throw AlignmentError("labels length " + std::to_string(labels.size()) + " vs " + std::to_string(zv.rows()) +
                             " embeddings");
    }
    if (zv.cols() != prototypes.cols()) {
        throw DimensionError("embedding dim " + std::to_string(zv.cols()) + " vs prototype dim " +
                             std::to_string(prototypes.cols()));
    }
    const std::size_t C = prototypes.rows();
    const Tensor p = row_l2_normalized(prototypes);
    const Tensor z = row_l2_normalized(zv);
    ClassificationReport report;
    report.n_classes = C;
    report.confusion.assign(C, std::vector<std::size_t>(C, 0));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < z.rows(); ++i) {
        const int truth = labels[i];
        if (truth < 0 || static_cast<std::size_t>(truth) >= C) {
            throw LabelError("label " + std::to_string(truth) + " outside [0, " + std::to_string(C) + ")");
        }
        std::size_t best = 0;
        double best_sim = dot(z.row(i), p.row(0));
        for (std::size_t c = 1; c < C; ++c) {
            const double s = dot(z.row(i), p.row(c));
            if (s > best_sim) {
                best_sim = s;
                best = c;
            }
        }
        ++report.confusion[static_cast<std::size_t>(truth)][best];
        if (best == static_cast<std::size_t>(truth)) ++correct;
    }
    report.accuracy = z.rows() == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(z.rows());
    return report;
}

void export_embeddings(const Tensor& z, const std::vector<int>* labels, const std::filesystem::path& path) {
    if (labels && labels->size() != z.rows()) {
        throw AlignmentError("export: " + std::to_string(labels->size()) + " labels for " + std::to_string(z.rows()) +
                             " rows");
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write embeddings to " + path.string());
    for (std::size_t c = 0; c < z.cols(); ++c) out << (c ? "," : "") << "dim_" << c;
    if (labels) out << ",label";
    out << '\n';
    char buf[32];
    for (std::size_t r = 0; r < z.rows(); ++r) {
        for (std::size_t c = 0; c < z.cols(); ++c) {
            std::snprintf(buf, sizeof(buf), "%.17g", z(r, c));
            out << (c ? "," : "") << buf;
        }
        if (labels) out << ',' << (*labels)[r];
        out << '\n';
    }
    if (!out) throw IoError("failed writing embeddings to " + path.string());
}

nlohmann::json to_json(const RetrievalReport& r) {
    nlohmann::json recall = nlohmann::json::object();
    for (const auto& [k, v] : r.recall_at) recall[std::to_string(k)] = v;
    return {{"recall_at", recall}, {"n_queries", r.n_queries}, {"direction", direction_name(r.direction)}};
}

nlohmann::json to_json(const ClassificationReport& r) {
    return {{"accuracy", r.accuracy}, {"n_classes", r.n_classes}, {"confusion", r.confusion}};
}

}  // namespace cibr
