#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cibr/tensor.hpp"

namespace cibr {

/// t2v: text queries against an image gallery (the default).
enum class Direction { t2v, v2t };

const char* direction_name(Direction d) noexcept;
Direction parse_direction(std::string_view s);

struct RetrievalReport {
    std::map<std::size_t, double> recall_at;
    std::size_t n_queries = 0;
    Direction direction = Direction::t2v;
};

struct ClassificationReport {
    double accuracy = 0.0;
    std::size_t n_classes = 0;
    std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

/// Zero-based rank of gallery row i among all gallery rows for query i, by
/// descending cosine similarity with ties going to the lower gallery index.
std::vector<std::size_t> retrieval_ranks(const Tensor& zq, const Tensor& zg);

RetrievalReport retrieval_recall(const Tensor& zq, const Tensor& zg, std::span<const std::size_t> ks,
                                 Direction direction = Direction::t2v);

/// Row c is the normalized mean of the zt rows labelled c.
Tensor build_prototypes(const Tensor& zt, std::span<const int> labels, std::size_t n_classes);

ClassificationReport prototype_classify(const Tensor& zv, const Tensor& prototypes, std::span<const int> labels);

/// CSV with header dim_0..dim_{d-1}[,label], values at 17 significant digits.
void export_embeddings(const Tensor& z, const std::vector<int>* labels, const std::filesystem::path& path);

nlohmann::json to_json(const RetrievalReport& r);
nlohmann::json to_json(const ClassificationReport& r);

}  // namespace cibr
