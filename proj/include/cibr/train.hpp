#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cibr/data.hpp"
#include "cibr/eval.hpp"
#include "cibr/nn.hpp"
#include "cibr/objectives.hpp"

namespace cibr {

inline constexpr const char* kLibraryVersion = "0.1.0";

struct CsvSource {
    std::filesystem::path path_v;
    std::filesystem::path path_t;
    std::optional<std::filesystem::path> path_labels;
};

/// Where training and evaluation samples come from.
struct DataSource {
    enum class Kind { gaussian, clustered, csv };

    Kind kind = Kind::gaussian;
    GaussianPairSpec gaussian = GaussianPairSpec::correlated(1, 0.9, 4, 4, 1000, 0);
    ClusteredPairSpec clustered;
    CsvSource csv;

    std::size_t dim_v() const;
    std::size_t dim_t() const;
    /// Row sampling seed for file sources.
    std::uint64_t seed = 0;
    /// Generated sources only: when positive, training batches are drawn with
    /// replacement from the first train_pool samples of the training stream
    /// instead of fresh samples. Held-out streams stay fresh.
    std::size_t train_pool = 0;

    bool labelled() const { return kind == Kind::clustered || (kind == Kind::csv && csv.path_labels); }
    /// Re-seeds generated sources; file sources ignore the seed.
    void set_seed(std::uint64_t seed);

    /// `count` samples of a named stream starting at `first`. File sources
    /// draw rows with replacement from a stream-keyed generator.
    PairedDataset sample(std::string_view stream, std::uint64_t first, std::size_t count) const;
    /// Held-out evaluation set: the stream for generated data, the whole file
    /// otherwise.
    PairedDataset heldout(std::string_view stream, std::size_t count) const;

private:
    PairedDataset generate(std::string_view stream, std::uint64_t first, std::size_t count) const;

    mutable std::optional<PairedDataset> file_cache_;
    mutable std::optional<PairedDataset> pool_cache_;
};

struct EvalOptions {
    std::size_t n_samples = 1000;
    std::vector<std::size_t> ks{1, 5, 10};
    Direction direction = Direction::t2v;
};

/// One experiment. Encoders are input -> encoder_hidden... -> embed_dim; every
/// critic is (its two input widths) -> critic_hidden... -> 1.
struct RunConfig {
    DataSource data;
    std::vector<std::size_t> encoder_hidden{64};
    std::size_t embed_dim = 32;
    std::vector<std::size_t> critic_hidden{128, 128};

    double lambda = 0.0;
    double beta = 1.0;
    LossConfig loss;
    std::size_t batch_size = 128;
    std::size_t steps = 1000;
    std::size_t critic_steps = 5;
    double lr_encoder = 1e-3;
    double lr_critic = 1e-3;
    double ema_decay = 0.99;
    /// Final metrics average the last `final_window` step records.
    std::size_t final_window = 50;
    /// Skip critics entirely: plain contrastive training.
    bool clip_only = false;
    std::uint64_t seed = 0;

    EvalOptions eval;

    void validate() const;
    MlpSpec encoder_v_spec() const;
    MlpSpec encoder_t_spec() const;
    MlpSpec critic_spec(std::size_t in_a, std::size_t in_b) const;
};

/// Statistics network T(a, b) with its optimizer and the running average of
/// the partition term E[exp T] on product-of-marginals samples.
struct MiCritic {
    std::string id;
    MlpParams params;
    AdamState adam;
    double ema = 0.0;
    bool ema_ready = false;
};

MiCritic make_critic(std::string id, const MlpSpec& spec, std::uint64_t seed, const AdamHyper& hyper);

/// One ascent step on the DV bound for samples (a_i, b_i). The log-partition
/// gradient is divided by the moving average instead of the batch mean.
/// Returns the DV value of the batch before the step.
double critic_update(MiCritic& critic, const Tensor& a, const Tensor& b, double ema_decay, const LossConfig& cfg);

/// DV estimate of a frozen critic on (a_i, b_i).
MIEstimate critic_estimate(const MiCritic& critic, const Tensor& a, const Tensor& b, const LossConfig& cfg);

struct EncoderPair {
    MlpParams v;
    MlpParams t;
    AdamState adam_v;
    AdamState adam_t;
};

EncoderPair make_encoders(const RunConfig& cfg);

struct CriticSet {
    MiCritic v_with_cond;  // Zv vs (Xv, Xt)
    MiCritic v_cond_only;  // Zv vs Xt
    MiCritic t_with_cond;  // Zt vs (Xt, Xv)
    MiCritic t_cond_only;  // Zt vs Xv
    MiCritic zv_zt;        // diagnostic
};

CriticSet make_critics(const RunConfig& cfg);

/// Normalized embeddings of a batch under the current encoders.
struct Embeddings {
    Tensor zv;
    Tensor zt;
};
Embeddings embed(const EncoderPair& enc, const PairedDataset& batch);

/// k-th critic pass of a step: every critic takes one update on `batch`.
void critic_round(CriticSet& critics, const EncoderPair& enc, const PairedDataset& batch, const RunConfig& cfg);

struct StepRecord {
    std::size_t step = 0;
    double clip_loss = 0.0;
    double regularizer_v = 0.0;
    double regularizer_t = 0.0;
    double total_loss = 0.0;
    double i_zv_zt = 0.0;
    double wall_ms = 0.0;
};

/// One descent step of both encoders on the CIBR loss with frozen critics.
/// `critics` may be null only when cfg.clip_only is set.
StepRecord encoder_update(EncoderPair& enc, const CriticSet* critics, const PairedDataset& batch,
                          const RunConfig& cfg);

struct FinalMetrics {
    double clip_loss = 0.0;
    double reg_v = 0.0;
    double reg_t = 0.0;
    double total_loss = 0.0;
    double i_zv_zt = 0.0;
};

FinalMetrics final_metrics(const std::vector<StepRecord>& records, std::size_t window);

struct RunResult {
    EncoderPair encoders;
    std::optional<CriticSet> critics;
    std::vector<StepRecord> records;
    FinalMetrics final;
    nlohmann::json manifest;
};

using StepCallback = std::function<void(const StepRecord&)>;

RunResult run_training(const RunConfig& cfg, const StepCallback& on_step = {});

struct EvalOutcome {
    RetrievalReport retrieval;
    std::optional<ClassificationReport> classification;
};

/// Retrieval on the "eval" held-out stream; prototype classification (when
/// labelled) with prototypes from the modality-t embeddings of a separate
/// "proto" held-out stream.
EvalOutcome evaluate_encoders(const RunConfig& cfg, const MlpParams& enc_v, const MlpParams& enc_t,
                              std::optional<Direction> direction = std::nullopt);

struct SweepRow {
    double lambda = 0.0;
    double recall_at_1 = 0.0;
    std::optional<double> accuracy;
    double reg_v = 0.0;
    double reg_t = 0.0;
    double i_zv_zt = 0.0;
};

/// Independent runs sharing the base seed, one per lambda, ordered by lambda.
std::vector<SweepRow> sweep_lambda(const RunConfig& base, const std::vector<double>& lambdas,
                                   const std::function<void(double)>& on_start = {});

void write_step_csv(const std::filesystem::path& path, const std::vector<StepRecord>& records);
void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows);

// Standalone estimation.

struct EstimatorConfig {
    std::vector<std::size_t> hidden{128, 128};
    double lr = 1e-3;
    std::size_t batch_size = 256;
    std::size_t steps = 2000;
    std::size_t eval_samples = 4096;
    double ema_decay = 0.99;
    LossConfig loss;

    void validate() const;
};

/// Draws aligned samples [first, first + count) of a named stream.
using PairSampler = std::function<std::pair<Tensor, Tensor>(std::string_view, std::uint64_t, std::size_t)>;

struct TripleSample {
    Tensor z;
    Tensor x;
    Tensor x_cond;
};
using TripleSampler = std::function<TripleSample(std::string_view, std::uint64_t, std::size_t)>;

/// Trains a critic on the "train" stream, then reports its DV value on
/// eval_samples rows of the "eval" stream.
MIEstimate train_mi_estimate(const PairSampler& sampler, const EstimatorConfig& cfg, std::uint64_t seed);

/// Chain-rule estimate of I(Z;X|X') with two critics trained side by side.
MIEstimate train_conditional_mi_estimate(const TripleSampler& sampler, const EstimatorConfig& cfg,
                                         std::uint64_t seed);

struct MiReport {
    MIEstimate estimate;
    std::optional<double> oracle_nats;
};

/// I(Xv; Xt) of a data source, with the closed form attached for Gaussian data.
MiReport estimate_source_mi(const DataSource& data, const EstimatorConfig& cfg, std::uint64_t seed);

}  // namespace cibr
