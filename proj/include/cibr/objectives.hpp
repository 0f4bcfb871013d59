#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "cibr/autodiff.hpp"
#include "cibr/nn.hpp"

namespace cibr {

struct LossConfig {
    double tau = 0.1;
    /// Average the v->t (rows) and t->v (columns) directions. false gives the
    /// one-directional form over rows only.
    bool symmetric = true;
    /// Critic outputs are clamped to [-clamp_T, clamp_T] before exponentiation.
    double clamp_T = 50.0;

    void validate() const;
};

struct MIEstimate {
    double value_nats = 0.0;
    std::size_t n_joint = 0;
    std::size_t n_marginal = 0;
    std::string critic_id;
};

/// Differentiable DV value together with its reported estimate.
struct DvTerm {
    Var value;
    MIEstimate estimate;
};

struct CIBDiagnostics {
    double beta = 0.0;
    double i_zv_zt = 0.0;
    double i_zv_xv_given_xt = 0.0;
    double i_zt_xt_given_xv = 0.0;
    double cib_value = 0.0;
};

/// S[i][j] = <zv_i/|zv_i|, zt_j/|zt_j|>.
Var cosine_similarity_matrix(Var zv, Var zt);

/// Contrastive loss over a square similarity matrix with temperature tau.
/// Rows are queries in the v->t direction; columns in the t->v direction.
Var info_nce_loss(Var s, const LossConfig& cfg);

/// Donsker-Varadhan bound: mean(T_joint) - log mean exp(T_marginal), with both
/// sides clamped to +-clamp_T. Both inputs are n x 1 columns with n >= 2.
DvTerm dv_mi_estimate(Var t_joint, Var t_marginal, const LossConfig& cfg, std::string critic_id = "dv");

/// Index map i -> (i + 1) mod n, a derangement for n >= 2. Used to draw
/// product-of-marginals samples from a batch.
std::vector<std::size_t> shift_derangement(std::size_t n);

/// Critic scores on joint rows [a_i | b_i] and on shifted rows [a_i | b_{i+1}].
struct CriticScores {
    Var joint;
    Var marginal;
};
CriticScores critic_scores(const MlpVars& critic, Var a, Var b);

DvTerm critic_dv_estimate(const MlpVars& critic, Var a, Var b, const LossConfig& cfg, std::string critic_id);

/// The two critics behind I(Z;X|X') = I(Z;X,X') - I(Z;X').
/// `with_cond` scores [z | x | x'], `cond_only` scores [z | x'].
struct ConditionalCritics {
    MlpVars with_cond;
    MlpVars cond_only;
};

struct ConditionalCriticParams {
    MlpParams with_cond;
    MlpParams cond_only;
};

ConditionalCritics bind_conditional(Tape& tape, const ConditionalCriticParams& params, bool trainable);

/// Chain-rule conditional MI estimate. z, x and x_cond must have the same row
/// count (AlignmentError otherwise).
DvTerm conditional_mi_estimate(Var z, Var x, Var x_cond, const ConditionalCritics& critics, const LossConfig& cfg,
                               std::string critic_id = "cond");

DvTerm conditional_mi_estimate(Var z, Var x, Var x_cond, const ConditionalCriticParams& critics,
                               const LossConfig& cfg, std::string critic_id = "cond");

/// Critics feeding the CIBR regularizer and the I(Zv;Zt) diagnostic, bound on
/// a tape (normally frozen).
struct CibrCritics {
    ConditionalCritics v;  // Zv against (Xv | Xt)
    ConditionalCritics t;  // Zt against (Xt | Xv)
    MlpVars zv_zt;
};

/// Raw encoder outputs plus the inputs they came from. Critics see the
/// row-normalized embeddings, the same ones the similarity matrix uses.
struct CibrBatch {
    Var zv;
    Var zt;
    Var xv;
    Var xt;
};

struct CibrLoss {
    Var total;
    Var clip;
    Var reg_v;
    Var reg_t;
    Var i_zv_zt;
    CIBDiagnostics diagnostics;
};

/// L_clip + lambda * (I(Zv;Xv|Xt) + I(Zt;Xt|Xv)). With lambda == 0 the returned
/// total is the clip node itself.
CibrLoss cibr_total_loss(const CibrBatch& batch, const CibrCritics& critics, double lambda, double beta,
                         const LossConfig& cfg);

/// Reported, never optimized. Joint information I(Xv,Xt;Zv,Zt) is approximated
/// as I(Zv;Xv|Xt) + I(Zt;Xt|Xv) + I(Zv;Zt).
double cib_objective(const CIBDiagnostics& diag);

/// IB Lagrangian I(X;Z) - beta * I(Z;Y) from two MI values.
double ib_objective(double i_x_z, double i_z_y, double beta);

}  // namespace cibr
