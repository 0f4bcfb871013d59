#include "cibr/objectives.hpp"

#include <cmath>

#include "cibr/errors.hpp"

namespace cibr {

void LossConfig::validate() const {
    if (!(tau > 0.0)) throw ConfigError("tau must be positive, got " + std::to_string(tau));
    if (!(clamp_T > 0.0)) throw ConfigError("clamp_T must be positive, got " + std::to_string(clamp_T));
}

Var cosine_similarity_matrix(Var zv, Var zt) {
    if (zv.cols() != zt.cols()) {
        throw DimensionError("cosine_similarity_matrix: embedding dims differ, " + zv.value().shape_string() +
                             " vs " + zt.value().shape_string());
    }
    return matmul(row_l2_normalize(zv), transpose(row_l2_normalize(zt)));
}

namespace {

// mean_i [ logsumexp_j L[i][j] - L[i][i] ]
Var directional_nce(Var logits) { return mean(sub(row_logsumexp(logits), diag(logits))); }

}  // namespace

Var info_nce_loss(Var s, const LossConfig& cfg) {
    cfg.validate();
    if (s.rows() != s.cols()) {
        throw DimensionError("info_nce_loss needs a square similarity matrix, got " + s.value().shape_string());
    }
    if (s.rows() == 0) throw ArityError("info_nce_loss on an empty batch");
    Var logits = scale(s, 1.0 / cfg.tau);
    Var rows = directional_nce(logits);
    if (!cfg.symmetric) return rows;
    Var cols = directional_nce(transpose(logits));
    return scale(add(rows, cols), 0.5);
}

DvTerm dv_mi_estimate(Var t_joint, Var t_marginal, const LossConfig& cfg, std::string critic_id) {
    cfg.validate();
    if (t_joint.rows() < 2 || t_marginal.rows() < 2) {
        throw InsufficientSampleError("DV estimate needs at least 2 joint and 2 marginal samples, got " +
                                      std::to_string(t_joint.rows()) + " and " + std::to_string(t_marginal.rows()));
    }
    if (t_joint.cols() != 1 || t_marginal.cols() != 1) {
        throw DimensionError("DV estimate expects n x 1 critic outputs, got " + t_joint.value().shape_string() +
                             " and " + t_marginal.value().shape_string());
    }
    Var joint = clamp(t_joint, -cfg.clamp_T, cfg.clamp_T);
    Var marginal = clamp(t_marginal, -cfg.clamp_T, cfg.clamp_T);
    Var value = sub(mean(joint), log_mean_exp(marginal));
    MIEstimate est{value.value().item(), t_joint.rows(), t_marginal.rows(), std::move(critic_id)};
    return {value, std::move(est)};
}

std::vector<std::size_t> shift_derangement(std::size_t n) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = (i + 1) % n;
    return idx;
}

CriticScores critic_scores(const MlpVars& critic, Var a, Var b) {
    if (a.rows() != b.rows()) {
        throw AlignmentError("critic inputs have " + std::to_string(a.rows()) + " and " + std::to_string(b.rows()) +
                             " rows");
    }
    Var joint = mlp_forward(critic, concat_cols(a, b));
    Var marginal = mlp_forward(critic, concat_cols(a, gather_rows(b, shift_derangement(b.rows()))));
    return {joint, marginal};
}

DvTerm critic_dv_estimate(const MlpVars& critic, Var a, Var b, const LossConfig& cfg, std::string critic_id) {
    CriticScores scores = critic_scores(critic, a, b);
    return dv_mi_estimate(scores.joint, scores.marginal, cfg, std::move(critic_id));
}

ConditionalCritics bind_conditional(Tape& tape, const ConditionalCriticParams& params, bool trainable) {
    return {bind_mlp(tape, params.with_cond, trainable), bind_mlp(tape, params.cond_only, trainable)};
}

DvTerm conditional_mi_estimate(Var z, Var x, Var x_cond, const ConditionalCritics& critics, const LossConfig& cfg,
                               std::string critic_id) {
    if (z.rows() != x.rows() || z.rows() != x_cond.rows()) {
        throw AlignmentError("conditional MI samples misaligned: z has " + std::to_string(z.rows()) + ", x has " +
                             std::to_string(x.rows()) + ", x_cond has " + std::to_string(x_cond.rows()) + " rows");
    }
    DvTerm full = critic_dv_estimate(critics.with_cond, z, concat_cols(x, x_cond), cfg, critic_id + ".with_cond");
    DvTerm cond = critic_dv_estimate(critics.cond_only, z, x_cond, cfg, critic_id + ".cond_only");
    Var value = sub(full.value, cond.value);
    MIEstimate est{value.value().item(), full.estimate.n_joint, full.estimate.n_marginal, std::move(critic_id)};
    return {value, std::move(est)};
}

DvTerm conditional_mi_estimate(Var z, Var x, Var x_cond, const ConditionalCriticParams& critics,
                               const LossConfig& cfg, std::string critic_id) {
    return conditional_mi_estimate(z, x, x_cond, bind_conditional(z.tape(), critics, false), cfg,
                                   std::move(critic_id));
}

CibrLoss cibr_total_loss(const CibrBatch& batch, const CibrCritics& critics, double lambda, double beta,
                         const LossConfig& cfg) {
    if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative, got " + std::to_string(lambda));
    if (!(beta >= 0.0)) throw ConfigError("beta must be non-negative, got " + std::to_string(beta));

    CibrLoss out;
    out.clip = info_nce_loss(cosine_similarity_matrix(batch.zv, batch.zt), cfg);

    Var zv_hat = row_l2_normalize(batch.zv);
    Var zt_hat = row_l2_normalize(batch.zt);
    DvTerm reg_v = conditional_mi_estimate(zv_hat, batch.xv, batch.xt, critics.v, cfg, "zv_xv|xt");
    DvTerm reg_t = conditional_mi_estimate(zt_hat, batch.xt, batch.xv, critics.t, cfg, "zt_xt|xv");
    DvTerm shared = critic_dv_estimate(critics.zv_zt, zv_hat, zt_hat, cfg, "zv_zt");
    out.reg_v = reg_v.value;
    out.reg_t = reg_t.value;
    out.i_zv_zt = shared.value;

    out.total = lambda == 0.0 ? out.clip : add(out.clip, scale(add(out.reg_v, out.reg_t), lambda));

    auto& d = out.diagnostics;
    d.beta = beta;
    d.i_zv_zt = shared.estimate.value_nats;
    d.i_zv_xv_given_xt = reg_v.estimate.value_nats;
    d.i_zt_xt_given_xv = reg_t.estimate.value_nats;
    d.cib_value = cib_objective(d);
    return out;
}

double cib_objective(const CIBDiagnostics& diag) {
    const double joint = diag.i_zv_xv_given_xt + diag.i_zt_xt_given_xv + diag.i_zv_zt;
    return joint - diag.beta * diag.i_zv_zt;
}

double ib_objective(double i_x_z, double i_z_y, double beta) { return i_x_z - beta * i_z_y; }

}  // namespace cibr
