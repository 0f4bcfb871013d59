#include "cibr/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "cibr/config.hpp"
#include "cibr/errors.hpp"
#include "cibr/rng.hpp"

namespace cibr {

std::size_t DataSource::dim_v() const {
    switch (kind) {
        case Kind::gaussian: return gaussian.dim_v();
        case Kind::clustered: return clustered.total_dim_v();
        case Kind::csv: return heldout("eval", 0).xv.cols();
    }
    return 0;
}

std::size_t DataSource::dim_t() const {
    switch (kind) {
        case Kind::gaussian: return gaussian.dim_t();
        case Kind::clustered: return clustered.total_dim_t();
        case Kind::csv: return heldout("eval", 0).xt.cols();
    }
    return 0;
}

void DataSource::set_seed(std::uint64_t s) {
    seed = s;
    gaussian.seed = s;
    clustered.seed = s;
    pool_cache_.reset();
}

PairedDataset DataSource::heldout(std::string_view stream, std::size_t count) const {
    if (kind == Kind::csv) {
        if (!file_cache_) file_cache_ = load_paired_csv(csv.path_v, csv.path_t, csv.path_labels);
        return *file_cache_;
    }
    return sample(stream, 0, count);
}

namespace {

// `count` rows drawn with replacement from a finite set, keyed by stream.
PairedDataset draw_rows(const PairedDataset& all, std::uint64_t seed, std::string_view stream, std::uint64_t first,
                        std::size_t count) {
    if (all.size() == 0) throw ArityError("data file has no rows");
    StreamRng rng(seed, stream, first);
    std::vector<std::size_t> rows(count);
    for (auto& r : rows) r = rng.below(all.size());
    PairedDataset out;
    out.xv = select_rows(all.xv, rows);
    out.xt = select_rows(all.xt, rows);
    if (all.labels) {
        std::vector<int> labels(count);
        for (std::size_t i = 0; i < count; ++i) labels[i] = (*all.labels)[rows[i]];
        out.labels = std::move(labels);
    }
    out.n_classes = all.n_classes;
    out.provenance = all.provenance;
    return out;
}

}  // namespace

PairedDataset DataSource::sample(std::string_view stream, std::uint64_t first, std::size_t count) const {
    if (kind != Kind::csv && train_pool > 0 && stream == "train") {
        if (!pool_cache_) pool_cache_ = generate("train", 0, train_pool);
        return draw_rows(*pool_cache_, seed, "train-pool", first, count);
    }
    if (kind == Kind::csv) return draw_rows(heldout(stream, 0), seed, stream, first, count);
    return generate(stream, first, count);
}

PairedDataset DataSource::generate(std::string_view stream, std::uint64_t first, std::size_t count) const {
    switch (kind) {
        case Kind::gaussian: return sample_gaussian_pairs(gaussian, stream, first, count);
        case Kind::clustered: return sample_clustered_pairs(clustered, stream, first, count);
        case Kind::csv: break;
    }
    throw ConfigError("unknown data source kind");
}

void RunConfig::validate() const {
    loss.validate();
    if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative, got " + std::to_string(lambda));
    if (!(beta >= 0.0)) throw ConfigError("beta must be non-negative, got " + std::to_string(beta));
    if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
    if (steps < 1) throw ConfigError("steps must be at least 1");
    if (critic_steps < 1) throw ConfigError("critic_steps must be at least 1");
    if (!(lr_encoder > 0.0) || !(lr_critic > 0.0)) throw ConfigError("learning rates must be positive");
    if (!(ema_decay > 0.0 && ema_decay < 1.0)) {
        throw ConfigError("ema_decay must lie in (0, 1), got " + std::to_string(ema_decay));
    }
    if (embed_dim == 0) throw ConfigError("embed_dim must be positive");
    if (final_window == 0) throw ConfigError("final_window must be positive");
    if (eval.ks.empty()) throw ConfigError("eval.ks must not be empty");
    if (eval.n_samples < 1) throw ConfigError("eval.n_samples must be positive");
    if (data.kind == DataSource::Kind::gaussian) data.gaussian.validate();
    if (data.kind == DataSource::Kind::clustered) data.clustered.validate();
}

namespace {

MlpSpec make_spec(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
    MlpSpec spec;
    spec.layer_dims.push_back(in);
    spec.layer_dims.insert(spec.layer_dims.end(), hidden.begin(), hidden.end());
    spec.layer_dims.push_back(out);
    spec.validate();
    return spec;
}

}  // namespace

MlpSpec RunConfig::encoder_v_spec() const { return make_spec(data.dim_v(), encoder_hidden, embed_dim); }
MlpSpec RunConfig::encoder_t_spec() const { return make_spec(data.dim_t(), encoder_hidden, embed_dim); }
MlpSpec RunConfig::critic_spec(std::size_t in_a, std::size_t in_b) const {
    return make_spec(in_a + in_b, critic_hidden, 1);
}

MiCritic make_critic(std::string id, const MlpSpec& spec, std::uint64_t seed, const AdamHyper& hyper) {
    MiCritic c;
    c.id = std::move(id);
    c.params = init_mlp(spec, seed);
    c.adam = init_adam(c.params, hyper);
    return c;
}

double critic_update(MiCritic& critic, const Tensor& a, const Tensor& b, double ema_decay, const LossConfig& cfg) {
    if (!(ema_decay > 0.0 && ema_decay < 1.0)) {
        throw ConfigError("ema_decay must lie in (0, 1), got " + std::to_string(ema_decay));
    }
    if (a.rows() < 2) throw InsufficientSampleError("critic update needs a batch of at least 2");
    Tape tape;
    MlpVars net = bind_mlp(tape, critic.params, true);
    CriticScores scores = critic_scores(net, tape.constant(a), tape.constant(b));
    const DvTerm dv = dv_mi_estimate(scores.joint, scores.marginal, cfg, critic.id);
    if (!std::isfinite(dv.estimate.value_nats)) {
        throw DivergenceError("critic " + critic.id + " produced a non-finite DV value");
    }

    Var joint = clamp(scores.joint, -cfg.clamp_T, cfg.clamp_T);
    Var marginal = clamp(scores.marginal, -cfg.clamp_T, cfg.clamp_T);
    Var partition = mean(exp(marginal));
    const double batch_partition = partition.value().item();
    if (critic.ema_ready) {
        critic.ema = ema_decay * critic.ema + (1.0 - ema_decay) * batch_partition;
    } else {
        critic.ema = batch_partition;
        critic.ema_ready = true;
    }
    // d/dtheta log E[e^T] ~ E[e^T dT] / ema
    Var surrogate = sub(scale(partition, 1.0 / critic.ema), mean(joint));
    tape.backward(surrogate);
    adam_step(critic.params, collect_grads(tape, net, critic.params), critic.adam, critic.id);
    return dv.estimate.value_nats;
}

MIEstimate critic_estimate(const MiCritic& critic, const Tensor& a, const Tensor& b, const LossConfig& cfg) {
    Tape tape;
    MlpVars net = bind_mlp(tape, critic.params, false);
    return critic_dv_estimate(net, tape.constant(a), tape.constant(b), cfg, critic.id).estimate;
}

EncoderPair make_encoders(const RunConfig& cfg) {
    EncoderPair enc;
    enc.v = init_mlp(cfg.encoder_v_spec(), derive_seed(cfg.seed, "enc_v"));
    enc.t = init_mlp(cfg.encoder_t_spec(), derive_seed(cfg.seed, "enc_t"));
    const AdamHyper hyper{cfg.lr_encoder};
    enc.adam_v = init_adam(enc.v, hyper);
    enc.adam_t = init_adam(enc.t, hyper);
    return enc;
}

CriticSet make_critics(const RunConfig& cfg) {
    const std::size_t dv = cfg.data.dim_v();
    const std::size_t dt = cfg.data.dim_t();
    const std::size_t dz = cfg.embed_dim;
    const AdamHyper hyper{cfg.lr_critic};
    auto make = [&](const char* id, std::size_t in_a, std::size_t in_b) {
        return make_critic(id, cfg.critic_spec(in_a, in_b), derive_seed(cfg.seed, std::string("critic:") + id), hyper);
    };
    return CriticSet{make("zv_xv|xt.with_cond", dz, dv + dt), make("zv_xv|xt.cond_only", dz, dt),
                     make("zt_xt|xv.with_cond", dz, dt + dv), make("zt_xt|xv.cond_only", dz, dv),
                     make("zv_zt", dz, dz)};
}

Embeddings embed(const EncoderPair& enc, const PairedDataset& batch) {
    return {row_l2_normalized(mlp_forward(enc.v, batch.xv)), row_l2_normalized(mlp_forward(enc.t, batch.xt))};
}

void critic_round(CriticSet& critics, const EncoderPair& enc, const PairedDataset& batch, const RunConfig& cfg) {
    const Embeddings z = embed(enc, batch);
    const double decay = cfg.ema_decay;
    critic_update(critics.v_with_cond, z.zv, hconcat(batch.xv, batch.xt), decay, cfg.loss);
    critic_update(critics.v_cond_only, z.zv, batch.xt, decay, cfg.loss);
    critic_update(critics.t_with_cond, z.zt, hconcat(batch.xt, batch.xv), decay, cfg.loss);
    critic_update(critics.t_cond_only, z.zt, batch.xv, decay, cfg.loss);
    critic_update(critics.zv_zt, z.zv, z.zt, decay, cfg.loss);
}

StepRecord encoder_update(EncoderPair& enc, const CriticSet* critics, const PairedDataset& batch,
                          const RunConfig& cfg) {
    using Clock = std::chrono::steady_clock;
    const auto start = Clock::now();
    if (!critics && !cfg.clip_only) throw ConfigError("encoder_update needs critics unless clip_only is set");

    Tape tape;
    MlpVars net_v = bind_mlp(tape, enc.v, true);
    MlpVars net_t = bind_mlp(tape, enc.t, true);
    Var xv = tape.constant(batch.xv);
    Var xt = tape.constant(batch.xt);
    Var zv = mlp_forward(net_v, xv);
    Var zt = mlp_forward(net_t, xt);

    StepRecord rec;
    Var loss;
    if (cfg.clip_only) {
        loss = info_nce_loss(cosine_similarity_matrix(zv, zt), cfg.loss);
        rec.clip_loss = loss.value().item();
        rec.total_loss = rec.clip_loss;
    } else {
        CibrCritics frozen{
            {bind_mlp(tape, critics->v_with_cond.params, false), bind_mlp(tape, critics->v_cond_only.params, false)},
            {bind_mlp(tape, critics->t_with_cond.params, false), bind_mlp(tape, critics->t_cond_only.params, false)},
            bind_mlp(tape, critics->zv_zt.params, false)};
        CibrLoss l = cibr_total_loss({zv, zt, xv, xt}, frozen, cfg.lambda, cfg.beta, cfg.loss);
        loss = l.total;
        rec.clip_loss = l.clip.value().item();
        rec.regularizer_v = l.diagnostics.i_zv_xv_given_xt;
        rec.regularizer_t = l.diagnostics.i_zt_xt_given_xv;
        rec.total_loss = l.total.value().item();
        rec.i_zv_zt = l.diagnostics.i_zv_zt;
    }
    if (!std::isfinite(rec.total_loss)) throw DivergenceError("encoder loss is not finite");

    tape.backward(loss);
    adam_step(enc.v, collect_grads(tape, net_v, enc.v), enc.adam_v, "encoder_v");
    adam_step(enc.t, collect_grads(tape, net_t, enc.t), enc.adam_t, "encoder_t");
    rec.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    return rec;
}

FinalMetrics final_metrics(const std::vector<StepRecord>& records, std::size_t window) {
    FinalMetrics m;
    if (records.empty()) return m;
    const std::size_t n = std::min(window, records.size());
    for (std::size_t i = records.size() - n; i < records.size(); ++i) {
        m.clip_loss += records[i].clip_loss;
        m.reg_v += records[i].regularizer_v;
        m.reg_t += records[i].regularizer_t;
        m.total_loss += records[i].total_loss;
        m.i_zv_zt += records[i].i_zv_zt;
    }
    const double d = static_cast<double>(n);
    m.clip_loss /= d;
    m.reg_v /= d;
    m.reg_t /= d;
    m.total_loss /= d;
    m.i_zv_zt /= d;
    return m;
}

namespace {

std::string format_record(const StepRecord& r) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "step %zu (clip_loss %.6g, reg_v %.6g, reg_t %.6g, total %.6g)", r.step,
                  r.clip_loss, r.regularizer_v, r.regularizer_t, r.total_loss);
    return buf;
}

nlohmann::json metrics_json(const FinalMetrics& m) {
    return {{"clip_loss", m.clip_loss}, {"reg_v", m.reg_v},       {"reg_t", m.reg_t},
            {"total_loss", m.total_loss}, {"i_zv_zt", m.i_zv_zt}};
}

}  // namespace

RunResult run_training(const RunConfig& cfg, const StepCallback& on_step) {
    cfg.validate();
    RunResult result;
    result.encoders = make_encoders(cfg);
    if (!cfg.clip_only) result.critics = make_critics(cfg);

    const std::size_t n = cfg.batch_size;
    const std::size_t k = cfg.critic_steps;
    result.records.reserve(cfg.steps);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        const std::uint64_t base = static_cast<std::uint64_t>(step) * (k + 1);
        try {
            if (result.critics) {
                for (std::size_t j = 0; j < k; ++j) {
                    critic_round(*result.critics, result.encoders, cfg.data.sample("train", (base + j) * n, n), cfg);
                }
            }
            StepRecord rec =
                encoder_update(result.encoders, result.critics ? &*result.critics : nullptr,
                               cfg.data.sample("train", (base + k) * n, n), cfg);
            rec.step = step + 1;
            result.records.push_back(rec);
            if (on_step) on_step(rec);
        } catch (const DivergenceError& e) {
            std::string msg = "diverged at step " + std::to_string(step + 1) + ": " + e.what();
            msg += result.records.empty() ? "; no finite record yet"
                                          : "; last finite record " + format_record(result.records.back());
            throw DivergenceError(msg);
        }
    }

    result.final = final_metrics(result.records, cfg.final_window);
    const nlohmann::json config = to_json(cfg);
    result.manifest = {
        {"format", "cibr-run-manifest"},
        {"version", 1},
        {"library_version", kLibraryVersion},
        {"seed", cfg.seed},
        {"config_hash", config_hash(config)},
        {"config", config},
        {"steps", result.records.size()},
        {"final_window", std::min(cfg.final_window, result.records.size())},
        {"final_metrics", metrics_json(result.final)},
    };
    return result;
}

EvalOutcome evaluate_encoders(const RunConfig& cfg, const MlpParams& enc_v, const MlpParams& enc_t,
                              std::optional<Direction> direction) {
    const std::size_t dv = cfg.data.dim_v();
    const std::size_t dt = cfg.data.dim_t();
    if (enc_v.spec.in_dim() != dv || enc_t.spec.in_dim() != dt) {
        throw DimensionError("encoders expect input dims (" + std::to_string(enc_v.spec.in_dim()) + ", " +
                             std::to_string(enc_t.spec.in_dim()) + ") but data has (" + std::to_string(dv) + ", " +
                             std::to_string(dt) + ")");
    }
    if (enc_v.spec.out_dim() != enc_t.spec.out_dim()) {
        throw DimensionError("encoder embedding dims differ: " + std::to_string(enc_v.spec.out_dim()) + " vs " +
                             std::to_string(enc_t.spec.out_dim()));
    }
    const PairedDataset ev = cfg.data.heldout("eval", cfg.eval.n_samples);
    const Tensor zv = mlp_forward(enc_v, ev.xv);
    const Tensor zt = mlp_forward(enc_t, ev.xt);
    const Direction dir = direction.value_or(cfg.eval.direction);

    EvalOutcome out;
    out.retrieval = dir == Direction::t2v ? retrieval_recall(zt, zv, cfg.eval.ks, dir)
                                          : retrieval_recall(zv, zt, cfg.eval.ks, dir);
    if (ev.labels) {
        const PairedDataset proto = cfg.data.heldout("proto", cfg.eval.n_samples);
        const Tensor prototypes = build_prototypes(mlp_forward(enc_t, proto.xt), *proto.labels, ev.n_classes);
        out.classification = prototype_classify(zv, prototypes, *ev.labels);
    }
    return out;
}

std::vector<SweepRow> sweep_lambda(const RunConfig& base, const std::vector<double>& lambdas,
                                   const std::function<void(double)>& on_start) {
    if (lambdas.empty()) throw ConfigError("lambda sweep needs at least one value");
    for (double l : lambdas) {
        if (!(l >= 0.0)) throw ConfigError("lambda values must be non-negative, got " + std::to_string(l));
    }
    std::vector<double> ordered = lambdas;
    std::stable_sort(ordered.begin(), ordered.end());
    std::vector<SweepRow> rows;
    for (double l : ordered) {
        if (on_start) on_start(l);
        RunConfig cfg = base;
        cfg.lambda = l;
        if (std::find(cfg.eval.ks.begin(), cfg.eval.ks.end(), 1) == cfg.eval.ks.end()) cfg.eval.ks.push_back(1);
        try {
            const RunResult run = run_training(cfg);
            const EvalOutcome ev = evaluate_encoders(cfg, run.encoders.v, run.encoders.t);
            SweepRow row;
            row.lambda = l;
            row.recall_at_1 = ev.retrieval.recall_at.at(1);
            if (ev.classification) row.accuracy = ev.classification->accuracy;
            row.reg_v = run.final.reg_v;
            row.reg_t = run.final.reg_t;
            row.i_zv_zt = run.final.i_zv_zt;
            rows.push_back(row);
        } catch (const DivergenceError& e) {
            throw DivergenceError("lambda=" + std::to_string(l) + ": " + e.what());
        } catch (const ConfigError& e) {
            throw ConfigError("lambda=" + std::to_string(l) + ": " + e.what());
        }
    }
    return rows;
}

namespace {

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void write_step_csv(const std::filesystem::path& path, const std::vector<StepRecord>& records) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write step log " + path.string());
    out << "step,clip_loss,reg_v,reg_t,total_loss,i_zv_zt,wall_ms\n";
    for (const auto& r : records) {
        out << r.step << ',' << fmt17(r.clip_loss) << ',' << fmt17(r.regularizer_v) << ',' << fmt17(r.regularizer_t)
            << ',' << fmt17(r.total_loss) << ',' << fmt17(r.i_zv_zt) << ',' << fmt17(r.wall_ms) << '\n';
    }
    if (!out) throw IoError("failed writing step log " + path.string());
}

void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write sweep table " + path.string());
    out << "lambda,recall_at_1,accuracy,reg_v,reg_t,i_zv_zt\n";
    for (const auto& r : rows) {
        out << fmt17(r.lambda) << ',' << fmt17(r.recall_at_1) << ',' << (r.accuracy ? fmt17(*r.accuracy) : "")
            << ',' << fmt17(r.reg_v) << ',' << fmt17(r.reg_t) << ',' << fmt17(r.i_zv_zt) << '\n';
    }
    if (!out) throw IoError("failed writing sweep table " + path.string());
}

void EstimatorConfig::validate() const {
    loss.validate();
    if (!(lr > 0.0)) throw ConfigError("estimator lr must be positive");
    if (batch_size < 2) throw ConfigError("estimator batch_size must be at least 2");
    if (steps < 1) throw ConfigError("estimator steps must be at least 1");
    if (eval_samples < 2) throw ConfigError("estimator eval_samples must be at least 2");
    if (!(ema_decay > 0.0 && ema_decay < 1.0)) throw ConfigError("estimator ema_decay must lie in (0, 1)");
}

MIEstimate train_mi_estimate(const PairSampler& sampler, const EstimatorConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const std::size_t n = cfg.batch_size;
    auto [a0, b0] = sampler("train", 0, n);
    MlpSpec spec = make_spec(a0.cols() + b0.cols(), cfg.hidden, 1);
    MiCritic critic = make_critic("mi", spec, derive_seed(seed, "critic:mi"), AdamHyper{cfg.lr});
    critic_update(critic, a0, b0, cfg.ema_decay, cfg.loss);
    for (std::size_t s = 1; s < cfg.steps; ++s) {
        auto [a, b] = sampler("train", s * n, n);
        critic_update(critic, a, b, cfg.ema_decay, cfg.loss);
    }
    auto [ea, eb] = sampler("eval", 0, cfg.eval_samples);
    return critic_estimate(critic, ea, eb, cfg.loss);
}

MIEstimate train_conditional_mi_estimate(const TripleSampler& sampler, const EstimatorConfig& cfg,
                                         std::uint64_t seed) {
    cfg.validate();
    const std::size_t n = cfg.batch_size;
    TripleSample first = sampler("train", 0, n);
    const std::size_t dz = first.z.cols();
    const std::size_t dx = first.x.cols();
    const std::size_t dc = first.x_cond.cols();
    const AdamHyper hyper{cfg.lr};
    MiCritic with_cond = make_critic("cond.with_cond", make_spec(dz + dx + dc, cfg.hidden, 1),
                                     derive_seed(seed, "critic:cond.with_cond"), hyper);
    MiCritic cond_only = make_critic("cond.cond_only", make_spec(dz + dc, cfg.hidden, 1),
                                     derive_seed(seed, "critic:cond.cond_only"), hyper);
    for (std::size_t s = 0; s < cfg.steps; ++s) {
        TripleSample b = s == 0 ? std::move(first) : sampler("train", s * n, n);
        critic_update(with_cond, b.z, hconcat(b.x, b.x_cond), cfg.ema_decay, cfg.loss);
        critic_update(cond_only, b.z, b.x_cond, cfg.ema_decay, cfg.loss);
    }
    TripleSample e = sampler("eval", 0, cfg.eval_samples);
    Tape tape;
    ConditionalCritics critics{bind_mlp(tape, with_cond.params, false), bind_mlp(tape, cond_only.params, false)};
    return conditional_mi_estimate(tape.constant(e.z), tape.constant(e.x), tape.constant(e.x_cond), critics,
                                   cfg.loss, "cond")
        .estimate;
}

MiReport estimate_source_mi(const DataSource& data, const EstimatorConfig& cfg, std::uint64_t seed) {
    PairSampler sampler = [&data](std::string_view stream, std::uint64_t first, std::size_t count) {
        PairedDataset ds = (data.kind == DataSource::Kind::csv && stream == "eval")
                               ? data.heldout(stream, count)
                               : data.sample(stream, first, count);
        return std::pair<Tensor, Tensor>{std::move(ds.xv), std::move(ds.xt)};
    };
    MiReport report;
    report.estimate = train_mi_estimate(sampler, cfg, seed);
    if (data.kind == DataSource::Kind::gaussian) report.oracle_nats = gaussian_mi(data.gaussian);
    return report;
}

}  // namespace cibr
