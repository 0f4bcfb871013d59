#include "cibr/gradcheck.hpp"

#include <cmath>
#include <exception>

#include "cibr/errors.hpp"
#include "cibr/nn.hpp"
#include "cibr/objectives.hpp"
#include "cibr/rng.hpp"

namespace cibr {

namespace {

Tensor uniform_tensor(std::size_t rows, std::size_t cols, StreamRng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(rows, cols);
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

// sum(v * W) with fixed random W, so the upstream gradient is not uniform.
Var probe(Var v, const Tensor& w) { return sum(mul(v, v.tape().constant(w))); }

// Small weights and biases of magnitude `bias` with random sign: relu inputs
// stay near +-bias for bounded inputs, well clear of the kink.
MlpParams margin_mlp(const MlpSpec& spec, StreamRng& rng, double w_scale, double bias) {
    MlpParams p = init_mlp(spec, 0);
    for (std::size_t l = 0; l < spec.n_layers(); ++l) {
        for (auto& w : p.weights[l].data()) w = rng.uniform(-w_scale, w_scale);
        for (auto& b : p.biases[l].data()) b = rng.uniform() < 0.5 ? -bias : bias;
    }
    return p;
}

class CaseBuilder {
public:
    explicit CaseBuilder(std::uint64_t seed) : seed_(seed) {}

    // Fresh generator per case so adding a case never shifts the others.
    StreamRng rng(const std::string& name) const { return StreamRng(seed_, "gradcheck:" + name, 0); }

    void add(std::string name, std::size_t rows, std::size_t cols, ScalarFn f,
             std::function<bool(const Tensor&)> accept = {}) {
        cases.push_back(GradCase{std::move(name), rows, cols, std::move(f), std::move(accept)});
    }

    std::vector<GradCase> cases;

private:
    std::uint64_t seed_;
};

void add_op_cases(CaseBuilder& b) {
    {
        auto r = b.rng("matmul");
        Tensor c = uniform_tensor(4, 2, r), w = uniform_tensor(3, 2, r);
        Tensor c2 = uniform_tensor(2, 3, r), w2 = uniform_tensor(2, 4, r);
        b.add("matmul/lhs", 3, 4, [=](Tape& t, Var x) { return probe(matmul(x, t.constant(c)), w); });
        b.add("matmul/rhs", 3, 4, [=](Tape& t, Var x) { return probe(matmul(t.constant(c2), x), w2); });
    }
    {
        auto r = b.rng("binary");
        Tensor c = uniform_tensor(3, 3, r), w = uniform_tensor(3, 3, r);
        b.add("add", 3, 3, [=](Tape& t, Var x) { return probe(add(x, t.constant(c)), w); });
        b.add("sub/lhs", 3, 3, [=](Tape& t, Var x) { return probe(sub(x, t.constant(c)), w); });
        b.add("sub/rhs", 3, 3, [=](Tape& t, Var x) { return probe(sub(t.constant(c), x), w); });
        b.add("mul", 3, 3, [=](Tape& t, Var x) { return probe(mul(x, t.constant(c)), w); });
        b.add("mul/self", 3, 3, [=](Tape&, Var x) { return probe(mul(x, x), w); });
        b.add("exp", 3, 3, [=](Tape&, Var x) { return probe(exp(x), w); });
        b.add("log", 3, 3, [=](Tape& t, Var x) {
            return probe(log(add(x, t.constant(Tensor(3, 3, std::vector<double>(9, 1.5))))), w);
        });
        b.add("relu", 3, 3, [=](Tape&, Var x) { return probe(relu(x), w); });
        b.add("scale", 3, 3, [=](Tape&, Var x) { return probe(scale(x, -2.5), w); });
        b.add(
            "clamp", 3, 3, [=](Tape&, Var x) { return probe(clamp(x, -0.5, 0.5), w); },
            [](const Tensor& x) {
                for (double v : x.data()) {
                    if (std::abs(std::abs(v) - 0.5) < 0.05) return false;
                }
                return true;
            });
        b.add("transpose", 3, 3, [=](Tape&, Var x) { return probe(transpose(mul(x, x)), w); });
        b.add("sum", 3, 3, [=](Tape&, Var x) { return mul(sum(x), sum(mul(x, x))); });
        b.add("mean", 3, 3, [=](Tape&, Var x) { return mul(mean(x), mean(exp(x))); });
    }
    {
        auto r = b.rng("add_row");
        Tensor a = uniform_tensor(4, 3, r), w = uniform_tensor(4, 3, r), bias = uniform_tensor(1, 3, r);
        b.add("add_row/matrix", 4, 3, [=](Tape& t, Var x) { return probe(add_row(x, t.constant(bias)), w); });
        b.add("add_row/bias", 1, 3, [=](Tape& t, Var x) { return probe(add_row(t.constant(a), x), w); });
    }
    {
        auto r = b.rng("rowwise");
        Tensor w = uniform_tensor(4, 3, r), w1 = uniform_tensor(4, 1, r);
        b.add("row_l2_normalize", 4, 3, [=](Tape&, Var x) { return probe(row_l2_normalize(x), w); });
        b.add("row_logsumexp", 4, 3, [=](Tape&, Var x) { return probe(row_logsumexp(scale(x, 5.0)), w1); });
        b.add("log_mean_exp", 5, 1, [=](Tape&, Var x) { return log_mean_exp(scale(x, 3.0)); });
    }
    {
        auto r = b.rng("structural");
        Tensor w = uniform_tensor(4, 1, r), c = uniform_tensor(4, 2, r), w5 = uniform_tensor(4, 5, r);
        Tensor wg = uniform_tensor(5, 3, r);
        b.add("diag", 4, 4, [=](Tape&, Var x) { return probe(diag(mul(x, x)), w); });
        b.add("concat_cols/lhs", 4, 3, [=](Tape& t, Var x) { return probe(concat_cols(x, t.constant(c)), w5); });
        b.add("concat_cols/rhs", 4, 3, [=](Tape& t, Var x) { return probe(concat_cols(t.constant(c), x), w5); });
        b.add("gather_rows", 4, 3, [=](Tape&, Var x) { return probe(gather_rows(x, {2, 0, 2, 3, 1}), wg); });
    }
}

void add_mlp_cases(CaseBuilder& b) {
    for (const auto& dims : std::vector<std::vector<std::size_t>>{{3, 5, 2}, {3, 4, 2}, {3, 4, 4, 2}, {3, 4, 4, 4, 2}}) {
        std::string tag = "mlp_forward[";
        for (std::size_t i = 0; i < dims.size(); ++i) tag += (i ? "," : "") + std::to_string(dims[i]);
        tag += "]";
        auto r = b.rng(tag);
        const MlpSpec spec{dims};
        MlpParams params = init_mlp(spec, 7);
        for (auto& bias : params.biases) {
            for (auto& v : bias.data()) v = r.uniform(-0.3, 0.3);
        }
        Tensor w = uniform_tensor(2, spec.out_dim(), r);
        Tensor input = uniform_tensor(2, spec.in_dim(), r);
        b.add(tag + "/input", 2, spec.in_dim(), [=](Tape& t, Var x) {
            return probe(mlp_forward(bind_mlp(t, params, false), x), w);
        });
        const Tensor& w_shape = params.weights[0];
        b.add(tag + "/weight0", w_shape.rows(), w_shape.cols(), [=](Tape& t, Var x) {
            MlpVars net = bind_mlp(t, params, false);
            net.weights[0] = x;
            return probe(mlp_forward(net, t.constant(input)), w);
        });
        b.add(tag + "/bias0", 1, dims[1], [=](Tape& t, Var x) {
            MlpVars net = bind_mlp(t, params, false);
            net.biases[0] = x;
            return probe(mlp_forward(net, t.constant(input)), w);
        });
    }
}

void add_objective_cases(CaseBuilder& b) {
    {
        auto r = b.rng("cosine");
        Tensor other = uniform_tensor(4, 3, r), w = uniform_tensor(4, 4, r);
        b.add("cosine_similarity/zv", 4, 3,
              [=](Tape& t, Var x) { return probe(cosine_similarity_matrix(x, t.constant(other)), w); });
        b.add("cosine_similarity/zt", 4, 3,
              [=](Tape& t, Var x) { return probe(cosine_similarity_matrix(t.constant(other), x), w); });
    }
    {
        LossConfig sym, asym;
        asym.symmetric = false;
        b.add("info_nce/symmetric", 4, 4, [=](Tape&, Var x) { return info_nce_loss(x, sym); });
        b.add("info_nce/rows_only", 4, 4, [=](Tape&, Var x) { return info_nce_loss(x, asym); });
        LossConfig warm;
        warm.tau = 1.0;
        b.add("info_nce/tau1", 5, 5, [=](Tape&, Var x) { return info_nce_loss(x, warm); });
    }
    {
        auto r = b.rng("dv");
        Tensor other = uniform_tensor(5, 1, r, -2.0, 2.0);
        LossConfig cfg;
        b.add("dv_mi_estimate/joint", 5, 1, [=](Tape& t, Var x) {
            return dv_mi_estimate(scale(x, 2.0), t.constant(other), cfg).value;
        });
        b.add("dv_mi_estimate/marginal", 5, 1, [=](Tape& t, Var x) {
            return dv_mi_estimate(t.constant(other), scale(x, 2.0), cfg).value;
        });
    }
    {
        auto r = b.rng("critic");
        MlpParams critic = margin_mlp(MlpSpec{{5, 6, 1}}, r, 0.05, 0.5);
        Tensor other = uniform_tensor(4, 2, r);
        LossConfig cfg;
        b.add("critic_dv_estimate/a", 4, 3, [=](Tape& t, Var x) {
            return critic_dv_estimate(bind_mlp(t, critic, false), x, t.constant(other), cfg, "gc").value;
        });
    }
    {
        auto r = b.rng("conditional");
        ConditionalCriticParams cp{margin_mlp(MlpSpec{{7, 6, 1}}, r, 0.05, 0.5),
                                   margin_mlp(MlpSpec{{5, 6, 1}}, r, 0.05, 0.5)};
        Tensor xx = uniform_tensor(4, 2, r), xc = uniform_tensor(4, 2, r);
        LossConfig cfg;
        b.add("conditional_mi_estimate/z", 4, 3, [=](Tape& t, Var x) {
            return conditional_mi_estimate(x, t.constant(xx), t.constant(xc), bind_conditional(t, cp, false), cfg)
                .value;
        });
    }
    {
        // Full objective differentiated with respect to encoder weights while
        // all five critics stay frozen.
        auto r = b.rng("cibr_total_loss");
        const std::size_t n = 4, dv = 3, dt = 2, h = 4, e = 3;
        const MlpSpec enc_v_spec{{dv, h, e}}, enc_t_spec{{dt, h, e}};
        MlpParams enc_v = margin_mlp(enc_v_spec, r, 0.3, 0.5);
        MlpParams enc_t = margin_mlp(enc_t_spec, r, 0.3, 0.5);
        Tensor xv = uniform_tensor(n, dv, r, -0.1, 0.1), xt = uniform_tensor(n, dt, r, -0.1, 0.1);
        const std::size_t ch = 5;
        ConditionalCriticParams cv{margin_mlp(MlpSpec{{e + dv + dt, ch, ch, 1}}, r, 0.05, 0.5),
                                   margin_mlp(MlpSpec{{e + dt, ch, ch, 1}}, r, 0.05, 0.5)};
        ConditionalCriticParams ct{margin_mlp(MlpSpec{{e + dt + dv, ch, ch, 1}}, r, 0.05, 0.5),
                                   margin_mlp(MlpSpec{{e + dv, ch, ch, 1}}, r, 0.05, 0.5)};
        MlpParams czz = margin_mlp(MlpSpec{{2 * e, ch, ch, 1}}, r, 0.05, 0.5);
        LossConfig cfg;
        cfg.tau = 0.5;
        auto total = [=](Tape& t, const MlpVars& ev, const MlpVars& et) {
            CibrCritics critics{bind_conditional(t, cv, false), bind_conditional(t, ct, false),
                                bind_mlp(t, czz, false)};
            Var vxv = t.constant(xv), vxt = t.constant(xt);
            CibrBatch batch{mlp_forward(ev, vxv), mlp_forward(et, vxt), vxv, vxt};
            return cibr_total_loss(batch, critics, 0.5, 1.0, cfg).total;
        };
        b.add("cibr_total_loss/encoder_v_w0", dv, h, [=](Tape& t, Var x) {
            MlpVars ev = bind_mlp(t, enc_v, true);
            ev.weights[0] = x;
            return total(t, ev, bind_mlp(t, enc_t, true));
        });
        b.add("cibr_total_loss/encoder_t_w1", h, e, [=](Tape& t, Var x) {
            MlpVars et = bind_mlp(t, enc_t, true);
            et.weights[1] = x;
            return total(t, bind_mlp(t, enc_v, true), et);
        });
    }
}

}  // namespace

std::vector<GradCase> default_grad_cases(std::uint64_t seed) {
    CaseBuilder b(seed);
    add_op_cases(b);
    add_mlp_cases(b);
    add_objective_cases(b);
    return std::move(b.cases);
}

GradCaseResult run_grad_case(const GradCase& c, std::size_t case_index, const GradSuiteOptions& opt) {
    GradCaseResult res;
    res.name = c.name;
    std::size_t attempt = 0;
    try {
        while (res.points < opt.points) {
            if (attempt >= opt.max_attempts) {
                res.error = "no probe point with relu margin >= " + std::to_string(opt.relu_margin);
                return res;
            }
            StreamRng rng(opt.seed, "gradcheck", (static_cast<std::uint64_t>(case_index) << 32) | attempt++);
            Tensor x(c.rows, c.cols);
            for (auto& v : x.data()) v = rng.uniform(-1.0, 1.0);
            if (c.accept && !c.accept(x)) continue;
            if (relu_margin(c.f, x) < opt.relu_margin) continue;
            res.max_rel_error = std::max(res.max_rel_error, grad_check(c.f, x, opt.eps));
            ++res.points;
        }
    } catch (const std::exception& e) {
        res.error = e.what();
        return res;
    }
    res.passed = res.max_rel_error < opt.threshold;
    return res;
}

std::vector<GradCaseResult> run_grad_suite(const std::vector<GradCase>& cases, const GradSuiteOptions& opt) {
    std::vector<GradCaseResult> out;
    out.reserve(cases.size());
    for (std::size_t i = 0; i < cases.size(); ++i) out.push_back(run_grad_case(cases[i], i, opt));
    return out;
}

}  // namespace cibr
