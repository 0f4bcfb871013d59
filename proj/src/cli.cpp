#include "cibr/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cibr/config.hpp"
#include "cibr/errors.hpp"
#include "cibr/train.hpp"

namespace cibr::cli {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

enum class Level { error = 0, info = 1, debug = 2 };

Level log_level() {
    const char* env = std::getenv("CIBR_LOG");
    if (!env) return Level::info;
    const std::string s(env);
    if (s == "error") return Level::error;
    if (s == "debug") return Level::debug;
    return Level::info;
}

struct Log {
    std::ostream& out;
    Level level = log_level();

    bool on(Level l) const { return static_cast<int>(l) <= static_cast<int>(level); }
    void info(const std::string& msg) const {
        if (on(Level::info)) out << msg << '\n' << std::flush;
    }
    void debug(const std::string& msg) const {
        if (on(Level::debug)) out << msg << '\n' << std::flush;
    }
};

struct Options {
    std::string config;
    std::string out;
    std::string checkpoint;
    std::string lambdas;
    std::optional<std::uint64_t> seed;
    std::string direction;
};

void write_json(const fs::path& path, const json& j) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write " + path.string());
    f << j.dump(2) << '\n';
    if (!f) throw IoError("failed writing " + path.string());
}

fs::path prepare_out_dir(const Options& opt, const ConfigFile& cfg, const char* fallback) {
    fs::path dir = !opt.out.empty() ? fs::path(opt.out) : cfg.output_dir.value_or(fs::path(fallback));
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
    return dir;
}

ConfigFile load(const Options& opt) {
    if (opt.config.empty()) throw ConfigError("--config is required");
    ConfigFile cfg = load_config_file(opt.config);
    if (opt.seed) {
        cfg.run.seed = *opt.seed;
        cfg.run.data.set_seed(*opt.seed);
    }
    if (!opt.direction.empty()) cfg.run.eval.direction = parse_direction(opt.direction);
    return cfg;
}

std::string fmt(double v) {
    std::ostringstream s;
    s << std::setprecision(6) << v;
    return s.str();
}

int cmd_train(const Options& opt, const Log& log) {
    const ConfigFile cfg = load(opt);
    const fs::path dir = prepare_out_dir(opt, cfg, "cibr_run");
    log.info("training: lambda=" + fmt(cfg.run.lambda) + " steps=" + std::to_string(cfg.run.steps) +
             " seed=" + std::to_string(cfg.run.seed));
    const std::size_t every = std::max<std::size_t>(1, cfg.run.steps / 10);
    RunResult run = run_training(cfg.run, [&](const StepRecord& r) {
        const bool milestone = r.step % every == 0 || r.step == cfg.run.steps;
        if (milestone || log.on(Level::debug)) {
            log.info("step " + std::to_string(r.step) + " clip=" + fmt(r.clip_loss) + " reg_v=" +
                     fmt(r.regularizer_v) + " reg_t=" + fmt(r.regularizer_t) + " i_zv_zt=" + fmt(r.i_zv_zt));
        }
    });
    write_step_csv(dir / "steps.csv", run.records);
    write_json(dir / "manifest.json", run.manifest);
    Checkpoint ckpt{cfg.run.seed, {{"encoder_v", run.encoders.v}, {"encoder_t", run.encoders.t}}};
    if (run.critics) {
        for (const MiCritic* c : {&run.critics->v_with_cond, &run.critics->v_cond_only, &run.critics->t_with_cond,
                                  &run.critics->t_cond_only, &run.critics->zv_zt}) {
            ckpt.networks.push_back({"critic:" + c->id, c->params});
        }
    }
    save_checkpoint(dir / "checkpoint.bin", ckpt);
    log.info("wrote " + (dir / "steps.csv").string() + ", manifest.json, checkpoint.bin");
    return kOk;
}

int cmd_eval(const Options& opt, const Log& log) {
    if (opt.checkpoint.empty()) throw ConfigError("eval needs --checkpoint");
    const ConfigFile cfg = load(opt);
    const Checkpoint ckpt = load_checkpoint(opt.checkpoint);
    const MlpParams& ev = ckpt.get("encoder_v");
    const MlpParams& et = ckpt.get("encoder_t");
    if (ev.spec.out_dim() != cfg.run.embed_dim || et.spec.out_dim() != cfg.run.embed_dim) {
        throw DimensionError("checkpoint embedding dim " + std::to_string(ev.spec.out_dim()) +
                             " does not match config embed_dim " + std::to_string(cfg.run.embed_dim));
    }
    const EvalOutcome out = evaluate_encoders(cfg.run, ev, et);
    const fs::path dir = prepare_out_dir(opt, cfg, "cibr_eval");
    write_json(dir / "retrieval.json", to_json(out.retrieval));
    std::string summary = "retrieval " + std::string(direction_name(out.retrieval.direction));
    for (const auto& [k, r] : out.retrieval.recall_at) summary += " R@" + std::to_string(k) + "=" + fmt(r);
    if (out.classification) {
        write_json(dir / "classification.json", to_json(*out.classification));
        summary += " accuracy=" + fmt(out.classification->accuracy);
    }
    log.info(summary);
    return kOk;
}

int cmd_sweep(const Options& opt, bool lambdas_given, const Log& log) {
    const std::vector<double> lambdas =
        lambdas_given ? parse_lambda_list(opt.lambdas) : std::vector<double>{0.0, 0.1, 0.5, 1.0, 2.0, 5.0};
    const ConfigFile cfg = load(opt);
    const fs::path dir = prepare_out_dir(opt, cfg, "cibr_sweep");
    const auto rows = sweep_lambda(cfg.run, lambdas, [&](double l) { log.info("sweep: lambda=" + fmt(l)); });
    write_sweep_csv(dir / "sweep.csv", rows);
    for (const auto& r : rows) {
        log.info("lambda=" + fmt(r.lambda) + " R@1=" + fmt(r.recall_at_1) +
                 (r.accuracy ? " accuracy=" + fmt(*r.accuracy) : std::string()));
    }
    return kOk;
}

int cmd_estimate_mi(const Options& opt, const Log& log) {
    const ConfigFile cfg = load(opt);
    const fs::path dir = prepare_out_dir(opt, cfg, "cibr_mi");
    const MiReport rep = estimate_source_mi(cfg.run.data, cfg.estimator, cfg.run.seed);
    json j = {{"estimate_nats", rep.estimate.value_nats},
              {"n_joint", rep.estimate.n_joint},
              {"n_marginal", rep.estimate.n_marginal},
              {"seed", cfg.run.seed},
              {"estimator", to_json(cfg.estimator)}};
    std::string summary = "estimate " + fmt(rep.estimate.value_nats) + " nats";
    if (rep.oracle_nats) {
        j["oracle_nats"] = *rep.oracle_nats;
        j["abs_error"] = std::abs(rep.estimate.value_nats - *rep.oracle_nats);
        summary += ", closed form " + fmt(*rep.oracle_nats);
    }
    write_json(dir / "mi_estimate.json", j);
    log.info(summary);
    return kOk;
}

}  // namespace

std::vector<double> parse_lambda_list(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto b = item.find_first_not_of(" \t");
        const auto e = item.find_last_not_of(" \t");
        if (b == std::string::npos) throw ConfigError("empty entry in lambda list '" + text + "'");
        item = item.substr(b, e - b + 1);
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != item.size()) throw ConfigError("bad lambda '" + item + "'");
        out.push_back(v);
    }
    if (out.empty()) throw ConfigError("lambda list is empty");
    return out;
}

int cmd_gradcheck(const std::vector<GradCase>& cases, std::ostream& out, std::ostream& err,
                  const GradSuiteOptions& options) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto results = run_grad_suite(cases, options);
    std::vector<std::string> failed;
    for (const auto& r : results) {
        out << std::left << std::setw(40) << r.name << ' ';
        if (!r.error.empty()) {
            out << "ERROR " << r.error << '\n';
        } else {
            out << std::scientific << std::setprecision(3) << r.max_rel_error << std::defaultfloat
                << (r.passed ? "  ok" : "  FAIL") << '\n';
        }
        if (!r.passed) failed.push_back(r.name);
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out << results.size() << " cases, " << failed.size() << " failed, " << std::fixed << std::setprecision(2)
        << secs << " s" << std::defaultfloat << '\n';
    if (failed.empty()) return kOk;
    err << "gradcheck failed:";
    for (const auto& n : failed) err << ' ' << n;
    err << '\n';
    return kGradcheckFailed;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Contrastive encoders with conditional-information regularization"};
    app.require_subcommand(1);
    Options opt;
    std::uint64_t seed = 0;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", opt.config, "experiment config (JSON)");
        sub->add_option("--out", opt.out, "output directory");
        sub->add_option("--seed", seed, "overrides the config seed");
    };
    CLI::App* train = app.add_subcommand("train", "train encoders; writes steps.csv, manifest.json, checkpoint.bin");
    common(train);
    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint; writes retrieval/classification JSON");
    common(eval);
    eval->add_option("--checkpoint", opt.checkpoint, "checkpoint.bin from train");
    eval->add_option("--direction", opt.direction, "t2v or v2t");
    CLI::App* sweep = app.add_subcommand("sweep", "train and evaluate one run per lambda; writes sweep.csv");
    common(sweep);
    CLI::Option* lambdas = sweep->add_option("--lambdas", opt.lambdas, "comma-separated lambda values");
    CLI::App* mi = app.add_subcommand("estimate-mi", "estimate I(Xv;Xt) of the data; writes mi_estimate.json");
    common(mi);
    CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kConfigError;
    }
    for (CLI::App* sub : {train, eval, sweep, mi}) {
        if (sub->parsed() && sub->count("--seed")) opt.seed = seed;
    }

    const Log log{out};
    try {
        if (train->parsed()) return cmd_train(opt, log);
        if (eval->parsed()) return cmd_eval(opt, log);
        if (sweep->parsed()) return cmd_sweep(opt, lambdas->count() > 0, log);
        if (mi->parsed()) return cmd_estimate_mi(opt, log);
        if (gc->parsed()) return cmd_gradcheck(default_grad_cases(), out, err);
    } catch (const DivergenceError& e) {
        err << "error: " << e.what() << '\n';
        return kDiverged;
    } catch (const IoError& e) {
        err << "error: " << e.what() << '\n';
        return kIoError;
    } catch (const ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kIoError;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kConfigError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kIoError;
    }
    return kConfigError;
}

}  // namespace cibr::cli
