#include "cibr/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "cibr/errors.hpp"
#include "cibr/rng.hpp"

namespace cibr {

namespace {

using nlohmann::json;

// Reads typed fields out of one JSON object and rejects keys nobody asked for.
class Section {
public:
    Section(const json& j, std::string context) : j_(j), context_(std::move(context)) {
        if (!j_.is_object()) throw ConfigError(context_ + " must be an object");
    }

    bool has(const char* key) {
        seen_.insert(key);
        return j_.contains(key);
    }

    double number(const char* key, double fallback) {
        if (!has(key)) return fallback;
        const json& v = j_.at(key);
        if (!v.is_number()) throw ConfigError(where(key) + " must be a number");
        return v.get<double>();
    }

    std::size_t count(const char* key, std::size_t fallback) {
        if (!has(key)) return fallback;
        const json& v = j_.at(key);
        if (!v.is_number_integer() || v.get<long long>() < 0) {
            throw ConfigError(where(key) + " must be a non-negative integer");
        }
        return v.get<std::size_t>();
    }

    std::uint64_t u64(const char* key, std::uint64_t fallback) {
        if (!has(key)) return fallback;
        const json& v = j_.at(key);
        if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)) {
            throw ConfigError(where(key) + " must be a non-negative integer");
        }
        return v.get<std::uint64_t>();
    }

    bool boolean(const char* key, bool fallback) {
        if (!has(key)) return fallback;
        const json& v = j_.at(key);
        if (!v.is_boolean()) throw ConfigError(where(key) + " must be true or false");
        return v.get<bool>();
    }

    std::string string(const char* key, const std::string& fallback) {
        if (!has(key)) return fallback;
        const json& v = j_.at(key);
        if (!v.is_string()) throw ConfigError(where(key) + " must be a string");
        return v.get<std::string>();
    }

    std::vector<std::size_t> counts(const char* key, std::vector<std::size_t> fallback) {
        if (!has(key)) return fallback;
        const json& v = j_.at(key);
        if (!v.is_array()) throw ConfigError(where(key) + " must be an array of integers");
        std::vector<std::size_t> out;
        for (const auto& e : v) {
            if (!e.is_number_integer() || e.get<long long>() < 0) {
                throw ConfigError(where(key) + " must contain non-negative integers");
            }
            out.push_back(e.get<std::size_t>());
        }
        return out;
    }

    std::vector<double> reals(const char* key) {
        const json& v = j_.at(key);
        if (!v.is_array()) throw ConfigError(where(key) + " must be an array of numbers");
        std::vector<double> out;
        for (const auto& e : v) {
            if (!e.is_number()) throw ConfigError(where(key) + " must contain numbers");
            out.push_back(e.get<double>());
        }
        return out;
    }

    Tensor matrix(const char* key) {
        seen_.insert(key);
        const json& v = j_.at(key);
        if (!v.is_array() || v.empty()) throw ConfigError(where(key) + " must be a non-empty array of rows");
        const std::size_t cols = v.front().is_array() ? v.front().size() : 0;
        std::vector<double> data;
        for (const auto& row : v) {
            if (!row.is_array() || row.size() != cols) throw ConfigError(where(key) + " must be a rectangular matrix");
            for (const auto& e : row) {
                if (!e.is_number()) throw ConfigError(where(key) + " must contain numbers");
                data.push_back(e.get<double>());
            }
        }
        return Tensor(v.size(), cols, std::move(data));
    }

    const json& sub(const char* key) {
        seen_.insert(key);
        return j_.at(key);
    }

    void finish() const {
        for (const auto& [key, _] : j_.items()) {
            if (!seen_.count(key)) throw ConfigError("unknown key '" + key + "' in " + context_);
        }
    }

private:
    std::string where(const char* key) const { return context_ + "." + key; }

    const json& j_;
    std::string context_;
    std::set<std::string> seen_;
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    std::filesystem::path path(p);
    return path.is_relative() && !base.empty() ? base / path : path;
}

DataSource parse_data(const json& j, const std::filesystem::path& base_dir) {
    Section s(j, "data");
    DataSource d;
    const std::string kind = s.string("kind", "gaussian");
    if (kind == "gaussian") {
        d.kind = DataSource::Kind::gaussian;
        if (s.has("A") || s.has("B")) {
            Tensor A = s.matrix("A");
            Tensor B = s.matrix("B");
            s.has("sigma_v");
            s.has("sigma_t");
            d.gaussian = GaussianPairSpec::mixing(std::move(A), std::move(B), s.reals("sigma_v"), s.reals("sigma_t"),
                                                  1000, 0);
        } else {
            d.gaussian = GaussianPairSpec::correlated(s.count("dim_shared", 1), s.number("rho", 0.9),
                                                      s.count("dim_v_noise", 4), s.count("dim_t_noise", 4), 1000, 0);
        }
    } else if (kind == "clustered") {
        d.kind = DataSource::Kind::clustered;
        ClusteredPairSpec c;
        c.n_classes = s.count("n_classes", c.n_classes);
        c.dim_v = s.count("dim_v", c.dim_v);
        c.dim_t = s.count("dim_t", c.dim_t);
        c.dim_latent = s.count("dim_latent", c.dim_latent);
        c.class_separation = s.number("class_separation", c.class_separation);
        c.noise_scale = s.number("noise_scale", c.noise_scale);
        c.nuisance_dims = s.count("nuisance_dims", c.nuisance_dims);
        c.nuisance_scale = s.number("nuisance_scale", c.nuisance_scale);
        c.n_per_class = s.count("n_per_class", c.n_per_class);
        c.validate();
        d.clustered = c;
    } else if (kind == "csv") {
        d.kind = DataSource::Kind::csv;
        if (!s.has("path_v") || !s.has("path_t")) throw ConfigError("csv data needs path_v and path_t");
        d.csv.path_v = resolve(base_dir, s.string("path_v", ""));
        d.csv.path_t = resolve(base_dir, s.string("path_t", ""));
        if (s.has("path_labels")) d.csv.path_labels = resolve(base_dir, s.string("path_labels", ""));
    } else {
        throw ConfigError("data.kind must be gaussian, clustered or csv, got '" + kind + "'");
    }
    if (s.has("train_pool")) {
        if (d.kind == DataSource::Kind::csv) throw ConfigError("data.train_pool applies to generated data only");
        d.train_pool = s.count("train_pool", 0);
    }
    s.finish();
    return d;
}

}  // namespace

ConfigFile parse_config(const json& doc, const std::filesystem::path& base_dir) {
    Section top(doc, "config");
    ConfigFile out;
    RunConfig& r = out.run;
    r.seed = top.u64("seed", 0);
    if (top.has("output_dir")) out.output_dir = resolve(base_dir, top.string("output_dir", ""));
    if (top.has("data")) r.data = parse_data(top.sub("data"), base_dir);
    r.data.set_seed(r.seed);

    if (top.has("model")) {
        Section m(top.sub("model"), "model");
        r.encoder_hidden = m.counts("encoder_hidden", r.encoder_hidden);
        r.embed_dim = m.count("embed_dim", r.embed_dim);
        r.critic_hidden = m.counts("critic_hidden", r.critic_hidden);
        m.finish();
    }
    if (top.has("train")) {
        Section t(top.sub("train"), "train");
        r.lambda = t.number("lambda", r.lambda);
        r.beta = t.number("beta", r.beta);
        r.loss.tau = t.number("tau", r.loss.tau);
        r.loss.symmetric = t.boolean("symmetric", r.loss.symmetric);
        r.loss.clamp_T = t.number("clamp_T", r.loss.clamp_T);
        r.batch_size = t.count("batch_size", r.batch_size);
        r.steps = t.count("steps", r.steps);
        r.critic_steps = t.count("critic_steps", r.critic_steps);
        r.lr_encoder = t.number("lr_encoder", r.lr_encoder);
        r.lr_critic = t.number("lr_critic", r.lr_critic);
        r.ema_decay = t.number("ema_decay", r.ema_decay);
        r.final_window = t.count("final_window", r.final_window);
        r.clip_only = t.boolean("clip_only", r.clip_only);
        t.finish();
    }
    if (top.has("eval")) {
        Section e(top.sub("eval"), "eval");
        r.eval.n_samples = e.count("n_samples", r.eval.n_samples);
        r.eval.ks = e.counts("ks", r.eval.ks);
        r.eval.direction = parse_direction(e.string("direction", direction_name(r.eval.direction)));
        e.finish();
    }
    if (top.has("estimator")) {
        Section e(top.sub("estimator"), "estimator");
        EstimatorConfig& est = out.estimator;
        est.hidden = e.counts("hidden", est.hidden);
        est.lr = e.number("lr", est.lr);
        est.batch_size = e.count("batch_size", est.batch_size);
        est.steps = e.count("steps", est.steps);
        est.eval_samples = e.count("eval_samples", est.eval_samples);
        est.ema_decay = e.number("ema_decay", est.ema_decay);
        e.finish();
    }
    top.finish();
    out.estimator.loss = r.loss;
    r.validate();
    out.estimator.validate();
    return out;
}

ConfigFile load_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return parse_config(doc, path.parent_path());
}

namespace {

json matrix_json(const Tensor& t) {
    json rows = json::array();
    for (std::size_t r = 0; r < t.rows(); ++r) rows.push_back(std::vector<double>(t.row(r).begin(), t.row(r).end()));
    return rows;
}

json data_fields(const DataSource& d) {
    switch (d.kind) {
        case DataSource::Kind::gaussian: {
            const auto& g = d.gaussian;
            if (g.from_rho) {
                return {{"kind", "gaussian"},
                        {"dim_shared", g.dim_shared},
                        {"rho", g.rho},
                        {"dim_v_noise", g.dim_v_noise},
                        {"dim_t_noise", g.dim_t_noise}};
            }
            return {{"kind", "gaussian"},    {"A", matrix_json(g.A)},   {"B", matrix_json(g.B)},
                    {"sigma_v", g.sigma_v}, {"sigma_t", g.sigma_t}};
        }
        case DataSource::Kind::clustered: {
            const auto& c = d.clustered;
            return {{"kind", "clustered"},
                    {"n_classes", c.n_classes},
                    {"dim_v", c.dim_v},
                    {"dim_t", c.dim_t},
                    {"dim_latent", c.dim_latent},
                    {"class_separation", c.class_separation},
                    {"noise_scale", c.noise_scale},
                    {"nuisance_dims", c.nuisance_dims},
                    {"nuisance_scale", c.nuisance_scale},
                    {"n_per_class", c.n_per_class}};
        }
        case DataSource::Kind::csv: {
            json j = {{"kind", "csv"}, {"path_v", d.csv.path_v.string()}, {"path_t", d.csv.path_t.string()}};
            if (d.csv.path_labels) j["path_labels"] = d.csv.path_labels->string();
            return j;
        }
    }
    return {};
}

json data_json(const DataSource& d) {
    json j = data_fields(d);
    if (d.train_pool > 0) j["train_pool"] = d.train_pool;
    return j;
}

}  // namespace

json to_json(const RunConfig& c) {
    return {
        {"seed", c.seed},
        {"data", data_json(c.data)},
        {"model", {{"encoder_hidden", c.encoder_hidden}, {"embed_dim", c.embed_dim}, {"critic_hidden", c.critic_hidden}}},
        {"train",
         {{"lambda", c.lambda},
          {"beta", c.beta},
          {"tau", c.loss.tau},
          {"symmetric", c.loss.symmetric},
          {"clamp_T", c.loss.clamp_T},
          {"batch_size", c.batch_size},
          {"steps", c.steps},
          {"critic_steps", c.critic_steps},
          {"lr_encoder", c.lr_encoder},
          {"lr_critic", c.lr_critic},
          {"ema_decay", c.ema_decay},
          {"final_window", c.final_window},
          {"clip_only", c.clip_only}}},
        {"eval", {{"n_samples", c.eval.n_samples}, {"ks", c.eval.ks}, {"direction", direction_name(c.eval.direction)}}},
    };
}

json to_json(const EstimatorConfig& e) {
    return {{"hidden", e.hidden},         {"lr", e.lr},
            {"batch_size", e.batch_size}, {"steps", e.steps},
            {"eval_samples", e.eval_samples}, {"ema_decay", e.ema_decay}};
}

json to_json(const ConfigFile& c) {
    json j = to_json(c.run);
    j["estimator"] = to_json(c.estimator);
    if (c.output_dir) j["output_dir"] = c.output_dir->string();
    return j;
}

std::string config_hash(const json& config) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(config.dump())));
    return buf;
}

}  // namespace cibr
