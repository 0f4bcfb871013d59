#include "cibr/nn.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "cibr/errors.hpp"
#include "cibr/rng.hpp"

namespace cibr {

void MlpSpec::validate() const {
    if (layer_dims.size() < 2) {
        throw ConfigError("mlp spec needs at least 2 layer dims, got " + std::to_string(layer_dims.size()));
    }
    for (std::size_t d : layer_dims) {
        if (d == 0) throw ConfigError("mlp spec contains a zero-width layer");
    }
}

bool MlpParams::all_finite() const {
    auto finite = [](const Tensor& t) { return t.all_finite(); };
    return std::all_of(weights.begin(), weights.end(), finite) &&
           std::all_of(biases.begin(), biases.end(), finite);
}

std::size_t MlpParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& w : weights) n += w.size();
    for (const auto& b : biases) n += b.size();
    return n;
}

MlpParams init_mlp(const MlpSpec& spec, std::uint64_t seed) {
    spec.validate();
    MlpParams params;
    params.spec = spec;
    for (std::size_t l = 0; l < spec.n_layers(); ++l) {
        const std::size_t fan_in = spec.layer_dims[l];
        const std::size_t fan_out = spec.layer_dims[l + 1];
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        StreamRng rng(seed, "init", l);
        Tensor w(fan_in, fan_out);
        for (double& v : w.data()) v = rng.uniform(-bound, bound);
        params.weights.push_back(std::move(w));
        params.biases.emplace_back(1, fan_out);
    }
    return params;
}

MlpParams zeros_like(const MlpParams& params) {
    MlpParams z;
    z.spec = params.spec;
    for (const auto& w : params.weights) z.weights.emplace_back(w.rows(), w.cols());
    for (const auto& b : params.biases) z.biases.emplace_back(b.rows(), b.cols());
    return z;
}

MlpVars bind_mlp(Tape& tape, const MlpParams& params, bool trainable) {
    MlpVars vars;
    for (const auto& w : params.weights) vars.weights.push_back(tape.leaf(w, trainable));
    for (const auto& b : params.biases) vars.biases.push_back(tape.leaf(b, trainable));
    return vars;
}

Var mlp_forward(const MlpVars& net, Var x) {
    const std::size_t in_dim = net.weights.front().rows();
    if (x.cols() != in_dim) {
        throw DimensionError("mlp_forward: input " + x.value().shape_string() + " but first layer expects " +
                             std::to_string(in_dim) + " columns");
    }
    Var h = x;
    const std::size_t n_layers = net.weights.size();
    for (std::size_t l = 0; l < n_layers; ++l) {
        h = add_row(matmul(h, net.weights[l]), net.biases[l]);
        if (l + 1 < n_layers) h = relu(h);
    }
    return h;
}

Tensor mlp_forward(const MlpParams& params, const Tensor& x) {
    Tape tape;
    MlpVars net = bind_mlp(tape, params, false);
    return mlp_forward(net, tape.constant(x)).value();
}

MlpParams collect_grads(const Tape& tape, const MlpVars& net, const MlpParams& like) {
    MlpParams g;
    g.spec = like.spec;
    for (Var w : net.weights) g.weights.push_back(tape.grad(w));
    for (Var b : net.biases) g.biases.push_back(tape.grad(b));
    return g;
}

AdamState init_adam(const MlpParams& params, const AdamHyper& hyper) {
    if (!(hyper.lr > 0.0)) throw ConfigError("adam learning rate must be positive");
    AdamState s;
    s.hyper = hyper;
    for (const auto& w : params.weights) {
        s.m_weights.emplace_back(w.rows(), w.cols());
        s.v_weights.emplace_back(w.rows(), w.cols());
    }
    for (const auto& b : params.biases) {
        s.m_biases.emplace_back(b.rows(), b.cols());
        s.v_biases.emplace_back(b.rows(), b.cols());
    }
    return s;
}

namespace {

void check_finite(const std::vector<Tensor>& grads, std::string_view name, const char* kind) {
    for (std::size_t l = 0; l < grads.size(); ++l) {
        if (!grads[l].all_finite()) {
            throw DivergenceError("non-finite gradient in " + std::string(name) + " layer " + std::to_string(l) +
                                  " " + kind);
        }
    }
}

void require_matching(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
    if (a.size() != b.size()) throw DimensionError("adam_step: layer count mismatch");
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!a[i].same_shape(b[i])) {
            throw DimensionError("adam_step: shape mismatch " + a[i].shape_string() + " vs " + b[i].shape_string());
        }
    }
}

void adam_update(Tensor& p, const Tensor& g, Tensor& m, Tensor& v, const AdamHyper& h, double c1, double c2) {
    for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
        v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
        const double m_hat = m[i] / c1;
        const double v_hat = v[i] / c2;
        p[i] -= h.lr * m_hat / (std::sqrt(v_hat) + h.epsilon);
    }
}

}  // namespace

void adam_step(MlpParams& params, const MlpParams& grads, AdamState& state, std::string_view name) {
    if (!(state.hyper.lr > 0.0)) throw ConfigError("adam learning rate must be positive");
    require_matching(params.weights, grads.weights);
    require_matching(params.biases, grads.biases);
    require_matching(params.weights, state.m_weights);
    check_finite(grads.weights, name, "weights");
    check_finite(grads.biases, name, "biases");

    state.step_count += 1;
    const double t = static_cast<double>(state.step_count);
    const double c1 = 1.0 - std::pow(state.hyper.beta1, t);
    const double c2 = 1.0 - std::pow(state.hyper.beta2, t);
    for (std::size_t l = 0; l < params.weights.size(); ++l) {
        adam_update(params.weights[l], grads.weights[l], state.m_weights[l], state.v_weights[l], state.hyper, c1,
                    c2);
        adam_update(params.biases[l], grads.biases[l], state.m_biases[l], state.v_biases[l], state.hyper, c1, c2);
    }
}

const MlpParams& Checkpoint::get(std::string_view name) const {
    for (const auto& n : networks) {
        if (n.name == name) return n.params;
    }
    throw ConfigError("checkpoint has no network named '" + std::string(name) + "'");
}

namespace {

constexpr char kMagic[8] = {'C', 'I', 'B', 'R', 'C', 'K', 'P', 'T'};

template <class T>
T to_little(T v) {
    if constexpr (std::endian::native == std::endian::big) {
        auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
        std::reverse(bytes.begin(), bytes.end());
        return std::bit_cast<T>(bytes);
    }
    return v;
}

template <class T>
void put(std::ofstream& out, T v) {
    v = to_little(v);
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::ifstream& in, const std::filesystem::path& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw IoError("truncated checkpoint: " + path.string());
    return to_little(v);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, checkpoint.seed);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(checkpoint.networks.size()));
    for (const auto& net : checkpoint.networks) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(net.name.size()));
        out.write(net.name.data(), static_cast<std::streamsize>(net.name.size()));
        const auto& dims = net.params.spec.layer_dims;
        put<std::uint32_t>(out, static_cast<std::uint32_t>(dims.size()));
        for (std::size_t d : dims) put<std::uint64_t>(out, d);
        for (std::size_t l = 0; l < net.params.weights.size(); ++l) {
            for (double v : net.params.weights[l].data()) put<double>(out, v);
            for (double v : net.params.biases[l].data()) put<double>(out, v);
        }
    }
    if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path.string());
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw IoError("not a checkpoint file: " + path.string());
    }
    const auto version = get<std::uint32_t>(in, path);
    if (version != kCheckpointVersion) {
        throw IoError("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
    }
    Checkpoint ck;
    ck.seed = get<std::uint64_t>(in, path);
    const auto count = get<std::uint32_t>(in, path);
    for (std::uint32_t n = 0; n < count; ++n) {
        NamedMlp net;
        const auto name_len = get<std::uint32_t>(in, path);
        net.name.resize(name_len);
        in.read(net.name.data(), name_len);
        const auto n_dims = get<std::uint32_t>(in, path);
        for (std::uint32_t i = 0; i < n_dims; ++i) {
            net.params.spec.layer_dims.push_back(static_cast<std::size_t>(get<std::uint64_t>(in, path)));
        }
        net.params.spec.validate();
        const auto& dims = net.params.spec.layer_dims;
        for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
            Tensor w(dims[l], dims[l + 1]);
            for (double& v : w.data()) v = get<double>(in, path);
            Tensor b(1, dims[l + 1]);
            for (double& v : b.data()) v = get<double>(in, path);
            net.params.weights.push_back(std::move(w));
            net.params.biases.push_back(std::move(b));
        }
        ck.networks.push_back(std::move(net));
    }
    return ck;
}

}  // namespace cibr
