#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "cibr/autodiff.hpp"
#include "cibr/tensor.hpp"

namespace cibr {

/// Layer widths from input to output; relu between layers, affine output.
struct MlpSpec {
    std::vector<std::size_t> layer_dims;

    void validate() const;
    std::size_t in_dim() const { return layer_dims.front(); }
    std::size_t out_dim() const { return layer_dims.back(); }
    std::size_t n_layers() const { return layer_dims.size() - 1; }

    friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

/// weights[l] is [d_l x d_{l+1}], biases[l] is [1 x d_{l+1}].
struct MlpParams {
    MlpSpec spec;
    std::vector<Tensor> weights;
    std::vector<Tensor> biases;

    bool all_finite() const;
    std::size_t parameter_count() const;

    friend bool operator==(const MlpParams&, const MlpParams&) = default;
};

/// Glorot-uniform weights from the "init" stream of `seed`, zero biases.
MlpParams init_mlp(const MlpSpec& spec, std::uint64_t seed);

MlpParams zeros_like(const MlpParams& params);

/// Parameters placed on a tape.
struct MlpVars {
    std::vector<Var> weights;
    std::vector<Var> biases;
};

/// Puts params on the tape as leaves; `trainable` decides whether they collect
/// gradients. Frozen networks still pass gradients through to their inputs.
MlpVars bind_mlp(Tape& tape, const MlpParams& params, bool trainable);

Var mlp_forward(const MlpVars& net, Var x);

/// Tape-free forward pass for inference.
Tensor mlp_forward(const MlpParams& params, const Tensor& x);

/// Gradients gathered after backward(), shaped like `like`.
MlpParams collect_grads(const Tape& tape, const MlpVars& net, const MlpParams& like);

struct AdamHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    friend bool operator==(const AdamHyper&, const AdamHyper&) = default;
};

struct AdamState {
    std::vector<Tensor> m_weights, v_weights, m_biases, v_biases;
    std::uint64_t step_count = 0;
    AdamHyper hyper;

    friend bool operator==(const AdamState&, const AdamState&) = default;
};

AdamState init_adam(const MlpParams& params, const AdamHyper& hyper);

/// Bias-corrected Adam update in place. All gradient entries are checked for
/// finiteness before anything is written; a bad entry raises DivergenceError
/// naming `name`, the layer and the tensor.
void adam_step(MlpParams& params, const MlpParams& grads, AdamState& state,
               std::string_view name = "mlp");

// Checkpoint file (little-endian):
//   "CIBRCKPT" | u32 version | u64 seed | u32 network count
//   per network: u32 name length | name | u32 dim count | u64 dims...
//                then per layer: weights row-major f64, biases f64
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedMlp {
    std::string name;
    MlpParams params;
};

struct Checkpoint {
    std::uint64_t seed = 0;
    std::vector<NamedMlp> networks;

    const MlpParams& get(std::string_view name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cibr
