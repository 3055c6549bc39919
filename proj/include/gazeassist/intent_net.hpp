#pragma once

// Per-object binary intent classifier.
//
// Two branches read the same bs x sw x 3 window tensor:
//   conv:  three same-padded 1-D convolutions (kernels 3/7/13, ReLU), concatenated
//          along channels, squeeze-excitation channel gate, temporal mean -> X_conv
//   trans: linear projection to d_model, sinusoidal positional encoding, pre-norm
//          transformer encoder layers, temporal mean -> X_trans
// The head maps [X_conv, X_trans] through FC -> ReLU -> FC -> sigmoid.
//
// Everything runs in double precision with hand-written reverse-mode gradients.

#include <array>
#include <cstddef>
#include <cstdint>
#include <new>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gazeassist/features.hpp"

namespace gaze::net {

// Cache-line aligned allocation. Vectorized reductions split work by address
// alignment, so a fixed alignment keeps results bitwise reproducible.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

    template <class U>
    bool operator==(const AlignedAllocator<U>&) const noexcept {
        return true;
    }
};

using ParamVector = std::vector<double, AlignedAllocator<double>>;

struct ModelConfig {
    std::array<int, 3> kernel_scales{3, 7, 13};
    int conv_channels_per_scale = 16;
    int d_model = 48;
    int n_heads = 2;
    int n_layers = 2;
    int ffn_dim = 96;
    int attention_reduction = 4;
    int head_hidden = 48;
    double dropout = 0.1;
    std::uint64_t seed = 0;

    int conv_channels() const { return 3 * conv_channels_per_scale; }
    int fusion_dim() const { return conv_channels() + d_model; }
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

struct TensorSlot {
    std::string name;
    int rows = 0;
    int cols = 0;
    std::size_t offset = 0;

    std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

// Named views into one flat parameter vector. Gradients share the layout.
struct ParamLayout {
    struct Linear {
        TensorSlot w, b;
    };
    struct Norm {
        TensorSlot gain, bias;
    };
    struct Layer {
        Norm ln1;
        Linear qkv;
        Linear out;
        Norm ln2;
        Linear ffn1;
        Linear ffn2;
    };

    std::array<Linear, 3> conv;
    Linear se1, se2;
    Linear in_proj;
    std::vector<Layer> layers;
    Linear head1, head2;

    std::vector<TensorSlot> slots;  // all tensors in storage order
    std::size_t total = 0;

    static ParamLayout build(const ModelConfig& config);
    const TensorSlot& find(const std::string& name) const;
    // Name of the tensor that owns flat index `i`.
    const TensorSlot& owner(std::size_t i) const;
};

struct ModelParams {
    ModelConfig config;
    ParamLayout layout;
    ParamVector values;

    // Kaiming-style uniform fan-in init for weights, zero biases, unit norm gains.
    static ModelParams initialize(const ModelConfig& config);

    std::span<double> tensor(const std::string& name);
    std::span<const double> tensor(const std::string& name) const;
    bool all_finite() const;
};

enum class Mode { eval, train };

// Test-only knobs on the forward/backward pass.
struct Hooks {
    bool unit_channel_gates = false;  // ablation: gates forced to 1
    bool corrupt_ffn_gradient = false;  // fault injection: drop the FFN ReLU mask in backward
};

// Intermediate values exposed for property tests.
struct ForwardTrace {
    // [layer][sample * n_heads + head] -> sw x sw row-major attention weights
    std::vector<std::vector<std::vector<double>>> attention;
    std::vector<double> channel_gates;  // bs x conv_channels
    std::vector<double> x_conv;         // bs x conv_channels
    std::vector<double> x_trans;        // bs x d_model
};

// sw x d_model sinusoidal table. Throws ConfigError for odd d_model.
std::vector<double> positional_encoding(int sw, int d_model);

std::vector<double> forward(const features::WindowBatch& batch, const ModelParams& params,
                            Mode mode = Mode::eval, std::mt19937_64* dropout_rng = nullptr,
                            ForwardTrace* trace = nullptr, const Hooks& hooks = {});

struct LossAndGrads {
    double loss = 0.0;
    std::vector<double> y_hat;
    ParamVector grads;  // same layout as ModelParams::values
};

inline constexpr double kProbClamp = 1e-7;

double bce_loss(std::span<const double> y_hat, std::span<const double> labels);

LossAndGrads loss_and_grads(const features::WindowBatch& batch, const ModelParams& params,
                            Mode mode = Mode::eval, std::mt19937_64* dropout_rng = nullptr,
                            const Hooks& hooks = {});

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_tensor;
    std::size_t probes = 0;
    std::vector<std::string> warnings;
};

// Central finite differences (h = 1e-5) at n_probes random parameters over a
// random small batch; dropout off.
GradCheckReport gradient_check(const ModelParams& params, int n_probes, std::uint64_t seed,
                               const Hooks& hooks = {}, int batch_size = 4, int sw = 16);

struct TrainConfig {
    double learning_rate = 1e-3;
    int batch_size = 32;
    int epochs = 30;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    // Re-score the training set in eval mode after each epoch.
    bool eval_metrics = true;

    void validate() const;
};

struct EpochMetrics {
    int epoch = 0;
    double loss = 0.0;
    double accuracy = 0.0;
};

struct TrainResult {
    ModelParams params;
    std::vector<EpochMetrics> history;
};

TrainResult train(std::span<const features::FeatureWindow> data, const TrainConfig& train_cfg,
                  const ModelConfig& model_cfg);

struct Prediction {
    double y_hat = 0.0;
    bool decided = false;
};

inline bool decide(double y_hat) { return y_hat > 0.5; }

Prediction predict(const features::FeatureWindow& window, const ModelParams& params);
std::vector<Prediction> predict_all(std::span<const features::FeatureWindow> windows,
                                    const ModelParams& params, int batch_size = 256);

// JSON container tagged "intentnet-v1".
void save_checkpoint(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

}  // namespace gaze::net
