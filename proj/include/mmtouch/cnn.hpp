#pragma once

#include <array>
#include <cstdint>
#include <new>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mmtouch/features.hpp"

namespace mmtouch {

enum class Padding { valid, same };
enum class InputMode { magnitude, real_imag };

const char* to_string(Padding p);
const char* to_string(InputMode m);
Padding parse_padding(const std::string& s);
InputMode parse_input_mode(const std::string& s);

/// Three conv(3x3, ReLU) + maxpool(2x2) stages, flatten, dense(16, ReLU),
/// dense(2). Tensors are height x width x channels = frames x bins x sensors.
struct ModelConfig {
    std::vector<int> conv_filters{32, 32, 32};
    int kernel = 3;
    int pool = 2;
    int dense_units = 16;
    int output_units = 2;
    Padding padding = Padding::valid;
    InputMode input_mode = InputMode::magnitude;
    int input_frames = 61;
    int input_bins = 110;
    int input_channels = 4;

    void validate() const;
};

struct TensorShape {
    int h = 0;
    int w = 0;
    int c = 0;
    std::size_t size() const { return static_cast<std::size_t>(h) * w * c; }
    friend bool operator==(const TensorShape&, const TensorShape&) = default;
};

struct LayerShapes {
    TensorShape input;
    std::vector<TensorShape> conv;  // after each convolution
    std::vector<TensorShape> pool;  // after each pooling
    int flatten = 0;
};

/// Analytic conv/pool size chain. Pooling floors odd sizes. Throws
/// ConfigError when a stage collapses to zero size.
LayerShapes layer_shapes(const ModelConfig& config);

struct ParamTensor {
    std::string name;
    std::vector<int> shape;
    std::size_t size() const;
};

/// Stored tensors in serialization order: conv{k}.weight [kh, kw, cin, cout],
/// conv{k}.bias, dense{k}.weight [in, out], dense{k}.bias.
std::vector<ParamTensor> parameter_layout(const ModelConfig& config);

/// Closed-form parameter count of a configuration.
std::size_t parameter_count(const ModelConfig& config);

/// Allocator handing out 64-byte aligned blocks.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

/// Contiguous storage whose first element is 64-byte aligned. Network
/// tensors use it so vectorized kernels take the same code path on every run.
template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

/// Scratch buffers of one forward/backward pass; reuse across calls to
/// avoid allocation.
template <typename T>
struct Workspace {
    std::vector<Buffer<T>> patches;     // im2col of each conv input
    std::vector<Buffer<T>> conv_out;    // post-ReLU conv outputs
    std::vector<Buffer<T>> pool_out;
    std::vector<std::vector<int>> pool_arg;  // argmax index into conv_out
    Buffer<T> hidden;                   // post-ReLU dense activations
    Buffer<T> grad_a;
    Buffer<T> grad_b;
    Buffer<T> grad_patches;
};

template <typename T>
class Network {
public:
    explicit Network(ModelConfig config = {});

    const ModelConfig& config() const { return config_; }
    const LayerShapes& shapes() const { return shapes_; }
    std::size_t input_size() const { return shapes_.input.size(); }

    /// Parameter tensors in parameter_layout() order.
    std::vector<Buffer<T>>& parameters() { return params_; }
    const std::vector<Buffer<T>>& parameters() const { return params_; }

    /// Sum of stored tensor sizes.
    std::size_t parameter_count() const;

    /// Fan-in scaled uniform weights, zero biases.
    void init_uniform(std::uint64_t seed);

    /// Fixed affine map applied to the last dense layer: y = scale * z + offset.
    /// Identity for a freshly constructed network.
    std::array<T, 2> output_scale{T(1), T(1)};
    std::array<T, 2> output_offset{T(0), T(0)};

    /// Single-sample forward; throws ShapeError on a wrong input size.
    std::array<T, 2> forward(std::span<const T> input, Workspace<T>& ws) const;

    /// Row-major (n, 2) outputs of n stacked inputs.
    std::vector<T> forward_batch(std::span<const T> inputs, std::size_t n) const;

    /// Loss = 1/(2n) sum_b |y_b - t_b|^2 (mean squared error per coordinate,
    /// cm^2). Gradients are written into `grads` (resized as needed).
    T loss_and_gradient(std::span<const T> inputs, std::span<const T> labels, std::size_t n,
                        std::vector<Buffer<T>>& grads, Workspace<T>& ws) const;

    T loss(std::span<const T> inputs, std::span<const T> labels, std::size_t n) const;

    template <typename U>
    Network<U> cast() const {
        Network<U> out(config_);
        for (std::size_t k = 0; k < params_.size(); ++k)
            for (std::size_t i = 0; i < params_[k].size(); ++i)
                out.parameters()[k][i] = static_cast<U>(params_[k][i]);
        for (int k = 0; k < 2; ++k) {
            out.output_scale[k] = static_cast<U>(output_scale[k]);
            out.output_offset[k] = static_cast<U>(output_offset[k]);
        }
        return out;
    }

private:
    void forward_features(std::span<const T> input, Workspace<T>& ws) const;

    ModelConfig config_;
    LayerShapes shapes_;
    std::vector<Buffer<T>> params_;
};

using Model = Network<float>;

/// Real network input from a complex feature. Magnitude mode gives one
/// channel per sensor; real-imag mode gives [re_0..re_N-1, im_0..im_N-1].
/// Each sample is divided by its largest absolute value (1 if all zero).
std::vector<float> featurize_input(const FeatureTensor& feature, InputMode mode);

/// Same normalization applied to every item of a dataset; inputs stacked.
struct TrainingSet {
    std::size_t n = 0;
    std::size_t input_size = 0;
    std::vector<float> inputs;
    std::vector<float> labels;  // (n, 2) in cm
    std::vector<TouchEvent> events;

    std::span<const float> input(std::size_t i) const {
        return std::span(inputs).subspan(i * input_size, input_size);
    }
};

TrainingSet make_training_set(const Dataset& dataset, InputMode mode);

struct TrainConfig {
    double learning_rate = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    int batch_size = 32;
    int epochs = 60;
    std::uint64_t seed = 1;
    bool verbose = false;

    void validate() const;
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct TrainReport {
    std::vector<EpochStats> epochs;
    double initial_val_loss = 0.0;
    int best_epoch = -1;
    double val_median_error_cm = 0.0;
    double val_p90_error_cm = 0.0;
    double wall_clock_s = 0.0;
};

/// Adam on mini-batches; output affine set from the training labels' mean
/// and std before the first step. Keeps the parameters of the epoch with the
/// lowest validation loss (last epoch when `val` is empty). Throws
/// TrainingError on a non-finite loss.
std::pair<Model, TrainReport> train(Model model, const TrainingSet& train_set,
                                    const TrainingSet& val_set, const TrainConfig& config);

struct LatencyStats {
    double median_ms = 0.0;
    double p90_ms = 0.0;
    std::vector<double> samples_ms;
};

/// Single-sample forward latency over `n_trials` inputs cycled from `inputs`,
/// after `warmup` untimed calls.
LatencyStats benchmark_inference(const Model& model, const TrainingSet& inputs, int n_trials,
                                 int warmup = 20);

/// Binary layout: 8-byte magic "MMTMODEL", little-endian uint64 header
/// length, JSON header, float32 weight blob in parameter_layout() order.
void save_model(const Model& model, const std::string& path);
Model load_model(const std::string& path);

}  // namespace mmtouch
