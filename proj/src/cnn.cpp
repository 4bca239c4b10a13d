#include "mmtouch/cnn.hpp"

#include <zlib.h>

#include <Eigen/Core>
#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "mmtouch/metrics.hpp"

namespace mmtouch {

using json = nlohmann::ordered_json;

const char* to_string(Padding p) { return p == Padding::valid ? "valid" : "same"; }
const char* to_string(InputMode m) { return m == InputMode::magnitude ? "magnitude" : "real_imag"; }

Padding parse_padding(const std::string& s) {
    if (s == "valid") return Padding::valid;
    if (s == "same") return Padding::same;
    throw ConfigError("unknown padding '" + s + "'");
}

InputMode parse_input_mode(const std::string& s) {
    if (s == "magnitude") return InputMode::magnitude;
    if (s == "real_imag" || s == "real-imag") return InputMode::real_imag;
    throw ConfigError("unknown input mode '" + s + "'");
}

void ModelConfig::validate() const {
    if (conv_filters.empty()) throw ConfigError("model: at least one conv stage is required");
    for (int f : conv_filters)
        if (f < 1) throw ConfigError("model: conv filter counts must be positive");
    if (kernel < 1 || kernel % 2 == 0) throw ConfigError("model: kernel size must be odd");
    if (pool < 1) throw ConfigError("model: pool size must be >= 1");
    if (dense_units < 1) throw ConfigError("model: dense_units must be positive");
    if (output_units != 2) throw ConfigError("model: the regressor emits exactly 2 outputs");
    if (input_frames < 1 || input_bins < 1 || input_channels < 1)
        throw ConfigError("model: input dimensions must be positive");
}

LayerShapes layer_shapes(const ModelConfig& cfg) {
    cfg.validate();
    LayerShapes s;
    s.input = {cfg.input_frames, cfg.input_bins, cfg.input_channels};
    TensorShape cur = s.input;
    for (int filters : cfg.conv_filters) {
        TensorShape conv = cur;
        if (cfg.padding == Padding::valid) {
            conv.h = cur.h - cfg.kernel + 1;
            conv.w = cur.w - cfg.kernel + 1;
        }
        conv.c = filters;
        if (conv.h < 1 || conv.w < 1) throw ConfigError("model: convolution output collapses to zero size");
        TensorShape pooled{conv.h / cfg.pool, conv.w / cfg.pool, filters};
        if (pooled.h < 1 || pooled.w < 1) throw ConfigError("model: pooling output collapses to zero size");
        s.conv.push_back(conv);
        s.pool.push_back(pooled);
        cur = pooled;
    }
    s.flatten = static_cast<int>(cur.size());
    return s;
}

std::size_t ParamTensor::size() const {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

std::vector<ParamTensor> parameter_layout(const ModelConfig& cfg) {
    const LayerShapes s = layer_shapes(cfg);
    std::vector<ParamTensor> out;
    int cin = cfg.input_channels;
    for (std::size_t k = 0; k < cfg.conv_filters.size(); ++k) {
        const int cout = cfg.conv_filters[k];
        const std::string name = "conv" + std::to_string(k + 1);
        out.push_back({name + ".weight", {cfg.kernel, cfg.kernel, cin, cout}});
        out.push_back({name + ".bias", {cout}});
        cin = cout;
    }
    out.push_back({"dense1.weight", {s.flatten, cfg.dense_units}});
    out.push_back({"dense1.bias", {cfg.dense_units}});
    out.push_back({"dense2.weight", {cfg.dense_units, cfg.output_units}});
    out.push_back({"dense2.bias", {cfg.output_units}});
    return out;
}

std::size_t parameter_count(const ModelConfig& cfg) {
    const LayerShapes s = layer_shapes(cfg);
    const std::size_t k2 = static_cast<std::size_t>(cfg.kernel) * cfg.kernel;
    std::size_t n = 0;
    std::size_t cin = static_cast<std::size_t>(cfg.input_channels);
    for (int f : cfg.conv_filters) {
        n += (k2 * cin + 1) * static_cast<std::size_t>(f);
        cin = static_cast<std::size_t>(f);
    }
    n += (static_cast<std::size_t>(s.flatten) + 1) * cfg.dense_units;
    n += (static_cast<std::size_t>(cfg.dense_units) + 1) * cfg.output_units;
    return n;
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

template <typename T>
void im2col(const T* src, const TensorShape& in, const TensorShape& out, int k, int pad,
            Buffer<T>& patches) {
    const int cols = k * k * in.c;
    patches.resize(static_cast<std::size_t>(out.h) * out.w * cols);
    T* dst = patches.data();
    for (int oy = 0; oy < out.h; ++oy)
        for (int ox = 0; ox < out.w; ++ox)
            for (int ky = 0; ky < k; ++ky) {
                const int iy = oy + ky - pad;
                for (int kx = 0; kx < k; ++kx, dst += in.c) {
                    const int ix = ox + kx - pad;
                    if (iy < 0 || iy >= in.h || ix < 0 || ix >= in.w)
                        std::fill(dst, dst + in.c, T(0));
                    else
                        std::copy_n(src + (static_cast<std::size_t>(iy) * in.w + ix) * in.c, in.c, dst);
                }
            }
}

template <typename T>
void col2im(const Buffer<T>& dpatches, const TensorShape& in, const TensorShape& out, int k,
            int pad, Buffer<T>& dsrc) {
    dsrc.assign(in.size(), T(0));
    const T* p = dpatches.data();
    for (int oy = 0; oy < out.h; ++oy)
        for (int ox = 0; ox < out.w; ++ox)
            for (int ky = 0; ky < k; ++ky) {
                const int iy = oy + ky - pad;
                for (int kx = 0; kx < k; ++kx, p += in.c) {
                    const int ix = ox + kx - pad;
                    if (iy < 0 || iy >= in.h || ix < 0 || ix >= in.w) continue;
                    T* d = dsrc.data() + (static_cast<std::size_t>(iy) * in.w + ix) * in.c;
                    for (int c = 0; c < in.c; ++c) d[c] += p[c];
                }
            }
}

template <typename T>
void maxpool(const Buffer<T>& src, const TensorShape& in, const TensorShape& out, int p,
             Buffer<T>& dst, std::vector<int>& arg) {
    dst.resize(out.size());
    arg.resize(out.size());
    for (int py = 0; py < out.h; ++py)
        for (int px = 0; px < out.w; ++px)
            for (int c = 0; c < out.c; ++c) {
                int best = (py * p * in.w + px * p) * in.c + c;
                for (int dy = 0; dy < p; ++dy)
                    for (int dx = 0; dx < p; ++dx) {
                        const int idx = ((py * p + dy) * in.w + px * p + dx) * in.c + c;
                        if (src[static_cast<std::size_t>(idx)] > src[static_cast<std::size_t>(best)]) best = idx;
                    }
                const std::size_t o = (static_cast<std::size_t>(py) * out.w + px) * out.c + c;
                dst[o] = src[static_cast<std::size_t>(best)];
                arg[o] = best;
            }
}

}  // namespace

template <typename T>
Network<T>::Network(ModelConfig config) : config_(std::move(config)), shapes_(layer_shapes(config_)) {
    for (const auto& p : parameter_layout(config_)) params_.emplace_back(p.size(), T(0));
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
}

template <typename T>
void Network<T>::init_uniform(std::uint64_t seed) {
    std::mt19937_64 rng(derive_seed(seed, 0x77656967ULL));
    const auto layout = parameter_layout(config_);
    for (std::size_t k = 0; k < params_.size(); ++k) {
        const auto& shape = layout[k].shape;
        if (shape.size() == 1) {
            std::fill(params_[k].begin(), params_[k].end(), T(0));
            continue;
        }
        std::size_t fan_in = 1;
        for (std::size_t d = 0; d + 1 < shape.size(); ++d) fan_in *= static_cast<std::size_t>(shape[d]);
        const bool last = k + 2 == params_.size();
        const double limit = std::sqrt((last ? 3.0 : 6.0) / static_cast<double>(fan_in));
        std::uniform_real_distribution<double> u(-limit, limit);
        for (auto& w : params_[k]) w = static_cast<T>(u(rng));
    }
}

template <typename T>
void Network<T>::forward_features(std::span<const T> input, Workspace<T>& ws) const {
    if (input.size() != shapes_.input.size())
        throw ShapeError("model input has " + std::to_string(input.size()) + " values, expected " +
                         std::to_string(shapes_.input.size()));
    const std::size_t n_stages = config_.conv_filters.size();
    ws.patches.resize(n_stages);
    ws.conv_out.resize(n_stages);
    ws.pool_out.resize(n_stages);
    ws.pool_arg.resize(n_stages);
    const int k = config_.kernel;
    const int pad = config_.padding == Padding::same ? (k - 1) / 2 : 0;
    const T* src = input.data();
    for (std::size_t s = 0; s < n_stages; ++s) {
        const TensorShape& in = s == 0 ? shapes_.input : shapes_.pool[s - 1];
        const TensorShape& out = shapes_.conv[s];
        im2col(src, in, out, k, pad, ws.patches[s]);
        const Eigen::Index rows = static_cast<Eigen::Index>(out.h) * out.w;
        const Eigen::Index kkc = static_cast<Eigen::Index>(k) * k * in.c;
        Eigen::Map<const RowMat<T>> P(ws.patches[s].data(), rows, kkc);
        Eigen::Map<const RowMat<T>> W(params_[2 * s].data(), kkc, out.c);
        Eigen::Map<const RowVec<T>> b(params_[2 * s + 1].data(), out.c);
        ws.conv_out[s].resize(out.size());
        Eigen::Map<RowMat<T>> Y(ws.conv_out[s].data(), rows, out.c);
        Y.noalias() = P * W;
        Y.rowwise() += b;
        Y = Y.cwiseMax(T(0));
        maxpool(ws.conv_out[s], out, shapes_.pool[s], config_.pool, ws.pool_out[s], ws.pool_arg[s]);
        src = ws.pool_out[s].data();
    }
}

template <typename T>
std::array<T, 2> Network<T>::forward(std::span<const T> input, Workspace<T>& ws) const {
    forward_features(input, ws);
    const std::size_t n_stages = config_.conv_filters.size();
    const int F = shapes_.flatten;
    const int H = config_.dense_units;
    Eigen::Map<const RowVec<T>> flat(ws.pool_out[n_stages - 1].data(), F);
    Eigen::Map<const RowMat<T>> W1(params_[2 * n_stages].data(), F, H);
    Eigen::Map<const RowVec<T>> b1(params_[2 * n_stages + 1].data(), H);
    ws.hidden.resize(static_cast<std::size_t>(H));
    Eigen::Map<RowVec<T>> h(ws.hidden.data(), H);
    h.noalias() = flat * W1;
    h = (h + b1).cwiseMax(T(0));
    const auto& W2 = params_[2 * n_stages + 2];
    const auto& b2 = params_[2 * n_stages + 3];
    std::array<T, 2> y{};
    for (int o = 0; o < 2; ++o) {
        T z = b2[static_cast<std::size_t>(o)];
        for (int u = 0; u < H; ++u) z += ws.hidden[static_cast<std::size_t>(u)] * W2[static_cast<std::size_t>(u * 2 + o)];
        y[static_cast<std::size_t>(o)] = output_scale[static_cast<std::size_t>(o)] * z + output_offset[static_cast<std::size_t>(o)];
    }
    return y;
}

template <typename T>
std::vector<T> Network<T>::forward_batch(std::span<const T> inputs, std::size_t n) const {
    const std::size_t sz = input_size();
    if (inputs.size() != n * sz) throw ShapeError("batch size does not match the input length");
    Workspace<T> ws;
    std::vector<T> out(2 * n);
    for (std::size_t b = 0; b < n; ++b) {
        const auto y = forward(inputs.subspan(b * sz, sz), ws);
        out[2 * b] = y[0];
        out[2 * b + 1] = y[1];
    }
    return out;
}

template <typename T>
T Network<T>::loss(std::span<const T> inputs, std::span<const T> labels, std::size_t n) const {
    if (labels.size() != 2 * n) throw ShapeError("label count does not match the batch");
    if (n == 0) return T(0);
    const auto y = forward_batch(inputs, n);
    T sum = 0;
    for (std::size_t i = 0; i < 2 * n; ++i) sum += (y[i] - labels[i]) * (y[i] - labels[i]);
    return sum / static_cast<T>(2 * n);
}

template <typename T>
T Network<T>::loss_and_gradient(std::span<const T> inputs, std::span<const T> labels,
                                std::size_t n, std::vector<Buffer<T>>& grads,
                                Workspace<T>& ws) const {
    const std::size_t sz = input_size();
    if (inputs.size() != n * sz || labels.size() != 2 * n)
        throw ShapeError("batch inputs/labels do not match the batch size");
    grads.resize(params_.size());
    for (std::size_t k = 0; k < params_.size(); ++k) grads[k].assign(params_[k].size(), T(0));
    if (n == 0) return T(0);

    const std::size_t n_stages = config_.conv_filters.size();
    const int F = shapes_.flatten;
    const int H = config_.dense_units;
    const int k = config_.kernel;
    const int pad = config_.padding == Padding::same ? (k - 1) / 2 : 0;
    const T inv_n = T(1) / static_cast<T>(n);
    T total = 0;

    for (std::size_t b = 0; b < n; ++b) {
        const auto y = forward(inputs.subspan(b * sz, sz), ws);
        T dz[2];
        for (std::size_t o = 0; o < 2; ++o) {
            const T e = y[o] - labels[2 * b + o];
            total += e * e;
            dz[o] = e * inv_n * output_scale[o];
        }
        // dense2
        const auto& W2 = params_[2 * n_stages + 2];
        auto& gW2 = grads[2 * n_stages + 2];
        auto& gb2 = grads[2 * n_stages + 3];
        ws.grad_a.assign(static_cast<std::size_t>(H), T(0));
        for (int u = 0; u < H; ++u) {
            const T h = ws.hidden[static_cast<std::size_t>(u)];
            for (int o = 0; o < 2; ++o) {
                gW2[static_cast<std::size_t>(u * 2 + o)] += h * dz[o];
                ws.grad_a[static_cast<std::size_t>(u)] += W2[static_cast<std::size_t>(u * 2 + o)] * dz[o];
            }
            if (h <= T(0)) ws.grad_a[static_cast<std::size_t>(u)] = T(0);
        }
        gb2[0] += dz[0];
        gb2[1] += dz[1];
        // dense1
        Eigen::Map<const RowVec<T>> flat(ws.pool_out[n_stages - 1].data(), F);
        Eigen::Map<const RowVec<T>> dh(ws.grad_a.data(), H);
        Eigen::Map<RowMat<T>> gW1(grads[2 * n_stages].data(), F, H);
        Eigen::Map<RowVec<T>> gb1(grads[2 * n_stages + 1].data(), H);
        gW1.noalias() += flat.transpose() * dh;
        gb1 += dh;
        Eigen::Map<const RowMat<T>> W1(params_[2 * n_stages].data(), F, H);
        ws.grad_b.resize(static_cast<std::size_t>(F));
        Eigen::Map<RowVec<T>> dflat(ws.grad_b.data(), F);
        dflat.noalias() = dh * W1.transpose();

        // conv stages, last to first; ws.grad_b holds d(pool output of stage s)
        for (std::size_t si = n_stages; si-- > 0;) {
            const TensorShape& in = si == 0 ? shapes_.input : shapes_.pool[si - 1];
            const TensorShape& out = shapes_.conv[si];
            const auto& conv = ws.conv_out[si];
            const auto& arg = ws.pool_arg[si];
            ws.grad_a.assign(out.size(), T(0));
            for (std::size_t i = 0; i < arg.size(); ++i)
                ws.grad_a[static_cast<std::size_t>(arg[i])] += ws.grad_b[i];
            for (std::size_t i = 0; i < conv.size(); ++i)
                if (conv[i] <= T(0)) ws.grad_a[i] = T(0);
            const Eigen::Index rows = static_cast<Eigen::Index>(out.h) * out.w;
            const Eigen::Index kkc = static_cast<Eigen::Index>(k) * k * in.c;
            Eigen::Map<const RowMat<T>> D(ws.grad_a.data(), rows, out.c);
            Eigen::Map<const RowMat<T>> P(ws.patches[si].data(), rows, kkc);
            Eigen::Map<RowMat<T>> gW(grads[2 * si].data(), kkc, out.c);
            Eigen::Map<RowVec<T>> gb(grads[2 * si + 1].data(), out.c);
            gW.noalias() += P.transpose() * D;
            gb += D.colwise().sum();
            if (si == 0) break;
            Eigen::Map<const RowMat<T>> W(params_[2 * si].data(), kkc, out.c);
            ws.grad_patches.resize(static_cast<std::size_t>(rows * kkc));
            Eigen::Map<RowMat<T>> dP(ws.grad_patches.data(), rows, kkc);
            dP.noalias() = D * W.transpose();
            col2im(ws.grad_patches, in, out, k, pad, ws.grad_b);
        }
    }
    return total / static_cast<T>(2 * n);
}

template class Network<float>;
template class Network<double>;

std::vector<float> featurize_input(const FeatureTensor& t, InputMode mode) {
    const std::size_t cells = static_cast<std::size_t>(t.n_frames) * t.n_bins;
    const int n_ch = mode == InputMode::magnitude ? t.n_sensors : 2 * t.n_sensors;
    std::vector<float> out(cells * static_cast<std::size_t>(n_ch));
    for (std::size_t cell = 0; cell < cells; ++cell) {
        const cfloat* src = &t.values[cell * static_cast<std::size_t>(t.n_sensors)];
        float* dst = &out[cell * static_cast<std::size_t>(n_ch)];
        for (int i = 0; i < t.n_sensors; ++i) {
            if (mode == InputMode::magnitude) {
                dst[i] = static_cast<float>(std::hypot(static_cast<double>(src[i].real()),
                                                       static_cast<double>(src[i].imag())));
            } else {
                dst[i] = src[i].real();
                dst[i + t.n_sensors] = src[i].imag();
            }
        }
    }
    float peak = 0.0f;
    for (float v : out) peak = std::max(peak, std::abs(v));
    if (peak == 0.0f) peak = 1.0f;
    for (float& v : out) v /= peak;
    return out;
}

TrainingSet make_training_set(const Dataset& d, InputMode mode) {
    TrainingSet s;
    s.n = d.size();
    const int ch = mode == InputMode::magnitude ? d.n_sensors : 2 * d.n_sensors;
    s.input_size = static_cast<std::size_t>(d.n_frames) * d.n_bins * ch;
    s.inputs.reserve(s.n * s.input_size);
    for (const auto& t : d.items) {
        const auto x = featurize_input(t, mode);
        s.inputs.insert(s.inputs.end(), x.begin(), x.end());
        s.labels.push_back(static_cast<float>(t.label_cm.x));
        s.labels.push_back(static_cast<float>(t.label_cm.y));
        s.events.push_back(t.event);
    }
    return s;
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("training: learning rate must be positive");
    if (batch_size < 1) throw ConfigError("training: batch size must be >= 1");
    if (epochs < 0) throw ConfigError("training: epochs must be >= 0");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0))
        throw ConfigError("training: Adam betas must lie in [0, 1)");
}

namespace {

double set_loss(const Model& m, const TrainingSet& s) {
    return static_cast<double>(m.loss(s.inputs, s.labels, s.n));
}

}  // namespace

std::pair<Model, TrainReport> train(Model model, const TrainingSet& tr, const TrainingSet& val,
                                    const TrainConfig& cfg) {
    cfg.validate();
    if (tr.n == 0) throw TrainingError("training set is empty");
    if (tr.input_size != model.input_size() || (val.n > 0 && val.input_size != model.input_size()))
        throw ShapeError("dataset tensors do not match the model input shape");
    const auto t0 = std::chrono::steady_clock::now();

    for (int o = 0; o < 2; ++o) {
        double mean = 0.0, sq = 0.0;
        for (std::size_t i = 0; i < tr.n; ++i) mean += tr.labels[2 * i + static_cast<std::size_t>(o)];
        mean /= static_cast<double>(tr.n);
        for (std::size_t i = 0; i < tr.n; ++i) {
            const double d = tr.labels[2 * i + static_cast<std::size_t>(o)] - mean;
            sq += d * d;
        }
        const double sd = std::sqrt(sq / static_cast<double>(tr.n));
        model.output_offset[static_cast<std::size_t>(o)] = static_cast<float>(mean);
        model.output_scale[static_cast<std::size_t>(o)] = static_cast<float>(std::max(sd, 1e-3));
    }

    TrainReport report;
    report.initial_val_loss = val.n > 0 ? set_loss(model, val) : set_loss(model, tr);

    auto& params = model.parameters();
    std::vector<Buffer<float>> m1(params.size()), m2(params.size()), grads;
    for (std::size_t k = 0; k < params.size(); ++k) {
        m1[k].assign(params[k].size(), 0.0f);
        m2[k].assign(params[k].size(), 0.0f);
    }
    std::vector<Buffer<float>> best = params;
    double best_loss = std::numeric_limits<double>::infinity();

    std::mt19937_64 rng(derive_seed(cfg.seed, 0x7368756666ULL));
    std::vector<std::size_t> order(tr.n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<float> bx, by;
    Workspace<float> ws;
    long step = 0;
    const auto b1 = static_cast<float>(cfg.adam_beta1);
    const auto b2 = static_cast<float>(cfg.adam_beta2);
    const auto eps = static_cast<float>(cfg.adam_epsilon);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double running = 0.0;
        for (std::size_t start = 0; start < tr.n; start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t bs = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), tr.n - start);
            bx.resize(bs * tr.input_size);
            by.resize(2 * bs);
            for (std::size_t b = 0; b < bs; ++b) {
                const std::size_t idx = order[start + b];
                std::copy_n(tr.inputs.begin() + static_cast<std::ptrdiff_t>(idx * tr.input_size), tr.input_size,
                            bx.begin() + static_cast<std::ptrdiff_t>(b * tr.input_size));
                by[2 * b] = tr.labels[2 * idx];
                by[2 * b + 1] = tr.labels[2 * idx + 1];
            }
            const float loss = model.loss_and_gradient(bx, by, bs, grads, ws);
            if (!std::isfinite(loss))
                throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                    std::to_string(step));
            running += static_cast<double>(loss) * static_cast<double>(bs);
            ++step;
            const float c1 = 1.0f - static_cast<float>(std::pow(cfg.adam_beta1, static_cast<double>(step)));
            const float c2 = 1.0f - static_cast<float>(std::pow(cfg.adam_beta2, static_cast<double>(step)));
            const float lr = static_cast<float>(cfg.learning_rate);
            for (std::size_t k = 0; k < params.size(); ++k) {
                float* p = params[k].data();
                float* m = m1[k].data();
                float* v = m2[k].data();
                const float* g = grads[k].data();
                for (std::size_t i = 0; i < params[k].size(); ++i) {
                    m[i] = b1 * m[i] + (1.0f - b1) * g[i];
                    v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
                    p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
                }
            }
        }
        EpochStats st;
        st.epoch = epoch;
        st.train_loss = running / static_cast<double>(tr.n);
        st.val_loss = val.n > 0 ? set_loss(model, val) : st.train_loss;
        if (!std::isfinite(st.val_loss)) throw TrainingError("non-finite validation loss");
        if (st.val_loss < best_loss) {
            best_loss = st.val_loss;
            best = params;
            report.best_epoch = epoch;
        }
        report.epochs.push_back(st);
        if (cfg.verbose)
            std::cerr << "epoch " << epoch << "  train " << st.train_loss << "  val " << st.val_loss << '\n';
    }
    if (cfg.epochs > 0) params = best;

    const TrainingSet& eval = val.n > 0 ? val : tr;
    const auto y = model.forward_batch(eval.inputs, eval.n);
    std::vector<double> errs;
    for (std::size_t i = 0; i < eval.n; ++i)
        errs.push_back(std::hypot(static_cast<double>(y[2 * i] - eval.labels[2 * i]),
                                  static_cast<double>(y[2 * i + 1] - eval.labels[2 * i + 1])));
    report.val_median_error_cm = percentile_nearest_rank(errs, 0.5);
    report.val_p90_error_cm = percentile_nearest_rank(errs, 0.9);
    report.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {std::move(model), report};
}

LatencyStats benchmark_inference(const Model& model, const TrainingSet& inputs, int n_trials,
                                 int warmup) {
    if (n_trials < 1) throw ConfigError("benchmark: n_trials must be >= 1");
    if (inputs.n == 0) throw ConfigError("benchmark: no input samples");
    Workspace<float> ws;
    volatile float sink = 0.0f;
    for (int i = 0; i < warmup; ++i) sink = sink + model.forward(inputs.input(static_cast<std::size_t>(i) % inputs.n), ws)[0];
    LatencyStats st;
    for (int i = 0; i < n_trials; ++i) {
        const auto x = inputs.input(static_cast<std::size_t>(i) % inputs.n);
        const auto a = std::chrono::steady_clock::now();
        const auto y = model.forward(x, ws);
        const auto b = std::chrono::steady_clock::now();
        sink = sink + y[0];
        st.samples_ms.push_back(std::chrono::duration<double, std::milli>(b - a).count());
    }
    st.median_ms = percentile_nearest_rank(st.samples_ms, 0.5);
    st.p90_ms = percentile_nearest_rank(st.samples_ms, 0.9);
    return st;
}

namespace {

constexpr char kModelMagic[8] = {'M', 'M', 'T', 'M', 'O', 'D', 'E', 'L'};
constexpr int kModelVersion = 1;

json config_to_json(const ModelConfig& c) {
    return {{"conv_filters", c.conv_filters},   {"kernel", c.kernel},
            {"pool", c.pool},                   {"dense_units", c.dense_units},
            {"output_units", c.output_units},   {"padding", to_string(c.padding)},
            {"input_mode", to_string(c.input_mode)}, {"input_frames", c.input_frames},
            {"input_bins", c.input_bins},       {"input_channels", c.input_channels}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.conv_filters = j.at("conv_filters").get<std::vector<int>>();
    c.kernel = j.at("kernel").get<int>();
    c.pool = j.at("pool").get<int>();
    c.dense_units = j.at("dense_units").get<int>();
    c.output_units = j.at("output_units").get<int>();
    c.padding = parse_padding(j.at("padding").get<std::string>());
    c.input_mode = parse_input_mode(j.at("input_mode").get<std::string>());
    c.input_frames = j.at("input_frames").get<int>();
    c.input_bins = j.at("input_bins").get<int>();
    c.input_channels = j.at("input_channels").get<int>();
    return c;
}

}  // namespace

void save_model(const Model& model, const std::string& path) {
    static_assert(std::endian::native == std::endian::little, "model I/O assumes little-endian");
    uLong crc = crc32_z(0L, Z_NULL, 0);
    json layers = json::array();
    std::size_t offset = 0;
    const auto layout = parameter_layout(model.config());
    for (std::size_t k = 0; k < layout.size(); ++k) {
        const auto& p = model.parameters()[k];
        crc = crc32_z(crc, reinterpret_cast<const Bytef*>(p.data()), p.size() * sizeof(float));
        layers.push_back({{"name", layout[k].name}, {"shape", layout[k].shape}, {"offset", offset}});
        offset += p.size() * sizeof(float);
    }
    json header = {{"format", "mmtouch-model"},
                   {"version", kModelVersion},
                   {"dtype", "float32"},
                   {"byte_order", "little"},
                   {"config", config_to_json(model.config())},
                   {"output_scale", {model.output_scale[0], model.output_scale[1]}},
                   {"output_offset", {model.output_offset[0], model.output_offset[1]}},
                   {"n_params", model.parameter_count()},
                   {"blob_bytes", offset},
                   {"layers", layers},
                   {"crc32", static_cast<std::uint32_t>(crc)}};
    const std::string h = header.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path);
    out.write(kModelMagic, sizeof(kModelMagic));
    const std::uint64_t len = h.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    for (const auto& p : model.parameters())
        out.write(reinterpret_cast<const char*>(p.data()), static_cast<std::streamsize>(p.size() * sizeof(float)));
    if (!out) throw Error("failed writing " + path);
}

Model load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DependencyError("missing model file " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (in.gcount() != 8 || std::memcmp(magic, kModelMagic, 8) != 0)
        throw FormatError(path + ": not a model file");
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (in.gcount() != sizeof(len) || len > (1u << 24)) throw FormatError(path + ": truncated header");
    std::string h(len, '\0');
    in.read(h.data(), static_cast<std::streamsize>(len));
    if (static_cast<std::uint64_t>(in.gcount()) != len) throw FormatError(path + ": truncated header");
    json header;
    try {
        header = json::parse(h);
    } catch (const json::exception& e) {
        throw FormatError(path + ": " + e.what());
    }
    if (header.value("format", "") != "mmtouch-model") throw FormatError(path + ": unknown format");
    if (header.value("version", -1) != kModelVersion) throw FormatError(path + ": unsupported version");
    Model model(config_from_json(header.at("config")));
    uLong crc = crc32_z(0L, Z_NULL, 0);
    for (auto& p : model.parameters()) {
        const auto bytes = static_cast<std::streamsize>(p.size() * sizeof(float));
        in.read(reinterpret_cast<char*>(p.data()), bytes);
        if (in.gcount() != bytes) throw FormatError(path + ": truncated weight blob");
        crc = crc32_z(crc, reinterpret_cast<const Bytef*>(p.data()), p.size() * sizeof(float));
    }
    if (static_cast<std::uint32_t>(crc) != header.at("crc32").get<std::uint32_t>())
        throw FormatError(path + ": checksum mismatch");
    const auto sc = header.at("output_scale").get<std::vector<float>>();
    const auto off = header.at("output_offset").get<std::vector<float>>();
    model.output_scale = {sc.at(0), sc.at(1)};
    model.output_offset = {off.at(0), off.at(1)};
    return model;
}

}  // namespace mmtouch
