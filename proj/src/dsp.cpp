#include "mmtouch/dsp.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>

namespace mmtouch {

namespace {

// FFTW planning is not thread-safe; execution with new-array execute is.
std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}

}  // namespace

void DspConfig::validate() const {
    if (oversampling < 1) throw ConfigError("dsp: oversampling must be an integer >= 1");
    if (!(mti_beta > 0.0 && mti_beta < 1.0)) throw ConfigError("dsp: MTI beta must lie in (0, 1)");
}

const char* to_string(WindowKind w) {
    switch (w) {
        case WindowKind::rectangular: return "rectangular";
        case WindowKind::hann: return "hann";
        case WindowKind::hamming: return "hamming";
    }
    return "?";
}

WindowKind parse_window(const std::string& s) {
    if (s == "rectangular") return WindowKind::rectangular;
    if (s == "hann") return WindowKind::hann;
    if (s == "hamming") return WindowKind::hamming;
    throw ConfigError("unknown window '" + s + "'");
}

std::vector<double> make_window(WindowKind kind, int n) {
    std::vector<double> w(static_cast<std::size_t>(n), 1.0);
    if (n < 2 || kind == WindowKind::rectangular) return w;
    const double a0 = kind == WindowKind::hann ? 0.5 : 0.54;
    for (int s = 0; s < n; ++s)
        w[static_cast<std::size_t>(s)] = a0 - (1.0 - a0) * std::cos(2.0 * kPi * s / (n - 1));
    return w;
}

struct RangeFft::Plan {
    double* in = nullptr;
    fftw_complex* out = nullptr;
    fftw_plan plan = nullptr;

    explicit Plan(int n) {
        std::lock_guard lock(planner_mutex());
        in = fftw_alloc_real(static_cast<std::size_t>(n));
        out = fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
        plan = fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE);
    }
    ~Plan() {
        std::lock_guard lock(planner_mutex());
        fftw_destroy_plan(plan);
        fftw_free(in);
        fftw_free(out);
    }
};

RangeFft::RangeFft(int n_if_samples, const DspConfig& config)
    : n_if_(n_if_samples),
      n_fft_(config.oversampling * n_if_samples),
      window_(make_window(config.window, n_if_samples)) {
    config.validate();
    if (n_if_samples < 2 || n_fft_ % 2 != 0) throw ConfigError("dsp: FFT length must be even");
    plan_ = std::make_unique<Plan>(n_fft_);
}

RangeFft::~RangeFft() = default;
RangeFft::RangeFft(RangeFft&&) noexcept = default;
RangeFft& RangeFft::operator=(RangeFft&&) noexcept = default;

std::vector<cdouble> RangeFft::full_spectrum(const double* samples) const {
    double* in = plan_->in;
    for (int s = 0; s < n_if_; ++s) in[s] = samples[s] * window_[static_cast<std::size_t>(s)];
    std::fill(in + n_if_, in + n_fft_, 0.0);
    fftw_execute(plan_->plan);
    std::vector<cdouble> full(static_cast<std::size_t>(n_fft_));
    for (int r = 0; r <= n_fft_ / 2; ++r) full[static_cast<std::size_t>(r)] = {plan_->out[r][0], plan_->out[r][1]};
    for (int r = n_fft_ / 2 + 1; r < n_fft_; ++r)
        full[static_cast<std::size_t>(r)] = std::conj(full[static_cast<std::size_t>(n_fft_ - r)]);
    return full;
}

RangeProfileFrame RangeFft::operator()(const IFFrame& frame) const {
    if (frame.n_samples != n_if_) throw ShapeError("IF frame sample count does not match N_IF");
    RangeProfileFrame out(n_bins(), frame.n_chirps, frame.n_rx);
    out.frame_index = frame.frame_index;
    out.sensor_index = frame.sensor_index;
    double* in = plan_->in;
    std::fill(in + n_if_, in + n_fft_, 0.0);
    for (int j = 0; j < frame.n_rx; ++j) {
        for (int c = 0; c < frame.n_chirps; ++c) {
            const double* x = &frame.samples[frame.offset(0, c, j)];
            for (int s = 0; s < n_if_; ++s) in[s] = x[s] * window_[static_cast<std::size_t>(s)];
            fftw_execute(plan_->plan);
            cdouble* dst = &out.values[out.offset(0, c, j)];
            for (int r = 0; r < n_bins(); ++r) dst[r] = {plan_->out[r][0], plan_->out[r][1]};
        }
    }
    return out;
}

RangeProfileFrame compute_range_fft(const IFFrame& frame, const DspConfig& config) {
    return RangeFft(frame.n_samples, config)(frame);
}

RangeProfileFrame mti_filter(const RangeProfileFrame& profile, MtiState& state, double beta) {
    if (!(beta > 0.0 && beta < 1.0)) throw ConfigError("dsp: MTI beta must lie in (0, 1)");
    if (!state.initialized()) state.clutter.assign(profile.values.size(), cdouble{});
    if (state.clutter.size() != profile.values.size())
        throw ShapeError("MTI state shape does not match the range profile");
    RangeProfileFrame out = profile;
    for (std::size_t k = 0; k < profile.values.size(); ++k) {
        const cdouble c = beta * profile.values[k] + (1.0 - beta) * state.clutter[k];
        state.clutter[k] = c;
        out.values[k] = profile.values[k] - c;
    }
    return out;
}

PerRxProfiles per_rx_chirp_average(const RangeProfileFrame& p) {
    PerRxProfiles out;
    out.frame_index = p.frame_index;
    out.sensor_index = p.sensor_index;
    out.n_bins = p.n_bins;
    out.n_rx = p.n_rx;
    out.values.assign(static_cast<std::size_t>(p.n_bins) * p.n_rx, cdouble{});
    for (int j = 0; j < p.n_rx; ++j) {
        cdouble* dst = &out.values[static_cast<std::size_t>(j) * p.n_bins];
        for (int c = 0; c < p.n_chirps; ++c) {
            const cdouble* src = &p.values[p.offset(0, c, j)];
            for (int r = 0; r < p.n_bins; ++r) dst[r] += src[r];
        }
        for (int r = 0; r < p.n_bins; ++r) dst[r] /= static_cast<double>(p.n_chirps);
    }
    return out;
}

BeamformedProfile beamform_average(const PerRxProfiles& per_rx) {
    BeamformedProfile out;
    out.frame_index = per_rx.frame_index;
    out.sensor_index = per_rx.sensor_index;
    out.values.assign(static_cast<std::size_t>(per_rx.n_bins), cdouble{});
    for (int j = 0; j < per_rx.n_rx; ++j)
        for (int r = 0; r < per_rx.n_bins; ++r) out.values[static_cast<std::size_t>(r)] += per_rx.at(r, j);
    for (auto& v : out.values) v /= static_cast<double>(per_rx.n_rx);
    return out;
}

BeamformedProfile beamform_average(const RangeProfileFrame& post_mti) {
    return beamform_average(per_rx_chirp_average(post_mti));
}

SensorChain::SensorChain(const RadarConfig& radar, const DspConfig& config)
    : config_(config), fft_(radar.n_if_samples, config) {}

SensorChain::Output SensorChain::push(const IFFrame& frame) {
    const RangeProfileFrame post = mti_filter(fft_(frame), state_, config_.mti_beta);
    PerRxProfiles per_rx = per_rx_chirp_average(post);
    BeamformedProfile bf = beamform_average(per_rx);
    return {std::move(bf), std::move(per_rx)};
}

}  // namespace mmtouch
