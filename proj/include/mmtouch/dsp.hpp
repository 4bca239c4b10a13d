#pragma once

#include <complex>
#include <memory>
#include <string>
#include <vector>

#include "mmtouch/radar_config.hpp"
#include "mmtouch/sim.hpp"

namespace mmtouch {

using cdouble = std::complex<double>;

enum class WindowKind { rectangular, hann, hamming };

const char* to_string(WindowKind w);
/// Throws ConfigError on an unknown name.
WindowKind parse_window(const std::string& name);

struct DspConfig {
    int oversampling = 8;
    WindowKind window = WindowKind::hann;
    double mti_beta = 0.05;

    /// Throws ConfigError unless oversampling >= 1 and 0 < beta < 1.
    void validate() const;
};

/// Window coefficients for the first n IF samples (symmetric form).
std::vector<double> make_window(WindowKind kind, int n);

/// Complex range profile of one frame, stored [rx][chirp][bin].
struct RangeProfileFrame {
    int frame_index = 0;
    int sensor_index = 0;
    int n_bins = 0;
    int n_chirps = 0;
    int n_rx = 0;
    std::vector<cdouble> values;

    RangeProfileFrame() = default;
    RangeProfileFrame(int n_bins, int n_chirps, int n_rx)
        : n_bins(n_bins),
          n_chirps(n_chirps),
          n_rx(n_rx),
          values(static_cast<std::size_t>(n_bins) * n_chirps * n_rx) {}

    std::size_t offset(int r, int c, int j) const {
        return (static_cast<std::size_t>(j) * n_chirps + c) * n_bins + r;
    }
    cdouble& at(int r, int c, int j) { return values[offset(r, c, j)]; }
    const cdouble& at(int r, int c, int j) const { return values[offset(r, c, j)]; }
};

/// Per-sensor IIR clutter estimate; all-zero before the first frame.
struct MtiState {
    std::vector<cdouble> clutter;
    bool initialized() const { return !clutter.empty(); }
};

struct BeamformedProfile {
    int frame_index = 0;
    int sensor_index = 0;
    std::vector<cdouble> values;  // [bin]
};

/// Chirp-averaged post-MTI profile of each antenna, stored [rx][bin].
struct PerRxProfiles {
    int frame_index = 0;
    int sensor_index = 0;
    int n_bins = 0;
    int n_rx = 0;
    std::vector<cdouble> values;

    const cdouble& at(int r, int j) const {
        return values[static_cast<std::size_t>(j) * n_bins + r];
    }
};

/// Zero-pad to N_os * N_IF, window, unnormalized forward DFT, keep the first
/// N_os * N_IF / 2 bins. Holds an FFTW plan and scratch buffers, so one
/// instance must not be shared between threads.
class RangeFft {
public:
    RangeFft(int n_if_samples, const DspConfig& config);
    ~RangeFft();
    RangeFft(const RangeFft&) = delete;
    RangeFft& operator=(const RangeFft&) = delete;
    RangeFft(RangeFft&&) noexcept;
    RangeFft& operator=(RangeFft&&) noexcept;

    int n_if_samples() const { return n_if_; }
    int fft_size() const { return n_fft_; }
    int n_bins() const { return n_fft_ / 2; }
    const std::vector<double>& window() const { return window_; }

    /// Throws ShapeError if the frame's sample count differs from N_IF.
    RangeProfileFrame operator()(const IFFrame& frame) const;

    /// Full-length transform of one zero-padded, windowed chirp.
    std::vector<cdouble> full_spectrum(const double* samples) const;

private:
    struct Plan;
    int n_if_;
    int n_fft_;
    std::vector<double> window_;
    std::unique_ptr<Plan> plan_;
};

RangeProfileFrame compute_range_fft(const IFFrame& frame, const DspConfig& config);

/// x_c <- beta * x_r + (1 - beta) * x_c;  returns x_r - x_c.
/// Throws ConfigError for beta outside (0, 1) and ShapeError on a state of a
/// different shape. An empty state is treated as all-zero.
RangeProfileFrame mti_filter(const RangeProfileFrame& profile, MtiState& state, double beta);

/// Mean over all chirps and antennas.
BeamformedProfile beamform_average(const RangeProfileFrame& post_mti);

/// Mean over chirps, per antenna.
PerRxProfiles per_rx_chirp_average(const RangeProfileFrame& post_mti);

/// Streaming per-sensor chain: range FFT -> MTI -> chirp/antenna averages.
/// Frames must be pushed in increasing frame order.
class SensorChain {
public:
    SensorChain(const RadarConfig& radar, const DspConfig& config);

    struct Output {
        BeamformedProfile beamformed;
        PerRxProfiles per_rx;
    };

    Output push(const IFFrame& frame);
    void reset() { state_ = {}; }
    const MtiState& state() const { return state_; }

private:
    DspConfig config_;
    RangeFft fft_;
    MtiState state_;
};

}  // namespace mmtouch
