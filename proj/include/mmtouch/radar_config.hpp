#pragma once

#include "mmtouch/common.hpp"

namespace mmtouch {

/// FMCW waveform and array parameters of one radar sensor. Defaults are the
/// testbed values (60 GHz band, 4.874 GHz sweep, 120 Hz frames).
struct RadarConfig {
    double chirp_bandwidth_hz = 4.874e9;
    double carrier_hz = 60.0e9;
    double frame_rate_hz = 120.0;
    int n_if_samples = 64;
    int n_chirps = 8;
    int n_rx = 3;
    int n_sensors = 4;
    int oversampling = 8;

    /// Range resolution c / (2 f_BW).
    constexpr double range_bin_m() const { return kSpeedOfLight / (2.0 * chirp_bandwidth_hz); }
    constexpr double range_bin_cm() const { return 100.0 * range_bin_m(); }
    constexpr double oversampled_bin_m() const { return range_bin_m() / oversampling; }
    constexpr double oversampled_bin_cm() const { return range_bin_cm() / oversampling; }

    /// Number of retained range bins, N_os * N_IF / 2.
    constexpr int n_range_bins() const { return oversampling * n_if_samples / 2; }
    constexpr int fft_size() const { return oversampling * n_if_samples; }

    /// Largest range whose beat tone stays below Nyquist, N_IF * dr / 2.
    constexpr double max_unambiguous_range_cm() const { return n_if_samples * range_bin_cm() / 2.0; }

    constexpr double frame_period_s() const { return 1.0 / frame_rate_hz; }

    void validate() const {
        if (!(chirp_bandwidth_hz > 0.0) || !(carrier_hz > 0.0) || !(frame_rate_hz > 0.0))
            throw ConfigError("radar: bandwidth, carrier and frame rate must be positive");
        if (n_if_samples < 2 || n_chirps < 1 || n_rx < 1 || n_sensors < 1)
            throw ConfigError("radar: sample, chirp, antenna and sensor counts must be positive");
        if (oversampling < 1)
            throw ConfigError("radar: oversampling must be an integer >= 1");
    }
};

}  // namespace mmtouch
