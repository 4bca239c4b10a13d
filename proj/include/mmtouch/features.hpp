#pragma once

#include <complex>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mmtouch/csp.hpp"
#include "mmtouch/dsp.hpp"
#include "mmtouch/geometry.hpp"
#include "mmtouch/sim.hpp"

namespace mmtouch {

using cfloat = std::complex<float>;

/// DSP products of a whole session: the beamformed profile of every frame
/// (first `n_bins` bins) and the uncalibrated consensus range per frame.
struct ProcessedSession {
    int session_id = 0;
    int n_sensors = 0;
    int n_frames = 0;
    int n_bins = 0;
    double frame_rate_hz = 0.0;
    std::vector<double> stream_start_s;
    std::vector<TouchEvent> events;
    std::vector<cfloat> beamformed;                 // [sensor][frame][bin]
    std::vector<std::optional<double>> raw_ranges;  // [sensor][frame]

    const cfloat* profile(int sensor, int frame) const {
        return &beamformed[(static_cast<std::size_t>(sensor) * n_frames + frame) * n_bins];
    }
    const std::optional<double>& raw_range(int sensor, int frame) const {
        return raw_ranges[static_cast<std::size_t>(sensor) * n_frames + frame];
    }
    int frame_index_at(double time_s, int sensor) const;
};

/// Streams every sensor of `recording` through the DSP chain once.
ProcessedSession process_session(const SessionRecording& recording, const DspConfig& dsp,
                                 const CspConfig& csp, int keep_bins);

/// Uncalibrated window-averaged range of each sensor at the event frame.
std::vector<std::optional<double>> event_ranges(const ProcessedSession& session,
                                                const TouchEvent& event, int window_frames);

/// Per-touch stack of beamformed heatmaps, stored [frame][bin][sensor].
struct FeatureTensor {
    int n_frames = 0;
    int n_bins = 0;
    int n_sensors = 0;
    std::vector<cfloat> values;
    Vec2 label_cm;
    TouchEvent event;

    std::size_t offset(int f, int r, int i) const {
        return (static_cast<std::size_t>(f) * n_bins + r) * n_sensors + i;
    }
    const cfloat& at(int f, int r, int i) const { return values[offset(f, r, i)]; }
};

/// Frames [f_GT,i - half_window, f_GT,i + half_window], bins [0, r_max) of
/// every sensor. Throws RangeError if the window leaves the recording.
FeatureTensor assemble_feature(const ProcessedSession& session, const TouchEvent& event,
                               int half_window, int r_max, const DisplayGeometry& geom);

enum class Split { train, val, test };

const char* split_name(Split s);
Split parse_split(const std::string& name);

struct Dataset {
    Split split = Split::train;
    int n_frames = 0;
    int n_bins = 0;
    int n_sensors = 0;
    std::vector<FeatureTensor> items;
    std::string metadata_json = "{}";  // geometry/config snapshot, seeds, formula R_max

    std::size_t size() const { return items.size(); }
};

/// Features of one session together with the geometry it was recorded under.
struct SessionFeatures {
    int session_id = 0;
    DisplayGeometry geometry;
    std::vector<FeatureTensor> features;
};

/// Offset-grid rows alternate between validation (rows 1, 3, 5, ... counted
/// from 1) and test (rows 2, 4, ...).
Split valtest_split_of(const TouchEvent& event);

struct SplitCounts {
    std::size_t train = 0;
    std::size_t val = 0;
    std::size_t test = 0;
};

SplitCounts count_splits(std::span<const std::vector<TouchEvent>> train_sessions,
                         std::span<const std::vector<TouchEvent>> valtest_sessions);

struct DatasetSplits {
    Dataset train;
    Dataset val;
    Dataset test;
};

/// Train = every base-grid event; offset-grid events split by row parity.
/// Throws ConfigError when sessions disagree on geometry or tensor shape.
DatasetSplits build_dataset(std::vector<SessionFeatures> train_sessions,
                            std::vector<SessionFeatures> valtest_sessions,
                            const DisplayGeometry& geom);

/// Streams one split to `<dir>/<split>.bin`. Feature tensors go straight to
/// disk; finish() appends the label and id sections and records the split in
/// `<dir>/manifest.json`.
class DatasetWriter {
public:
    DatasetWriter(const std::string& dir, Split split, int n_frames, int n_bins, int n_sensors,
                  std::string metadata_json = "{}");
    ~DatasetWriter();
    DatasetWriter(const DatasetWriter&) = delete;
    DatasetWriter& operator=(const DatasetWriter&) = delete;

    /// Throws ShapeError on a tensor of a different shape.
    void append(const FeatureTensor& t);
    std::size_t size() const;
    void finish();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Writes `<dir>/<split>.bin` and records the split in `<dir>/manifest.json`.
void save_dataset(const Dataset& dataset, const std::string& dir);

/// Sequential reader of one split. Labels and ids are available up front;
/// feature tensors are streamed by next(). The checksum is verified once the
/// last record has been read.
class DatasetReader {
public:
    /// Throws DependencyError when the split is missing and FormatError on a
    /// malformed manifest or a blob of the wrong size.
    DatasetReader(const std::string& dir, Split split);
    ~DatasetReader();
    DatasetReader(const DatasetReader&) = delete;
    DatasetReader& operator=(const DatasetReader&) = delete;

    std::size_t size() const;
    int n_frames() const;
    int n_bins() const;
    int n_sensors() const;
    const std::string& metadata_json() const;
    /// Fills `t` with the next record; false after the last one. Throws
    /// FormatError on a checksum mismatch.
    bool next(FeatureTensor& t);

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Throws FormatError on version mismatch, truncation or checksum failure and
/// DependencyError when the split is missing.
Dataset load_dataset(const std::string& dir, Split split);

}  // namespace mmtouch
