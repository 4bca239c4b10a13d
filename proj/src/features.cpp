#include "mmtouch/features.hpp"

#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace mmtouch {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

static_assert(std::endian::native == std::endian::little,
              "dataset container I/O assumes a little-endian host");

int ProcessedSession::frame_index_at(double time_s, int sensor) const {
    const double start = stream_start_s.empty() ? 0.0 : stream_start_s.at(static_cast<std::size_t>(sensor));
    return static_cast<int>(std::lround((time_s - start) * frame_rate_hz));
}

ProcessedSession process_session(const SessionRecording& recording, const DspConfig& dsp,
                                 const CspConfig& csp, int keep_bins) {
    const RadarConfig& radar = recording.radar();
    if (keep_bins < 0 || keep_bins > radar.n_range_bins())
        throw ConfigError("keep_bins must lie in [0, N_os * N_IF / 2]");
    ProcessedSession out;
    out.session_id = recording.session_id();
    out.n_sensors = recording.n_sensors();
    out.n_frames = recording.n_frames();
    out.n_bins = keep_bins;
    out.frame_rate_hz = radar.frame_rate_hz;
    out.stream_start_s = recording.scene().stream_start_s;
    out.events = recording.events();
    out.beamformed.resize(static_cast<std::size_t>(out.n_sensors) * out.n_frames * keep_bins);
    out.raw_ranges.resize(static_cast<std::size_t>(out.n_sensors) * out.n_frames);

    const CalibrationTable zero = CalibrationTable::zeros(out.n_sensors);
    for (int i = 0; i < out.n_sensors; ++i) {
        SensorChain chain(radar, dsp);
        for (int f = 0; f < out.n_frames; ++f) {
            const auto o = chain.push(recording.frame(i, f));
            cfloat* dst = &out.beamformed[(static_cast<std::size_t>(i) * out.n_frames + f) * keep_bins];
            for (int r = 0; r < keep_bins; ++r)
                dst[r] = cfloat(static_cast<float>(o.beamformed.values[static_cast<std::size_t>(r)].real()),
                                static_cast<float>(o.beamformed.values[static_cast<std::size_t>(r)].imag()));
            out.raw_ranges[static_cast<std::size_t>(i) * out.n_frames + f] =
                estimate_ranges(o.per_rx, o.beamformed, csp, zero, radar).range_cm;
        }
    }
    return out;
}

std::vector<std::optional<double>> event_ranges(const ProcessedSession& s, const TouchEvent& e,
                                                int window_frames) {
    std::vector<std::optional<double>> out;
    for (int i = 0; i < s.n_sensors; ++i) {
        const int f_n = s.frame_index_at(e.time_s, i);
        std::vector<std::optional<double>> hist;
        for (int m = 0; m < window_frames; ++m) {
            const int f = f_n - m;
            if (f >= 0 && f < s.n_frames) hist.push_back(s.raw_range(i, f));
        }
        out.push_back(window_average_ranges(hist));
    }
    return out;
}

FeatureTensor assemble_feature(const ProcessedSession& s, const TouchEvent& event, int half_window,
                               int r_max, const DisplayGeometry& geom) {
    if (half_window < 0) throw ConfigError("half window must be non-negative");
    if (r_max < 0 || r_max > s.n_bins) throw ConfigError("R_max exceeds the retained range bins");
    FeatureTensor t;
    t.n_frames = 2 * half_window + 1;
    t.n_bins = r_max;
    t.n_sensors = s.n_sensors;
    t.values.resize(static_cast<std::size_t>(t.n_frames) * r_max * s.n_sensors);
    t.label_cm = gt_to_radar_coords(event, geom);
    t.event = event;
    for (int i = 0; i < s.n_sensors; ++i) {
        const int f_gt = s.frame_index_at(event.time_s, i);
        if (f_gt - half_window < 0 || f_gt + half_window >= s.n_frames)
            throw RangeError("feature window of event " + std::to_string(event.event_id) +
                             " leaves the recording");
        for (int k = 0; k < t.n_frames; ++k) {
            const cfloat* src = s.profile(i, f_gt - half_window + k);
            for (int r = 0; r < r_max; ++r) t.values[t.offset(k, r, i)] = src[r];
        }
    }
    return t;
}

const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

Split parse_split(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "val") return Split::val;
    if (name == "test") return Split::test;
    throw ConfigError("unknown split '" + name + "'");
}

Split valtest_split_of(const TouchEvent& event) {
    // 0-based even rows are the odd rows of a 1-based count.
    return event.row % 2 == 0 ? Split::val : Split::test;
}

SplitCounts count_splits(std::span<const std::vector<TouchEvent>> train_sessions,
                         std::span<const std::vector<TouchEvent>> valtest_sessions) {
    SplitCounts c;
    for (const auto& s : train_sessions) c.train += s.size();
    for (const auto& s : valtest_sessions)
        for (const auto& e : s) (valtest_split_of(e) == Split::val ? c.val : c.test) += 1;
    return c;
}

DatasetSplits build_dataset(std::vector<SessionFeatures> train_sessions,
                            std::vector<SessionFeatures> valtest_sessions,
                            const DisplayGeometry& geom) {
    DatasetSplits out;
    out.train.split = Split::train;
    out.val.split = Split::val;
    out.test.split = Split::test;
    bool have_shape = false;
    auto accept = [&](Dataset& d, FeatureTensor&& t) {
        if (!have_shape) {
            for (Dataset* x : {&out.train, &out.val, &out.test}) {
                x->n_frames = t.n_frames;
                x->n_bins = t.n_bins;
                x->n_sensors = t.n_sensors;
            }
            have_shape = true;
        } else if (t.n_frames != d.n_frames || t.n_bins != d.n_bins || t.n_sensors != d.n_sensors) {
            throw ConfigError("sessions produced feature tensors of different shapes");
        }
        d.items.push_back(std::move(t));
    };
    for (auto* group : {&train_sessions, &valtest_sessions})
        for (const auto& s : *group)
            if (!(s.geometry == geom))
                throw ConfigError("session " + std::to_string(s.session_id) +
                                  " was recorded with a different display geometry");
    for (auto& s : train_sessions)
        for (auto& t : s.features) accept(out.train, std::move(t));
    for (auto& s : valtest_sessions)
        for (auto& t : s.features) {
            Dataset& d = valtest_split_of(t.event) == Split::val ? out.val : out.test;
            accept(d, std::move(t));
        }
    return out;
}

namespace {

constexpr int kContainerVersion = 1;

class CrcWriter {
public:
    explicit CrcWriter(std::ofstream& out) : out_(out) {}
    void write(const void* data, std::size_t n) {
        out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
        crc_ = crc32_z(crc_, static_cast<const Bytef*>(data), n);
        bytes_ += n;
    }
    std::uint32_t crc() const { return static_cast<std::uint32_t>(crc_); }
    std::size_t bytes() const { return bytes_; }

private:
    std::ofstream& out_;
    uLong crc_ = crc32_z(0L, Z_NULL, 0);
    std::size_t bytes_ = 0;
};

class CrcReader {
public:
    CrcReader(std::ifstream& in, std::string name) : in_(in), name_(std::move(name)) {}
    void read(void* data, std::size_t n) {
        in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) throw FormatError(name_ + ": truncated blob");
        crc_ = crc32_z(crc_, static_cast<const Bytef*>(data), n);
    }
    std::uint32_t crc() const { return static_cast<std::uint32_t>(crc_); }

private:
    std::ifstream& in_;
    std::string name_;
    uLong crc_ = crc32_z(0L, Z_NULL, 0);
};

json read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) return json::object();
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError("manifest: " + std::string(e.what()));
    }
}

}  // namespace

struct DatasetWriter::Impl {
    fs::path dir;
    Split split;
    int n_frames, n_bins, n_sensors;
    std::string metadata_json;
    std::string file;
    std::ofstream out;
    std::unique_ptr<CrcWriter> w;
    std::vector<double> labels;
    std::vector<std::int32_t> ids;
    std::vector<double> coords;
    std::size_t n = 0;
    bool finished = false;
};

DatasetWriter::DatasetWriter(const std::string& dir, Split split, int n_frames, int n_bins,
                             int n_sensors, std::string metadata_json)
    : impl_(std::make_unique<Impl>()) {
    Impl& m = *impl_;
    m.dir = dir;
    m.split = split;
    m.n_frames = n_frames;
    m.n_bins = n_bins;
    m.n_sensors = n_sensors;
    m.metadata_json = std::move(metadata_json);
    if (!json::accept(m.metadata_json)) throw ConfigError("dataset metadata is not valid JSON");
    fs::create_directories(m.dir);
    m.file = std::string(split_name(split)) + ".bin";
    const fs::path blob = m.dir / m.file;
    m.out.open(blob, std::ios::binary | std::ios::trunc);
    if (!m.out) throw Error("cannot write " + blob.string());
    m.w = std::make_unique<CrcWriter>(m.out);
}

DatasetWriter::~DatasetWriter() = default;

std::size_t DatasetWriter::size() const { return impl_->n; }

void DatasetWriter::append(const FeatureTensor& t) {
    Impl& m = *impl_;
    if (m.finished) throw Error("dataset writer already finished");
    if (t.n_frames != m.n_frames || t.n_bins != m.n_bins || t.n_sensors != m.n_sensors ||
        t.values.size() != static_cast<std::size_t>(m.n_frames) * m.n_bins * m.n_sensors)
        throw ShapeError("feature tensor shape differs from the dataset shape");
    m.w->write(t.values.data(), t.values.size() * sizeof(cfloat));
    m.labels.insert(m.labels.end(), {t.label_cm.x, t.label_cm.y});
    m.ids.insert(m.ids.end(), {t.event.event_id, t.event.session_id, t.event.row, t.event.col});
    m.coords.insert(m.coords.end(), {t.event.rel_x, t.event.rel_y, t.event.time_s});
    ++m.n;
}

void DatasetWriter::finish() {
    Impl& m = *impl_;
    if (m.finished) return;
    m.finished = true;
    const std::size_t n = m.n;
    const std::size_t features_bytes = m.w->bytes();
    m.w->write(m.labels.data(), m.labels.size() * sizeof(double));
    m.w->write(m.ids.data(), m.ids.size() * sizeof(std::int32_t));
    m.w->write(m.coords.data(), m.coords.size() * sizeof(double));
    m.out.close();
    if (!m.out) throw Error("failed writing " + (m.dir / m.file).string());

    const fs::path manifest_path = m.dir / "manifest.json";
    json man = read_manifest(manifest_path);
    man["format"] = "mmtouch-dataset";
    man["version"] = kContainerVersion;
    man["byte_order"] = "little";
    std::size_t off = 0;
    auto section = [&](const char* dtype, std::vector<std::size_t> shape, std::size_t bytes) {
        json s = {{"dtype", dtype}, {"shape", shape}, {"offset", off}, {"bytes", bytes}};
        off += bytes;
        return s;
    };
    json sections = json::object();
    sections["features"] = section("complex64", {n, static_cast<std::size_t>(m.n_frames),
                                                 static_cast<std::size_t>(m.n_bins),
                                                 static_cast<std::size_t>(m.n_sensors)},
                                   features_bytes);
    sections["labels_cm"] = section("float64", {n, 2}, n * 2 * sizeof(double));
    sections["event_ids"] = section("int32", {n, 4}, n * 4 * sizeof(std::int32_t));
    sections["event_coords"] = section("float64", {n, 3}, n * 3 * sizeof(double));
    man["splits"][split_name(m.split)] = {
        {"file", m.file},
        {"n_records", n},
        {"feature_shape", {m.n_frames, m.n_bins, m.n_sensors}},
        {"layout", "event,frame,range,sensor"},
        {"sections", sections},
        {"total_bytes", m.w->bytes()},
        {"crc32", m.w->crc()},
        {"metadata", json::parse(m.metadata_json)},
    };
    std::ofstream mo(manifest_path, std::ios::trunc);
    if (!mo) throw Error("cannot write " + manifest_path.string());
    mo << man.dump(2) << '\n';
}

void save_dataset(const Dataset& d, const std::string& dir) {
    DatasetWriter w(dir, d.split, d.n_frames, d.n_bins, d.n_sensors, d.metadata_json);
    for (const auto& t : d.items) w.append(t);
    w.finish();
}

struct DatasetReader::Impl {
    Split split;
    int n_frames = 0, n_bins = 0, n_sensors = 0;
    std::size_t n = 0;
    std::size_t next = 0;
    std::size_t per = 0;
    std::string metadata_json;
    std::string name;
    std::uint32_t expected_crc = 0;
    std::ifstream in;
    std::unique_ptr<CrcReader> r;
    std::vector<double> labels;
    std::vector<std::int32_t> ids;
    std::vector<double> coords;
};

DatasetReader::DatasetReader(const std::string& dir, Split split) : impl_(std::make_unique<Impl>()) {
    Impl& d = *impl_;
    const fs::path manifest_path = fs::path(dir) / "manifest.json";
    if (!fs::exists(manifest_path)) throw DependencyError("no dataset manifest in " + dir);
    const json m = read_manifest(manifest_path);
    if (m.value("format", "") != "mmtouch-dataset") throw FormatError("manifest: unknown format");
    if (m.value("version", -1) != kContainerVersion)
        throw FormatError("manifest: unsupported container version");
    const char* name = split_name(split);
    if (!m.contains("splits") || !m["splits"].contains(name))
        throw DependencyError(std::string("dataset split '") + name + "' not found in " + dir);
    const json& s = m["splits"][name];

    d.split = split;
    std::size_t expect = 0;
    fs::path blob;
    try {
        const auto shape = s.at("feature_shape").get<std::vector<int>>();
        if (shape.size() != 3) throw FormatError("manifest: feature_shape must have 3 entries");
        d.n_frames = shape[0];
        d.n_bins = shape[1];
        d.n_sensors = shape[2];
        d.metadata_json = s.at("metadata").dump();
        d.n = s.at("n_records").get<std::size_t>();
        d.expected_crc = s.at("crc32").get<std::uint32_t>();
        d.per = static_cast<std::size_t>(d.n_frames) * d.n_bins * d.n_sensors;
        expect = d.n * (d.per * sizeof(cfloat) + 2 * sizeof(double) + 4 * sizeof(std::int32_t) +
                        3 * sizeof(double));
        blob = fs::path(dir) / s.at("file").get<std::string>();
        if (s.at("total_bytes").get<std::size_t>() != expect)
            throw FormatError("manifest: total_bytes does not match the record layout");
    } catch (const json::exception& e) {
        throw FormatError(std::string("manifest: ") + e.what());
    }
    if (!fs::exists(blob)) throw FormatError("missing blob " + blob.string());
    if (fs::file_size(blob) != expect)
        throw FormatError(blob.string() + ": size does not match the manifest (truncated?)");
    d.name = blob.string();
    d.in.open(blob, std::ios::binary);
    if (!d.in) throw Error("cannot read " + d.name);

    // Small trailing sections first; they are re-read in order for the checksum.
    d.labels.resize(d.n * 2);
    d.ids.resize(d.n * 4);
    d.coords.resize(d.n * 3);
    d.in.seekg(static_cast<std::streamoff>(d.n * d.per * sizeof(cfloat)));
    d.in.read(reinterpret_cast<char*>(d.labels.data()), static_cast<std::streamsize>(d.labels.size() * sizeof(double)));
    d.in.read(reinterpret_cast<char*>(d.ids.data()), static_cast<std::streamsize>(d.ids.size() * sizeof(std::int32_t)));
    d.in.read(reinterpret_cast<char*>(d.coords.data()), static_cast<std::streamsize>(d.coords.size() * sizeof(double)));
    if (!d.in) throw FormatError(d.name + ": truncated blob");
    d.in.seekg(0);
    d.r = std::make_unique<CrcReader>(d.in, d.name);
    if (d.n == 0) {
        FeatureTensor unused;
        next(unused);
    }
}

DatasetReader::~DatasetReader() = default;

std::size_t DatasetReader::size() const { return impl_->n; }
int DatasetReader::n_frames() const { return impl_->n_frames; }
int DatasetReader::n_bins() const { return impl_->n_bins; }
int DatasetReader::n_sensors() const { return impl_->n_sensors; }
const std::string& DatasetReader::metadata_json() const { return impl_->metadata_json; }

bool DatasetReader::next(FeatureTensor& t) {
    Impl& d = *impl_;
    if (d.next >= d.n) {
        if (d.r) {
            std::vector<char> tail(d.n * (2 * sizeof(double) + 4 * sizeof(std::int32_t) + 3 * sizeof(double)));
            d.r->read(tail.data(), tail.size());
            const bool ok = d.r->crc() == d.expected_crc;
            d.r.reset();
            if (!ok) throw FormatError(d.name + ": checksum mismatch");
        }
        return false;
    }
    const std::size_t i = d.next++;
    t.n_frames = d.n_frames;
    t.n_bins = d.n_bins;
    t.n_sensors = d.n_sensors;
    t.values.resize(d.per);
    d.r->read(t.values.data(), d.per * sizeof(cfloat));
    t.label_cm = {d.labels[2 * i], d.labels[2 * i + 1]};
    t.event.event_id = d.ids[4 * i];
    t.event.session_id = d.ids[4 * i + 1];
    t.event.row = d.ids[4 * i + 2];
    t.event.col = d.ids[4 * i + 3];
    t.event.rel_x = d.coords[3 * i];
    t.event.rel_y = d.coords[3 * i + 1];
    t.event.time_s = d.coords[3 * i + 2];
    if (d.next == d.n) {
        FeatureTensor unused;
        next(unused);
    }
    return true;
}

Dataset load_dataset(const std::string& dir, Split split) {
    DatasetReader r(dir, split);
    Dataset d;
    d.split = split;
    d.n_frames = r.n_frames();
    d.n_bins = r.n_bins();
    d.n_sensors = r.n_sensors();
    d.metadata_json = r.metadata_json();
    d.items.reserve(r.size());
    FeatureTensor t;
    while (r.next(t)) d.items.push_back(std::move(t));
    return d;
}

}  // namespace mmtouch
