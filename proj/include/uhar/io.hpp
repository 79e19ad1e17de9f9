#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "uhar/bnn.hpp"
#include "uhar/common.hpp"
#include "uhar/data.hpp"
#include "uhar/encoder.hpp"

namespace uhar {

// Shortest round-trip decimal representation; metric files must be
// byte-identical across reruns.
inline std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void atomic_write_file(const std::filesystem::path& path, const std::string& content) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ArtifactError("cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw ArtifactError("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArtifactError("missing file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ---------------------------------------------------------------------------
// little-endian primitives

namespace detail {

struct ByteWriter {
    std::string buf;

    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>(v >> (8 * i) & 0xff));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>(v >> (8 * i) & 0xff));
    }
    void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void raw(const char* p, std::size_t n) { buf.append(p, n); }
};

struct ByteReader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw ArtifactError("truncated binary file");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string raw(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

inline void write_params(ByteWriter& w, const Vec& params) {
    w.u64(params.size());
    for (double p : params) w.f64(p);
}

inline Vec read_params(ByteReader& r) {
    Vec params(r.u64());
    for (double& p : params) p = r.f64();
    return params;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// checkpoints: versioned header, shape block, raw little-endian f64 blocks

inline constexpr char kCheckpointMagic[9] = "UHARCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kKindEncoder = 1;
inline constexpr std::uint32_t kKindFcBnn = 2;

inline std::uint32_t activation_id(Activation a) { return static_cast<std::uint32_t>(a); }

inline Activation activation_from_id(std::uint32_t id) {
    if (id > 2) throw ArtifactError("checkpoint: unknown activation id");
    return static_cast<Activation>(id);
}

inline void save_encoder(const std::filesystem::path& path, const EncoderModel& m) {
    detail::ByteWriter w;
    w.raw(kCheckpointMagic, 8);
    w.u32(kCheckpointVersion);
    w.u32(kKindEncoder);
    w.u32(static_cast<std::uint32_t>(m.input_dim));
    w.u32(static_cast<std::uint32_t>(m.latent_dim));
    w.u32(static_cast<std::uint32_t>(m.trunk.size()));
    for (const auto& l : m.trunk) w.u32(static_cast<std::uint32_t>(l.out_dim()));
    w.u32(m.trunk.empty() ? 0 : activation_id(m.trunk.front().activation));
    detail::write_params(w, encoder_flatten_params(m));
    atomic_write_file(path, w.buf);
}

inline EncoderModel load_encoder(const std::filesystem::path& path) {
    const std::string buf = read_file(path);
    detail::ByteReader r{buf};
    if (r.raw(8) != std::string(kCheckpointMagic, 8)) throw ArtifactError("not a checkpoint: " + path.string());
    if (r.u32() != kCheckpointVersion) throw ArtifactError("unsupported checkpoint version");
    if (r.u32() != kKindEncoder) throw ArtifactError("checkpoint is not an encoder: " + path.string());
    const std::size_t input_dim = r.u32();
    const std::size_t latent_dim = r.u32();
    const std::size_t n_trunk = r.u32();
    std::vector<std::size_t> widths(n_trunk);
    for (auto& w : widths) w = r.u32();
    const Activation act = activation_from_id(r.u32());

    Rng dummy(0);
    EncoderModel m = build_encoder(input_dim, latent_dim, widths, act, dummy);
    encoder_set_params(m, detail::read_params(r));
    return m;
}

inline void save_fcbnn(const std::filesystem::path& path, const FcBnnModel& m) {
    detail::ByteWriter w;
    w.raw(kCheckpointMagic, 8);
    w.u32(kCheckpointVersion);
    w.u32(kKindFcBnn);
    w.u32(static_cast<std::uint32_t>(m.latent_dim));
    w.u32(static_cast<std::uint32_t>(m.num_classes));
    for (std::size_t i = 0; i < 3; ++i) w.u32(static_cast<std::uint32_t>(m.layers[i].out));
    w.f64(m.layers.front().prior_sigma);
    w.u32(static_cast<std::uint32_t>(m.kept.size()));
    for (std::size_t k : m.kept) w.u32(static_cast<std::uint32_t>(k));
    detail::write_params(w, fcbnn_flatten_params(m));
    atomic_write_file(path, w.buf);
}

inline FcBnnModel load_fcbnn(const std::filesystem::path& path) {
    const std::string buf = read_file(path);
    detail::ByteReader r{buf};
    if (r.raw(8) != std::string(kCheckpointMagic, 8)) throw ArtifactError("not a checkpoint: " + path.string());
    if (r.u32() != kCheckpointVersion) throw ArtifactError("unsupported checkpoint version");
    if (r.u32() != kKindFcBnn) throw ArtifactError("checkpoint is not a classifier: " + path.string());
    const std::size_t latent_dim = r.u32();
    const std::size_t num_classes = r.u32();
    std::array<std::size_t, 3> hidden{};
    for (auto& h : hidden) h = r.u32();
    const double prior_sigma = r.f64();
    std::vector<std::size_t> kept(r.u32());
    for (auto& k : kept) k = r.u32();

    Rng dummy(0);
    FcBnnModel m = build_fcbnn(latent_dim, num_classes, hidden, dummy, prior_sigma, kept);
    fcbnn_set_params(m, detail::read_params(r));
    return m;
}

// ---------------------------------------------------------------------------
// dataset on disk: manifest (key=value text) plus either a packed binary or
// per-split CSV tables

inline constexpr char kDatasetMagic[9] = "UHARDATA";
inline constexpr std::uint32_t kDatasetVersion = 1;

enum class DatasetFormat { Binary, Csv };

namespace detail {

inline const std::array<const char*, 4> kSplitNames{"train", "validation", "test", "unknown"};

inline const std::vector<ImuWindow>& split_by_index(const DatasetSplit& d, std::size_t i) {
    switch (i) {
        case 0: return d.train;
        case 1: return d.validation;
        case 2: return d.test;
        default: return d.unknown;
    }
}

inline std::vector<ImuWindow>& split_by_index(DatasetSplit& d, std::size_t i) {
    switch (i) {
        case 0: return d.train;
        case 1: return d.validation;
        case 2: return d.test;
        default: return d.unknown;
    }
}

}  // namespace detail

inline void write_dataset_manifest(const std::filesystem::path& dir, const DatasetSplit& d,
                                   DatasetFormat format) {
    std::ostringstream out;
    out << "version=" << kDatasetVersion << "\n";
    out << "format=" << (format == DatasetFormat::Binary ? "binary" : "csv") << "\n";
    out << "window_len=" << d.window_len << "\n";
    out << "channels=" << kImuChannels << "\n";
    out << "sample_rate_hz=" << fmt_double(d.sample_rate_hz) << "\n";
    out << "num_known_classes=" << d.num_known_classes << "\n";
    out << "seed=" << d.seed << "\n";
    for (std::size_t i = 0; i < 4; ++i)
        out << "count_" << detail::kSplitNames[i] << "=" << detail::split_by_index(d, i).size() << "\n";
    atomic_write_file(dir / "manifest.txt", out.str());
}

inline std::map<std::string, std::string> read_dataset_manifest(const std::filesystem::path& dir) {
    const std::string text = read_file(dir / "manifest.txt");
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

inline void save_dataset_binary(const std::filesystem::path& dir, const DatasetSplit& d) {
    detail::ByteWriter w;
    w.raw(kDatasetMagic, 8);
    w.u32(kDatasetVersion);
    w.u32(static_cast<std::uint32_t>(d.window_len));
    w.u32(kImuChannels);
    for (std::size_t i = 0; i < 4; ++i) {
        const auto& split = detail::split_by_index(d, i);
        w.u64(split.size());
        for (const auto& win : split) {
            w.i32(win.label);
            for (double v : win.samples.data) w.f64(v);
        }
    }
    write_dataset_manifest(dir, d, DatasetFormat::Binary);
    atomic_write_file(dir / "dataset.bin", w.buf);
}

inline void save_dataset_csv(const std::filesystem::path& dir, const DatasetSplit& d) {
    for (std::size_t i = 0; i < 4; ++i) {
        const auto& split = detail::split_by_index(d, i);
        std::ostringstream out;
        out << "window_id,label,channel,t,value\n";
        for (std::size_t wid = 0; wid < split.size(); ++wid) {
            const auto& win = split[wid];
            for (std::size_t ch = 0; ch < win.samples.rows; ++ch)
                for (std::size_t t = 0; t < win.samples.cols; ++t)
                    out << wid << ',' << win.label << ',' << ch << ',' << t << ','
                        << fmt_double(win.samples(ch, t)) << "\n";
        }
        atomic_write_file(dir / (std::string(detail::kSplitNames[i]) + ".csv"), out.str());
    }
    write_dataset_manifest(dir, d, DatasetFormat::Csv);
}

inline void save_dataset(const std::filesystem::path& dir, const DatasetSplit& d, DatasetFormat format) {
    std::filesystem::create_directories(dir);
    if (format == DatasetFormat::Binary)
        save_dataset_binary(dir, d);
    else
        save_dataset_csv(dir, d);
}

namespace detail {

inline DatasetSplit dataset_from_manifest(const std::map<std::string, std::string>& kv) {
    DatasetSplit d;
    d.window_len = std::stoul(kv.at("window_len"));
    d.sample_rate_hz = std::stod(kv.at("sample_rate_hz"));
    d.num_known_classes = std::stoul(kv.at("num_known_classes"));
    d.seed = std::stoull(kv.at("seed"));
    return d;
}

}  // namespace detail

inline DatasetSplit load_dataset_binary(const std::filesystem::path& dir) {
    DatasetSplit d = detail::dataset_from_manifest(read_dataset_manifest(dir));
    const std::string buf = read_file(dir / "dataset.bin");
    detail::ByteReader r{buf};
    if (r.raw(8) != std::string(kDatasetMagic, 8)) throw ArtifactError("not a dataset file");
    if (r.u32() != kDatasetVersion) throw ArtifactError("unsupported dataset version");
    const std::size_t wlen = r.u32();
    const std::size_t channels = r.u32();
    if (wlen != d.window_len) throw ArtifactError("dataset manifest disagrees with binary header");
    for (std::size_t i = 0; i < 4; ++i) {
        auto& split = detail::split_by_index(d, i);
        split.resize(r.u64());
        for (auto& win : split) {
            win.label = r.i32();
            win.samples = Mat(channels, wlen);
            for (double& v : win.samples.data) v = r.f64();
        }
    }
    return d;
}

inline DatasetSplit load_dataset_csv(const std::filesystem::path& dir) {
    DatasetSplit d = detail::dataset_from_manifest(read_dataset_manifest(dir));
    const auto kv = read_dataset_manifest(dir);
    for (std::size_t i = 0; i < 4; ++i) {
        auto& split = detail::split_by_index(d, i);
        split.resize(std::stoul(kv.at(std::string("count_") + detail::kSplitNames[i])));
        for (auto& win : split) win.samples = Mat(kImuChannels, d.window_len);

        const std::string text = read_file(dir / (std::string(detail::kSplitNames[i]) + ".csv"));
        std::istringstream in(text);
        std::string line;
        std::getline(in, line);  // header
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::size_t wid = 0, ch = 0, t = 0;
            int label = 0;
            double value = 0.0;
            char* end = nullptr;
            const char* p = line.c_str();
            wid = std::strtoul(p, &end, 10);
            label = static_cast<int>(std::strtol(end + 1, &end, 10));
            ch = std::strtoul(end + 1, &end, 10);
            t = std::strtoul(end + 1, &end, 10);
            value = std::strtod(end + 1, &end);
            if (wid >= split.size() || ch >= kImuChannels || t >= d.window_len)
                throw ArtifactError("csv row out of range in split " +
                                    std::string(detail::kSplitNames[i]));
            split[wid].label = label;
            split[wid].samples(ch, t) = value;
        }
    }
    return d;
}

inline DatasetSplit load_dataset(const std::filesystem::path& dir) {
    const auto kv = read_dataset_manifest(dir);
    const auto it = kv.find("format");
    if (it == kv.end()) throw ArtifactError("dataset manifest missing format key");
    return it->second == "binary" ? load_dataset_binary(dir) : load_dataset_csv(dir);
}

}  // namespace uhar
