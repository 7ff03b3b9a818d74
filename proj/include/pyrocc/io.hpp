#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "pyrocc/datagen.hpp"
#include "pyrocc/geometry.hpp"
#include "pyrocc/occupancy.hpp"
#include "pyrocc/tensor.hpp"

namespace pyrocc::io {

// All multi-byte payloads are little-endian; headers are plain UTF-8
// "key = value" text prefixed by a fixed magic and a uint64 byte length.

inline void write_exact(std::ostream& out, const void* data, std::size_t n) {
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out) throw std::runtime_error("io: write failed");
}

inline void read_exact(std::istream& in, void* data, std::size_t n) {
    in.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n)
        throw std::runtime_error("io: unexpected end of file");
}

inline void write_u64(std::ostream& out, std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    write_exact(out, buf, 8);
}

inline std::uint64_t read_u64(std::istream& in) {
    unsigned char buf[8];
    read_exact(in, buf, 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
}

inline void write_f32_array(std::ostream& out, const float* data, std::size_t n) {
    write_exact(out, data, n * sizeof(float));
}

inline void read_f32_array(std::istream& in, float* data, std::size_t n) {
    read_exact(in, data, n * sizeof(float));
}

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void write_magic_header(std::ostream& out, const char* magic, const std::string& header) {
    write_exact(out, magic, std::strlen(magic));
    write_u64(out, header.size());
    write_exact(out, header.data(), header.size());
}

inline std::string read_magic_header(std::istream& in, const char* magic) {
    std::size_t n = std::strlen(magic);
    std::vector<char> buf(n);
    read_exact(in, buf.data(), n);
    if (std::memcmp(buf.data(), magic, n) != 0)
        throw std::runtime_error(std::string("io: bad magic, expected ") + magic);
    std::uint64_t len = read_u64(in);
    std::string header(len, '\0');
    read_exact(in, header.data(), len);
    return header;
}

/// Parses "key = value" lines (one per line) into an ordered key->value map.
inline std::map<std::string, std::string> parse_kv(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream stream(text);
    std::string line;
    while (std::getline(stream, line)) {
        auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        auto eq = line.find('=');
        check(eq != std::string::npos, "io: malformed header line: " + line);
        auto trim = [](std::string s) {
            auto b = s.find_first_not_of(" \t\r");
            auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

inline std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream stream(s);
    while (std::getline(stream, item, ',')) {
        auto b = item.find_first_not_of(" \t");
        auto e = item.find_last_not_of(" \t");
        if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
    }
    return out;
}

inline std::string join_csv(const std::vector<std::string>& items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += ",";
        out += items[i];
    }
    return out;
}

inline std::string grid_to_string(const GridSpec& g) {
    return format_double(g.z_min) + "," + format_double(g.z_max) + "," +
           format_double(g.x_half_extent) + "," + format_double(g.resolution);
}

inline GridSpec grid_from_string(const std::string& s) {
    auto parts = split_csv(s);
    check(parts.size() == 4, "io: malformed grid spec: " + s);
    return GridSpec{std::stod(parts[0]), std::stod(parts[1]), std::stod(parts[2]),
                    std::stod(parts[3])};
}

inline std::string pose_to_string(const Pose2& p) {
    return format_double(p.angle) + "," + format_double(p.tx) + "," + format_double(p.tz);
}

inline Pose2 pose_from_string(const std::string& s) {
    auto parts = split_csv(s);
    check(parts.size() == 3, "io: malformed pose: " + s);
    return Pose2{std::stod(parts[0]), std::stod(parts[1]), std::stod(parts[2])};
}

// ---------------------------------------------------------------------------
// Bit-packed binary planes (row-major cells, LSB-first within each byte)
// ---------------------------------------------------------------------------

inline std::vector<std::uint8_t> pack_bits(const std::uint8_t* cells, std::size_t n) {
    std::vector<std::uint8_t> bytes((n + 7) / 8, 0);
    for (std::size_t i = 0; i < n; ++i)
        if (cells[i]) bytes[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
    return bytes;
}

inline void unpack_bits(const std::vector<std::uint8_t>& bytes, std::uint8_t* cells,
                        std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        cells[i] = (bytes[i / 8] >> (i % 8)) & 1u;
}

// ---------------------------------------------------------------------------
// Sample container: magic "SAMP1"
// ---------------------------------------------------------------------------

inline void write_sample(const std::string& path, const Sample& s) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("io: cannot open for write: " + path);
    std::ostringstream header;
    header << "scene_id = " << s.scene_id << "\n";
    header << "frame_id = " << s.frame_id << "\n";
    header << "camera = " << format_double(s.camera.f) << "," << format_double(s.camera.u0) << ","
           << format_double(s.camera.v0) << "," << s.camera.image_width << ","
           << s.camera.image_height << "," << format_double(s.camera.camera_height) << "\n";
    header << "pose = " << pose_to_string(s.camera.pose) << "\n";
    header << "grid = " << grid_to_string(s.grid) << "\n";
    header << "classes = " << join_csv(s.class_names) << "\n";
    write_magic_header(out, "SAMP1", header.str());
    write_exact(out, s.image.data(), s.image.size());
    std::size_t plane = s.visibility.size();
    for (std::size_t c = 0; c < s.class_names.size(); ++c) {
        auto packed = pack_bits(s.labels.data() + c * plane, plane);
        write_exact(out, packed.data(), packed.size());
    }
    auto packed = pack_bits(s.visibility.data(), plane);
    write_exact(out, packed.data(), packed.size());
}

inline Sample read_sample(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("io: cannot open for read: " + path);
    auto kv = parse_kv(read_magic_header(in, "SAMP1"));
    Sample s;
    s.scene_id = std::stoi(kv.at("scene_id"));
    s.frame_id = std::stoi(kv.at("frame_id"));
    auto cam = split_csv(kv.at("camera"));
    check(cam.size() == 6, "io: malformed camera line");
    s.camera.f = std::stod(cam[0]);
    s.camera.u0 = std::stod(cam[1]);
    s.camera.v0 = std::stod(cam[2]);
    s.camera.image_width = std::stoi(cam[3]);
    s.camera.image_height = std::stoi(cam[4]);
    s.camera.camera_height = std::stod(cam[5]);
    s.camera.pose = pose_from_string(kv.at("pose"));
    s.grid = grid_from_string(kv.at("grid"));
    s.class_names = split_csv(kv.at("classes"));
    std::size_t H = static_cast<std::size_t>(s.camera.image_height);
    std::size_t W = static_cast<std::size_t>(s.camera.image_width);
    std::size_t Z = static_cast<std::size_t>(s.grid.depth_cells());
    std::size_t X = static_cast<std::size_t>(s.grid.width_cells());
    s.image = Tensor<std::uint8_t>({3, H, W});
    read_exact(in, s.image.data(), s.image.size());
    std::size_t plane = Z * X;
    std::vector<std::uint8_t> packed((plane + 7) / 8);
    s.labels = Tensor<std::uint8_t>({s.class_names.size(), Z, X});
    for (std::size_t c = 0; c < s.class_names.size(); ++c) {
        read_exact(in, packed.data(), packed.size());
        unpack_bits(packed, s.labels.data() + c * plane, plane);
    }
    s.visibility = Tensor<std::uint8_t>({Z, X});
    read_exact(in, packed.data(), packed.size());
    unpack_bits(packed, s.visibility.data(), plane);
    return s;
}

// ---------------------------------------------------------------------------
// Occupancy grid dump: magic "OGRID1", float32 log-odds, class-major
// ---------------------------------------------------------------------------

inline void write_grid(const std::string& path, const OccupancyGrid& grid) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("io: cannot open for write: " + path);
    std::ostringstream header;
    header << "grid = " << grid_to_string(grid.spec) << "\n";
    header << "frame = " << pose_to_string(grid.frame) << "\n";
    header << "classes = " << join_csv(grid.class_names) << "\n";
    std::string priors;
    for (std::size_t i = 0; i < grid.prior.size(); ++i) {
        if (i) priors += ",";
        priors += format_double(grid.prior[i]);
    }
    header << "priors = " << priors << "\n";
    write_magic_header(out, "OGRID1", header.str());
    std::vector<float> payload(grid.logodds.size());
    for (std::size_t i = 0; i < payload.size(); ++i)
        payload[i] = static_cast<float>(grid.logodds[i]);
    write_f32_array(out, payload.data(), payload.size());
}

inline OccupancyGrid read_grid(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("io: cannot open for read: " + path);
    auto kv = parse_kv(read_magic_header(in, "OGRID1"));
    OccupancyGrid grid;
    grid.spec = grid_from_string(kv.at("grid"));
    grid.frame = pose_from_string(kv.at("frame"));
    grid.class_names = split_csv(kv.at("classes"));
    for (const auto& p : split_csv(kv.at("priors"))) grid.prior.push_back(std::stod(p));
    check(grid.prior.size() == grid.class_names.size(), "io: grid priors/classes mismatch");
    std::size_t Z = static_cast<std::size_t>(grid.spec.depth_cells());
    std::size_t X = static_cast<std::size_t>(grid.spec.width_cells());
    grid.logodds = Tensor<double>({grid.class_names.size(), Z, X});
    std::vector<float> payload(grid.logodds.size());
    read_f32_array(in, payload.data(), payload.size());
    for (std::size_t i = 0; i < payload.size(); ++i)
        grid.logodds[i] = static_cast<double>(payload[i]);
    return grid;
}

// ---------------------------------------------------------------------------
// Checkpoint: magic "PYRO1", length-prefixed text header describing named
// float32 tensors, then raw little-endian payloads in header order.
// ---------------------------------------------------------------------------

struct NamedTensor {
    std::string name;
    Tensor<float> value;
};

inline void write_checkpoint(const std::string& path, const std::string& config_text,
                             std::uint64_t step, const std::vector<NamedTensor>& tensors) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("io: cannot open for write: " + path);
    std::ostringstream header;
    header << "format = checkpoint/v1\n";
    header << "step = " << step << "\n";
    header << "config_begin\n" << config_text;
    if (!config_text.empty() && config_text.back() != '\n') header << "\n";
    header << "config_end\n";
    for (const auto& t : tensors) {
        header << "tensor " << t.name << " float32 " << t.value.rank();
        for (std::size_t d = 0; d < t.value.rank(); ++d) header << " " << t.value.dim(d);
        header << "\n";
    }
    write_magic_header(out, "PYRO1", header.str());
    for (const auto& t : tensors) write_f32_array(out, t.value.data(), t.value.size());
}

struct Checkpoint {
    std::string config_text;
    std::uint64_t step = 0;
    std::vector<NamedTensor> tensors;
};

inline Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("io: cannot open for read: " + path);
    std::string header = read_magic_header(in, "PYRO1");
    Checkpoint ck;
    std::istringstream stream(header);
    std::string line;
    bool in_config = false;
    while (std::getline(stream, line)) {
        if (line == "config_begin") {
            in_config = true;
            continue;
        }
        if (line == "config_end") {
            in_config = false;
            continue;
        }
        if (in_config) {
            ck.config_text += line;
            ck.config_text += "\n";
            continue;
        }
        if (line.rfind("step = ", 0) == 0) {
            ck.step = std::stoull(line.substr(7));
            continue;
        }
        if (line.rfind("tensor ", 0) == 0) {
            std::istringstream ls(line);
            std::string tag, name, dtype;
            std::size_t rank;
            ls >> tag >> name >> dtype >> rank;
            check(dtype == "float32", "io: unsupported checkpoint dtype: " + dtype);
            std::vector<std::size_t> shape(rank);
            for (auto& d : shape) ls >> d;
            ck.tensors.push_back({name, Tensor<float>(shape)});
        }
    }
    for (auto& t : ck.tensors) read_f32_array(in, t.value.data(), t.value.size());
    return ck;
}

// ---------------------------------------------------------------------------
// Dataset manifest + on-disk dataset
// ---------------------------------------------------------------------------

struct ManifestEntry {
    std::string file;
    int scene_id = 0;
    int frame_id = 0;
    std::string split;  // "train" or "val"
};

struct Manifest {
    std::vector<std::string> classes;
    GridSpec grid;
    std::vector<ManifestEntry> entries;
};

inline void write_manifest(const std::string& path, const Manifest& m) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("io: cannot open for write: " + path);
    out << "# dataset manifest: <file> <scene_id> <frame_id> <split>\n";
    out << "classes = " << join_csv(m.classes) << "\n";
    out << "grid = " << grid_to_string(m.grid) << "\n";
    for (const auto& e : m.entries)
        out << e.file << " " << e.scene_id << " " << e.frame_id << " " << e.split << "\n";
    if (!out) throw std::runtime_error("io: write failed: " + path);
}

inline Manifest read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("io: cannot open for read: " + path);
    Manifest m;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (line.rfind("classes = ", 0) == 0) {
            m.classes = split_csv(line.substr(10));
            continue;
        }
        if (line.rfind("grid = ", 0) == 0) {
            m.grid = grid_from_string(line.substr(7));
            continue;
        }
        std::istringstream ls(line);
        ManifestEntry e;
        ls >> e.file >> e.scene_id >> e.frame_id >> e.split;
        check(!e.file.empty() && (e.split == "train" || e.split == "val"),
              "io: malformed manifest line: " + line);
        m.entries.push_back(std::move(e));
    }
    return m;
}

/// Minimal dataset-source interface; the shipped implementation reads the
/// on-disk sample containers, but any adapter satisfying it can feed the
/// trainer and evaluator.
class SampleSource {
public:
    virtual ~SampleSource() = default;
    virtual std::size_t size() const = 0;
    virtual Sample load(std::size_t index) const = 0;
    virtual const std::vector<std::string>& classes() const = 0;
};

class DiskDataset : public SampleSource {
public:
    DiskDataset(const std::string& dir, const std::string& split) : dir_(dir) {
        manifest_ = read_manifest((std::filesystem::path(dir) / "manifest.txt").string());
        for (const auto& e : manifest_.entries)
            if (split == "all" || e.split == split) selected_.push_back(e);
    }

    std::size_t size() const override { return selected_.size(); }

    Sample load(std::size_t index) const override {
        const auto& e = selected_.at(index);
        return read_sample((std::filesystem::path(dir_) / e.file).string());
    }

    const std::vector<std::string>& classes() const override { return manifest_.classes; }
    const Manifest& manifest() const { return manifest_; }
    const std::vector<ManifestEntry>& entries() const { return selected_; }

private:
    std::string dir_;
    Manifest manifest_;
    std::vector<ManifestEntry> selected_;
};

/// Per-class positive-cell fractions, written next to the manifest so the
/// trainer can derive its loss weights.
inline void write_frequencies(const std::string& path, const std::vector<std::string>& classes,
                              const std::vector<double>& freqs) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("io: cannot open for write: " + path);
    for (std::size_t i = 0; i < classes.size(); ++i)
        out << classes[i] << " " << format_double(freqs[i]) << "\n";
    if (!out) throw std::runtime_error("io: write failed: " + path);
}

inline std::vector<double> read_frequencies(const std::string& path,
                                            const std::vector<std::string>& classes) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("io: cannot open for read: " + path);
    std::map<std::string, double> by_name;
    std::string name;
    double value;
    while (in >> name >> value) by_name[name] = value;
    std::vector<double> out;
    for (const auto& c : classes) out.push_back(by_name.at(c));
    return out;
}

/// Generates and persists a dataset: one container file per sample plus the
/// manifest and train-split class frequencies. Deterministic in (seed,
/// config); the last val_scenes scene ids form the validation split.
inline std::vector<double> build_dataset(std::uint64_t seed, int n_scenes, int val_scenes,
                                         const DatagenConfig& cfg, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(out_dir) / "samples");
    Manifest manifest;
    manifest.classes = cfg.classes;
    manifest.grid = cfg.grid;
    std::vector<double> positive(cfg.classes.size(), 0.0);
    double total_cells = 0.0;
    for (int scene_id = 0; scene_id < n_scenes; ++scene_id) {
        SceneDescription scene = generate_scene(seed + static_cast<std::uint64_t>(scene_id), cfg);
        bool is_val = scene_id >= n_scenes - val_scenes;
        for (int frame = 0; frame < cfg.frames_per_scene; ++frame) {
            Sample s = make_sample(scene, scene_id, frame, cfg);
            char name[64];
            std::snprintf(name, sizeof(name), "samples/s%04d_f%02d.samp", scene_id, frame);
            write_sample((fs::path(out_dir) / name).string(), s);
            manifest.entries.push_back({name, scene_id, frame, is_val ? "val" : "train"});
            if (!is_val) {
                std::size_t plane = s.visibility.size();
                for (std::size_t c = 0; c < cfg.classes.size(); ++c)
                    for (std::size_t i = 0; i < plane; ++i)
                        positive[c] += s.labels[c * plane + i];
                total_cells += static_cast<double>(plane);
            }
        }
    }
    write_manifest((fs::path(out_dir) / "manifest.txt").string(), manifest);
    std::vector<double> freqs(cfg.classes.size(), 0.0);
    for (std::size_t c = 0; c < freqs.size(); ++c)
        freqs[c] = total_cells > 0 ? positive[c] / total_cells : 0.0;
    write_frequencies((fs::path(out_dir) / "frequencies.txt").string(), cfg.classes, freqs);
    return freqs;
}

}  // namespace pyrocc::io
