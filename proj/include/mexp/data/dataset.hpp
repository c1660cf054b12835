#pragma once

#include <json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "mexp/data/clip.hpp"
#include "mexp/error.hpp"

namespace mexp::data {

namespace fs = std::filesystem;

class DatasetError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class ManifestError : public DatasetError {
public:
    using DatasetError::DatasetError;
};

class MissingFrameError : public DatasetError {
public:
    MissingFrameError(const fs::path& file)
        : DatasetError("missing frame file " + file.string()), file_(file) {}
    const fs::path& file() const { return file_; }

private:
    fs::path file_;
};

class FrameCountError : public DatasetError {
public:
    using DatasetError::DatasetError;
};

struct ManifestEntry {
    std::string id;
    std::string path;  // relative to the dataset root
    int class_id = 0;
    int onset = 0;
    int apex = 0;
    int offset = 0;
    int n_frames = 0;
    std::string action_units;
};

struct DatasetManifest {
    std::vector<ManifestEntry> clips;

    std::size_t size() const { return clips.size(); }
};

inline std::string frame_filename(int index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "frame_%04d.png", index);
    return buf;
}

/// Throws ManifestError on duplicate ids or timing outside the clip.
inline void validate_manifest(const DatasetManifest& m) {
    std::set<std::string> seen;
    for (const auto& e : m.clips) {
        const std::string where = "manifest entry '" + e.id + "': ";
        if (e.id.empty()) throw ManifestError("manifest entry with empty id");
        if (!seen.insert(e.id).second) throw ManifestError("duplicate clip id '" + e.id + "'");
        if (e.class_id < 0 || e.class_id >= kNumClasses) throw ManifestError(where + "class_id out of range");
        if (e.n_frames < 2) throw ManifestError(where + "n_frames must be >= 2");
        if (!(0 <= e.onset && e.onset <= e.apex && e.apex <= e.offset && e.offset < e.n_frames)) {
            throw ManifestError(where + "requires 0 <= onset <= apex <= offset < n_frames");
        }
    }
}

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
    nlohmann::json clips = nlohmann::json::array();
    for (const auto& e : m.clips) {
        nlohmann::json j{{"id", e.id},       {"class_id", e.class_id}, {"onset", e.onset},
                         {"apex", e.apex},   {"offset", e.offset},     {"n_frames", e.n_frames}};
        if (e.path != e.id) j["path"] = e.path;
        if (!e.action_units.empty()) j["action_units"] = e.action_units;
        clips.push_back(std::move(j));
    }
    return {{"clips", clips}};
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
    DatasetManifest m;
    try {
        for (const auto& c : j.at("clips")) {
            ManifestEntry e;
            e.id = c.at("id").get<std::string>();
            e.path = c.value("path", e.id);
            e.class_id = c.at("class_id").get<int>();
            e.onset = c.at("onset").get<int>();
            e.apex = c.at("apex").get<int>();
            e.offset = c.at("offset").get<int>();
            e.n_frames = c.at("n_frames").get<int>();
            e.action_units = c.value("action_units", std::string{});
            m.clips.push_back(std::move(e));
        }
    } catch (const nlohmann::json::exception& ex) {
        throw ManifestError(std::string("malformed manifest: ") + ex.what());
    }
    validate_manifest(m);
    return m;
}

inline DatasetManifest read_manifest(const fs::path& root) {
    const auto file = root / "manifest.json";
    std::ifstream in(file);
    if (!in) throw ManifestError("cannot open " + file.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& ex) {
        throw ManifestError("malformed manifest " + file.string() + ": " + ex.what());
    }
    return manifest_from_json(j);
}

/// 8-bit RGB PNG → 3×H×W in [0,1].
inline Grid read_frame(const fs::path& file) {
    if (!fs::exists(file)) throw MissingFrameError(file);
    cv::Mat bgr = cv::imread(file.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) throw DatasetError("cannot decode image " + file.string());
    const int h = bgr.rows, w = bgr.cols;
    std::vector<float> px(3 * static_cast<std::size_t>(h) * w);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int r = 0; r < h; ++r) {
        const auto* row = bgr.ptr<cv::Vec3b>(r);
        for (int c = 0; c < w; ++c) {
            for (int ch = 0; ch < 3; ++ch) {
                px[ch * plane + static_cast<std::size_t>(r) * w + c] = row[c][2 - ch] / 255.0f;
            }
        }
    }
    return Grid(Shape{3, h, w}, std::move(px));
}

inline void write_frame(const Grid& frame, const fs::path& file) {
    if (frame.rank() != 3 || frame.extent(0) != 3) throw ShapeError("write_frame: expected 3xHxW frame");
    const int h = frame.extent(1), w = frame.extent(2);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    cv::Mat bgr(h, w, CV_8UC3);
    for (int r = 0; r < h; ++r) {
        auto* row = bgr.ptr<cv::Vec3b>(r);
        for (int c = 0; c < w; ++c) {
            for (int ch = 0; ch < 3; ++ch) {
                row[c][2 - ch] = cv::saturate_cast<unsigned char>(frame[ch * plane + static_cast<std::size_t>(r) * w + c] * 255.0f);
            }
        }
    }
    if (!cv::imwrite(file.string(), bgr)) throw RuntimeFailure("cannot write " + file.string());
}

inline ManifestEntry entry_for(const Clip& clip) {
    return {clip.id, clip.id, clip.class_id, clip.onset, clip.apex, clip.offset, clip.length(), clip.action_units};
}

/// Writes root/manifest.json and root/<id>/frame_%04d.png.
inline DatasetManifest save_dataset(const std::vector<Clip>& clips, const fs::path& root) {
    DatasetManifest m;
    for (const auto& c : clips) m.clips.push_back(entry_for(c));
    validate_manifest(m);
    fs::create_directories(root);
    for (const auto& c : clips) {
        const auto dir = root / c.id;
        fs::create_directories(dir);
        for (int t = 0; t < c.length(); ++t) write_frame(c.frames[t], dir / frame_filename(t));
    }
    std::ofstream out(root / "manifest.json");
    if (!out) throw RuntimeFailure("cannot write " + (root / "manifest.json").string());
    out << manifest_to_json(m).dump(2) << '\n';
    return m;
}

inline Clip load_clip(const fs::path& root, const ManifestEntry& e) {
    const auto dir = root / e.path;
    Clip clip;
    clip.id = e.id;
    clip.class_id = e.class_id;
    clip.onset = e.onset;
    clip.apex = e.apex;
    clip.offset = e.offset;
    clip.action_units = e.action_units;
    for (int t = 0; t < e.n_frames; ++t) {
        clip.frames.push_back(read_frame(dir / frame_filename(t)));
        if (clip.frames.back().shape() != clip.frames.front().shape()) {
            throw DatasetError("clip '" + e.id + "': frame " + std::to_string(t) + " has a different size");
        }
    }
    if (fs::exists(dir / frame_filename(e.n_frames))) {
        throw FrameCountError("clip '" + e.id + "': directory holds more frames than n_frames = " +
                              std::to_string(e.n_frames));
    }
    label_from_timing(clip);
    return clip;
}

struct Dataset {
    DatasetManifest manifest;
    std::vector<Clip> clips;
};

inline Dataset load_dataset(const fs::path& root) {
    Dataset ds;
    ds.manifest = read_manifest(root);
    for (const auto& e : ds.manifest.clips) ds.clips.push_back(load_clip(root, e));
    return ds;
}

}  // namespace mexp::data
