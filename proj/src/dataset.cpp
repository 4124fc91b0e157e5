#include "echosonar/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

namespace echosonar {

FeatureSet assemble_features(const std::vector<RangeProfile>& subtracted,
                             const ChirpSpec& spec, int stride,
                             int window_len) {
    if (stride < 1) {
        throw ConfigError("assemble_features: stride must be >= 1");
    }
    if (static_cast<int>(subtracted.size()) < window_len) {
        throw InputError("assemble_features: need at least " +
                         std::to_string(window_len) + " profiles");
    }
    FeatureSet set;
    set.channels = static_cast<int>(subtracted.front().num_channels());
    set.cells = static_cast<int>(subtracted.front().num_cells());
    set.window_len = window_len;

    const int n = static_cast<int>(subtracted.size());
    for (int end = window_len - 1; end < n; end += stride) {
        FeatureWindow window;
        window.tensor.resize(set.tensor_size());
        for (int t = 0; t < window_len; ++t) {
            const RangeProfile& p = subtracted[end - window_len + 1 + t];
            if (static_cast<int>(p.num_channels()) != set.channels ||
                static_cast<int>(p.num_cells()) != set.cells) {
                throw ShapeError("assemble_features: inconsistent profiles");
            }
            for (int c = 0; c < set.channels; ++c) {
                for (int k = 0; k < set.cells; ++k) {
                    set.at(window, c, k, t) =
                        static_cast<float>(p.magnitudes[c][k]);
                }
            }
        }
        // End of the newest chirp window, on the transmit clock.
        const RangeProfile& last = subtracted[end];
        window.end_timestamp_us = std::llround(
            1e6 * (static_cast<double>(last.window_index) + 1.0) *
            spec.chirp_len_samples / spec.sample_rate_hz);
        set.windows.push_back(std::move(window));
    }
    return set;
}

int align_labels(FeatureSet& set, const std::vector<PoseFrame>& gt,
                 std::int64_t max_gap_us) {
    int dropped = 0;
    std::vector<FeatureWindow> kept;
    kept.reserve(set.windows.size());
    for (FeatureWindow& window : set.windows) {
        const PoseFrame* best = nullptr;
        std::int64_t best_gap = 0;
        for (const PoseFrame& frame : gt) {
            const std::int64_t gap =
                std::llabs(frame.timestamp_us - window.end_timestamp_us);
            if (best == nullptr || gap < best_gap) {
                best = &frame;
                best_gap = gap;
            }
        }
        if (best == nullptr || best_gap > max_gap_us) {
            ++dropped;
            continue;
        }
        window.label = best->pose;
        kept.push_back(std::move(window));
    }
    set.windows = std::move(kept);
    return dropped;
}

std::vector<FeatureWindow> augment(const FeatureWindow& window,
                                   const FeatureSet& shape,
                                   const std::vector<int>& shifts,
                                   double cell_mm) {
    if (!window.label) {
        throw InputError("augment: window has no label");
    }
    std::vector<FeatureWindow> out;
    out.reserve(shifts.size());
    for (int s : shifts) {
        if (s == 0 || std::abs(s) > 3) {
            throw ConfigError("augment: shifts must be nonzero with |s| <= 3");
        }
        FeatureWindow shifted;
        shifted.end_timestamp_us = window.end_timestamp_us;
        shifted.tensor.assign(window.tensor.size(), 0.0f);
        for (int c = 0; c < shape.channels; ++c) {
            for (int k = 0; k < shape.cells; ++k) {
                const int src = k - s;
                if (src < 0 || src >= shape.cells) {
                    continue;
                }
                for (int t = 0; t < shape.window_len; ++t) {
                    shifted.tensor[(static_cast<std::size_t>(c) * shape.cells + k) *
                                       shape.window_len +
                                   t] = shape.at(window, c, src, t);
                }
            }
        }
        HandPose label = *window.label;
        for (Vec3& joint : label.joints_mm) {
            joint.y += s * cell_mm;
        }
        shifted.label = label;
        out.push_back(std::move(shifted));
    }
    return out;
}

namespace {

using nlohmann::json;

json chirp_to_json(const ChirpSpec& spec) {
    return json{{"start_freq_hz", spec.start_freq_hz},
                {"bandwidth_hz", spec.bandwidth_hz},
                {"chirp_len_samples", spec.chirp_len_samples},
                {"sample_rate_hz", spec.sample_rate_hz},
                {"amplitude", spec.amplitude},
                {"sound_speed_mps", spec.sound_speed_mps}};
}

ChirpSpec chirp_from_json(const json& j) {
    ChirpSpec spec;
    spec.start_freq_hz = j.at("start_freq_hz").get<double>();
    spec.bandwidth_hz = j.at("bandwidth_hz").get<double>();
    spec.chirp_len_samples = j.at("chirp_len_samples").get<int>();
    spec.sample_rate_hz = j.at("sample_rate_hz").get<int>();
    spec.amplitude = j.at("amplitude").get<double>();
    spec.sound_speed_mps = j.at("sound_speed_mps").get<double>();
    return spec;
}

}  // namespace

void SessionManifest::validate_files(
    const std::filesystem::path& base_dir) const {
    for (const auto& [role, rel] : files) {
        const auto path = base_dir / rel;
        if (!std::filesystem::exists(path)) {
            throw FormatError("manifest references missing file: " +
                              path.string());
        }
    }
}

void write_manifest(const std::filesystem::path& path,
                    const SessionManifest& manifest) {
    json j{{"session_id", manifest.session_id},
           {"subject_id", manifest.subject_id},
           {"environment", manifest.environment},
           {"stage", to_string(manifest.stage)},
           {"chirp", chirp_to_json(manifest.chirp)},
           {"duration_s", manifest.duration_s},
           {"seed", manifest.seed},
           {"files", manifest.files}};
    std::ofstream out(path);
    if (!out) {
        throw FormatError("cannot open for writing: " + path.string());
    }
    out << j.dump(2) << '\n';
}

SessionManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open for reading: " + path.string());
    }
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw FormatError("bad manifest JSON: " + std::string(e.what()));
    }
    SessionManifest manifest;
    manifest.session_id = j.at("session_id").get<std::string>();
    manifest.subject_id = j.at("subject_id").get<std::string>();
    manifest.environment = j.value("environment", std::string("default"));
    manifest.stage = gesture_stage_from_string(j.at("stage").get<std::string>());
    manifest.chirp = chirp_from_json(j.at("chirp"));
    manifest.duration_s = j.value("duration_s", 0.0);
    manifest.seed = j.at("seed").get<std::uint64_t>();
    manifest.files =
        j.at("files").get<std::map<std::string, std::string>>();
    return manifest;
}

std::vector<std::vector<SessionManifest>> curriculum_order(
    std::vector<SessionManifest> manifests, int* missing_stages) {
    constexpr GestureStage kOrder[] = {
        GestureStage::kOneFinger,  GestureStage::kTwoFinger,
        GestureStage::kThreeFinger, GestureStage::kFourFinger,
        GestureStage::kFiveFinger, GestureStage::kMixed};
    std::vector<std::vector<SessionManifest>> stages;
    int missing = 0;
    for (GestureStage stage : kOrder) {
        std::vector<SessionManifest> group;
        for (const SessionManifest& m : manifests) {
            if (m.stage == stage) {
                group.push_back(m);
            }
        }
        if (group.empty()) {
            ++missing;
            continue;
        }
        std::sort(group.begin(), group.end(),
                  [](const SessionManifest& a, const SessionManifest& b) {
                      return a.session_id < b.session_id;
                  });
        stages.push_back(std::move(group));
    }
    if (missing_stages != nullptr) {
        *missing_stages = missing;
    }
    return stages;
}

std::vector<SubjectSplit> leave_one_subject_out(
    const std::vector<SessionManifest>& manifests) {
    std::vector<std::string> subjects;
    for (const SessionManifest& m : manifests) {
        if (std::find(subjects.begin(), subjects.end(), m.subject_id) ==
            subjects.end()) {
            subjects.push_back(m.subject_id);
        }
    }
    std::sort(subjects.begin(), subjects.end());
    std::vector<SubjectSplit> splits;
    for (const std::string& subject : subjects) {
        SubjectSplit split;
        split.held_out = subject;
        for (const SessionManifest& m : manifests) {
            (m.subject_id == subject ? split.test : split.train).push_back(m);
        }
        splits.push_back(std::move(split));
    }
    return splits;
}

void write_feature_set(const std::filesystem::path& tensor_path,
                       const std::filesystem::path& label_path,
                       const FeatureSet& set) {
    TensorFile tensor;
    tensor.dims = {set.windows.size(), static_cast<std::uint64_t>(set.channels),
                   static_cast<std::uint64_t>(set.cells),
                   static_cast<std::uint64_t>(set.window_len)};
    tensor.data.reserve(set.windows.size() * set.tensor_size());
    std::vector<PoseFrame> labels;
    labels.reserve(set.windows.size());
    for (const FeatureWindow& window : set.windows) {
        if (!window.label) {
            throw InputError("write_feature_set: unlabeled window");
        }
        tensor.data.insert(tensor.data.end(), window.tensor.begin(),
                           window.tensor.end());
        labels.push_back({window.end_timestamp_us, *window.label});
    }
    write_tensor_bvtn(tensor_path, tensor);
    write_pose_csv(label_path, labels);
}

FeatureSet read_feature_set(const std::filesystem::path& tensor_path,
                            const std::filesystem::path& label_path) {
    const TensorFile tensor = read_tensor_bvtn(tensor_path);
    if (tensor.dims.size() != 4) {
        throw FormatError("feature tensor must be rank 4");
    }
    const std::vector<PoseFrame> labels = read_pose_csv(label_path);
    if (labels.size() != tensor.dims[0]) {
        throw FormatError("label row count does not match tensor samples");
    }
    FeatureSet set;
    set.channels = static_cast<int>(tensor.dims[1]);
    set.cells = static_cast<int>(tensor.dims[2]);
    set.window_len = static_cast<int>(tensor.dims[3]);
    const std::size_t stride = set.tensor_size();
    set.windows.resize(tensor.dims[0]);
    for (std::size_t i = 0; i < set.windows.size(); ++i) {
        FeatureWindow& window = set.windows[i];
        window.tensor.assign(tensor.data.begin() + i * stride,
                             tensor.data.begin() + (i + 1) * stride);
        window.end_timestamp_us = labels[i].timestamp_us;
        window.label = labels[i].pose;
    }
    return set;
}

}  // namespace echosonar
