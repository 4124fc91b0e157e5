#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "echosonar/chirp.hpp"
#include "echosonar/io.hpp"
#include "echosonar/rangeprofile.hpp"
#include "echosonar/sim.hpp"

namespace echosonar {

// One regressor input: channels x cells x windows of rectified subtracted
// profiles (float32, matching the persisted tensor format; the signal chain
// upstream runs in double). Stored row-major as (channel, cell, window).
struct FeatureWindow {
    std::vector<float> tensor;
    std::int64_t end_timestamp_us = 0;
    std::optional<HandPose> label;
};

struct FeatureSet {
    int channels = 7;
    int cells = 256;
    int window_len = 50;  // subtracted profiles per feature window
    std::vector<FeatureWindow> windows;

    std::size_t tensor_size() const {
        return static_cast<std::size_t>(channels) * cells * window_len;
    }
    float& at(FeatureWindow& w, int c, int k, int t) const {
        return w.tensor[(static_cast<std::size_t>(c) * cells + k) * window_len + t];
    }
    float at(const FeatureWindow& w, int c, int k, int t) const {
        return w.tensor[(static_cast<std::size_t>(c) * cells + k) * window_len + t];
    }
};

// Stacks sliding blocks of window_len consecutive subtracted profiles into
// feature windows; `stride` profiles between successive block ends. Slice t
// of a block is the older profile, slice window_len - 1 the newest, and the
// block carries that newest profile's end-of-window timestamp.
FeatureSet assemble_features(const std::vector<RangeProfile>& subtracted,
                             const ChirpSpec& spec, int stride,
                             int window_len = 50);

// Labels each window with the ground-truth frame nearest its end timestamp.
// Windows whose nearest frame is farther than max_gap_us are dropped;
// returns the dropped count.
int align_labels(FeatureSet& set, const std::vector<PoseFrame>& gt,
                 std::int64_t max_gap_us = 20000);

// Range-shift augmentation: translates the tensor along the cell axis by s
// cells (zero-filling the vacated edge) and shifts every joint's y by
// s * cell_mm, leaving x, z and all inter-joint angles unchanged. Shifts are
// limited to |s| <= 3 so the shifted map stays a faithful translation.
std::vector<FeatureWindow> augment(const FeatureWindow& window,
                                   const FeatureSet& shape,
                                   const std::vector<int>& shifts,
                                   double cell_mm);

inline std::vector<int> default_augment_shifts() {
    return {1, -1, 2, -2, 3, -3};
}

// Session bookkeeping shared by the simulator output and the preprocessed
// feature archives.
struct SessionManifest {
    std::string session_id;
    std::string subject_id;
    std::string environment = "default";
    GestureStage stage = GestureStage::kMixed;
    ChirpSpec chirp;
    double duration_s = 0.0;
    std::uint64_t seed = 0;
    std::map<std::string, std::string> files;  // role -> path

    void validate_files(const std::filesystem::path& base_dir) const;
};

void write_manifest(const std::filesystem::path& path,
                    const SessionManifest& manifest);
SessionManifest read_manifest(const std::filesystem::path& path);

// Orders manifests into curriculum stages: 1-finger .. 5-finger, then mixed;
// sessions sorted by id within a stage. Missing stages are skipped and
// counted in `missing_stages` when provided.
std::vector<std::vector<SessionManifest>> curriculum_order(
    std::vector<SessionManifest> manifests, int* missing_stages = nullptr);

// Leave-one-subject-out partitions: one (train, test) pair per subject, with
// whole sessions only — no session is ever split across the two sides.
struct SubjectSplit {
    std::string held_out;
    std::vector<SessionManifest> train;
    std::vector<SessionManifest> test;
};

std::vector<SubjectSplit> leave_one_subject_out(
    const std::vector<SessionManifest>& manifests);

// Feature archive persistence: rank-4 tensor (sample, channel, cell, window)
// plus a label CSV whose row i holds sample i's end timestamp and pose.
// Unlabeled windows are not persisted.
void write_feature_set(const std::filesystem::path& tensor_path,
                       const std::filesystem::path& label_path,
                       const FeatureSet& set);
FeatureSet read_feature_set(const std::filesystem::path& tensor_path,
                            const std::filesystem::path& label_path);

}  // namespace echosonar
