#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "echosonar/chirp.hpp"
#include "echosonar/common.hpp"
#include "echosonar/hand.hpp"

namespace echosonar {

// Seven microphones in the device frame (metres). Defaults to six mics on a
// 45 mm circle plus one centre mic, 10 mm above the table plane z = 0
// (device frame: +z points down into the table, so "above" is -z).
struct MicArrayGeometry {
    static constexpr int kNumMics = 7;
    std::array<Vec3, kNumMics> positions;

    static MicArrayGeometry default_uma8();
    void validate() const;
};

struct Scatterer {
    Vec3 position;          // metres
    double reflectivity = 0.0;

    void validate() const;
};

// The simulated world: geometry, clutter, the moving target set per chirp
// window, and the record-level impairments.
struct Scene {
    Vec3 speaker_pos{0.0, -0.05, -0.01};
    MicArrayGeometry mics = MicArrayGeometry::default_uma8();
    std::vector<Scatterer> static_scatterers;
    // One scatterer set per chirp window (the chirp-window sampling rate).
    std::vector<std::vector<Scatterer>> moving_scatterers;
    bool surface_plane_enabled = false;
    std::optional<double> noise_snr_db;          // white, full band
    std::optional<double> audible_noise_snr_db;  // band-limited below 8 kHz
    double audible_noise_cutoff_hz = 8000.0;
    double ultrasound_gain_db = 0.0;
    std::uint32_t start_offset_samples = 0;

    void validate(const ChirpSpec& spec) const;
};

// Reflection coefficient of the single image-source bounce off the table.
constexpr double kSurfaceReflectionCoeff = 0.5;

// Echo amplitudes divide by propagation distance; distances below this clamp
// are treated as 1 cm to keep near-field amplitudes finite.
constexpr double kMinPropagationDistance = 0.01;

// One scatterer per joint, millimetres converted to metres exactly.
std::vector<Scatterer> hand_to_scatterers(const HandPose& pose,
                                          double reflectivity_per_joint);

// Renders the speaker signal at each microphone: direct path plus one echo
// per scatterer, delayed by the nearest sample to (|spk-p| + |p-mic|) / c and
// scaled by reflectivity / (|spk-p| * |p-mic|). With the surface plane
// enabled each scatterer also contributes its image about z = 0 at half
// strength. ultrasound_gain_db scales the speaker output (direct path and
// every echo alike); start_offset_samples of silence are prepended; optional
// white / audible-band noise is added at the configured SNR relative to the
// clean channel. noise_seed drives every random draw.
MultiChannelBuffer propagate(const Scene& scene, const SampleBuffer& tx,
                             const ChirpSpec& spec,
                             std::uint64_t noise_seed = 0);

enum class GestureStage {
    kOneFinger,
    kTwoFinger,
    kThreeFinger,
    kFourFinger,
    kFiveFinger,
    kMixed,
};

GestureStage gesture_stage_from_string(const std::string& s);
std::string to_string(GestureStage stage);

// The finger subsets a stage flexes, as runs of neighboring fingers.
std::vector<std::vector<int>> stage_finger_sets(GestureStage stage);

struct TrajectoryFrame {
    std::int64_t timestamp_us = 0;
    HandKinematicParams params;
};

// Hand motion sampled at 100 Hz. Each rep flexes one finger set from the
// stage fully (0 -> 1 -> 0) before moving to the next set, with a short rest
// in between, while the wrist and palm orientation wander slowly.
// Deterministic for a given seed.
std::vector<TrajectoryFrame> gesture_trajectory(GestureStage stage,
                                                double duration_s,
                                                std::uint64_t seed);

constexpr double kTrajectoryRateHz = 100.0;

// Kinematic parameters at an arbitrary time, linearly interpolated between
// the 100 Hz trajectory samples.
HandKinematicParams interpolate_params(const std::vector<TrajectoryFrame>& traj,
                                       double t_s);

// Per-chirp-window scatterer sets for a hand following the trajectory,
// evaluated at each window's centre time.
std::vector<std::vector<Scatterer>> trajectory_to_moving_scatterers(
    const std::vector<TrajectoryFrame>& traj, const ChirpSpec& spec,
    int num_windows, double reflectivity_per_joint);

}  // namespace echosonar
