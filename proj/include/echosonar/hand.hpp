#pragma once

#include <array>
#include <string_view>

#include "echosonar/common.hpp"

namespace echosonar {

// 21 joints in millimetres, device frame. Order (fixed, version 1):
//   0  wrist
//   1  palm centre
//   2..4   thumb: knuckle, interphalangeal, tip          (3 bones from wrist)
//   5..8   index: mcp, pip, dip, tip                     (4 bones from wrist)
//   9..12  middle: mcp, pip, dip, tip
//   13..16 ring: mcp, pip, dip, tip
//   17..20 pinky: mcp, pip, dip, tip
// Every finger chain is rooted at the wrist; the first bone of a non-thumb
// finger is its metacarpal.
struct HandPose {
    static constexpr int kNumJoints = 21;
    std::array<Vec3, kNumJoints> joints_mm{};

    bool all_finite() const {
        for (const Vec3& j : joints_mm) {
            if (!j.all_finite()) return false;
        }
        return true;
    }
};

constexpr int kJointWrist = 0;
constexpr int kJointPalm = 1;

// First joint index of each finger chain (thumb, index, middle, ring, pinky).
constexpr std::array<int, 5> kFingerFirstJoint = {2, 5, 9, 13, 17};
constexpr std::array<int, 5> kFingerBoneCount = {3, 4, 4, 4, 4};

std::string_view joint_name(int index);
std::string_view finger_name(int finger);

// Wrist pose, palm orientation and per-finger curl. Flexion 0 is a flat
// finger, 1 is fully curled. Orientation angles are degrees.
struct HandKinematicParams {
    Vec3 wrist_pos_m{0.0, 0.30, -0.12};
    double palm_roll_deg = 0.0;   // about the finger axis (y)
    double azimuth_deg = 0.0;     // about the table normal (z)
    double elevation_deg = 0.0;   // about the lateral axis (x)
    std::array<double, 5> flexion{0.0, 0.0, 0.0, 0.0, 0.0};

    void validate() const;
};

// Canonical average adult hand: per-finger splay in the palm plane and bone
// lengths in millimetres, wrist-rooted. These constants define the simulated
// subject; they are not fitted to any individual.
struct HandModel {
    // splay degrees from the palm forward axis (+y), thumb-side negative
    std::array<double, 5> splay_deg = {-50.0, -13.0, -2.0, 9.0, 21.0};
    // bone lengths per finger, root first; thumb has 3 bones
    std::array<std::array<double, 4>, 5> bone_len_mm = {{
        {48.0, 34.0, 28.0, 0.0},
        {88.0, 42.0, 26.0, 19.0},
        {84.0, 47.0, 30.0, 20.0},
        {78.0, 43.0, 28.0, 19.0},
        {74.0, 33.0, 20.0, 17.0},
    }};
    // full-curl joint angles (degrees) distributed over a finger's non-root
    // joints; scaled by the flexion parameter
    std::array<double, 3> curl_deg = {70.0, 100.0, 60.0};
    std::array<double, 2> thumb_curl_deg = {55.0, 80.0};

    static const HandModel& canonical();
};

// Forward kinematics over the rigid chains. Bone lengths are preserved
// exactly for any parameter choice. With zero flexion and identity
// orientation all joints lie in the palm plane (z of the wrist).
HandPose hand_pose_from_params(const HandKinematicParams& params,
                               const HandModel& model = HandModel::canonical());

// Device-frame rotation used by the kinematics: Rz(azimuth) * Rx(elevation)
// * Ry(roll) applied to palm-frame vectors.
Vec3 palm_rotation_apply(const HandKinematicParams& params, const Vec3& v);

}  // namespace echosonar
