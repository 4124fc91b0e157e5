#include "echosonar/hand.hpp"

#include <array>
#include <cmath>

namespace echosonar {

namespace {

constexpr std::array<std::string_view, HandPose::kNumJoints> kJointNames = {
    "wrist",      "palm",       "thumb_knuckle", "thumb_ip",   "thumb_tip",
    "index_mcp",  "index_pip",  "index_dip",     "index_tip",  "middle_mcp",
    "middle_pip", "middle_dip", "middle_tip",    "ring_mcp",   "ring_pip",
    "ring_dip",   "ring_tip",   "pinky_mcp",     "pinky_pip",  "pinky_dip",
    "pinky_tip"};

constexpr std::array<std::string_view, 5> kFingerNames = {
    "thumb", "index", "middle", "ring", "pinky"};

double deg2rad(double d) { return d * kPi / 180.0; }

// Rotation of v about unit axis k by angle a (Rodrigues).
Vec3 rotate_about(const Vec3& v, const Vec3& k, double a) {
    const double c = std::cos(a);
    const double s = std::sin(a);
    return v * c + k.cross(v) * s + k * (k.dot(v) * (1.0 - c));
}

}  // namespace

std::string_view joint_name(int index) { return kJointNames.at(index); }
std::string_view finger_name(int finger) { return kFingerNames.at(finger); }

void HandKinematicParams::validate() const {
    if (!wrist_pos_m.all_finite()) {
        throw ConfigError("wrist position must be finite");
    }
    for (double f : flexion) {
        if (!(f >= 0.0 && f <= 1.0)) {
            throw ConfigError("flexion values must lie in [0, 1]");
        }
    }
    for (double a : {palm_roll_deg, azimuth_deg, elevation_deg}) {
        if (!(a >= -60.0 && a <= 60.0)) {
            throw ConfigError("orientation angles must lie in [-60, 60] degrees");
        }
    }
}

const HandModel& HandModel::canonical() {
    static const HandModel model;
    return model;
}

Vec3 palm_rotation_apply(const HandKinematicParams& params, const Vec3& v) {
    const double roll = deg2rad(params.palm_roll_deg);
    const double elev = deg2rad(params.elevation_deg);
    const double azim = deg2rad(params.azimuth_deg);
    Vec3 r = rotate_about(v, {0.0, 1.0, 0.0}, roll);
    r = rotate_about(r, {1.0, 0.0, 0.0}, elev);
    r = rotate_about(r, {0.0, 0.0, 1.0}, azim);
    return r;
}

HandPose hand_pose_from_params(const HandKinematicParams& params,
                               const HandModel& model) {
    params.validate();

    HandPose pose;
    const Vec3 wrist_mm = params.wrist_pos_m * 1000.0;
    pose.joints_mm[kJointWrist] = wrist_mm;

    for (int finger = 0; finger < 5; ++finger) {
        const int bones = kFingerBoneCount[finger];
        const double splay = deg2rad(model.splay_deg[finger]);
        // Palm-plane direction of the chain and its curl axis. Curl rotates
        // about the lateral axis so flexed joints move toward +z (the table).
        Vec3 dir{std::sin(splay), std::cos(splay), 0.0};
        const Vec3 curl_axis{std::cos(splay), -std::sin(splay), 0.0};

        double joint_curl[4] = {0.0, 0.0, 0.0, 0.0};
        if (finger == 0) {
            joint_curl[1] = deg2rad(model.thumb_curl_deg[0]);
            joint_curl[2] = deg2rad(model.thumb_curl_deg[1]);
        } else {
            joint_curl[1] = deg2rad(model.curl_deg[0]);
            joint_curl[2] = deg2rad(model.curl_deg[1]);
            joint_curl[3] = deg2rad(model.curl_deg[2]);
        }

        Vec3 pos{0.0, 0.0, 0.0};
        int joint_index = kFingerFirstJoint[finger];
        for (int b = 0; b < bones; ++b) {
            dir = rotate_about(dir, curl_axis,
                               params.flexion[finger] * joint_curl[b]);
            pos += dir * model.bone_len_mm[finger][b];
            pose.joints_mm[joint_index++] =
                wrist_mm + palm_rotation_apply(params, pos);
        }
    }

    // Palm point: halfway from wrist to the middle-finger knuckle.
    const double splay_mid = deg2rad(model.splay_deg[2]);
    const Vec3 mid_dir{std::sin(splay_mid), std::cos(splay_mid), 0.0};
    pose.joints_mm[kJointPalm] =
        wrist_mm +
        palm_rotation_apply(params, mid_dir * (0.5 * model.bone_len_mm[2][0]));
    return pose;
}

}  // namespace echosonar
