#include "echosonar/pose.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace echosonar {

namespace {

double angle_between_deg(const Vec3& a, const Vec3& b) {
    const double cosv = a.dot(b) / (a.norm() * b.norm());
    return std::acos(std::clamp(cosv, -1.0, 1.0)) * 180.0 / kPi;
}

constexpr double kMinBoneLenMm = 1.0;

}  // namespace

FlexionAngles flexion_angles(const HandPose& pose) {
    FlexionAngles out;
    int angle_index = 0;
    for (int finger = 0; finger < 5; ++finger) {
        const int first = kFingerFirstJoint[finger];
        const int bones = kFingerBoneCount[finger];
        Vec3 ancestor{0.0, 0.0, -1.0};  // table normal for the root bone
        Vec3 prev_joint = pose.joints_mm[kJointWrist];
        for (int b = 0; b < bones; ++b) {
            const Vec3 joint = pose.joints_mm[first + b];
            const Vec3 bone = joint - prev_joint;
            if (bone.norm() <= kMinBoneLenMm) {
                throw AngleError(std::string("degenerate bone: ") +
                                 std::string(joint_name(first + b)));
            }
            out.degrees[angle_index++] = angle_between_deg(bone, ancestor);
            ancestor = bone;
            prev_joint = joint;
        }
    }
    return out;
}

HandPose normalize_pose(const HandPose& pose) {
    const Vec3 wrist = pose.joints_mm[kJointWrist];
    const Vec3 index_root = pose.joints_mm[kFingerFirstJoint[1]];
    const Vec3 middle_root = pose.joints_mm[kFingerFirstJoint[2]];
    const Vec3 pinky_root = pose.joints_mm[kFingerFirstJoint[4]];

    // Palm triangle wrist / index / pinky must span a plane.
    const Vec3 u = index_root - wrist;
    const Vec3 w = pinky_root - wrist;
    const double area = u.cross(w).norm();
    const double palm_size = (middle_root - wrist).norm();
    if (!(palm_size > 1e-9) || !(area > 1e-9 * palm_size * palm_size)) {
        throw NormalizationError("degenerate palm triangle");
    }

    const Vec3 y_axis = (middle_root - wrist).normalized();
    Vec3 x_axis = u - y_axis * u.dot(y_axis);
    if (!(x_axis.norm() > 1e-12)) {
        throw NormalizationError("index knuckle collinear with palm axis");
    }
    x_axis = x_axis.normalized();
    const Vec3 z_axis = x_axis.cross(y_axis);

    HandPose out;
    for (int j = 0; j < HandPose::kNumJoints; ++j) {
        const Vec3 rel = pose.joints_mm[j] - wrist;
        out.joints_mm[j] = {rel.dot(x_axis) / palm_size,
                            rel.dot(y_axis) / palm_size,
                            rel.dot(z_axis) / palm_size};
    }
    return out;
}

ActivationTemplate make_activation_template(const HandPose& pose,
                                            double threshold) {
    return {normalize_pose(pose), threshold};
}

double activation_similarity(const HandPose& pose,
                             const ActivationTemplate& tmpl) {
    const HandPose a = normalize_pose(pose);
    const HandPose b = normalize_pose(tmpl.pose);
    double abs_sum = 0.0;
    for (int j = 0; j < HandPose::kNumJoints; ++j) {
        const Vec3 diff = a.joints_mm[j] - b.joints_mm[j];
        abs_sum += std::abs(diff.x) + std::abs(diff.y) + std::abs(diff.z);
    }
    return -abs_sum / (3.0 * HandPose::kNumJoints);
}

ActivationDetector::ActivationDetector(ActivationTemplate tmpl, int debounce)
    : template_(std::move(tmpl)), debounce_(debounce) {
    if (debounce_ < 1) {
        throw ConfigError("debounce must be >= 1");
    }
}

bool ActivationDetector::feed(const HandPose& pose) {
    const double sim = activation_similarity(pose, template_);
    if (sim >= template_.threshold) {
        ++run_;
        if (armed_ && run_ >= debounce_) {
            armed_ = false;
            return true;
        }
    } else {
        run_ = 0;
        armed_ = true;
    }
    return false;
}

void ActivationDetector::reset() {
    run_ = 0;
    armed_ = true;
}

std::vector<ActivationEvent> detect_activation(
    const std::vector<HandPose>& stream, const ActivationTemplate& tmpl,
    int debounce) {
    ActivationDetector detector(tmpl, debounce);
    std::vector<ActivationEvent> events;
    for (std::size_t i = 0; i < stream.size(); ++i) {
        if (detector.feed(stream[i])) {
            events.push_back({i, activation_similarity(stream[i], tmpl)});
        }
    }
    return events;
}

}  // namespace echosonar
