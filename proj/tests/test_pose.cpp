#include <doctest.h>

#include <cmath>
#include <random>

#include "echosonar/pose.hpp"
#include "echosonar/sim.hpp"

using namespace echosonar;

namespace {

HandPose flat_pose() {
    HandKinematicParams p;
    p.wrist_pos_m = {0.0, 0.0, 0.0};
    return hand_pose_from_params(p);
}

Vec3 rotate(const Vec3& v, const Vec3& axis, double rad) {
    const Vec3 k = axis.normalized();
    const double c = std::cos(rad);
    const double s = std::sin(rad);
    return v * c + k.cross(v) * s + k * (k.dot(v) * (1.0 - c));
}

HandPose transformed(const HandPose& pose, const Vec3& axis, double rad,
                     const Vec3& translate, double scale = 1.0) {
    HandPose out;
    for (int j = 0; j < HandPose::kNumJoints; ++j) {
        out.joints_mm[j] = rotate(pose.joints_mm[j] * scale, axis, rad) + translate;
    }
    return out;
}

}  // namespace

TEST_CASE("straight fingers have zero non-root flexion angles") {
    const FlexionAngles angles = flexion_angles(flat_pose());
    // Root bones lie in the palm plane, orthogonal to the -z table normal.
    int idx = 0;
    for (int finger = 0; finger < 5; ++finger) {
        CHECK(std::abs(angles.degrees[idx] - 90.0) < 1e-5);
        ++idx;
        for (int b = 1; b < kFingerBoneCount[finger]; ++b, ++idx) {
            CHECK(std::abs(angles.degrees[idx]) < 1e-5);
        }
    }
    CHECK(idx == FlexionAngles::kNumAngles);
}

TEST_CASE("a right-angle bend measures 90 degrees") {
    HandPose pose = flat_pose();
    // Rebuild the index chain: metacarpal along +y, then a right-angle bend.
    pose.joints_mm[5] = {0.0, 80.0, 0.0};
    pose.joints_mm[6] = {0.0, 80.0, 40.0};
    pose.joints_mm[7] = {0.0, 80.0, 70.0};
    pose.joints_mm[8] = {0.0, 80.0, 90.0};
    // Thumb angles occupy 0..2; index angles are 3 (root) through 6.
    const FlexionAngles angles = flexion_angles(pose);
    CHECK(std::abs(angles.degrees[3] - 90.0) < 1e-5);  // metacarpal vs -z
    CHECK(std::abs(angles.degrees[4] - 90.0) < 1e-5);  // the bend
    CHECK(std::abs(angles.degrees[5]) < 1e-5);
    CHECK(std::abs(angles.degrees[6]) < 1e-5);
}

TEST_CASE("degenerate bones are named") {
    HandPose pose = flat_pose();
    pose.joints_mm[6] = pose.joints_mm[5];  // zero-length index proximal bone
    CHECK_THROWS_WITH_AS(flexion_angles(pose), doctest::Contains("index_pip"),
                         AngleError);
}

TEST_CASE("non-root flexion angles are rigid-motion invariant") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    HandKinematicParams params;
    params.flexion = {0.3, 0.8, 0.1, 0.5, 0.9};
    const HandPose pose = hand_pose_from_params(params);
    const FlexionAngles base = flexion_angles(pose);

    for (int trial = 0; trial < 20; ++trial) {
        const Vec3 axis{u(rng), u(rng), u(rng)};
        const double angle = u(rng) * kPi;
        const Vec3 shift{u(rng) * 100.0, u(rng) * 100.0, u(rng) * 100.0};
        const HandPose moved = transformed(pose, axis, angle, shift);
        const FlexionAngles rotated = flexion_angles(moved);

        int idx = 0;
        for (int finger = 0; finger < 5; ++finger) {
            // Root angles follow the palm orientation; verify against a
            // direct vector-arithmetic oracle.
            const Vec3 root_bone = moved.joints_mm[kFingerFirstJoint[finger]] -
                                   moved.joints_mm[kJointWrist];
            const double expect =
                std::acos(std::clamp(root_bone.dot({0.0, 0.0, -1.0}) /
                                         root_bone.norm(),
                                     -1.0, 1.0)) *
                180.0 / kPi;
            CHECK(rotated.degrees[idx] == doctest::Approx(expect).epsilon(1e-9));
            ++idx;
            for (int b = 1; b < kFingerBoneCount[finger]; ++b, ++idx) {
                CHECK(rotated.degrees[idx] ==
                      doctest::Approx(base.degrees[idx]).epsilon(1e-9));
            }
        }
    }
}

TEST_CASE("normalize_pose canonicalizes wrist, scale and orientation") {
    HandKinematicParams params;
    params.flexion = {0.1, 0.4, 0.7, 0.2, 0.6};
    const HandPose pose = hand_pose_from_params(params);
    const HandPose norm = normalize_pose(pose);

    CHECK(norm.joints_mm[kJointWrist].norm() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(norm.joints_mm[kFingerFirstJoint[2]].norm() ==
          doctest::Approx(1.0).epsilon(1e-12));

    // Idempotent.
    const HandPose twice = normalize_pose(norm);
    for (int j = 0; j < HandPose::kNumJoints; ++j) {
        CHECK(distance(twice.joints_mm[j], norm.joints_mm[j]) < 1e-9);
    }

    // Invariant under rotation + translation + scaling.
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        const Vec3 axis{u(rng), u(rng), u(rng)};
        const double angle = u(rng) * kPi;
        const Vec3 shift{u(rng) * 200.0, u(rng) * 200.0, u(rng) * 200.0};
        const double scale = 0.5 + 1.5 * std::abs(u(rng));
        const HandPose moved = transformed(pose, axis, angle, shift, scale);
        const HandPose norm2 = normalize_pose(moved);
        for (int j = 0; j < HandPose::kNumJoints; ++j) {
            CHECK(distance(norm2.joints_mm[j], norm.joints_mm[j]) < 1e-9);
        }
    }

    HandPose degenerate = pose;
    // Collapse the palm triangle: pinky knuckle onto the wrist->index line.
    degenerate.joints_mm[kFingerFirstJoint[4]] =
        degenerate.joints_mm[kJointWrist] +
        (degenerate.joints_mm[kFingerFirstJoint[1]] -
         degenerate.joints_mm[kJointWrist]) *
            0.5;
    degenerate.joints_mm[kFingerFirstJoint[2]] =
        degenerate.joints_mm[kJointWrist] +
        (degenerate.joints_mm[kFingerFirstJoint[1]] -
         degenerate.joints_mm[kJointWrist]) *
            0.7;
    CHECK_THROWS_AS(normalize_pose(degenerate), NormalizationError);
}

TEST_CASE("activation similarity is zero for a transformed template pose") {
    HandKinematicParams params;
    params.flexion = {0.0, 1.0, 0.0, 1.0, 0.0};
    const HandPose pose = hand_pose_from_params(params);
    const ActivationTemplate tmpl = make_activation_template(pose, -0.05);

    const HandPose moved =
        transformed(pose, {0.3, -0.5, 0.8}, 1.1, {50.0, -30.0, 80.0}, 1.7);
    CHECK(activation_similarity(moved, tmpl) == doctest::Approx(0.0).epsilon(1e-9));

    // Symmetric after normalization.
    HandKinematicParams other;
    other.flexion = {0.5, 0.0, 0.9, 0.0, 0.2};
    const HandPose pose2 = hand_pose_from_params(other);
    const ActivationTemplate tmpl2 = make_activation_template(pose2, -0.05);
    CHECK(activation_similarity(pose, tmpl2) ==
          doctest::Approx(activation_similarity(pose2, tmpl)).epsilon(1e-12));
    CHECK(activation_similarity(pose2, tmpl) < -0.01);
}

TEST_CASE("detector debounces and re-arms") {
    HandKinematicParams params;
    params.flexion = {0.0, 1.0, 0.0, 1.0, 0.0};
    const HandPose match = hand_pose_from_params(params);
    HandKinematicParams flat;
    const HandPose other = hand_pose_from_params(flat);
    const ActivationTemplate tmpl = make_activation_template(match, -0.02);

    // Constant matching stream: exactly one event, on the debounce frame.
    {
        std::vector<HandPose> stream(10, match);
        const auto events = detect_activation(stream, tmpl, 3);
        REQUIRE(events.size() == 1);
        CHECK(events[0].frame_index == 2);
    }
    // Never matching: no events.
    {
        std::vector<HandPose> stream(10, other);
        CHECK(detect_activation(stream, tmpl, 3).empty());
    }
    // Alternating below the debounce length: no events.
    {
        std::vector<HandPose> stream;
        for (int i = 0; i < 12; ++i) {
            stream.push_back(i % 2 == 0 ? match : other);
        }
        CHECK(detect_activation(stream, tmpl, 3).empty());
    }
    // Two held activations separated by a gap: two events.
    {
        std::vector<HandPose> stream;
        for (int i = 0; i < 4; ++i) stream.push_back(match);
        for (int i = 0; i < 3; ++i) stream.push_back(other);
        for (int i = 0; i < 4; ++i) stream.push_back(match);
        CHECK(detect_activation(stream, tmpl, 3).size() == 2);
    }
}

TEST_CASE("the mixed gesture set never collides with the activation pose") {
    // The template flexes index and ring only; mixed-stage gestures flex runs
    // of neighboring fingers, so a strictly positive similarity gap exists.
    HandKinematicParams tpl_params;
    tpl_params.flexion = {0.0, 1.0, 0.0, 1.0, 0.0};
    const ActivationTemplate tmpl =
        make_activation_template(hand_pose_from_params(tpl_params), 0.0);

    const auto traj = gesture_trajectory(GestureStage::kMixed, 30.0, 7);
    double best = -1.0;
    for (const TrajectoryFrame& frame : traj) {
        best = std::max(best,
                        activation_similarity(hand_pose_from_params(frame.params),
                                              tmpl));
    }
    CHECK(best < -0.01);

    // Inserting the template pose itself closes the gap from above.
    HandKinematicParams inserted = tpl_params;
    inserted.wrist_pos_m = {0.1, 0.35, -0.2};
    inserted.azimuth_deg = 25.0;
    const double match =
        activation_similarity(hand_pose_from_params(inserted), tmpl);
    CHECK(match > -1e-9);
}
