#pragma once

#include <array>
#include <vector>

#include "echosonar/hand.hpp"

namespace echosonar {

class AngleError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NormalizationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// 19 per-bone flexion angles in degrees, each in [0, 180]: per finger from
// the root bone outward (thumb first with 3, then index..pinky with 4).
// A bone's angle is measured against its ancestor bone toward the wrist; the
// root bone is measured against the negative-z unit vector (the table
// normal).
struct FlexionAngles {
    static constexpr int kNumAngles = 19;
    std::array<double, kNumAngles> degrees{};
};

FlexionAngles flexion_angles(const HandPose& pose);

// Canonicalizes a pose: wrist at the origin, palm frame rotated onto the
// canonical basis (x: wrist->index-knuckle orthogonalized against y, y:
// wrist->middle-knuckle, z = x cross y), all coordinates divided by the
// wrist->middle-knuckle distance. Invariant under rigid motion and uniform
// scaling; idempotent.
HandPose normalize_pose(const HandPose& pose);

struct ActivationTemplate {
    HandPose pose;          // stored normalized
    double threshold = 0.0;  // similarity threshold for detection
};

ActivationTemplate make_activation_template(const HandPose& pose,
                                            double threshold);

// Negative mean absolute difference between the normalized coordinates of
// pose and template (dimensionless, palm-size units). 0 is a perfect match.
double activation_similarity(const HandPose& pose,
                             const ActivationTemplate& tmpl);

// Debounced threshold detector over a pose stream: an event fires when the
// similarity stays at or above the threshold for `debounce` consecutive
// frames, and re-arms once it drops below.
class ActivationDetector {
public:
    ActivationDetector(ActivationTemplate tmpl, int debounce = 3);

    // Feeds one frame; returns true when this frame completes an activation.
    bool feed(const HandPose& pose);
    void reset();

    int debounce() const { return debounce_; }

private:
    ActivationTemplate template_;
    int debounce_;
    int run_ = 0;
    bool armed_ = true;
};

struct ActivationEvent {
    std::size_t frame_index = 0;
    double similarity = 0.0;
};

std::vector<ActivationEvent> detect_activation(
    const std::vector<HandPose>& stream, const ActivationTemplate& tmpl,
    int debounce = 3);

}  // namespace echosonar
