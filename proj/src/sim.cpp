#include "echosonar/sim.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace echosonar {

MicArrayGeometry MicArrayGeometry::default_uma8() {
    MicArrayGeometry geom;
    geom.positions[0] = {0.0, 0.0, -0.01};
    const double radius = 0.045;
    for (int i = 0; i < 6; ++i) {
        const double a = 2.0 * kPi * i / 6.0;
        geom.positions[i + 1] = {radius * std::cos(a), radius * std::sin(a),
                                 -0.01};
    }
    return geom;
}

void MicArrayGeometry::validate() const {
    for (int i = 0; i < kNumMics; ++i) {
        if (!positions[i].all_finite()) {
            throw ConfigError("microphone positions must be finite");
        }
        for (int j = i + 1; j < kNumMics; ++j) {
            if (distance(positions[i], positions[j]) == 0.0) {
                throw ConfigError("microphone positions must be distinct");
            }
        }
    }
}

void Scatterer::validate() const {
    if (!position.all_finite()) {
        throw ConfigError("scatterer position must be finite");
    }
    if (!(reflectivity >= 0.0) || !std::isfinite(reflectivity)) {
        throw ConfigError("scatterer reflectivity must be nonnegative");
    }
}

void Scene::validate(const ChirpSpec& spec) const {
    mics.validate();
    if (!speaker_pos.all_finite()) {
        throw ConfigError("speaker position must be finite");
    }
    for (const Scatterer& s : static_scatterers) {
        s.validate();
    }
    for (const auto& frame : moving_scatterers) {
        for (const Scatterer& s : frame) {
            s.validate();
        }
    }
    if (start_offset_samples >=
        4u * static_cast<std::uint32_t>(spec.chirp_len_samples)) {
        throw ConfigError(
            "start_offset_samples must be below four chirp lengths");
    }
}

std::vector<Scatterer> hand_to_scatterers(const HandPose& pose,
                                          double reflectivity_per_joint) {
    std::vector<Scatterer> out;
    out.reserve(HandPose::kNumJoints);
    for (const Vec3& joint_mm : pose.joints_mm) {
        out.push_back({joint_mm / 1000.0, reflectivity_per_joint});
    }
    return out;
}

namespace {

double clamped(double d) { return std::max(d, kMinPropagationDistance); }

// Adds tx delayed by `delay` samples and scaled by `amp` into out[dst_begin,
// dst_end), where out indexes the record before the start-offset shift.
void add_delayed(std::vector<double>& out, const std::vector<double>& tx,
                 long delay, double amp, long dst_begin, long dst_end,
                 long offset) {
    const long n = static_cast<long>(tx.size());
    const long begin = std::max(dst_begin, delay);
    const long end = std::min(dst_end, n + delay);
    for (long i = begin; i < end; ++i) {
        out[static_cast<std::size_t>(i + offset)] += amp * tx[i - delay];
    }
}

struct Echo {
    long delay = 0;
    double amp = 0.0;
};

Echo scatterer_echo(const Scene& scene, const Scatterer& s, const Vec3& mic,
                    const ChirpSpec& spec, double gain, bool image) {
    Vec3 p = s.position;
    double coeff = 1.0;
    if (image) {
        p.z = -p.z;
        coeff = kSurfaceReflectionCoeff;
    }
    const double d1 = distance(scene.speaker_pos, p);
    const double d2 = distance(p, mic);
    Echo e;
    e.delay = std::lround((d1 + d2) / spec.sound_speed_mps * spec.sample_rate_hz);
    e.amp = gain * coeff * s.reflectivity / (clamped(d1) * clamped(d2));
    return e;
}

}  // namespace

MultiChannelBuffer propagate(const Scene& scene, const SampleBuffer& tx,
                             const ChirpSpec& spec, std::uint64_t noise_seed) {
    spec.validate();
    scene.validate(spec);

    const long n = static_cast<long>(tx.samples.size());
    const long chirp_len = spec.chirp_len_samples;
    const long num_windows = (n + chirp_len - 1) / chirp_len;
    if (!scene.moving_scatterers.empty() &&
        static_cast<long>(scene.moving_scatterers.size()) < num_windows) {
        throw ConfigError(
            "moving-scatterer trajectory is shorter than the transmit signal");
    }

    const long offset = scene.start_offset_samples;
    const double gain = std::pow(10.0, scene.ultrasound_gain_db / 20.0);

    MultiChannelBuffer rec;
    rec.sample_rate_hz = spec.sample_rate_hz;
    rec.channels.assign(MicArrayGeometry::kNumMics,
                        std::vector<double>(n + offset, 0.0));

    for (int c = 0; c < MicArrayGeometry::kNumMics; ++c) {
        std::vector<double>& out = rec.channels[c];
        const Vec3 mic = scene.mics.positions[c];

        const double d_direct = distance(scene.speaker_pos, mic);
        const long direct_delay =
            std::lround(d_direct / spec.sound_speed_mps * spec.sample_rate_hz);
        add_delayed(out, tx.samples, direct_delay, gain / clamped(d_direct), 0,
                    n, offset);

        for (const Scatterer& s : scene.static_scatterers) {
            const Echo e = scatterer_echo(scene, s, mic, spec, gain, false);
            add_delayed(out, tx.samples, e.delay, e.amp, 0, n, offset);
            if (scene.surface_plane_enabled) {
                const Echo ei = scatterer_echo(scene, s, mic, spec, gain, true);
                add_delayed(out, tx.samples, ei.delay, ei.amp, 0, n, offset);
            }
        }

        for (long w = 0; w < static_cast<long>(scene.moving_scatterers.size()) &&
                         w < num_windows;
             ++w) {
            const long w_begin = w * chirp_len;
            const long w_end = std::min(n, (w + 1) * chirp_len);
            for (const Scatterer& s : scene.moving_scatterers[w]) {
                const Echo e = scatterer_echo(scene, s, mic, spec, gain, false);
                add_delayed(out, tx.samples, e.delay, e.amp, w_begin, w_end,
                            offset);
                if (scene.surface_plane_enabled) {
                    const Echo ei =
                        scatterer_echo(scene, s, mic, spec, gain, true);
                    add_delayed(out, tx.samples, ei.delay, ei.amp, w_begin,
                                w_end, offset);
                }
            }
        }
    }

    if (scene.noise_snr_db || scene.audible_noise_snr_db) {
        std::mt19937_64 rng(noise_seed);
        std::normal_distribution<double> normal(0.0, 1.0);
        std::vector<double> lp_kernel;
        if (scene.audible_noise_snr_db) {
            lp_kernel = design_lowpass_fir(scene.audible_noise_cutoff_hz,
                                           spec.sample_rate_hz);
        }
        for (auto& channel : rec.channels) {
            double energy = 0.0;
            for (double v : channel) {
                energy += v * v;
            }
            const double rms = std::sqrt(energy / channel.size());
            if (scene.noise_snr_db) {
                const double sigma =
                    rms / std::pow(10.0, *scene.noise_snr_db / 20.0);
                for (double& v : channel) {
                    v += sigma * normal(rng);
                }
            }
            if (scene.audible_noise_snr_db) {
                std::vector<double> white(channel.size());
                for (double& v : white) {
                    v = normal(rng);
                }
                std::vector<double> shaped = convolve_same(white, lp_kernel);
                double shaped_energy = 0.0;
                for (double v : shaped) {
                    shaped_energy += v * v;
                }
                const double shaped_rms =
                    std::sqrt(shaped_energy / shaped.size());
                const double target =
                    rms / std::pow(10.0, *scene.audible_noise_snr_db / 20.0);
                const double scale = shaped_rms > 0.0 ? target / shaped_rms : 0.0;
                for (std::size_t i = 0; i < channel.size(); ++i) {
                    channel[i] += scale * shaped[i];
                }
            }
        }
    }
    return rec;
}

GestureStage gesture_stage_from_string(const std::string& s) {
    if (s == "1-finger") return GestureStage::kOneFinger;
    if (s == "2-finger") return GestureStage::kTwoFinger;
    if (s == "3-finger") return GestureStage::kThreeFinger;
    if (s == "4-finger") return GestureStage::kFourFinger;
    if (s == "5-finger") return GestureStage::kFiveFinger;
    if (s == "mixed") return GestureStage::kMixed;
    throw ConfigError("unknown gesture stage: " + s);
}

std::string to_string(GestureStage stage) {
    switch (stage) {
        case GestureStage::kOneFinger: return "1-finger";
        case GestureStage::kTwoFinger: return "2-finger";
        case GestureStage::kThreeFinger: return "3-finger";
        case GestureStage::kFourFinger: return "4-finger";
        case GestureStage::kFiveFinger: return "5-finger";
        case GestureStage::kMixed: return "mixed";
    }
    throw ConfigError("invalid gesture stage value");
}

std::vector<std::vector<int>> stage_finger_sets(GestureStage stage) {
    auto runs = [](int len) {
        std::vector<std::vector<int>> sets;
        for (int start = 0; start + len <= 5; ++start) {
            std::vector<int> run(len);
            for (int i = 0; i < len; ++i) {
                run[i] = start + i;
            }
            sets.push_back(std::move(run));
        }
        return sets;
    };
    switch (stage) {
        case GestureStage::kOneFinger: return runs(1);
        case GestureStage::kTwoFinger: return runs(2);
        case GestureStage::kThreeFinger: return runs(3);
        case GestureStage::kFourFinger: return runs(4);
        case GestureStage::kFiveFinger: return runs(5);
        case GestureStage::kMixed: {
            // All 15 runs of neighboring fingers, simplest first.
            std::vector<std::vector<int>> sets;
            for (int len = 1; len <= 5; ++len) {
                for (auto& r : runs(len)) {
                    sets.push_back(std::move(r));
                }
            }
            return sets;
        }
    }
    throw ConfigError("invalid gesture stage value");
}

namespace {

// Smooth seeded wander built from incommensurate sinusoids.
struct Wander {
    double base;
    double amp;
    double freq1, phase1;
    double freq2, phase2;

    double at(double t) const {
        return base + amp * (0.6 * std::sin(2.0 * kPi * freq1 * t + phase1) +
                             0.4 * std::sin(2.0 * kPi * freq2 * t + phase2));
    }
};

Wander make_wander(std::mt19937_64& rng, double base, double amp) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Wander w;
    w.base = base;
    w.amp = amp;
    w.freq1 = 0.05 + 0.10 * u(rng);
    w.phase1 = 2.0 * kPi * u(rng);
    w.freq2 = 0.13 + 0.17 * u(rng);
    w.phase2 = 2.0 * kPi * u(rng);
    return w;
}

// Raised-cosine curl profile: 0 -> 1 -> 0 over the flex window of a rep.
double rep_flexion(double phase, double flex_fraction) {
    if (phase >= flex_fraction) {
        return 0.0;
    }
    const double u = phase / flex_fraction;
    return 0.5 * (1.0 - std::cos(2.0 * kPi * u));
}

}  // namespace

std::vector<TrajectoryFrame> gesture_trajectory(GestureStage stage,
                                                double duration_s,
                                                std::uint64_t seed) {
    if (!(duration_s > 0.0)) {
        throw ConfigError("trajectory duration must be positive");
    }
    const auto sets = stage_finger_sets(stage);

    std::mt19937_64 rng(seed);
    Wander wx = make_wander(rng, 0.0, 0.04);
    Wander wy = make_wander(rng, 0.30, 0.05);
    Wander wz = make_wander(rng, -0.12, 0.03);
    Wander roll = make_wander(rng, 0.0, 15.0);
    Wander azim = make_wander(rng, 0.0, 12.0);
    Wander elev = make_wander(rng, 0.0, 10.0);

    const double rep_period_s = 1.5;   // one finger-set rep
    const double flex_fraction = 0.8;  // the rest of the rep is a hold at 0

    const int frames = static_cast<int>(std::ceil(duration_s * kTrajectoryRateHz));
    std::vector<TrajectoryFrame> traj(frames);
    for (int i = 0; i < frames; ++i) {
        const double t = i / kTrajectoryRateHz;
        TrajectoryFrame& frame = traj[i];
        frame.timestamp_us = std::llround(t * 1e6);
        frame.params.wrist_pos_m = {wx.at(t), wy.at(t), wz.at(t)};
        frame.params.palm_roll_deg = roll.at(t);
        frame.params.azimuth_deg = azim.at(t);
        frame.params.elevation_deg = elev.at(t);

        const double rep_pos = t / rep_period_s;
        const std::size_t set_index =
            static_cast<std::size_t>(rep_pos) % sets.size();
        const double f =
            rep_flexion(rep_pos - std::floor(rep_pos), flex_fraction);
        for (int finger : sets[set_index]) {
            frame.params.flexion[finger] = f;
        }
    }
    return traj;
}

HandKinematicParams interpolate_params(const std::vector<TrajectoryFrame>& traj,
                                       double t_s) {
    if (traj.empty()) {
        throw InputError("trajectory is empty");
    }
    const double pos = t_s * kTrajectoryRateHz;
    const long i0 = std::clamp<long>(static_cast<long>(std::floor(pos)), 0,
                                     static_cast<long>(traj.size()) - 1);
    const long i1 = std::min<long>(i0 + 1, static_cast<long>(traj.size()) - 1);
    const double a = std::clamp(pos - static_cast<double>(i0), 0.0, 1.0);

    const HandKinematicParams& p0 = traj[i0].params;
    const HandKinematicParams& p1 = traj[i1].params;
    HandKinematicParams out;
    out.wrist_pos_m = p0.wrist_pos_m * (1.0 - a) + p1.wrist_pos_m * a;
    out.palm_roll_deg = p0.palm_roll_deg * (1.0 - a) + p1.palm_roll_deg * a;
    out.azimuth_deg = p0.azimuth_deg * (1.0 - a) + p1.azimuth_deg * a;
    out.elevation_deg = p0.elevation_deg * (1.0 - a) + p1.elevation_deg * a;
    for (int f = 0; f < 5; ++f) {
        out.flexion[f] = p0.flexion[f] * (1.0 - a) + p1.flexion[f] * a;
    }
    return out;
}

std::vector<std::vector<Scatterer>> trajectory_to_moving_scatterers(
    const std::vector<TrajectoryFrame>& traj, const ChirpSpec& spec,
    int num_windows, double reflectivity_per_joint) {
    std::vector<std::vector<Scatterer>> frames(num_windows);
    for (int w = 0; w < num_windows; ++w) {
        const double t =
            (w + 0.5) * spec.chirp_len_samples / double(spec.sample_rate_hz);
        const HandKinematicParams params = interpolate_params(traj, t);
        frames[w] =
            hand_to_scatterers(hand_pose_from_params(params), reflectivity_per_joint);
    }
    return frames;
}

}  // namespace echosonar
