#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "echosonar/rangeprofile.hpp"
#include "echosonar/sim.hpp"

using namespace echosonar;

namespace {

ChirpSpec paper_spec() {
    return {17000.0, 3000.0, 512, 48000, 1.0, 343.0};
}

ChirpSpec wideband_spec() {
    ChirpSpec spec = paper_spec();
    spec.start_freq_hz = 1000.0;
    spec.bandwidth_hz = 22000.0;
    return spec;
}

// Brute-force time-domain circular cross-correlation (oracle):
// out[k] = sum_n tmpl[n] * window[(n + k) mod N].
std::vector<double> xcorr_td(const std::vector<double>& window,
                             const std::vector<double>& tmpl) {
    const std::size_t n = window.size();
    std::vector<double> out(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            acc += tmpl[i] * window[(i + k) % n];
        }
        out[k] = acc;
    }
    return out;
}

// Scans [begin, end); a guard band around cell 0 keeps the direct-path lobe
// (which wraps circularly) out of echo searches.
std::size_t argmax_of(const std::vector<double>& v, std::size_t begin = 0,
                      std::size_t end = 0) {
    if (end == 0 || end > v.size()) end = v.size();
    std::size_t best = begin;
    for (std::size_t i = begin; i < end; ++i) {
        if (v[i] > v[best]) best = i;
    }
    return best;
}

long direct_delay(const Scene& scene, const ChirpSpec& spec, int channel) {
    const double d = distance(scene.speaker_pos, scene.mics.positions[channel]);
    return std::lround(d / spec.sound_speed_mps * spec.sample_rate_hz);
}

}  // namespace

TEST_CASE("frequency-domain correlation matches the brute-force oracle") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 25; ++trial) {
        std::vector<double> w(512), t(512);
        for (std::size_t i = 0; i < w.size(); ++i) {
            w[i] = u(rng);
            t[i] = u(rng);
        }
        const auto fd = xcorr_fd(w, t);
        const auto td = xcorr_td(w, t);
        double peak = 0.0;
        for (double v : td) {
            peak = std::max(peak, std::abs(v));
        }
        for (std::size_t k = 0; k < w.size(); ++k) {
            CHECK(std::abs(fd[k] - td[k]) <= 1e-9 * peak);
        }
    }
}

TEST_CASE("correlation of a circularly delayed template peaks at the delay") {
    const SampleBuffer chirp = generate_chirp(paper_spec());
    std::vector<double> delayed(chirp.samples.size());
    for (std::size_t i = 0; i < delayed.size(); ++i) {
        delayed[(i + 100) % delayed.size()] = chirp.samples[i];
    }
    const auto corr = xcorr_fd(delayed, chirp.samples);
    CHECK(argmax_of(corr) == 100);

    const auto self = xcorr_fd(chirp.samples, chirp.samples);
    CHECK(argmax_of(self) == 0);

    std::vector<double> shorter(256, 0.0);
    CHECK_THROWS_AS(xcorr_fd(shorter, chirp.samples), ShapeError);
}

TEST_CASE("dechirp places a co-located echo 100 cells after the direct path") {
    const ChirpSpec spec = paper_spec();
    Scene scene;
    scene.speaker_pos = scene.mics.positions[0];
    scene.static_scatterers.push_back({{0.0, 0.357, scene.speaker_pos.z}, 5.0});
    const SampleBuffer tx = repeat_chirps(generate_chirp(spec), 4);
    const auto profiles = dechirp(propagate(scene, tx, spec), spec);

    CHECK(profiles.size() == 4);
    CHECK(profiles[2].cell_size_m == doctest::Approx(0.00357).epsilon(1e-3));
    const auto& mags = profiles[2].magnitudes[0];
    // Direct path at cell ~0 dominates; the echo peak sits at 2d/c*fs ~ 100.
    const std::size_t echo = argmax_of(mags, 20, mags.size() - 20);
    CHECK(echo == 100);
}

TEST_CASE("dechirp rejects recordings shorter than two chirps") {
    MultiChannelBuffer rec;
    rec.sample_rate_hz = 48000;
    rec.channels.assign(7, std::vector<double>(700, 0.0));
    CHECK_THROWS_AS(dechirp(rec, paper_spec()), InputError);
}

TEST_CASE("find_anchor recovers the start offset plus the geometric delay") {
    const ChirpSpec spec = paper_spec();
    const SampleBuffer tx = repeat_chirps(generate_chirp(spec), 12);

    Scene scene;
    scene.start_offset_samples = 137;
    const auto profiles = dechirp(propagate(scene, tx, spec), spec);
    const std::vector<RangeProfile> startup(profiles.begin() + 5,
                                            profiles.begin() + 10);
    const AnchorInfo anchor = find_anchor(startup);
    REQUIRE(anchor.anchor_cell.size() == 7);
    for (int c = 0; c < 7; ++c) {
        CHECK(anchor.anchor_cell[c] == 137 + direct_delay(scene, spec, c));
    }

    // Shifting the offset shifts every anchor by the same amount.
    Scene shifted = scene;
    shifted.start_offset_samples = 137 + 41;
    const auto profiles2 = dechirp(propagate(shifted, tx, spec), spec);
    const AnchorInfo anchor2 = find_anchor(
        {profiles2.begin() + 5, profiles2.begin() + 10});
    for (int c = 0; c < 7; ++c) {
        CHECK(anchor2.anchor_cell[c] - anchor.anchor_cell[c] == 41);
    }

    // Zero offset: the anchor is the geometric speaker->mic delay itself.
    Scene zero;
    const auto profiles3 = dechirp(propagate(zero, tx, spec), spec);
    const AnchorInfo anchor3 = find_anchor(
        {profiles3.begin() + 5, profiles3.begin() + 10});
    for (int c = 0; c < 7; ++c) {
        CHECK(anchor3.anchor_cell[c] == direct_delay(zero, spec, c));
    }
}

TEST_CASE("find_anchor flags a dead channel") {
    RangeProfile profile;
    profile.window_index = 5;
    profile.cell_size_m = 0.00357;
    profile.magnitudes.assign(7, std::vector<double>(512, 0.0));
    for (int c = 0; c < 7; ++c) {
        if (c == 3) continue;  // dead channel
        profile.magnitudes[c][40 + c] = 10.0;
        profile.magnitudes[c][200] = 2.0;
    }
    CHECK_THROWS_WITH_AS(find_anchor({profile}), doctest::Contains("channel 3"),
                         AnchorError);
}

TEST_CASE("cut_window keeps 256 cells from the anchor outward") {
    const ChirpSpec spec = paper_spec();
    Scene scene;
    scene.speaker_pos = scene.mics.positions[0];
    scene.static_scatterers.push_back({{0.0, 0.4, scene.speaker_pos.z}, 5.0});
    const SampleBuffer tx = repeat_chirps(generate_chirp(spec), 12);
    const auto result = preprocess_recording(propagate(scene, tx, spec), spec);

    const RangeProfile& cut = result.cut.front();
    CHECK(cut.num_cells() == 256);
    CHECK(256.0 * cut.cell_size_m == doctest::Approx(0.915).epsilon(2e-3));

    // Round-trip-equivalent 0.8 m lands within one cell of 2*0.4/c*fs ~ 111.95
    // (nearest-sample rendering).
    const std::size_t echo = argmax_of(cut.magnitudes[0], 20);
    CHECK(std::abs(static_cast<double>(echo) -
                   2.0 * 0.4 / spec.sound_speed_mps * spec.sample_rate_hz) <= 1.0);
}

TEST_CASE("cut_window is translation invariant at the profile level") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    RangeProfile profile;
    profile.cell_size_m = 0.00357;
    profile.magnitudes.assign(2, std::vector<double>(512));
    for (auto& ch : profile.magnitudes) {
        for (double& v : ch) {
            v = u(rng);
        }
    }
    AnchorInfo anchor;
    anchor.anchor_cell = {37, 450};

    const int shift = 300;
    RangeProfile shifted = profile;
    for (std::size_t c = 0; c < 2; ++c) {
        for (int k = 0; k < 512; ++k) {
            shifted.magnitudes[c][(k + shift) % 512] = profile.magnitudes[c][k];
        }
    }
    AnchorInfo anchor_shifted;
    anchor_shifted.anchor_cell = {(37 + shift) % 512, (450 + shift) % 512};

    const RangeProfile a = cut_window(profile, anchor);
    const RangeProfile b = cut_window(shifted, anchor_shifted);
    CHECK(a.magnitudes == b.magnitudes);
    CHECK_FALSE(a.edge_padded);

    // Narrow profiles pad with zeros and say so.
    RangeProfile narrow;
    narrow.cell_size_m = 0.00357;
    narrow.magnitudes.assign(1, std::vector<double>(128, 1.0));
    AnchorInfo small_anchor;
    small_anchor.anchor_cell = {5};
    const RangeProfile padded = cut_window(narrow, small_anchor);
    CHECK(padded.edge_padded);
    CHECK(padded.num_cells() == 256);
    CHECK(padded.magnitudes[0][200] == 0.0);
}

TEST_CASE("successive subtraction cancels static scenes exactly") {
    const ChirpSpec spec = paper_spec();
    Scene scene;
    scene.static_scatterers.push_back({{0.1, 0.3, -0.1}, 1.0});
    scene.static_scatterers.push_back({{-0.2, 0.5, -0.05}, 2.0});
    const SampleBuffer tx = repeat_chirps(generate_chirp(spec), 12);
    const auto result = preprocess_recording(propagate(scene, tx, spec), spec);
    for (const RangeProfile& sub : result.subtracted) {
        for (const auto& channel : sub.magnitudes) {
            for (double v : channel) {
                CHECK(v == 0.0);
            }
        }
    }
}

TEST_CASE("successive subtraction tracks a moved scatterer") {
    const ChirpSpec spec = wideband_spec();
    const int windows = 10;
    const SampleBuffer tx = repeat_chirps(generate_chirp(spec), windows);
    Scene scene;
    scene.speaker_pos = scene.mics.positions[0];
    scene.moving_scatterers.assign(windows, {});
    const double c = spec.sound_speed_mps;
    const double cell = c / (2.0 * spec.sample_rate_hz);
    for (int w = 0; w < windows; ++w) {
        // jump three cells between window 7 and 8: 100 -> 103
        const double r = (w <= 7) ? 100.0 * cell : 103.0 * cell;
        scene.moving_scatterers[w].push_back({{0.0, r, scene.speaker_pos.z}, 5.0});
    }
    const auto profiles = dechirp(propagate(scene, tx, spec), spec);
    const RangeProfile sub = successive_subtract(profiles[8], profiles[7]);
    for (const auto& channel : sub.magnitudes) {
        for (double v : channel) {
            CHECK(v >= 0.0);
        }
    }
    const std::size_t peak =
        argmax_of(sub.magnitudes[0], 20, sub.magnitudes[0].size() - 20);
    CHECK(std::abs(static_cast<long>(peak) - 103) <= 1);

    RangeProfile wrong = profiles[7];
    wrong.magnitudes[0].resize(100);
    CHECK_THROWS_AS(successive_subtract(profiles[8], wrong), ShapeError);
}

TEST_CASE("one-cell displacement moves the argmax by exactly one cell") {
    const ChirpSpec spec = wideband_spec();
    const double cell = spec.sound_speed_mps / (2.0 * spec.sample_rate_hz);
    Scene scene;
    scene.speaker_pos = scene.mics.positions[0];
    // Fractional part 0.25: rounding stays on one side for both positions.
    const double r0 = (100.25) * cell;
    scene.static_scatterers.push_back({{0.0, r0, scene.speaker_pos.z}, 5.0});
    Scene moved = scene;
    moved.static_scatterers[0].position.y = r0 + cell;

    const SampleBuffer tx = repeat_chirps(generate_chirp(spec), 4);
    const auto before = dechirp(propagate(scene, tx, spec), spec);
    const auto after = dechirp(propagate(moved, tx, spec), spec);
    const std::size_t k0 = argmax_of(before[2].magnitudes[0], 20, 492);
    const std::size_t k1 = argmax_of(after[2].magnitudes[0], 20, 492);
    CHECK(k1 == k0 + 1);
}

TEST_CASE("post-cut output is bit-identical for any start offset") {
    const ChirpSpec spec = paper_spec();
    const int windows = 14;
    const SampleBuffer tx = repeat_chirps(generate_chirp(spec), windows);

    auto run_with_offset = [&](std::uint32_t offset) {
        Scene scene;
        scene.start_offset_samples = offset;
        scene.static_scatterers.push_back({{0.05, 0.3, -0.08}, 1.0});
        scene.moving_scatterers.assign(windows, {});
        for (int w = 0; w < windows; ++w) {
            scene.moving_scatterers[w].push_back(
                {{0.0, 0.25 + 0.01 * w, -0.05}, 1.5});
        }
        return preprocess_recording(propagate(scene, tx, spec), spec,
                                    tx.samples.size());
    };

    const PreprocessResult base = run_with_offset(0);
    for (std::uint32_t offset : {147u, 600u, 1333u, 2047u}) {
        const PreprocessResult shifted = run_with_offset(offset);
        REQUIRE(shifted.cut.size() == base.cut.size());
        for (std::size_t i = 0; i < base.cut.size(); ++i) {
            CHECK(shifted.cut[i].magnitudes == base.cut[i].magnitudes);
        }
        REQUIRE(shifted.subtracted.size() == base.subtracted.size());
        for (std::size_t i = 0; i < base.subtracted.size(); ++i) {
            CHECK(shifted.subtracted[i].magnitudes == base.subtracted[i].magnitudes);
        }
    }
}

TEST_CASE("moving-echo energy concentrates after subtraction") {
    // A full-Nyquist-band sweep keeps the correlation lobe within a cell or
    // two, and a compact transceiver cluster keeps the per-window scatterer
    // updates aligned with every channel's receive windows. The mover
    // approaches radially at ~1.34 m/s (4 cells per window).
    ChirpSpec spec = paper_spec();
    spec.start_freq_hz = 0.0;
    spec.bandwidth_hz = 24000.0;
    const int windows = 20;
    const SampleBuffer tx = repeat_chirps(generate_chirp(spec), windows);
    const double cell = spec.sound_speed_mps / (2.0 * spec.sample_rate_hz);

    Scene scene;
    scene.speaker_pos = {0.0, 0.0, -0.01};
    for (int c = 0; c < 7; ++c) {
        scene.mics.positions[c] = {0.0004 * c, 0.0, -0.01};
    }
    scene.static_scatterers.push_back({{0.15, 0.45, -0.1}, 2.0});
    scene.static_scatterers.push_back({{-0.1, 0.3, -0.15}, 2.0});
    scene.moving_scatterers.assign(windows, {});
    std::vector<double> radius(windows);
    for (int w = 0; w < windows; ++w) {
        radius[w] = (60.3 + 4.0 * w) * cell;
        scene.moving_scatterers[w].push_back(
            {{0.0, radius[w], scene.speaker_pos.z}, 5.0});
    }
    const auto result =
        preprocess_recording(propagate(scene, tx, spec), spec, tx.samples.size());

    for (const RangeProfile& sub : result.subtracted) {
        const int w = sub.window_index;
        const Vec3 p{0.0, radius[w], scene.speaker_pos.z};
        double total = 0.0, near = 0.0;
        for (int c = 0; c < 7; ++c) {
            const Vec3 mic = scene.mics.positions[c];
            const long target =
                std::lround((distance(scene.speaker_pos, p) + distance(p, mic)) /
                            spec.sound_speed_mps * spec.sample_rate_hz) -
                direct_delay(scene, spec, c);
            const auto& mags = sub.magnitudes[c];
            for (long k = 0; k < static_cast<long>(mags.size()); ++k) {
                const double e = mags[k] * mags[k];
                total += e;
                if (std::abs(k - target) <= 2) {
                    near += e;
                }
            }
        }
        CHECK(near / total >= 0.99);
    }
}
