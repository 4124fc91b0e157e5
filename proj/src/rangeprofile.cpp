#include "echosonar/rangeprofile.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>

#include "echosonar/fft.hpp"

namespace echosonar {

std::vector<double> xcorr_fd(const std::vector<double>& window,
                             const std::vector<double>& tmpl) {
    if (window.size() != tmpl.size()) {
        throw ShapeError("xcorr_fd: window and template lengths differ");
    }
    if (window.empty()) {
        throw ShapeError("xcorr_fd: empty input");
    }
    const std::size_t n = window.size();
    std::vector<std::complex<double>> w_spec = rfft(window);
    std::vector<std::complex<double>> t_spec = rfft(tmpl);
    for (std::size_t i = 0; i < w_spec.size(); ++i) {
        w_spec[i] *= std::conj(t_spec[i]);
    }
    return irfft(w_spec, n);
}

namespace {

RangeProfile correlate_window(const MultiChannelBuffer& rec,
                              const std::vector<double>& tmpl,
                              const ChirpSpec& spec,
                              const std::vector<int>& offsets, int w) {
    const int n = spec.chirp_len_samples;
    RangeProfile profile;
    profile.window_index = w;
    profile.cell_size_m = range_cell_size_m(spec);
    profile.magnitudes.resize(rec.num_channels());
    std::vector<double> window(n);
    for (std::size_t c = 0; c < rec.num_channels(); ++c) {
        const std::vector<double>& ch = rec.channels[c];
        const std::size_t begin = static_cast<std::size_t>(offsets[c]) +
                                  static_cast<std::size_t>(w) * n;
        std::copy(ch.begin() + begin, ch.begin() + begin + n, window.begin());
        std::vector<double> corr = xcorr_fd(window, tmpl);
        profile.magnitudes[c].resize(n);
        for (int k = 0; k < n; ++k) {
            profile.magnitudes[c][k] = std::abs(corr[k]);
        }
    }
    return profile;
}

}  // namespace

std::vector<RangeProfile> dechirp(const MultiChannelBuffer& recording,
                                  const ChirpSpec& spec) {
    spec.validate();
    const int n = spec.chirp_len_samples;
    const std::size_t len = recording.samples_per_channel();
    if (len < 2 * static_cast<std::size_t>(n)) {
        throw InputError("dechirp: recording shorter than two chirps");
    }
    const int count = static_cast<int>(len / n);
    std::vector<int> offsets(recording.num_channels(), 0);
    return dechirp_windows(recording, spec, offsets, 0, count);
}

std::vector<RangeProfile> dechirp_windows(
    const MultiChannelBuffer& recording, const ChirpSpec& spec,
    const std::vector<int>& per_channel_offset, int first_window, int count) {
    spec.validate();
    if (per_channel_offset.size() != recording.num_channels()) {
        throw ShapeError("dechirp_windows: one offset per channel required");
    }
    const int n = spec.chirp_len_samples;
    const std::size_t len = recording.samples_per_channel();
    for (int off : per_channel_offset) {
        if (off < 0 ||
            static_cast<std::size_t>(off) +
                    static_cast<std::size_t>(first_window + count) * n >
                len) {
            throw InputError("dechirp_windows: window range exceeds recording");
        }
    }
    const SampleBuffer tmpl = generate_chirp(spec);
    std::vector<RangeProfile> profiles;
    profiles.reserve(count);
    for (int w = first_window; w < first_window + count; ++w) {
        profiles.push_back(correlate_window(recording, tmpl.samples, spec,
                                            per_channel_offset, w));
    }
    return profiles;
}

namespace {

// Local maxima over a 3-cell circular neighborhood.
std::vector<int> local_peaks(const std::vector<double>& mag) {
    const int n = static_cast<int>(mag.size());
    std::vector<int> peaks;
    for (int i = 0; i < n; ++i) {
        const double prev = mag[(i + n - 1) % n];
        const double next = mag[(i + 1) % n];
        if (mag[i] > prev && mag[i] >= next) {
            peaks.push_back(i);
        }
    }
    return peaks;
}

double median_of(std::vector<double> values) {
    std::nth_element(values.begin(), values.begin() + values.size() / 2,
                     values.end());
    return values[values.size() / 2];
}

}  // namespace

AnchorInfo find_anchor(const std::vector<RangeProfile>& profiles,
                       int merge_radius) {
    if (profiles.empty()) {
        throw InputError("find_anchor: need at least one profile");
    }
    const std::size_t channels = profiles.front().num_channels();
    const std::size_t cells = profiles.front().num_cells();

    AnchorInfo anchor;
    anchor.established_at_window = profiles.front().window_index;
    anchor.anchor_cell.resize(channels);

    for (std::size_t c = 0; c < channels; ++c) {
        std::vector<double> avg(cells, 0.0);
        for (const RangeProfile& p : profiles) {
            if (p.num_channels() != channels || p.num_cells() != cells) {
                throw ShapeError("find_anchor: inconsistent profile shapes");
            }
            for (std::size_t k = 0; k < cells; ++k) {
                avg[k] += p.magnitudes[c][k];
            }
        }
        for (double& v : avg) {
            v /= profiles.size();
        }

        // Candidate peaks: above the noise floor and clear of the side-lobe
        // level of the strongest path (linear-FM side lobes sit > 13 dB down).
        std::vector<int> peaks = local_peaks(avg);
        const double global_max = *std::max_element(avg.begin(), avg.end());
        const double floor =
            std::max(10.0 * median_of(avg), 0.3 * global_max);
        std::erase_if(peaks, [&](int k) { return avg[k] < floor; });
        if (peaks.empty() || global_max <= 0.0) {
            throw AnchorError("no peak above the noise floor on channel " +
                              std::to_string(c));
        }

        // One representative per path: suppress peaks within the correlation
        // main lobe of a stronger one (circular distance).
        std::sort(peaks.begin(), peaks.end(),
                  [&](int a, int b) { return avg[a] > avg[b]; });
        const int n = static_cast<int>(cells);
        std::vector<int> reps;
        for (int k : peaks) {
            bool merged = false;
            for (int r : reps) {
                const int dist = std::abs(k - r);
                if (std::min(dist, n - dist) <= merge_radius) {
                    merged = true;
                    break;
                }
            }
            if (!merged) {
                reps.push_back(k);
            }
            if (reps.size() == 10) {
                break;
            }
        }

        // The real paths all lie on one arc of the circular delay axis
        // starting at the direct path. The representative just after the
        // widest empty arc is therefore the smallest delay modulo the start
        // offset.
        std::sort(reps.begin(), reps.end());
        int best_peak = reps.front();
        int best_gap = -1;
        for (std::size_t i = 0; i < reps.size(); ++i) {
            const int prev = reps[(i + reps.size() - 1) % reps.size()];
            const int gap = (reps[i] - prev + n) % n;
            const int effective = (reps.size() == 1) ? n : gap;
            if (effective > best_gap) {
                best_gap = effective;
                best_peak = reps[i];
            }
        }
        anchor.anchor_cell[c] = best_peak;
    }
    return anchor;
}

RangeProfile cut_window(const RangeProfile& profile, const AnchorInfo& anchor,
                        int cut_cells) {
    if (anchor.anchor_cell.size() != profile.num_channels()) {
        throw ShapeError("cut_window: anchor channel count mismatch");
    }
    const int n = static_cast<int>(profile.num_cells());
    RangeProfile out;
    out.window_index = profile.window_index;
    out.cell_size_m = profile.cell_size_m;
    out.edge_padded = n < cut_cells;
    out.magnitudes.resize(profile.num_channels());
    for (std::size_t c = 0; c < profile.num_channels(); ++c) {
        out.magnitudes[c].assign(cut_cells, 0.0);
        const int a = anchor.anchor_cell[c];
        for (int k = 0; k < std::min(cut_cells, n); ++k) {
            out.magnitudes[c][k] = profile.magnitudes[c][(a + k) % n];
        }
    }
    return out;
}

RangeProfile successive_subtract(const RangeProfile& curr,
                                 const RangeProfile& prev) {
    if (curr.num_channels() != prev.num_channels() ||
        curr.num_cells() != prev.num_cells()) {
        throw ShapeError("successive_subtract: profile shapes differ");
    }
    RangeProfile out;
    out.window_index = curr.window_index;
    out.cell_size_m = curr.cell_size_m;
    out.edge_padded = curr.edge_padded || prev.edge_padded;
    out.magnitudes.resize(curr.num_channels());
    for (std::size_t c = 0; c < curr.num_channels(); ++c) {
        const std::size_t cells = curr.num_cells();
        out.magnitudes[c].resize(cells);
        for (std::size_t k = 0; k < cells; ++k) {
            out.magnitudes[c][k] =
                std::max(curr.magnitudes[c][k] - prev.magnitudes[c][k], 0.0);
        }
    }
    return out;
}

PreprocessResult preprocess_recording(const MultiChannelBuffer& recording,
                                      const ChirpSpec& spec,
                                      std::size_t nominal_samples,
                                      int cut_cells) {
    spec.validate();
    const int n = spec.chirp_len_samples;
    const std::size_t len = recording.samples_per_channel();
    if (nominal_samples == 0) {
        nominal_samples = len;
    }
    if (nominal_samples > len) {
        throw InputError("preprocess: recording shorter than its nominal length");
    }

    // Emitted windows: [kWarmupWindows, total - 2). The margin leaves room
    // for the per-channel grid offset (< one chirp) plus any filter tail, so
    // the emitted sequence never depends on the record's start offset.
    const int total = static_cast<int>(nominal_samples / n);
    const int first = kWarmupWindows;
    const int count = total - 2 - first;
    if (count < 2 || total < kWarmupWindows + kAnchorWindows + 2) {
        throw InputError("preprocess: recording too short for the warmup and cut");
    }

    std::vector<int> zero_offsets(recording.num_channels(), 0);
    const std::vector<RangeProfile> startup = dechirp_windows(
        recording, spec, zero_offsets, kWarmupWindows, kAnchorWindows);

    PreprocessResult result;
    result.anchor = find_anchor(startup);

    // The anchor cell fixes the start offset modulo one chirp; the leading
    // silence pins the remaining whole-window part, so emitted window w
    // always lines up with transmit window w regardless of the offset.
    std::vector<int> grid(recording.num_channels(), 0);
    for (std::size_t c = 0; c < recording.num_channels(); ++c) {
        const std::vector<double>& ch = recording.channels[c];
        std::vector<double> energy(kWarmupWindows + kAnchorWindows, 0.0);
        double peak = 0.0;
        for (std::size_t w = 0; w < energy.size(); ++w) {
            for (int i = 0; i < n; ++i) {
                const double v = ch[w * n + i];
                energy[w] += v * v;
            }
            peak = std::max(peak, energy[w]);
        }
        int silent = 0;
        while (silent < static_cast<int>(energy.size()) &&
               energy[silent] <= 1e-9 * peak) {
            ++silent;
        }
        grid[c] = silent * n + result.anchor.anchor_cell[c];
    }

    const std::vector<RangeProfile> aligned =
        dechirp_windows(recording, spec, grid, first, count);

    // On the re-gridded windows the direct path sits at cell 0.
    AnchorInfo zero_anchor;
    zero_anchor.anchor_cell.assign(recording.num_channels(), 0);
    zero_anchor.established_at_window = result.anchor.established_at_window;

    result.cut.reserve(aligned.size());
    for (const RangeProfile& p : aligned) {
        result.cut.push_back(cut_window(p, zero_anchor, cut_cells));
    }
    result.subtracted.reserve(result.cut.size() - 1);
    for (std::size_t i = 1; i < result.cut.size(); ++i) {
        result.subtracted.push_back(
            successive_subtract(result.cut[i], result.cut[i - 1]));
    }
    return result;
}

}  // namespace echosonar
