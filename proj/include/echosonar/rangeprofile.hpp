#pragma once

#include <vector>

#include "echosonar/chirp.hpp"
#include "echosonar/common.hpp"

namespace echosonar {

// Correlation magnitude per round-trip delay cell, for one chirp window
// across all channels. One cell spans c / (2 * fs) metres of range.
struct RangeProfile {
    std::vector<std::vector<double>> magnitudes;  // [channel][cell]
    int window_index = 0;
    double cell_size_m = 0.0;
    bool edge_padded = false;

    std::size_t num_channels() const { return magnitudes.size(); }
    std::size_t num_cells() const {
        return magnitudes.empty() ? 0 : magnitudes.front().size();
    }
};

// Per-channel direct-path cell, established once per session.
struct AnchorInfo {
    std::vector<int> anchor_cell;
    int established_at_window = 0;
};

// Circular cross-correlation of two equal-length sequences via the DFT:
// out[k] = sum_n template[n] * window[(n + k) mod N]. Matches the direct
// time-domain correlation to rounding.
std::vector<double> xcorr_fd(const std::vector<double>& window,
                             const std::vector<double>& tmpl);

// Splits the recording into non-overlapping chirp-length windows starting at
// sample 0 and correlates each against the transmit chirp. Cell k of a
// profile corresponds to a round-trip delay of k samples.
std::vector<RangeProfile> dechirp(const MultiChannelBuffer& recording,
                                  const ChirpSpec& spec);

// Same, but windows of channel c start at per_channel_offset[c] and only
// window indices [first_window, first_window + count) are produced. The
// session pipeline uses this to re-grid the windows onto each channel's
// direct-path anchor so that downstream output is independent of the
// unknown start offset.
std::vector<RangeProfile> dechirp_windows(
    const MultiChannelBuffer& recording, const ChirpSpec& spec,
    const std::vector<int>& per_channel_offset, int first_window, int count);

// Direct-path anchor per channel from a static startup stretch: profiles are
// averaged; local maxima (3-cell neighborhood) above the noise floor are
// merged into one representative per path (peaks within merge_radius cells
// of a stronger peak belong to its correlation lobe); of the top 10
// representatives, the one that opens the occupied arc of the circular delay
// axis is chosen — the smallest delay modulo the unknown start offset.
// Throws AnchorError naming the channel when no peak clears the noise floor.
AnchorInfo find_anchor(const std::vector<RangeProfile>& profiles,
                       int merge_radius = 20);

// The cut_cells cells at delays >= the channel's anchor, circularly indexed
// (echoes always trail the direct path, so the wrap loses nothing). Profiles
// narrower than cut_cells are zero-padded and flagged.
RangeProfile cut_window(const RangeProfile& profile, const AnchorInfo& anchor,
                        int cut_cells = 256);

// Element-wise max(curr - prev, 0): static reflections cancel, motion stays.
RangeProfile successive_subtract(const RangeProfile& curr,
                                 const RangeProfile& prev);

// Session-level orchestration of the whole chain. The first kWarmupWindows
// windows cover any start offset below four chirp lengths plus propagation,
// the next kAnchorWindows establish the anchor, and cut profiles are emitted
// from the anchor window on. nominal_samples (the transmit length, offset
// excluded) pins the emitted window count; 0 means "use the recording
// length", which is only offset-invariant for offset 0.
struct PreprocessResult {
    AnchorInfo anchor;
    std::vector<RangeProfile> cut;         // aligned, cut profiles
    std::vector<RangeProfile> subtracted;  // consecutive differences, rectified
};

constexpr int kWarmupWindows = 5;
constexpr int kAnchorWindows = 5;

PreprocessResult preprocess_recording(const MultiChannelBuffer& recording,
                                      const ChirpSpec& spec,
                                      std::size_t nominal_samples = 0,
                                      int cut_cells = 256);

}  // namespace echosonar
