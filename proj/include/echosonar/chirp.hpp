#pragma once

#include "echosonar/common.hpp"

namespace echosonar {

// FMCW transmit waveform parameters. The sweep runs from start_freq_hz to
// start_freq_hz + bandwidth_hz over one chirp of chirp_len_samples.
struct ChirpSpec {
    double start_freq_hz = 17000.0;
    double bandwidth_hz = 3000.0;
    int chirp_len_samples = 512;
    int sample_rate_hz = 48000;
    double amplitude = 1.0;
    double sound_speed_mps = 343.0;

    // Throws ConfigError naming the violated constraint.
    void validate() const;

    double chirp_duration_s() const {
        return static_cast<double>(chirp_len_samples) / sample_rate_hz;
    }
};

// Round-trip range covered by one delay cell: c / (2 * fs).
double range_cell_size_m(const ChirpSpec& spec);

// Instantaneous frequency of the sweep at a given sample index.
double chirp_instantaneous_freq_hz(const ChirpSpec& spec, double sample_index);

// One linear up-chirp with phase 2*pi*(f0*t + B*t^2/(2*Tc)), peak-normalized
// to the configured amplitude. Deterministic: identical spec gives
// bit-identical output.
SampleBuffer generate_chirp(const ChirpSpec& spec);

// Concatenates `count` bit-identical copies of the chirp.
SampleBuffer repeat_chirps(const SampleBuffer& chirp, int count);

// Zero-phase high-pass filter: a Kaiser-windowed FIR applied forward and
// backward (edges zero-padded). The single-pass design places >=45 dB of
// stop-band attenuation at 0.9 * cutoff_hz, so the two passes give >=90 dB
// there and well beyond 40 dB everywhere below it. Kernel length is
// documented by highpass_kernel_length().
SampleBuffer highpass(const SampleBuffer& signal, double cutoff_hz);

// Number of taps the high-pass designer chooses for this cutoff/rate pair.
int highpass_kernel_length(double cutoff_hz, int sample_rate_hz);

// The designed single-pass kernel (odd length, symmetric).
std::vector<double> design_highpass_fir(double cutoff_hz, int sample_rate_hz);

// Low-pass companion used for band-limited noise shaping in the simulator.
std::vector<double> design_lowpass_fir(double cutoff_hz, int sample_rate_hz);

// Same-length convolution with zero-padded edges.
std::vector<double> convolve_same(const std::vector<double>& x,
                                  const std::vector<double>& kernel);

}  // namespace echosonar
