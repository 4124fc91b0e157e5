#include "echosonar/chirp.hpp"

#include <algorithm>
#include <cmath>

namespace echosonar {

void ChirpSpec::validate() const {
    if (chirp_len_samples < 2) {
        throw ConfigError("chirp_len_samples must be >= 2");
    }
    if (sample_rate_hz <= 0) {
        throw ConfigError("sample_rate_hz must be positive");
    }
    if (!(start_freq_hz >= 0.0) || !std::isfinite(start_freq_hz)) {
        throw ConfigError("start_freq_hz must be finite and nonnegative");
    }
    if (!(bandwidth_hz > 0.0) || !std::isfinite(bandwidth_hz)) {
        throw ConfigError("bandwidth_hz must be finite and positive");
    }
    if (start_freq_hz + bandwidth_hz > sample_rate_hz / 2.0) {
        throw ConfigError(
            "start_freq_hz + bandwidth_hz exceeds the Nyquist rate "
            "sample_rate_hz / 2");
    }
    if (!(amplitude > 0.0) || amplitude > 1.0) {
        throw ConfigError("amplitude must lie in (0, 1]");
    }
    if (!(sound_speed_mps > 0.0) || !std::isfinite(sound_speed_mps)) {
        throw ConfigError("sound_speed_mps must be positive");
    }
}

double range_cell_size_m(const ChirpSpec& spec) {
    return spec.sound_speed_mps / (2.0 * spec.sample_rate_hz);
}

double chirp_instantaneous_freq_hz(const ChirpSpec& spec, double sample_index) {
    return spec.start_freq_hz +
           spec.bandwidth_hz * sample_index / spec.chirp_len_samples;
}

SampleBuffer generate_chirp(const ChirpSpec& spec) {
    spec.validate();
    const int n = spec.chirp_len_samples;
    const double fs = spec.sample_rate_hz;
    const double tc = n / fs;

    SampleBuffer out;
    out.sample_rate_hz = spec.sample_rate_hz;
    out.samples.resize(n);
    double peak = 0.0;
    for (int i = 0; i < n; ++i) {
        const double t = i / fs;
        const double phase =
            2.0 * kPi *
            (spec.start_freq_hz * t + spec.bandwidth_hz * t * t / (2.0 * tc));
        out.samples[i] = std::sin(phase);
        peak = std::max(peak, std::abs(out.samples[i]));
    }
    const double scale = spec.amplitude / peak;
    for (double& s : out.samples) {
        s *= scale;
    }
    return out;
}

SampleBuffer repeat_chirps(const SampleBuffer& chirp, int count) {
    if (count < 1) {
        throw ConfigError("repeat count must be >= 1");
    }
    SampleBuffer out;
    out.sample_rate_hz = chirp.sample_rate_hz;
    out.samples.reserve(chirp.samples.size() * static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        out.samples.insert(out.samples.end(), chirp.samples.begin(),
                           chirp.samples.end());
    }
    return out;
}

namespace {

double kaiser_beta(double atten_db) {
    if (atten_db > 50.0) {
        return 0.1102 * (atten_db - 8.7);
    }
    if (atten_db > 21.0) {
        return 0.5842 * std::pow(atten_db - 21.0, 0.4) +
               0.07886 * (atten_db - 21.0);
    }
    return 0.0;
}

// Windowed-sinc low-pass prototype with a Kaiser window. The transition band
// is centered on `center_hz` with full width `width_hz`.
std::vector<double> kaiser_sinc_lowpass(double center_hz, double width_hz,
                                        double atten_db, int sample_rate_hz) {
    const double delta_omega = 2.0 * kPi * width_hz / sample_rate_hz;
    int taps = static_cast<int>(
        std::ceil((atten_db - 8.0) / (2.285 * delta_omega)));
    if (taps % 2 == 0) {
        ++taps;
    }
    taps = std::max(taps, 11);

    const double beta = kaiser_beta(atten_db);
    const double i0_beta = std::cyl_bessel_i(0.0, beta);
    const int mid = (taps - 1) / 2;
    const double fc = center_hz / sample_rate_hz;  // normalized cutoff

    std::vector<double> h(taps);
    double sum = 0.0;
    for (int i = 0; i < taps; ++i) {
        const int m = i - mid;
        const double sinc =
            (m == 0) ? 2.0 * fc : std::sin(2.0 * kPi * fc * m) / (kPi * m);
        const double r = static_cast<double>(m) / mid;
        const double window = std::cyl_bessel_i(0.0, beta * std::sqrt(1.0 - r * r)) / i0_beta;
        h[i] = sinc * window;
        sum += h[i];
    }
    // Unity gain at DC.
    for (double& v : h) {
        v /= sum;
    }
    return h;
}

constexpr double kHighpassAttenDb = 45.0;

void check_cutoff(double cutoff_hz, int sample_rate_hz) {
    if (sample_rate_hz <= 0) {
        throw ConfigError("sample_rate_hz must be positive");
    }
    if (!(cutoff_hz > 0.0) || !(cutoff_hz < sample_rate_hz / 2.0)) {
        throw ConfigError("cutoff_hz must lie in (0, sample_rate_hz / 2)");
    }
}

}  // namespace

std::vector<double> design_highpass_fir(double cutoff_hz, int sample_rate_hz) {
    check_cutoff(cutoff_hz, sample_rate_hz);
    // Transition band [0.9 * cutoff, cutoff]; spectral inversion of the
    // low-pass prototype centered at 0.95 * cutoff.
    std::vector<double> h = kaiser_sinc_lowpass(
        0.95 * cutoff_hz, 0.1 * cutoff_hz, kHighpassAttenDb, sample_rate_hz);
    const int mid = (static_cast<int>(h.size()) - 1) / 2;
    for (double& v : h) {
        v = -v;
    }
    h[mid] += 1.0;
    return h;
}

std::vector<double> design_lowpass_fir(double cutoff_hz, int sample_rate_hz) {
    check_cutoff(cutoff_hz, sample_rate_hz);
    return kaiser_sinc_lowpass(cutoff_hz, 0.1 * cutoff_hz, kHighpassAttenDb,
                               sample_rate_hz);
}

int highpass_kernel_length(double cutoff_hz, int sample_rate_hz) {
    return static_cast<int>(design_highpass_fir(cutoff_hz, sample_rate_hz).size());
}

std::vector<double> convolve_same(const std::vector<double>& x,
                                  const std::vector<double>& kernel) {
    const int n = static_cast<int>(x.size());
    const int k = static_cast<int>(kernel.size());
    const int mid = (k - 1) / 2;
    std::vector<double> y(n, 0.0);
    for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        const int j0 = std::max(0, i + mid - (n - 1));
        const int j1 = std::min(k - 1, i + mid);
        for (int j = j0; j <= j1; ++j) {
            acc += kernel[j] * x[i + mid - j];
        }
        y[i] = acc;
    }
    return y;
}

SampleBuffer highpass(const SampleBuffer& signal, double cutoff_hz) {
    const std::vector<double> h =
        design_highpass_fir(cutoff_hz, signal.sample_rate_hz);

    std::vector<double> forward = convolve_same(signal.samples, h);
    std::reverse(forward.begin(), forward.end());
    std::vector<double> backward = convolve_same(forward, h);
    std::reverse(backward.begin(), backward.end());

    SampleBuffer out;
    out.sample_rate_hz = signal.sample_rate_hz;
    out.samples = std::move(backward);
    return out;
}

}  // namespace echosonar
