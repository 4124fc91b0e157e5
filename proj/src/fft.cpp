#include "echosonar/fft.hpp"

#include <fftw3.h>

#include <cmath>
#include <map>
#include <mutex>

#include "echosonar/common.hpp"

namespace echosonar {

namespace {

// FFTW planning is not thread-safe; executions on caller-owned buffers are.
struct PlanPair {
    fftw_plan forward = nullptr;
    fftw_plan inverse = nullptr;
};

std::mutex g_plan_mutex;

PlanPair& plan_for(std::size_t n) {
    static std::map<std::size_t, PlanPair> plans;
    auto it = plans.find(n);
    if (it != plans.end()) {
        return it->second;
    }
    std::vector<double> real(n);
    std::vector<std::complex<double>> cplx(n / 2 + 1);
    PlanPair pair;
    pair.forward = fftw_plan_dft_r2c_1d(
        static_cast<int>(n), real.data(),
        reinterpret_cast<fftw_complex*>(cplx.data()), FFTW_ESTIMATE);
    pair.inverse = fftw_plan_dft_c2r_1d(
        static_cast<int>(n), reinterpret_cast<fftw_complex*>(cplx.data()),
        real.data(), FFTW_ESTIMATE);
    return plans.emplace(n, pair).first->second;
}

}  // namespace

std::vector<std::complex<double>> rfft(const std::vector<double>& x) {
    if (x.empty()) {
        throw ShapeError("rfft: empty input");
    }
    std::lock_guard<std::mutex> lock(g_plan_mutex);
    PlanPair& plans = plan_for(x.size());
    std::vector<double> in(x);
    std::vector<std::complex<double>> out(x.size() / 2 + 1);
    fftw_execute_dft_r2c(plans.forward, in.data(),
                         reinterpret_cast<fftw_complex*>(out.data()));
    return out;
}

std::vector<double> irfft(const std::vector<std::complex<double>>& spectrum,
                          std::size_t n) {
    if (spectrum.size() != n / 2 + 1) {
        throw ShapeError("irfft: spectrum size does not match n/2 + 1");
    }
    std::lock_guard<std::mutex> lock(g_plan_mutex);
    PlanPair& plans = plan_for(n);
    std::vector<std::complex<double>> in(spectrum);
    std::vector<double> out(n);
    fftw_execute_dft_c2r(plans.inverse,
                         reinterpret_cast<fftw_complex*>(in.data()),
                         out.data());
    const double scale = 1.0 / static_cast<double>(n);
    for (double& v : out) {
        v *= scale;
    }
    return out;
}

double tone_power(const std::vector<double>& x, double freq_hz,
                  int sample_rate_hz) {
    double re = 0.0;
    double im = 0.0;
    const double w = 2.0 * kPi * freq_hz / sample_rate_hz;
    for (std::size_t i = 0; i < x.size(); ++i) {
        re += x[i] * std::cos(w * static_cast<double>(i));
        im -= x[i] * std::sin(w * static_cast<double>(i));
    }
    const double norm = 2.0 / static_cast<double>(x.size());
    return (re * re + im * im) * norm * norm / 2.0;
}

}  // namespace echosonar
