#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "echosonar/chirp.hpp"
#include "echosonar/dataset.hpp"
#include "echosonar/pose.hpp"
#include "echosonar/rangeprofile.hpp"
#include "echosonar/session.hpp"
#include "echosonar/sim.hpp"

namespace py = pybind11;
using namespace echosonar;

namespace {

std::vector<double> to_vector(const py::array_t<double>& arr) {
    const auto buf = arr.request();
    if (buf.ndim != 1) {
        throw ShapeError("expected a 1-D array");
    }
    const double* data = static_cast<const double*>(buf.ptr);
    return {data, data + buf.shape[0]};
}

py::array_t<double> to_array(const std::vector<double>& v) {
    py::array_t<double> arr(static_cast<py::ssize_t>(v.size()));
    std::copy(v.begin(), v.end(), arr.mutable_data());
    return arr;
}

HandPose pose_from_array(const py::array_t<double>& arr) {
    const auto buf = arr.request();
    if (buf.ndim != 2 || buf.shape[0] != HandPose::kNumJoints || buf.shape[1] != 3) {
        throw ShapeError("pose array must have shape (21, 3)");
    }
    const double* data = static_cast<const double*>(buf.ptr);
    HandPose pose;
    for (int j = 0; j < HandPose::kNumJoints; ++j) {
        pose.joints_mm[j] = {data[3 * j], data[3 * j + 1], data[3 * j + 2]};
    }
    return pose;
}

py::array_t<double> pose_to_array(const HandPose& pose) {
    py::array_t<double> arr({HandPose::kNumJoints, 3});
    double* data = arr.mutable_data();
    for (int j = 0; j < HandPose::kNumJoints; ++j) {
        data[3 * j] = pose.joints_mm[j].x;
        data[3 * j + 1] = pose.joints_mm[j].y;
        data[3 * j + 2] = pose.joints_mm[j].z;
    }
    return arr;
}

MultiChannelBuffer audio_from_array(const py::array_t<double>& arr, int rate) {
    const auto buf = arr.request();
    if (buf.ndim != 2) {
        throw ShapeError("audio array must have shape (channels, samples)");
    }
    MultiChannelBuffer audio;
    audio.sample_rate_hz = rate;
    const double* data = static_cast<const double*>(buf.ptr);
    audio.channels.resize(buf.shape[0]);
    for (py::ssize_t c = 0; c < buf.shape[0]; ++c) {
        audio.channels[c].assign(data + c * buf.shape[1],
                                 data + (c + 1) * buf.shape[1]);
    }
    return audio;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "FMCW acoustic hand-tracking toolkit";

    py::register_exception<ConfigError>(m, "ConfigError");
    py::register_exception<ShapeError>(m, "ShapeError");
    py::register_exception<InputError>(m, "InputError");
    py::register_exception<AnchorError>(m, "AnchorError");

    py::class_<ChirpSpec>(m, "ChirpSpec")
        .def(py::init([](double start_freq_hz, double bandwidth_hz,
                         int chirp_len_samples, int sample_rate_hz,
                         double amplitude, double sound_speed_mps) {
                 ChirpSpec spec{start_freq_hz, bandwidth_hz, chirp_len_samples,
                                sample_rate_hz, amplitude, sound_speed_mps};
                 spec.validate();
                 return spec;
             }),
             py::arg("start_freq_hz") = 17000.0, py::arg("bandwidth_hz") = 3000.0,
             py::arg("chirp_len_samples") = 512, py::arg("sample_rate_hz") = 48000,
             py::arg("amplitude") = 1.0, py::arg("sound_speed_mps") = 343.0)
        .def_readonly("start_freq_hz", &ChirpSpec::start_freq_hz)
        .def_readonly("bandwidth_hz", &ChirpSpec::bandwidth_hz)
        .def_readonly("chirp_len_samples", &ChirpSpec::chirp_len_samples)
        .def_readonly("sample_rate_hz", &ChirpSpec::sample_rate_hz)
        .def_readonly("amplitude", &ChirpSpec::amplitude)
        .def_readonly("sound_speed_mps", &ChirpSpec::sound_speed_mps)
        .def_property_readonly("cell_size_m", &range_cell_size_m);

    m.def(
        "generate_chirp",
        [](const ChirpSpec& spec) { return to_array(generate_chirp(spec).samples); },
        py::arg("spec"), "One linear up-chirp, peak-normalized.");

    m.def(
        "instantaneous_freq_hz",
        [](const ChirpSpec& spec, double sample_index) {
            return chirp_instantaneous_freq_hz(spec, sample_index);
        },
        py::arg("spec"), py::arg("sample_index"));

    m.def(
        "highpass",
        [](const py::array_t<double>& signal, int sample_rate_hz,
           double cutoff_hz) {
            SampleBuffer buf{to_vector(signal), sample_rate_hz};
            return to_array(highpass(buf, cutoff_hz).samples);
        },
        py::arg("signal"), py::arg("sample_rate_hz"), py::arg("cutoff_hz"),
        "Zero-phase forward-backward FIR high-pass.");

    m.def(
        "xcorr_fd",
        [](const py::array_t<double>& window, const py::array_t<double>& tmpl) {
            return to_array(xcorr_fd(to_vector(window), to_vector(tmpl)));
        },
        py::arg("window"), py::arg("template"),
        "Circular cross-correlation via the DFT.");

    m.def(
        "preprocess",
        [](const py::array_t<double>& audio, const ChirpSpec& spec,
           int stride) {
            MultiChannelBuffer rec = audio_from_array(audio, spec.sample_rate_hz);
            for (auto& channel : rec.channels) {
                SampleBuffer buf{std::move(channel), rec.sample_rate_hz};
                channel = highpass(buf, spec.start_freq_hz).samples;
            }
            const PreprocessResult result = preprocess_recording(rec, spec);
            const FeatureSet set = assemble_features(result.subtracted, spec, stride);
            py::array_t<float> tensor(
                {static_cast<py::ssize_t>(set.windows.size()),
                 static_cast<py::ssize_t>(set.channels),
                 static_cast<py::ssize_t>(set.cells),
                 static_cast<py::ssize_t>(set.window_len)});
            float* out = tensor.mutable_data();
            std::vector<std::int64_t> stamps;
            for (const FeatureWindow& w : set.windows) {
                std::copy(w.tensor.begin(), w.tensor.end(), out);
                out += w.tensor.size();
                stamps.push_back(w.end_timestamp_us);
            }
            return py::make_tuple(tensor, stamps);
        },
        py::arg("audio"), py::arg("spec"), py::arg("stride") = 50,
        "High-pass, dechirp, anchor, cut, subtract and assemble feature "
        "windows from a (channels, samples) recording. Returns (features, "
        "end_timestamps_us).");

    m.def(
        "hand_pose",
        [](const std::array<double, 3>& wrist_pos_m, double palm_roll_deg,
           double azimuth_deg, double elevation_deg,
           const std::array<double, 5>& flexion) {
            HandKinematicParams params;
            params.wrist_pos_m = {wrist_pos_m[0], wrist_pos_m[1], wrist_pos_m[2]};
            params.palm_roll_deg = palm_roll_deg;
            params.azimuth_deg = azimuth_deg;
            params.elevation_deg = elevation_deg;
            params.flexion = flexion;
            return pose_to_array(hand_pose_from_params(params));
        },
        py::arg("wrist_pos_m") = std::array<double, 3>{0.0, 0.3, -0.12},
        py::arg("palm_roll_deg") = 0.0, py::arg("azimuth_deg") = 0.0,
        py::arg("elevation_deg") = 0.0,
        py::arg("flexion") = std::array<double, 5>{0, 0, 0, 0, 0},
        "Forward kinematics: 21 joints in millimetres, shape (21, 3).");

    m.def("joint_names", [] {
        std::vector<std::string> names;
        for (int j = 0; j < HandPose::kNumJoints; ++j) {
            names.emplace_back(joint_name(j));
        }
        return names;
    });

    m.def(
        "flexion_angles",
        [](const py::array_t<double>& pose) {
            const FlexionAngles angles = flexion_angles(pose_from_array(pose));
            return std::vector<double>(angles.degrees.begin(),
                                       angles.degrees.end());
        },
        py::arg("pose"), "19 per-bone flexion angles in degrees.");

    m.def(
        "normalize_pose",
        [](const py::array_t<double>& pose) {
            return pose_to_array(normalize_pose(pose_from_array(pose)));
        },
        py::arg("pose"));

    m.def(
        "activation_similarity",
        [](const py::array_t<double>& pose, const py::array_t<double>& tmpl) {
            return activation_similarity(
                pose_from_array(pose),
                make_activation_template(pose_from_array(tmpl), 0.0));
        },
        py::arg("pose"), py::arg("template"),
        "Negative mean absolute difference between normalized skeletons.");

    m.def("run", &run_cli, py::arg("args"),
          "Run the echo-sonar command line (simulate / preprocess / train / "
          "eval / activate); returns the exit code.");
}
