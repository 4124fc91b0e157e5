#include "echosonar/io.hpp"

#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

namespace echosonar {

namespace {

constexpr std::uint16_t kAudioVersion = 1;
constexpr std::uint16_t kTensorVersion = 1;

void write_bytes(std::ofstream& out, const void* data, std::size_t n) {
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

template <typename T>
void write_le(std::ofstream& out, T value) {
    // Little-endian host assumed; asserted at build time below.
    write_bytes(out, &value, sizeof(T));
}

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian");

template <typename T>
T read_le(std::ifstream& in) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) {
        throw FormatError("unexpected end of file");
    }
    return value;
}

void expect_magic(std::ifstream& in, const char (&magic)[5],
                  const std::string& what) {
    char buf[4];
    in.read(buf, 4);
    if (!in || std::memcmp(buf, magic, 4) != 0) {
        throw FormatError("bad magic for " + what + " file");
    }
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw FormatError("cannot open for writing: " + path.string());
    }
    return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open for reading: " + path.string());
    }
    return in;
}

}  // namespace

void write_audio_bvau(const std::filesystem::path& path,
                      const MultiChannelBuffer& audio) {
    if (audio.channels.empty()) {
        throw InputError("write_audio_bvau: no channels");
    }
    const std::size_t samples = audio.samples_per_channel();
    for (const auto& ch : audio.channels) {
        if (ch.size() != samples) {
            throw ShapeError("write_audio_bvau: ragged channels");
        }
    }
    std::ofstream out = open_out(path);
    write_bytes(out, "BVAU", 4);
    write_le<std::uint16_t>(out, kAudioVersion);
    write_le<std::uint16_t>(out, static_cast<std::uint16_t>(audio.channels.size()));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(audio.sample_rate_hz));
    write_le<std::uint64_t>(out, samples);
    std::vector<float> frame(audio.channels.size());
    for (std::size_t i = 0; i < samples; ++i) {
        for (std::size_t c = 0; c < audio.channels.size(); ++c) {
            frame[c] = static_cast<float>(audio.channels[c][i]);
        }
        write_bytes(out, frame.data(), frame.size() * sizeof(float));
    }
    if (!out) {
        throw FormatError("write failed: " + path.string());
    }
}

MultiChannelBuffer read_audio_bvau(const std::filesystem::path& path) {
    std::ifstream in = open_in(path);
    expect_magic(in, "BVAU", "audio");
    const auto version = read_le<std::uint16_t>(in);
    if (version != kAudioVersion) {
        throw FormatError("unsupported audio file version");
    }
    const auto channels = read_le<std::uint16_t>(in);
    const auto rate = read_le<std::uint32_t>(in);
    const auto samples = read_le<std::uint64_t>(in);
    MultiChannelBuffer audio;
    audio.sample_rate_hz = static_cast<int>(rate);
    audio.channels.assign(channels, std::vector<double>(samples));
    std::vector<float> frame(channels);
    for (std::uint64_t i = 0; i < samples; ++i) {
        in.read(reinterpret_cast<char*>(frame.data()),
                static_cast<std::streamsize>(frame.size() * sizeof(float)));
        if (!in) {
            throw FormatError("audio file truncated");
        }
        for (std::size_t c = 0; c < channels; ++c) {
            audio.channels[c][i] = frame[c];
        }
    }
    return audio;
}

void write_tensor_bvtn(const std::filesystem::path& path,
                       const TensorFile& tensor) {
    if (tensor.dims.empty()) {
        throw InputError("write_tensor_bvtn: rank must be >= 1");
    }
    if (tensor.element_count() != tensor.data.size()) {
        throw ShapeError("write_tensor_bvtn: dims do not match data size");
    }
    std::ofstream out = open_out(path);
    write_bytes(out, "BVTN", 4);
    write_le<std::uint16_t>(out, kTensorVersion);
    write_le<std::uint16_t>(out, static_cast<std::uint16_t>(tensor.dims.size()));
    for (std::uint64_t d : tensor.dims) {
        write_le<std::uint64_t>(out, d);
    }
    write_bytes(out, tensor.data.data(), tensor.data.size() * sizeof(float));
    if (!out) {
        throw FormatError("write failed: " + path.string());
    }
}

TensorFile read_tensor_bvtn(const std::filesystem::path& path) {
    std::ifstream in = open_in(path);
    expect_magic(in, "BVTN", "tensor");
    const auto version = read_le<std::uint16_t>(in);
    if (version != kTensorVersion) {
        throw FormatError("unsupported tensor file version");
    }
    const auto rank = read_le<std::uint16_t>(in);
    if (rank == 0) {
        throw FormatError("tensor rank must be >= 1");
    }
    TensorFile tensor;
    tensor.dims.resize(rank);
    for (std::uint16_t i = 0; i < rank; ++i) {
        tensor.dims[i] = read_le<std::uint64_t>(in);
    }
    tensor.data.resize(tensor.element_count());
    in.read(reinterpret_cast<char*>(tensor.data.data()),
            static_cast<std::streamsize>(tensor.data.size() * sizeof(float)));
    if (!in) {
        throw FormatError("tensor file truncated");
    }
    return tensor;
}

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        throw FormatError("bad numeric field: '" + s + "'");
    }
    return v;
}

void write_pose_csv(const std::filesystem::path& path,
                    const std::vector<PoseFrame>& frames) {
    std::ofstream out(path);
    if (!out) {
        throw FormatError("cannot open for writing: " + path.string());
    }
    out << "timestamp_us";
    for (int j = 0; j < HandPose::kNumJoints; ++j) {
        char joint[8];
        std::snprintf(joint, sizeof(joint), "j%02d", j);
        out << ',' << joint << "_x," << joint << "_y," << joint << "_z";
    }
    out << '\n';
    for (const PoseFrame& frame : frames) {
        out << frame.timestamp_us;
        for (const Vec3& p : frame.pose.joints_mm) {
            out << ',' << format_double(p.x) << ',' << format_double(p.y) << ','
                << format_double(p.z);
        }
        out << '\n';
    }
    if (!out) {
        throw FormatError("write failed: " + path.string());
    }
}

std::vector<PoseFrame> read_pose_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open for reading: " + path.string());
    }
    std::string line;
    if (!std::getline(in, line)) {
        throw FormatError("pose CSV missing header: " + path.string());
    }
    constexpr int kColumns = 1 + 3 * HandPose::kNumJoints;
    std::vector<PoseFrame> frames;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::stringstream ss(line);
        std::string field;
        PoseFrame frame;
        int col = 0;
        while (std::getline(ss, field, ',')) {
            if (col == 0) {
                frame.timestamp_us = std::stoll(field);
            } else {
                const int j = (col - 1) / 3;
                const int axis = (col - 1) % 3;
                Vec3& joint = frame.pose.joints_mm[j];
                const double v = parse_double(field);
                (axis == 0 ? joint.x : axis == 1 ? joint.y : joint.z) = v;
            }
            ++col;
        }
        if (col != kColumns) {
            throw FormatError("pose CSV row has wrong column count");
        }
        frames.push_back(frame);
    }
    return frames;
}

}  // namespace echosonar
