#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "echosonar/common.hpp"
#include "echosonar/hand.hpp"

namespace echosonar {

// Binary audio container "BVAU": magic, version u16, channel count u16,
// sample rate u32, per-channel sample count u64, then interleaved
// little-endian float32 frames. Reads and writes are byte-exact round trips.
void write_audio_bvau(const std::filesystem::path& path,
                      const MultiChannelBuffer& audio);
MultiChannelBuffer read_audio_bvau(const std::filesystem::path& path);

// Binary tensor container "BVTN": magic, version u16, rank u16, dims u64[],
// then little-endian float32 values in row-major order. Feature tensors use
// dims ordered (..., channel, cell, window).
struct TensorFile {
    std::vector<std::uint64_t> dims;
    std::vector<float> data;

    std::size_t element_count() const {
        std::size_t n = 1;
        for (std::uint64_t d : dims) n *= d;
        return n;
    }
};

void write_tensor_bvtn(const std::filesystem::path& path,
                       const TensorFile& tensor);
TensorFile read_tensor_bvtn(const std::filesystem::path& path);

// Timestamped hand pose stream as UTF-8 CSV: header row, then one row per
// frame with timestamp_us and 63 columns j00_x..j20_z in millimetres. Values
// are printed with shortest round-trip formatting, so write -> read -> write
// reproduces the bytes.
struct PoseFrame {
    std::int64_t timestamp_us = 0;
    HandPose pose;
};

void write_pose_csv(const std::filesystem::path& path,
                    const std::vector<PoseFrame>& frames);
std::vector<PoseFrame> read_pose_csv(const std::filesystem::path& path);

std::string format_double(double v);
double parse_double(const std::string& s);

}  // namespace echosonar
