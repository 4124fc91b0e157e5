#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include <json.hpp>

#include "echosonar/model.hpp"

namespace echosonar {

namespace {

using nlohmann::json;

json config_to_json(const ModelConfig& c) {
    return json{{"channels", c.channels},
                {"cells", c.cells},
                {"window_len", c.window_len},
                {"folds", c.folds},
                {"conv1_out", c.conv1_out},
                {"conv2_out", c.conv2_out},
                {"kernel", c.kernel},
                {"pool", c.pool},
                {"hidden", c.hidden},
                {"output", c.output},
                {"seed", c.seed},
                {"learning_rate", c.learning_rate},
                {"batch_size", c.batch_size},
                {"epochs_per_stage", c.epochs_per_stage},
                {"steps_per_stage", c.steps_per_stage},
                {"bn_momentum", c.bn_momentum}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.channels = j.at("channels").get<int>();
    c.cells = j.at("cells").get<int>();
    c.window_len = j.at("window_len").get<int>();
    c.folds = j.at("folds").get<int>();
    c.conv1_out = j.at("conv1_out").get<int>();
    c.conv2_out = j.at("conv2_out").get<int>();
    c.kernel = j.at("kernel").get<int>();
    c.pool = j.at("pool").get<int>();
    c.hidden = j.at("hidden").get<int>();
    c.output = j.at("output").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.batch_size = j.at("batch_size").get<int>();
    c.epochs_per_stage = j.at("epochs_per_stage").get<int>();
    c.steps_per_stage = j.at("steps_per_stage").get<int>();
    c.bn_momentum = j.at("bn_momentum").get<double>();
    return c;
}

json history_to_json(const std::vector<StageMetrics>& history) {
    json arr = json::array();
    for (const StageMetrics& m : history) {
        arr.push_back(json{{"stage", m.stage},
                           {"epoch", m.epoch},
                           {"train_mse", m.train_mse},
                           {"val_mse", m.val_mse}});
    }
    return arr;
}

std::vector<StageMetrics> history_from_json(const json& arr) {
    std::vector<StageMetrics> history;
    for (const json& j : arr) {
        StageMetrics m;
        m.stage = j.at("stage").get<std::string>();
        m.epoch = j.at("epoch").get<int>();
        m.train_mse = j.at("train_mse").get<double>();
        m.val_mse = j.at("val_mse").get<double>();
        history.push_back(std::move(m));
    }
    return history;
}

void write_u16(std::ofstream& out, std::uint16_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_u32(std::ofstream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_u64(std::ofstream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_string(std::ofstream& out, const std::string& s) {
    write_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T read_pod(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) {
        throw FormatError("checkpoint truncated");
    }
    return v;
}

std::string read_string(std::ifstream& in) {
    const auto len = read_pod<std::uint32_t>(in);
    std::string s(len, '\0');
    in.read(s.data(), len);
    if (!in) {
        throw FormatError("checkpoint truncated");
    }
    return s;
}

void write_block(std::ofstream& out, const ParamBlock& block,
                 const double* data) {
    write_string(out, block.name);
    write_u16(out, static_cast<std::uint16_t>(block.dims.size()));
    for (std::uint64_t d : block.dims) {
        write_u64(out, d);
    }
    std::vector<float> f32(block.size);
    for (std::size_t i = 0; i < block.size; ++i) {
        f32[i] = static_cast<float>(data[i]);
    }
    out.write(reinterpret_cast<const char*>(f32.data()),
              static_cast<std::streamsize>(f32.size() * sizeof(float)));
}

void read_block_into(std::ifstream& in, ModelParams& params) {
    const std::string name = read_string(in);
    const auto rank = read_pod<std::uint16_t>(in);
    std::vector<std::uint64_t> dims(rank);
    std::size_t size = 1;
    for (std::uint16_t i = 0; i < rank; ++i) {
        dims[i] = read_pod<std::uint64_t>(in);
        size *= dims[i];
    }
    double* dst = nullptr;
    for (const auto& blocks : {&params.blocks, &params.buffer_blocks}) {
        for (const ParamBlock& b : *blocks) {
            if (b.name == name) {
                if (b.dims != dims) {
                    throw FormatError("checkpoint block has wrong shape: " + name);
                }
                dst = (blocks == &params.blocks ? params.values.data()
                                                : params.buffer_values.data()) +
                      b.offset;
            }
        }
    }
    if (dst == nullptr) {
        throw FormatError("checkpoint block unknown to this config: " + name);
    }
    std::vector<float> f32(size);
    in.read(reinterpret_cast<char*>(f32.data()),
            static_cast<std::streamsize>(size * sizeof(float)));
    if (!in) {
        throw FormatError("checkpoint truncated");
    }
    for (std::size_t i = 0; i < size; ++i) {
        dst[i] = static_cast<double>(f32[i]);
    }
}

// Checkpoints store float32 blocks; passing the live parameters through the
// same quantization keeps the in-memory model and its file in lockstep.
void quantize_to_f32(ModelParams& params) {
    for (double& v : params.values) {
        v = static_cast<double>(static_cast<float>(v));
    }
    for (double& v : params.buffer_values) {
        v = static_cast<double>(static_cast<float>(v));
    }
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path,
                      const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw FormatError("cannot open for writing: " + path.string());
    }
    out.write("BVCK", 4);
    write_u16(out, ckpt.version);
    write_string(out, config_to_json(ckpt.config).dump());
    write_string(out, ckpt.stage_tag);
    write_string(out, history_to_json(ckpt.history).dump());
    const auto total = static_cast<std::uint32_t>(ckpt.params.blocks.size() +
                                                  ckpt.params.buffer_blocks.size());
    write_u32(out, total);
    for (const ParamBlock& b : ckpt.params.blocks) {
        write_block(out, b, ckpt.params.values.data() + b.offset);
    }
    for (const ParamBlock& b : ckpt.params.buffer_blocks) {
        write_block(out, b, ckpt.params.buffer_values.data() + b.offset);
    }
    if (!out) {
        throw FormatError("write failed: " + path.string());
    }
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open for reading: " + path.string());
    }
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "BVCK", 4) != 0) {
        throw FormatError("bad magic for checkpoint file");
    }
    Checkpoint ckpt;
    ckpt.version = read_pod<std::uint16_t>(in);
    if (ckpt.version != 1) {
        throw FormatError("unsupported checkpoint version");
    }
    try {
        ckpt.config = config_from_json(json::parse(read_string(in)));
        ckpt.stage_tag = read_string(in);
        ckpt.history = history_from_json(json::parse(read_string(in)));
    } catch (const json::exception& e) {
        throw FormatError("bad checkpoint JSON: " + std::string(e.what()));
    }
    ckpt.params = make_params(ckpt.config);
    const auto blocks = read_pod<std::uint32_t>(in);
    if (blocks != ckpt.params.blocks.size() + ckpt.params.buffer_blocks.size()) {
        throw FormatError("checkpoint block count mismatch");
    }
    for (std::uint32_t i = 0; i < blocks; ++i) {
        read_block_into(in, ckpt.params);
    }
    return ckpt;
}

Checkpoint train_curriculum(const std::vector<StageData>& stages,
                            const ModelConfig& config,
                            const std::vector<const FeatureWindow*>& val,
                            const std::filesystem::path& checkpoint_dir) {
    if (stages.empty()) {
        throw InputError("train_curriculum: no stages");
    }
    config.validate();

    Regressor model(config);
    {
        std::vector<const FeatureWindow*> all;
        for (const StageData& stage : stages) {
            all.insert(all.end(), stage.windows.begin(), stage.windows.end());
        }
        model.fit_label_affine(all);
    }

    Checkpoint ckpt;
    ckpt.config = config;

    for (std::size_t si = 0; si < stages.size(); ++si) {
        const StageData& stage = stages[si];
        if (stage.windows.empty()) {
            throw InputError("train_curriculum: empty stage " + stage.name);
        }
        const int n = static_cast<int>(stage.windows.size());
        const int steps_per_epoch =
            (n + config.batch_size - 1) / config.batch_size;
        const int total_steps = config.steps_per_stage > 0
                                    ? config.steps_per_stage
                                    : config.epochs_per_stage * steps_per_epoch;

        Regressor::AdamState adam;
        std::mt19937_64 rng(config.seed + 1000003ULL * (si + 1));
        std::vector<int> order(n);
        std::iota(order.begin(), order.end(), 0);

        double epoch_loss = 0.0;
        int epoch_steps = 0;
        int epoch = 0;
        for (int step = 0; step < total_steps; ++step) {
            const int pos = step % steps_per_epoch;
            if (pos == 0) {
                std::shuffle(order.begin(), order.end(), rng);
            }
            std::vector<const FeatureWindow*> batch;
            for (int i = pos * config.batch_size;
                 i < std::min(n, (pos + 1) * config.batch_size); ++i) {
                batch.push_back(stage.windows[order[i]]);
            }
            const double loss = model.train_step(batch, adam);
            if (!std::isfinite(loss) || loss > 1e8) {
                throw NumericError("training diverged at stage " + stage.name +
                                   " step " + std::to_string(step));
            }
            epoch_loss += loss;
            ++epoch_steps;
            if (pos == steps_per_epoch - 1 || step == total_steps - 1) {
                StageMetrics metrics;
                metrics.stage = stage.name;
                metrics.epoch = epoch++;
                metrics.train_mse = epoch_loss / epoch_steps;
                if (!val.empty()) {
                    metrics.val_mse = evaluate(model, val).mse_mm2;
                }
                ckpt.history.push_back(metrics);
                epoch_loss = 0.0;
                epoch_steps = 0;
            }
        }

        // Stage boundary: quantize like the checkpoint encoding, then save,
        // so the file and the live model agree exactly.
        quantize_to_f32(model.params());
        ckpt.params = model.params();
        ckpt.stage_tag = stage.name;
        if (!checkpoint_dir.empty()) {
            std::filesystem::create_directories(checkpoint_dir);
            write_checkpoint(checkpoint_dir /
                                 ("stage_" + std::to_string(si) + "_" +
                                  stage.name + ".bvck"),
                             ckpt);
        }
    }
    return ckpt;
}

namespace {

// Joint grouping for the breakdowns: finger of each joint (-1 for wrist and
// palm) and bone position from the root (metacarpal .. distal; the thumb has
// no metacarpal).
int joint_finger(int joint) {
    for (int f = 0; f < 5; ++f) {
        const int first = kFingerFirstJoint[f];
        if (joint >= first && joint < first + kFingerBoneCount[f]) {
            return f;
        }
    }
    return -1;
}

int joint_bone(int joint) {
    for (int f = 0; f < 5; ++f) {
        const int first = kFingerFirstJoint[f];
        if (joint >= first && joint < first + kFingerBoneCount[f]) {
            const int pos = joint - first;
            return f == 0 ? pos + 1 : pos;  // thumb chain starts at proximal
        }
    }
    return -1;
}

}  // namespace

EvalReport evaluate(const Regressor& model,
                    const std::vector<const FeatureWindow*>& dataset) {
    if (dataset.empty()) {
        throw InputError("evaluate: empty dataset");
    }
    const int batch_size = std::max(model.config().batch_size, 1);

    EvalReport report;
    report.per_joint_mm.assign(HandPose::kNumJoints, 0.0);
    report.per_finger_mm.assign(5, 0.0);
    report.per_bone_mm.assign(4, 0.0);
    std::vector<double> finger_count(5, 0.0);
    std::vector<double> bone_count(4, 0.0);
    std::vector<double> sample_mae;
    sample_mae.reserve(dataset.size());

    double abs_sum = 0.0;
    double sq_sum = 0.0;
    std::size_t coord_count = 0;

    for (std::size_t begin = 0; begin < dataset.size(); begin += batch_size) {
        std::vector<const FeatureWindow*> batch(
            dataset.begin() + begin,
            dataset.begin() + std::min(dataset.size(), begin + batch_size));
        const auto preds = model.forward_batch(batch);
        for (std::size_t b = 0; b < batch.size(); ++b) {
            if (!batch[b]->label) {
                throw InputError("evaluate: unlabeled window");
            }
            const HandPose& label = *batch[b]->label;
            double mae = 0.0;
            for (int j = 0; j < HandPose::kNumJoints; ++j) {
                const Vec3 diff{preds[b][3 * j] - label.joints_mm[j].x,
                                preds[b][3 * j + 1] - label.joints_mm[j].y,
                                preds[b][3 * j + 2] - label.joints_mm[j].z};
                const double abs3 =
                    std::abs(diff.x) + std::abs(diff.y) + std::abs(diff.z);
                mae += abs3;
                abs_sum += abs3;
                sq_sum += diff.dot(diff);
                coord_count += 3;
                const double euclid = diff.norm();
                report.per_joint_mm[j] += euclid;
                const int finger = joint_finger(j);
                if (finger >= 0) {
                    report.per_finger_mm[finger] += euclid;
                    finger_count[finger] += 1.0;
                    const int bone = joint_bone(j);
                    report.per_bone_mm[bone] += euclid;
                    bone_count[bone] += 1.0;
                }
            }
            sample_mae.push_back(mae / 63.0);
        }
    }

    report.samples = dataset.size();
    report.mae_mm = abs_sum / static_cast<double>(coord_count);
    report.mse_mm2 = sq_sum / static_cast<double>(coord_count);
    double joint_sum = 0.0;
    for (double& v : report.per_joint_mm) {
        v /= static_cast<double>(dataset.size());
        joint_sum += v;
    }
    report.mae_joint_mm = joint_sum / HandPose::kNumJoints;
    for (int f = 0; f < 5; ++f) {
        report.per_finger_mm[f] /= finger_count[f];
    }
    for (int b = 0; b < 4; ++b) {
        report.per_bone_mm[b] /= bone_count[b];
    }

    std::sort(sample_mae.begin(), sample_mae.end());
    const std::size_t n = sample_mae.size();
    report.median_mm = sample_mae[n / 2];
    report.p90_mm = sample_mae[std::min(n - 1, static_cast<std::size_t>(
                                                   0.9 * static_cast<double>(n)))];
    return report;
}

}  // namespace echosonar
