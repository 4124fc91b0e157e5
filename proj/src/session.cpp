#include "echosonar/session.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "echosonar/io.hpp"
#include "echosonar/pose.hpp"
#include "echosonar/rangeprofile.hpp"

namespace echosonar {

using nlohmann::json;

void reject_unknown_keys(const json& j, const std::vector<std::string>& allowed,
                         const std::string& context) {
    if (!j.is_object()) {
        throw ConfigError("config section '" + context + "' must be an object");
    }
    for (const auto& [key, value] : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw ConfigError("unknown config key '" + context + "." + key + "'");
        }
    }
}

ChirpSpec chirp_from_config(const json& j) {
    reject_unknown_keys(j,
                        {"start_freq_hz", "bandwidth_hz", "chirp_len_samples",
                         "sample_rate_hz", "amplitude", "sound_speed_mps"},
                        "chirp");
    ChirpSpec spec;
    spec.start_freq_hz = j.value("start_freq_hz", spec.start_freq_hz);
    spec.bandwidth_hz = j.value("bandwidth_hz", spec.bandwidth_hz);
    spec.chirp_len_samples = j.value("chirp_len_samples", spec.chirp_len_samples);
    spec.sample_rate_hz = j.value("sample_rate_hz", spec.sample_rate_hz);
    spec.amplitude = j.value("amplitude", spec.amplitude);
    spec.sound_speed_mps = j.value("sound_speed_mps", spec.sound_speed_mps);
    spec.validate();
    return spec;
}

namespace {

Vec3 vec3_from_json(const json& j, const std::string& context) {
    if (!j.is_array() || j.size() != 3) {
        throw ConfigError(context + " must be an [x, y, z] array");
    }
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

Scene scene_from_config(const json& j, const ChirpSpec& spec) {
    reject_unknown_keys(
        j,
        {"speaker_pos", "static_scatterers", "surface_plane", "noise_snr_db",
         "audible_noise_snr_db", "audible_noise_cutoff_hz", "ultrasound_gain_db",
         "start_offset_samples"},
        "scene");
    Scene scene;
    if (j.contains("speaker_pos")) {
        scene.speaker_pos = vec3_from_json(j["speaker_pos"], "scene.speaker_pos");
    }
    if (j.contains("static_scatterers")) {
        for (const json& s : j["static_scatterers"]) {
            reject_unknown_keys(s, {"position", "reflectivity"},
                                "scene.static_scatterers[]");
            scene.static_scatterers.push_back(
                {vec3_from_json(s.at("position"), "scatterer.position"),
                 s.at("reflectivity").get<double>()});
        }
    }
    scene.surface_plane_enabled = j.value("surface_plane", false);
    if (j.contains("noise_snr_db") && !j["noise_snr_db"].is_null()) {
        scene.noise_snr_db = j["noise_snr_db"].get<double>();
    }
    if (j.contains("audible_noise_snr_db") && !j["audible_noise_snr_db"].is_null()) {
        scene.audible_noise_snr_db = j["audible_noise_snr_db"].get<double>();
    }
    scene.audible_noise_cutoff_hz =
        j.value("audible_noise_cutoff_hz", scene.audible_noise_cutoff_hz);
    scene.ultrasound_gain_db = j.value("ultrasound_gain_db", 0.0);
    scene.start_offset_samples = j.value("start_offset_samples", 0u);
    scene.validate(spec);
    return scene;
}

void write_resolved_config(const RunConfig& run) {
    json resolved = run.config;
    resolved["command"] = run.command;
    resolved["seed"] = run.seed;
    resolved["out_dir"] = run.out_dir.string();
    std::ofstream out(run.out_dir / "resolved_config.json");
    if (!out) {
        throw FormatError("cannot write resolved config");
    }
    out << resolved.dump(2) << '\n';
}

void require_outputs(const std::filesystem::path& dir,
                     const std::vector<std::string>& names) {
    for (const std::string& name : names) {
        if (!std::filesystem::exists(dir / name)) {
            throw FormatError("expected output missing: " + name);
        }
    }
}

constexpr std::uint64_t kNoiseSeedSalt = 0x6e6f697365ULL;

}  // namespace

void cmd_simulate(const RunConfig& run) {
    reject_unknown_keys(run.config,
                        {"command", "seed", "out_dir", "chirp", "scene",
                         "trajectory", "session"},
                        "config");
    const ChirpSpec spec = chirp_from_config(run.config.value("chirp", json::object()));
    Scene scene = scene_from_config(run.config.value("scene", json::object()), spec);

    const json traj_cfg = run.config.value("trajectory", json::object());
    reject_unknown_keys(traj_cfg, {"stage", "duration_s", "joint_reflectivity"},
                        "trajectory");
    const GestureStage stage =
        gesture_stage_from_string(traj_cfg.value("stage", std::string("mixed")));
    const double duration_s = traj_cfg.value("duration_s", 120.0);
    const double joint_reflectivity = traj_cfg.value("joint_reflectivity", 0.05);

    const json session_cfg = run.config.value("session", json::object());
    reject_unknown_keys(session_cfg, {"session_id", "subject_id", "environment"},
                        "session");

    const long num_windows = std::llround(duration_s * spec.sample_rate_hz) /
                             spec.chirp_len_samples;
    if (num_windows < 2) {
        throw ConfigError("simulate: duration covers fewer than two chirps");
    }

    const SampleBuffer tx =
        repeat_chirps(generate_chirp(spec), static_cast<int>(num_windows));
    const auto traj = gesture_trajectory(stage, duration_s, run.seed);
    scene.moving_scatterers = trajectory_to_moving_scatterers(
        traj, spec, static_cast<int>(num_windows), joint_reflectivity);

    const MultiChannelBuffer audio =
        propagate(scene, tx, spec, run.seed ^ kNoiseSeedSalt);

    std::vector<PoseFrame> poses;
    poses.reserve(traj.size());
    for (const TrajectoryFrame& frame : traj) {
        poses.push_back({frame.timestamp_us, hand_pose_from_params(frame.params)});
    }

    std::filesystem::create_directories(run.out_dir);
    write_audio_bvau(run.out_dir / "audio.bvau", audio);
    write_pose_csv(run.out_dir / "poses.csv", poses);

    SessionManifest manifest;
    manifest.session_id = session_cfg.value("session_id", std::string("session-1"));
    manifest.subject_id = session_cfg.value("subject_id", std::string("subject-1"));
    manifest.environment = session_cfg.value("environment", std::string("default"));
    manifest.stage = stage;
    manifest.chirp = spec;
    manifest.duration_s = static_cast<double>(num_windows) *
                          spec.chirp_len_samples / spec.sample_rate_hz;
    manifest.seed = run.seed;
    manifest.files = {{"audio", "audio.bvau"}, {"poses", "poses.csv"}};
    write_manifest(run.out_dir / "manifest.json", manifest);
    write_resolved_config(run);
    require_outputs(run.out_dir,
                    {"audio.bvau", "poses.csv", "manifest.json",
                     "resolved_config.json"});
}

void cmd_preprocess(const RunConfig& run) {
    reject_unknown_keys(run.config,
                        {"command", "seed", "out_dir", "session_manifest",
                         "stride", "augment_shifts", "dump_profiles",
                         "highpass_cutoff_hz"},
                        "config");
    const std::filesystem::path manifest_path =
        run.config.at("session_manifest").get<std::string>();
    const SessionManifest manifest = read_manifest(manifest_path);
    const std::filesystem::path base = manifest_path.parent_path();
    manifest.validate_files(base);

    const ChirpSpec& spec = manifest.chirp;
    const int stride = run.config.value("stride", 50);
    const int augment_count = run.config.value("augment_shifts", 0);
    if (augment_count < 0 || augment_count > 6) {
        throw ConfigError("augment_shifts must lie in [0, 6]");
    }

    MultiChannelBuffer audio = read_audio_bvau(base / manifest.files.at("audio"));
    const double cutoff =
        run.config.value("highpass_cutoff_hz", spec.start_freq_hz);
    for (auto& channel : audio.channels) {
        SampleBuffer buf{std::move(channel), audio.sample_rate_hz};
        channel = highpass(buf, cutoff).samples;
    }

    const std::size_t nominal =
        manifest.duration_s > 0.0
            ? static_cast<std::size_t>(
                  std::llround(manifest.duration_s * spec.sample_rate_hz))
            : 0;
    const PreprocessResult result = preprocess_recording(audio, spec, nominal);

    FeatureSet features = assemble_features(result.subtracted, spec, stride);
    const auto gt = read_pose_csv(base / manifest.files.at("poses"));
    const int dropped = align_labels(features, gt);
    if (dropped > 0) {
        std::cerr << "preprocess: dropped " << dropped
                  << " windows with no ground truth within 20 ms\n";
    }

    if (augment_count > 0) {
        const std::vector<int> all_shifts = default_augment_shifts();
        const std::vector<int> shifts(all_shifts.begin(),
                                      all_shifts.begin() + augment_count);
        const double cell_mm = range_cell_size_m(spec) * 1000.0;
        FeatureSet expanded;
        expanded.channels = features.channels;
        expanded.cells = features.cells;
        expanded.window_len = features.window_len;
        for (const FeatureWindow& window : features.windows) {
            expanded.windows.push_back(window);
            for (FeatureWindow& variant : augment(window, features, shifts, cell_mm)) {
                expanded.windows.push_back(std::move(variant));
            }
        }
        features = std::move(expanded);
    }

    std::filesystem::create_directories(run.out_dir);
    write_feature_set(run.out_dir / "features.bvtn", run.out_dir / "labels.csv",
                      features);

    if (run.config.value("dump_profiles", false)) {
        const auto& cut = result.cut;
        TensorFile dump;
        dump.dims = {cut.front().num_channels(), cut.front().num_cells(),
                     cut.size()};
        dump.data.resize(dump.element_count());
        const std::size_t nw = cut.size();
        for (std::size_t c = 0; c < cut.front().num_channels(); ++c) {
            for (std::size_t k = 0; k < cut.front().num_cells(); ++k) {
                for (std::size_t w = 0; w < nw; ++w) {
                    dump.data[(c * cut.front().num_cells() + k) * nw + w] =
                        static_cast<float>(cut[w].magnitudes[c][k]);
                }
            }
        }
        write_tensor_bvtn(run.out_dir / "profiles.bvtn", dump);
    }

    SessionManifest out_manifest = manifest;
    out_manifest.files = {{"features", "features.bvtn"}, {"labels", "labels.csv"}};
    write_manifest(run.out_dir / "manifest.json", out_manifest);
    write_resolved_config(run);
    require_outputs(run.out_dir, {"features.bvtn", "labels.csv", "manifest.json",
                                  "resolved_config.json"});
}

namespace {

struct LoadedSet {
    SessionManifest manifest;
    FeatureSet features;
};

LoadedSet load_feature_manifest(const std::filesystem::path& path) {
    LoadedSet loaded;
    loaded.manifest = read_manifest(path);
    const auto base = path.parent_path();
    loaded.manifest.validate_files(base);
    loaded.features =
        read_feature_set(base / loaded.manifest.files.at("features"),
                         base / loaded.manifest.files.at("labels"));
    return loaded;
}

ModelConfig model_config_from(const json& j, std::uint64_t seed,
                              const FeatureSet& shape) {
    reject_unknown_keys(j,
                        {"conv1_out", "conv2_out", "hidden", "folds",
                         "learning_rate", "batch_size", "epochs_per_stage",
                         "steps_per_stage", "bn_momentum"},
                        "model");
    ModelConfig config;
    config.channels = shape.channels;
    config.cells = shape.cells;
    config.window_len = shape.window_len;
    config.conv1_out = j.value("conv1_out", config.conv1_out);
    config.conv2_out = j.value("conv2_out", config.conv2_out);
    config.hidden = j.value("hidden", config.hidden);
    config.folds = j.value("folds", config.folds);
    config.learning_rate = j.value("learning_rate", config.learning_rate);
    config.batch_size = j.value("batch_size", config.batch_size);
    config.epochs_per_stage = j.value("epochs_per_stage", config.epochs_per_stage);
    config.steps_per_stage = j.value("steps_per_stage", config.steps_per_stage);
    config.bn_momentum = j.value("bn_momentum", config.bn_momentum);
    config.seed = seed;
    config.validate();
    return config;
}

void write_history_csv(const std::filesystem::path& path,
                       const std::vector<StageMetrics>& history) {
    std::ofstream out(path);
    out << "stage,epoch,train_mse,val_mse\n";
    for (const StageMetrics& m : history) {
        out << m.stage << ',' << m.epoch << ',' << format_double(m.train_mse)
            << ',' << format_double(m.val_mse) << '\n';
    }
}

}  // namespace

void cmd_train(const RunConfig& run) {
    reject_unknown_keys(run.config,
                        {"command", "seed", "out_dir", "train_manifests",
                         "val_manifests", "curriculum", "model"},
                        "config");
    std::vector<LoadedSet> train_sets;
    std::vector<SessionManifest> manifests;
    for (const json& p : run.config.at("train_manifests")) {
        train_sets.push_back(load_feature_manifest(p.get<std::string>()));
        manifests.push_back(train_sets.back().manifest);
    }
    if (train_sets.empty()) {
        throw InputError("train: no training manifests");
    }
    for (const LoadedSet& s : train_sets) {
        if (s.features.channels != train_sets.front().features.channels ||
            s.features.cells != train_sets.front().features.cells ||
            s.features.window_len != train_sets.front().features.window_len) {
            throw ShapeError("train: feature sets have mismatched shapes");
        }
    }

    std::vector<LoadedSet> val_sets;
    std::vector<const FeatureWindow*> val;
    if (run.config.contains("val_manifests")) {
        for (const json& p : run.config["val_manifests"]) {
            val_sets.push_back(load_feature_manifest(p.get<std::string>()));
            for (const FeatureWindow& w : val_sets.back().features.windows) {
                val.push_back(&w);
            }
        }
    }

    const bool curriculum = run.config.value("curriculum", true);
    ModelConfig config = model_config_from(run.config.value("model", json::object()),
                                           run.seed, train_sets.front().features);

    auto windows_of = [&](const SessionManifest& m) {
        for (const LoadedSet& s : train_sets) {
            if (s.manifest.session_id == m.session_id &&
                s.manifest.subject_id == m.subject_id &&
                s.manifest.stage == m.stage) {
                return window_pointers(s.features);
            }
        }
        throw InputError("train: manifest lookup failed");
    };

    int missing = 0;
    const auto ordered = curriculum_order(manifests, &missing);
    if (missing > 0) {
        std::cerr << "train: " << missing << " curriculum stages missing, skipped\n";
    }

    std::vector<StageData> stages;
    if (curriculum) {
        for (const auto& group : ordered) {
            StageData stage;
            stage.name = to_string(group.front().stage);
            for (const SessionManifest& m : group) {
                const auto ptrs = windows_of(m);
                stage.windows.insert(stage.windows.end(), ptrs.begin(), ptrs.end());
            }
            stages.push_back(std::move(stage));
        }
    } else {
        // Ablation baseline: the same data in one stage, with the same total
        // step budget as the curriculum run.
        StageData stage;
        stage.name = "all";
        for (const auto& group : ordered) {
            for (const SessionManifest& m : group) {
                const auto ptrs = windows_of(m);
                stage.windows.insert(stage.windows.end(), ptrs.begin(), ptrs.end());
            }
        }
        const int n_stages = static_cast<int>(ordered.size());
        if (config.steps_per_stage > 0) {
            config.steps_per_stage *= n_stages;
        } else {
            config.epochs_per_stage *= n_stages;
        }
        stages.push_back(std::move(stage));
    }

    std::filesystem::create_directories(run.out_dir);
    const Checkpoint ckpt =
        train_curriculum(stages, config, val, run.out_dir / "checkpoints");
    write_checkpoint(run.out_dir / "final.bvck", ckpt);
    write_history_csv(run.out_dir / "history.csv", ckpt.history);
    write_resolved_config(run);
    require_outputs(run.out_dir, {"final.bvck", "history.csv",
                                  "resolved_config.json"});
}

namespace {

void write_metrics_row(std::ofstream& out, const std::string& scope,
                       const std::string& group, const EvalReport& report) {
    out << scope << ',' << group << ',' << report.samples << ','
        << format_double(report.mae_mm) << ',' << format_double(report.median_mm)
        << ',' << format_double(report.p90_mm) << ','
        << format_double(report.mae_joint_mm) << ','
        << format_double(report.mse_mm2) << '\n';
}

}  // namespace

void cmd_eval(const RunConfig& run) {
    reject_unknown_keys(run.config,
                        {"command", "seed", "out_dir", "checkpoint", "manifests",
                         "grouping"},
                        "config");
    const Checkpoint ckpt =
        read_checkpoint(run.config.at("checkpoint").get<std::string>());
    const Regressor model(ckpt.config, ckpt.params);

    std::vector<LoadedSet> sets;
    for (const json& p : run.config.at("manifests")) {
        sets.push_back(load_feature_manifest(p.get<std::string>()));
    }
    if (sets.empty()) {
        throw InputError("eval: no manifests");
    }
    const std::string grouping = run.config.value("grouping", std::string("none"));
    if (grouping != "none" && grouping != "subject" && grouping != "environment") {
        throw ConfigError("grouping must be none, subject or environment");
    }

    std::filesystem::create_directories(run.out_dir);
    std::ofstream metrics(run.out_dir / "metrics.csv");
    metrics << "scope,group,samples,mae_mm,median_mm,p90_mm,mae_joint_mm,mse_mm2\n";

    std::vector<const FeatureWindow*> all;
    std::map<std::string, std::vector<const FeatureWindow*>> groups;
    for (const LoadedSet& s : sets) {
        const std::string key = grouping == "subject" ? s.manifest.subject_id
                                : grouping == "environment"
                                    ? s.manifest.environment
                                    : std::string();
        for (const FeatureWindow& w : s.features.windows) {
            all.push_back(&w);
            if (!key.empty()) {
                groups[key].push_back(&w);
            }
        }
    }

    const EvalReport overall = evaluate(model, all);
    write_metrics_row(metrics, "overall", "all", overall);
    for (const auto& [key, windows] : groups) {
        write_metrics_row(metrics, grouping, key, evaluate(model, windows));
    }

    std::ofstream breakdown(run.out_dir / "breakdown.csv");
    breakdown << "kind,name,mae_mm\n";
    for (int j = 0; j < HandPose::kNumJoints; ++j) {
        breakdown << "joint," << joint_name(j) << ','
                  << format_double(overall.per_joint_mm[j]) << '\n';
    }
    for (int f = 0; f < 5; ++f) {
        breakdown << "finger," << finger_name(f) << ','
                  << format_double(overall.per_finger_mm[f]) << '\n';
    }
    const char* bone_names[] = {"metacarpal", "proximal", "intermediate",
                                "distal"};
    for (int b = 0; b < 4; ++b) {
        breakdown << "bone," << bone_names[b] << ','
                  << format_double(overall.per_bone_mm[b]) << '\n';
    }
    metrics.close();
    breakdown.close();
    write_resolved_config(run);
    require_outputs(run.out_dir,
                    {"metrics.csv", "breakdown.csv", "resolved_config.json"});
}

void cmd_activate(const RunConfig& run) {
    reject_unknown_keys(run.config,
                        {"command", "seed", "out_dir", "template_pose",
                         "threshold", "poses", "debounce"},
                        "config");
    const auto template_frames =
        read_pose_csv(run.config.at("template_pose").get<std::string>());
    if (template_frames.empty()) {
        throw InputError("activate: template pose file is empty");
    }
    const double threshold = run.config.at("threshold").get<double>();
    const ActivationTemplate tmpl =
        make_activation_template(template_frames.front().pose, threshold);
    const int debounce = run.config.value("debounce", 3);

    const auto stream = read_pose_csv(run.config.at("poses").get<std::string>());
    ActivationDetector detector(tmpl, debounce);

    std::filesystem::create_directories(run.out_dir);
    std::ofstream out(run.out_dir / "events.csv");
    out << "frame_index,timestamp_us,similarity\n";
    for (std::size_t i = 0; i < stream.size(); ++i) {
        if (detector.feed(stream[i].pose)) {
            out << i << ',' << stream[i].timestamp_us << ','
                << format_double(activation_similarity(stream[i].pose, tmpl))
                << '\n';
        }
    }
    out.close();
    write_resolved_config(run);
    require_outputs(run.out_dir, {"events.csv", "resolved_config.json"});
}

namespace {

json apply_overrides(json config, const std::vector<std::string>& sets) {
    for (const std::string& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("--set expects key=value, got '" + kv + "'");
        }
        const std::string path = kv.substr(0, eq);
        const std::string raw = kv.substr(eq + 1);
        json value;
        try {
            value = json::parse(raw);
        } catch (const json::exception&) {
            value = raw;  // plain string
        }
        json* node = &config;
        std::size_t begin = 0;
        while (true) {
            const auto dot = path.find('.', begin);
            const std::string key = path.substr(begin, dot - begin);
            if (key.empty()) {
                throw ConfigError("--set has an empty key segment");
            }
            if (dot == std::string::npos) {
                (*node)[key] = value;
                break;
            }
            node = &(*node)[key];
            begin = dot + 1;
        }
    }
    return config;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"FMCW acoustic hand-tracking toolkit"};
    app.require_subcommand(1);

    struct SubArgs {
        std::string config_path;
        std::uint64_t seed = 0;
        bool seed_set = false;
        std::string out_dir;
        std::vector<std::string> sets;
    };
    std::map<std::string, SubArgs> sub_args;
    const std::vector<std::pair<std::string, std::string>> commands = {
        {"simulate", "synthesize a recording session"},
        {"preprocess", "turn a session into labeled feature tensors"},
        {"train", "train the joint regressor"},
        {"eval", "evaluate a checkpoint"},
        {"activate", "detect the activation pose in a pose stream"}};
    for (const auto& [name, desc] : commands) {
        CLI::App* sub = app.add_subcommand(name, desc);
        SubArgs& sa = sub_args[name];
        sub->add_option("--config", sa.config_path, "JSON config file")
            ->required();
        sub->add_option("--seed", sa.seed, "run seed")
            ->each([&sa](const std::string&) { sa.seed_set = true; });
        sub->add_option("--out", sa.out_dir, "output directory");
        sub->add_option("--set", sa.sets, "config override key=value");
    }

    std::vector<const char*> argv;
    argv.push_back("echo-sonar");
    for (const std::string& a : args) {
        argv.push_back(a.c_str());
    }
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        const std::string command = app.get_subcommands().front()->get_name();
        const SubArgs& sa = sub_args[command];

        std::ifstream in(sa.config_path);
        if (!in) {
            throw ConfigError("cannot open config file: " + sa.config_path);
        }
        json config;
        try {
            in >> config;
        } catch (const json::exception& e) {
            throw ConfigError("bad config JSON: " + std::string(e.what()));
        }
        config = apply_overrides(config, sa.sets);
        if (config.contains("command") &&
            config["command"].get<std::string>() != command) {
            throw ConfigError("config was resolved for command '" +
                              config["command"].get<std::string>() + "'");
        }

        RunConfig run;
        run.command = command;
        run.config = config;
        run.seed = sa.seed_set ? sa.seed : config.value("seed", 1ULL);
        const std::string out =
            !sa.out_dir.empty() ? sa.out_dir
                                : config.value("out_dir", std::string());
        if (out.empty()) {
            throw ConfigError("no output directory (--out or config out_dir)");
        }
        run.out_dir = out;

        if (command == "simulate") {
            cmd_simulate(run);
        } else if (command == "preprocess") {
            cmd_preprocess(run);
        } else if (command == "train") {
            cmd_train(run);
        } else if (command == "eval") {
            cmd_eval(run);
        } else if (command == "activate") {
            cmd_activate(run);
        }
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "echo-sonar: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace echosonar
