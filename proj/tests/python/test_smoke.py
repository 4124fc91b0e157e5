"""Smoke tests for the Python bindings: shapes, a few known values, and one
end-to-end CLI run."""

import json
import math

import numpy as np
import pytest

import echosonar as es


def test_chirp_generation():
    spec = es.ChirpSpec()
    chirp = es.generate_chirp(spec)
    assert chirp.shape == (512,)
    assert np.abs(chirp).max() == pytest.approx(1.0, abs=1e-9)
    assert es.instantaneous_freq_hz(spec, 256) == pytest.approx(18500.0)
    assert spec.cell_size_m * 1000 == pytest.approx(3.57, abs=0.01)


def test_chirp_validation():
    with pytest.raises(es.ConfigError):
        es.ChirpSpec(start_freq_hz=20000.0, bandwidth_hz=8000.0)


def test_xcorr_peak_at_delay():
    spec = es.ChirpSpec()
    chirp = es.generate_chirp(spec)
    delayed = np.roll(chirp, 100)
    corr = es.xcorr_fd(delayed, chirp)
    assert int(np.argmax(corr)) == 100


def test_highpass_rejects_low_band():
    fs = 48000
    t = np.arange(fs) / fs
    low = np.sin(2 * math.pi * 300.0 * t)
    out = es.highpass(low, fs, 17000.0)
    interior = slice(2000, fs - 2000)
    assert np.sqrt(np.mean(out[interior] ** 2)) < 1e-2 * np.sqrt(
        np.mean(low[interior] ** 2)
    )


def test_hand_pose_and_angles():
    pose = es.hand_pose(flexion=[0.0, 0.0, 0.0, 0.0, 0.0])
    assert pose.shape == (21, 3)
    assert len(es.joint_names()) == 21
    angles = es.flexion_angles(pose)
    assert len(angles) == 19
    # flat hand: non-root angles are zero
    assert max(angles[1:3]) < 1e-4

    norm = es.normalize_pose(pose)
    assert np.linalg.norm(norm[0]) < 1e-12  # wrist at the origin


def test_activation_similarity_invariance():
    pose = es.hand_pose(flexion=[0.0, 1.0, 0.0, 1.0, 0.0])
    shifted = pose + np.array([50.0, -20.0, 10.0])
    assert es.activation_similarity(shifted, pose) == pytest.approx(0.0, abs=1e-9)
    other = es.hand_pose(flexion=[1.0, 0.0, 0.0, 0.0, 0.0])
    assert es.activation_similarity(other, pose) < -0.01


def test_cli_simulate_and_preprocess(tmp_path):
    config = {
        "trajectory": {"stage": "mixed", "duration_s": 3.0},
        "session": {"session_id": "py-smoke", "subject_id": "py"},
    }
    config_path = tmp_path / "sim.json"
    config_path.write_text(json.dumps(config))
    session_dir = tmp_path / "session"
    assert (
        es.run(
            [
                "simulate",
                "--config",
                str(config_path),
                "--seed",
                "5",
                "--out",
                str(session_dir),
            ]
        )
        == 0
    )
    assert (session_dir / "audio.bvau").exists()
    assert (session_dir / "poses.csv").exists()

    pre_path = tmp_path / "pre.json"
    pre_path.write_text(
        json.dumps({"session_manifest": str(session_dir / "manifest.json"),
                    "stride": 25})
    )
    features_dir = tmp_path / "features"
    assert (
        es.run(
            ["preprocess", "--config", str(pre_path), "--out", str(features_dir)]
        )
        == 0
    )
    assert (features_dir / "features.bvtn").exists()
    assert (features_dir / "labels.csv").exists()

    # Unknown keys are rejected with a nonzero exit code.
    bad_path = tmp_path / "bad.json"
    bad_path.write_text(json.dumps({"sesion_manifest": "x"}))
    assert es.run(["preprocess", "--config", str(bad_path), "--out",
                   str(tmp_path / "nope")]) != 0


def test_preprocess_arrays():
    spec = es.ChirpSpec()
    chirp = es.generate_chirp(spec)
    tx = np.tile(chirp, 60)
    # direct path only, 7 identical channels with a tiny delay
    audio = np.zeros((7, tx.size))
    for c in range(7):
        audio[c, 5:] = 0.5 * tx[:-5]
    features, stamps = es.preprocess(audio, spec, stride=10)
    assert features.shape[1:] == (7, 256, 50)
    assert features.shape[0] == len(stamps)
    assert features.dtype == np.float32
