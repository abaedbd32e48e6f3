"""End-to-end command-line behavior: artifacts, determinism, exit codes."""

import hashlib
import os

import numpy as np
import pytest

from helpers import write_exemplars
from texsyn.cli import main
from texsyn.images import load_image
from texsyn.trainer import LossLog

# A configuration small enough that a full training run takes seconds.
TINY_CFG = """
synthesis.embed_dim = 4
synthesis.noise_dim = 3
synthesis.base_size = 4
synthesis.scales = 2
synthesis.widths = 12, 12, 8
synthesis.guidance_channels = 4
extractor.stage_channels = 4, 8, 8
extractor.convs_per_stage = 1, 1, 1
extractor.taps = conv1_1, conv2_1, conv3_1
train.texture_taps = conv1_1, conv2_1
train.diversity_tap = conv3_1
train.K = 2
train.iterations = 8
train.batch_size = 2
transfer.style_taps = conv1_1, conv2_1
transfer.diversity_tap = conv3_1
transfer.K = 2
transfer.iterations = 6
transfer.batch_size = 2
transfer.enc_widths = 6, 8
transfer.dec_widths = 8, 6, 6
"""


def sha(path):
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()


@pytest.fixture
def workspace(tmp_path):
    paths = write_exemplars(tmp_path, 2, size=16)
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        TINY_CFG
        + f"paths.exemplars = {', '.join(paths)}\n"
        + f"paths.output_dir = {tmp_path}\n"
        + f"paths.model = {tmp_path}/synthesis.model\n"
        + f"paths.transfer_model = {tmp_path}/transfer.model\n"
        + f"paths.log = {tmp_path}/loss.csv\n"
        + f"paths.contents = {paths[0]}\n"
    )
    return tmp_path, str(cfg)


def run(*argv):
    return main(list(argv))


def test_train_then_synth_writes_expected_files(workspace, capsys):
    tmp, cfg = workspace
    assert run("train", "--seed", "5", "--config", cfg) == 0
    assert (tmp / "synthesis.model").exists()
    log = LossLog.load(str(tmp / "loss.csv"))
    assert len(log.rows) == 8

    assert run("synth", "--seed", "5", "--config", cfg, "--texture", "1", "--samples", "2") == 0
    for k in range(2):
        image = load_image(str(tmp / f"tex1_s5_{k}.png"))
        assert image.data.shape == (16, 16, 3)
    out = capsys.readouterr().out
    assert "tex1_s5_0.png" in out and "tex1_s5_1.png" in out


def test_training_is_deterministic_across_runs(workspace):
    tmp, cfg = workspace
    hashes = []
    for attempt in ("a", "b"):
        model = tmp / f"{attempt}.model"
        log = tmp / f"{attempt}.csv"
        code = run(
            "train", "--seed", "9", "--config", cfg,
            "--set", f"paths.model={model}", "--set", f"paths.log={log}",
        )
        assert code == 0
        hashes.append((sha(model), sha(log)))
    assert hashes[0] == hashes[1]


def test_seed_changes_the_artifacts(workspace):
    tmp, cfg = workspace
    for seed in ("1", "2"):
        assert run(
            "train", "--seed", seed, "--config", cfg,
            "--set", f"paths.model={tmp}/m{seed}.model",
            "--set", f"paths.log={tmp}/l{seed}.csv",
        ) == 0
    assert sha(tmp / "m1.model") != sha(tmp / "m2.model")


def test_synth_reruns_bit_identical(workspace):
    tmp, cfg = workspace
    assert run("train", "--seed", "3", "--config", cfg) == 0
    assert run("synth", "--seed", "7", "--config", cfg, "--texture", "2") == 0
    first = sha(tmp / "tex2_s7_0.png")
    assert run("synth", "--seed", "7", "--config", cfg, "--texture", "2") == 0
    assert sha(tmp / "tex2_s7_0.png") == first


def test_interpolate_endpoints_match_one_hot_synthesis(workspace):
    tmp, cfg = workspace
    assert run("train", "--seed", "3", "--config", cfg) == 0
    assert run("synth", "--seed", "4", "--config", cfg, "--texture", "1") == 0
    assert run("synth", "--seed", "4", "--config", cfg, "--texture", "2") == 0
    assert run(
        "interpolate", "--seed", "4", "--config", cfg,
        "--from", "1", "--to", "2", "--steps", "3",
    ) == 0
    assert sha(tmp / "interp1to2_s4_0.png") == sha(tmp / "tex1_s4_0.png")
    assert sha(tmp / "interp1to2_s4_2.png") == sha(tmp / "tex2_s4_0.png")
    middle = load_image(str(tmp / "interp1to2_s4_1.png"))
    assert middle.data.shape == (16, 16, 3)


def test_oracle_writes_image_and_trace(workspace):
    tmp, cfg = workspace
    target = str(tmp / "exemplar1.png")
    assert run(
        "oracle", "--seed", "1", "--config", cfg,
        "--target", target, "--steps", "3",
    ) == 0
    assert load_image(str(tmp / "oracle.png")).data.shape == (16, 16, 3)
    lines = (tmp / "oracle_trace.csv").read_text().strip().splitlines()
    assert lines[0] == "step,loss"
    assert len(lines) == 1 + 3 + 1  # header, init, one per step
    losses = [float(line.split(",")[1]) for line in lines[1:]]
    assert all(np.isfinite(losses))


def test_oracle_exemplar_init_stays_put(workspace):
    tmp, cfg = workspace
    target = str(tmp / "exemplar1.png")
    assert run(
        "oracle", "--seed", "1", "--config", cfg,
        "--target", target, "--init", target, "--steps", "2",
    ) == 0
    out = load_image(str(tmp / "oracle.png"))
    assert np.array_equal(out.data, load_image(target).data)


def test_transfer_training_and_stylization(workspace):
    tmp, cfg = workspace
    assert run("train", "--seed", "2", "--config", cfg, "--transfer") == 0
    assert (tmp / "transfer.model").exists()
    content = str(tmp / "exemplar2.png")
    assert run(
        "transfer", "--seed", "2", "--config", cfg,
        "--content", content, "--style", "1",
    ) == 0
    assert load_image(str(tmp / "styled1_s2.png")).data.shape == (16, 16, 3)
    assert run(
        "transfer", "--seed", "2", "--config", cfg,
        "--content", content, "--mix", "1:0.5,2:0.5",
    ) == 0
    assert (tmp / "styledmix_s2.png").exists()


def test_gradcheck_command_passes(capsys):
    assert run("gradcheck", "--seed", "0", "--trials", "1") == 0
    out = capsys.readouterr().out
    assert "generator-to-loss composite" in out
    assert "FAIL" not in out


def test_defaults_output_is_valid_config(tmp_path, capsys):
    assert run("defaults") == 0
    text = capsys.readouterr().out
    from texsyn.config import default_config, parse_config

    assert parse_config(text).values == default_config().values


def test_exit_codes_for_user_errors(workspace, capsys):
    tmp, cfg = workspace
    # missing config file
    assert run("synth", "--seed", "1", "--config", str(tmp / "no.cfg"), "--texture", "1") == 1
    # unknown config key
    assert run("train", "--seed", "1", "--config", cfg, "--set", "train.oops=1") == 1
    # missing model file
    assert run("synth", "--seed", "1", "--config", cfg, "--texture", "1") == 1
    # texture id out of range
    assert run("train", "--seed", "1", "--config", cfg) == 0
    assert run("synth", "--seed", "1", "--config", cfg, "--texture", "9") == 1
    # malformed PNG
    bad = tmp / "bad.png"
    bad.write_bytes(b"not a png at all")
    assert run("oracle", "--seed", "1", "--config", cfg, "--target", str(bad)) == 1
    err = capsys.readouterr().err
    assert "error:" in err


def test_exit_code_for_missing_seed(workspace, capsys):
    _, cfg = workspace
    assert run("synth", "--config", cfg, "--texture", "1") == 1
    capsys.readouterr()


def test_no_partial_outputs_on_failure(workspace):
    tmp, cfg = workspace
    # training with a non-existent exemplar fails before writing anything
    assert run(
        "train", "--seed", "1", "--config", cfg,
        "--set", f"paths.exemplars={tmp}/ghost.png",
    ) == 1
    assert not (tmp / "synthesis.model").exists()
    assert not (tmp / "loss.csv").exists()
