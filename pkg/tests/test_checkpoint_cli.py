"""Checkpoint format, deterministic training, benchmarking and the command line."""

import itertools
import os
import subprocess
import sys

import numpy as np
import pytest

from depthcrf.bench import CSV_HEADER as BENCH_HEADER
from depthcrf.bench import run_bench
from depthcrf.checkpoint import (
    MAGIC,
    Checkpoint,
    from_bytes,
    from_training,
    load_checkpoint,
    restore_model,
    save_checkpoint,
    to_bytes,
)
from depthcrf.cli import main
from depthcrf.config import ModelConfig, format_config, parse_config
from depthcrf.data import load_pfm, load_pgm, render_all, save_ppm, specs_from_config
from depthcrf.errors import ConfigError, FormatError, NumericError
from depthcrf.losses import MetricReport
from depthcrf.model import DepthModel
from depthcrf.optim import Adam, linear_lr
from depthcrf.tensor import Tensor
from depthcrf.train import LOG_HEADER, train

TINY = dict(
    window_size=4, embed_dim=8, decoder_widths=(16, 8, 8, 8), decoder_heads=(2, 2, 2, 2),
    image_size=32, eval_size=32, num_samples=4, eval_samples=1, batch_size=2, epochs=2,
    lr_start=1e-3, lr_end=1e-4,
)


def tiny(**kw):
    return ModelConfig(**{**TINY, **kw})


def write_cfg(tmp_path, **kw):
    path = tmp_path / "tiny.cfg"
    path.write_text(format_config(tiny(**kw)))
    return str(path)


class TestConfig:
    def test_text_roundtrip(self):
        cfg = tiny(hpf_scales=(1, 3), flip=True)
        assert parse_config(format_config(cfg)) == cfg

    def test_paper_defaults(self):
        cfg = ModelConfig()
        assert (cfg.window_size, cfg.hpf_scales, cfg.batch_size) == (7, (1, 2, 3), 4)
        assert (cfg.silog_lambda, cfg.silog_alpha, cfg.lr_start, cfg.lr_end) == (0.85, 10.0, 2e-5, 1e-5)

    @pytest.mark.parametrize(
        "text", ["colour = red", "window_size = 4\nwindow_size = 5", "window_size = four", "hpf_scales = 2,1", "no equals sign"]
    )
    def test_rejects_bad_text(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_comments_and_blanks(self):
        assert parse_config("# header\n\nwindow_size = 4  # small\n").window_size == 4


class TestOptimizer:
    def test_schedule_endpoints(self):
        assert linear_lr(0, 10, 2e-5, 1e-5) == 2e-5
        assert linear_lr(9, 10, 2e-5, 1e-5) == pytest.approx(1e-5)
        assert linear_lr(0, 1, 3.0, 1.0) == 3.0

    def test_adam_first_step_is_lr_sized(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        p.grad = np.array([0.3, -5.0])
        opt = Adam({"p": p})
        assert (opt.beta1, opt.beta2, opt.eps) == (0.9, 0.999, 1e-8)
        opt.step(0.1)
        np.testing.assert_allclose(p.data, [0.9, -1.9], rtol=1e-6)


class TestCheckpoint:
    def test_byte_identical_roundtrip(self, tmp_path):
        model = DepthModel(tiny())
        blob = to_bytes(from_training(model, 17, Adam(model.named_parameters())))
        assert blob.startswith(MAGIC)
        assert to_bytes(from_bytes(blob)) == blob
        save_checkpoint(tmp_path / "a.ckpt", from_bytes(blob))
        assert (tmp_path / "a.ckpt").read_bytes() == blob

    def test_every_parameter_once(self):
        model = DepthModel(tiny())
        ckpt = from_bytes(to_bytes(from_training(model, 0)))
        names = [n for n, _ in model.named_parameters()]
        assert sorted(ckpt.params()) == sorted(names) and len(set(names)) == len(names)
        assert ckpt.optimizer_state() is None
        assert all(a.dtype == np.dtype("<f4") for a in ckpt.arrays.values())

    def test_restore_reproduces_outputs(self):
        model = DepthModel(tiny(seed=3))
        restored = restore_model(from_bytes(to_bytes(from_training(model, 0))))
        img = np.random.default_rng(0).uniform(0, 1, (1, 3, 32, 32))
        np.testing.assert_array_equal(model(img).data, restored(img).data)
        assert restored.cfg == model.cfg

    @pytest.mark.parametrize("cut", [4, 12, 30, -3])
    def test_truncation(self, cut):
        blob = to_bytes(from_training(DepthModel(tiny()), 0))
        with pytest.raises(FormatError) as info:
            from_bytes(blob[:cut])
        assert info.value.offset is not None

    def test_bad_magic_and_version(self):
        blob = to_bytes(from_training(DepthModel(tiny()), 0))
        with pytest.raises(FormatError, match="magic"):
            from_bytes(b"X" + blob[1:])
        with pytest.raises(FormatError, match="version"):
            from_bytes(blob[:8] + b"\x09" + blob[9:])

    def test_mismatched_weights(self):
        ckpt = from_training(DepthModel(tiny()), 0)
        ckpt.arrays.pop(next(iter(ckpt.arrays)))
        with pytest.raises(FormatError):
            restore_model(from_bytes(to_bytes(ckpt)))
        ckpt = Checkpoint(format_config(tiny()), 0, {"param/encoder.patch.weight": np.zeros((1, 1), np.float32)})
        with pytest.raises(FormatError):
            restore_model(ckpt)


class TestTraining:
    def test_deterministic_runs(self, tmp_path):
        cfg = tiny()
        train(cfg, out_dir=tmp_path / "a")
        train(cfg, out_dir=tmp_path / "b")
        for name in ("model.ckpt", "train_log.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        lines = (tmp_path / "a" / "train_log.csv").read_text().splitlines()
        assert lines[0] == LOG_HEADER and len(lines) == 3

    def test_resume_matches_uninterrupted(self, tmp_path):
        cfg = tiny(epochs=3, flip=True)
        full = train(cfg, out_dir=tmp_path / "full", checkpoint_every=3)
        resumed = train(cfg, resume=load_checkpoint(tmp_path / "full" / "step3.ckpt"))
        assert resumed.losses[0] == full.losses[3]
        assert resumed.losses == full.losses[3:]
        assert to_bytes(from_training(resumed.model, resumed.step, resumed.optimizer)) == (
            tmp_path / "full" / "model.ckpt"
        ).read_bytes()

    def test_tau_clamped_each_step(self):
        result = train(tiny(lr_start=0.5, lr_end=0.5, epochs=1, eval_samples=0))
        for layer in result.model.decoder.attention_layers():
            assert layer.tau.item() >= 0.01

    @pytest.mark.parametrize("hp,ha,fc", list(itertools.product([False, True], repeat=3)))
    def test_ablation_combinations_train(self, hp, ha, fc):
        result = train(tiny(hp_enabled=hp, ha_enabled=ha, fc_enabled=fc, epochs=1, eval_samples=0))
        assert result.step == 2 and all(np.isfinite(result.losses))

    def test_epoch_averages_decrease(self):
        cfg = tiny(num_samples=8, batch_size=8, epochs=200, eval_samples=0, lr_start=3e-4, lr_end=3e-5)
        result = train(cfg)
        averages = [r.loss for r in result.epochs]
        assert result.step == 200 and len(averages) == 200
        assert all(b < a for a, b in zip(averages, averages[1:]))


class TestBench:
    def test_ratios(self):
        rows = run_bench(tiny(), (64, 128, 256))
        for row in rows[1:]:
            assert abs(row.window_ratio - 4.0) <= 0.2
            assert row.dense_ratio == 16.0
        assert rows[0].params < 194e6
        assert all(r.window_macs < r.dense_macs for r in rows[1:])


def run_cli(*argv):
    return main([str(a) for a in argv])


class TestCli:
    def test_train_infer_eval(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path)
        run = tmp_path / "run"
        assert run_cli("train", "--config", cfg, "--out", run) == 0
        out = capsys.readouterr().out
        assert "step=4" in out
        for name in ("model.ckpt", "train_log.csv", "config.txt", "loss.png"):
            assert (run / name).exists()

        rgb = np.random.default_rng(0).uniform(0, 1, (3, 64, 32))
        save_ppm(tmp_path / "img.ppm", rgb)
        for name in ("a.pfm", "b.pfm"):
            assert run_cli("infer", run / "model.ckpt", tmp_path / "img.ppm", tmp_path / name) == 0
        depth = load_pfm(tmp_path / "a.pfm")
        assert depth.shape == (64, 32)
        assert (depth > 0).all() and (depth < 10.0).all()
        np.testing.assert_array_equal(depth, load_pfm(tmp_path / "b.pfm"))
        assert load_pgm(tmp_path / "a.pgm").shape == (64, 32)

        assert run_cli("eval", run / "model.ckpt", "--out", tmp_path / "ev") == 0
        text = (tmp_path / "ev" / "metrics.txt").read_text()
        report = MetricReport.from_text(text)
        assert 0 <= report.d1 <= report.d2 <= report.d3 <= 1
        assert (tmp_path / "ev" / "depth.png").exists()

    def test_resume_from_cli(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path)
        assert run_cli("train", "--config", cfg, "--out", tmp_path / "a", "--checkpoint-every", "2", "--quiet") == 0
        assert run_cli("train", "--resume", tmp_path / "a" / "step2.ckpt", "--out", tmp_path / "b", "--quiet") == 0
        assert (tmp_path / "a" / "model.ckpt").read_bytes() == (tmp_path / "b" / "model.ckpt").read_bytes()

    def test_infer_rejects_bad_size(self, tmp_path):
        save_checkpoint(tmp_path / "m.ckpt", from_training(DepthModel(tiny()), 0))
        save_ppm(tmp_path / "img.ppm", np.zeros((3, 40, 32)))
        assert run_cli("infer", tmp_path / "m.ckpt", tmp_path / "img.ppm", tmp_path / "o.pfm") == 1

    def test_oracle_eval(self, tmp_path, capsys):
        assert run_cli("gen-data", "--count", 2, "--size", 32, "--out", tmp_path / "data") == 0
        assert sorted(os.listdir(tmp_path / "data")) == [
            "manifest.txt", "scene0000.pfm", "scene0000.ppm", "scene0001.pfm", "scene0001.ppm"
        ]
        capsys.readouterr()
        assert run_cli("eval", "--oracle", tmp_path / "data" / "manifest.txt", "--out", tmp_path / "ev") == 0
        report = MetricReport.from_text(capsys.readouterr().out)
        assert report.d1 == 1.0 and report.abs_rel == 0.0 and report.k == 2 * 32 * 32
        header = (tmp_path / "ev" / "metrics.csv").read_text().splitlines()[0]
        assert header == "abs_rel,sq_rel,rmse,log_rmse,d1,d2,d3,k"

    def test_gradcheck_subset(self, tmp_path, capsys):
        assert run_cli("gradcheck", "--only", "identity", "add", "path:silog", "--out", tmp_path) == 0
        rows = (tmp_path / "gradcheck.csv").read_text().splitlines()
        assert len(rows) == 4

    def test_bench(self, tmp_path):
        cfg = write_cfg(tmp_path)
        assert run_cli("bench", "--config", cfg, "--sizes", 64, 128, "--out", tmp_path / "b") == 0
        lines = (tmp_path / "b" / "bench.csv").read_text().splitlines()
        assert lines[0] == BENCH_HEADER and len(lines) == 3
        assert (tmp_path / "b" / "bench.png").exists()

    @pytest.mark.parametrize(
        "argv,code",
        [
            (["train", "--config", "/nonexistent/cfg"], 2),
            (["no-such-command"], 1),
            (["eval"], 1),
            (["infer", "/nonexistent.ckpt", "x.ppm", "y.pfm"], 2),
        ],
    )
    def test_exit_codes(self, argv, code, tmp_path, capsys):
        assert run_cli(*argv, *(["--out", tmp_path] if argv[0] in ("train", "eval") else [])) == code

    def test_bad_config_value(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("window_size = 0\n")
        assert run_cli("train", "--config", bad, "--out", tmp_path) == 1

    def test_corrupt_checkpoint(self, tmp_path):
        (tmp_path / "m.ckpt").write_bytes(b"garbage")
        save_ppm(tmp_path / "img.ppm", np.zeros((3, 32, 32)))
        assert run_cli("infer", tmp_path / "m.ckpt", tmp_path / "img.ppm", tmp_path / "o.pfm") == 2

    def test_nonfinite_loss_dump(self, tmp_path):
        cfg = tiny(eval_samples=0)
        specs = specs_from_config(cfg)
        samples = render_all(specs)
        samples[2].depth[0, 5, 5] = np.inf
        with pytest.raises(NumericError, match="non-finite"):
            train(cfg, out_dir=tmp_path, samples=samples, specs=specs)
        dumps = [n for n in os.listdir(tmp_path) if n.startswith("nonfinite_step")]
        assert len(dumps) == 1
        assert f"sample 2 flipped=False {specs[2].to_line()}" in (tmp_path / dumps[0]).read_text()

    def test_nonfinite_loss_exit(self, tmp_path, monkeypatch, capsys):
        import depthcrf.train

        monkeypatch.setattr(depthcrf.train, "silog_loss", lambda *a: Tensor(np.array(np.nan)))
        assert run_cli("train", "--config", write_cfg(tmp_path), "--out", tmp_path / "r", "--quiet") == 3
        assert "non-finite" in capsys.readouterr().err

    def test_entry_point_and_verify_env(self, tmp_path):
        env = dict(os.environ, DEPTHCRF_VERIFY="1")
        proc = subprocess.run(
            [sys.executable, "-m", "depthcrf.cli", "gradcheck", "--only", "identity"],
            capture_output=True, text=True, env=env, timeout=120,
        )
        assert proc.returncode == 0, proc.stderr
        assert "identity" in proc.stdout
