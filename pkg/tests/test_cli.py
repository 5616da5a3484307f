"""End-to-end command tests through main(argv); no subprocesses."""

import json

import pytest

from pairmask.cli import main, parse_config_overrides
from pairmask.synthgen import load_dataset

SMALL_MODEL = [
    "--config", "dim=16",
    "--config", "heads=2",
    "--config", "encoder_depth=1",
    "--config", "decoder_depth=1",
    "--config", "text_decoder_depth=1",
    "--config", "sr_channels=2",
]


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    rc = main(["synth", "--out", str(out), "--n", "16", "--seed", "0", "--p-positive", "0.3"])
    assert rc == 0
    return out


def test_synth_writes_loadable_corpus(corpus_dir):
    samples = load_dataset(corpus_dir)
    assert len(samples) == 16
    assert samples[0].image.shape == (64, 64)


def test_synth_rejects_bad_canvas(tmp_path, capsys):
    rc = main(["synth", "--out", str(tmp_path / "x"), "--n", "2", "--canvas", "13"])
    assert rc == 1
    assert "canvas" in capsys.readouterr().err


def test_stats_reports_imbalance(corpus_dir, capsys):
    rc = main(["stats", "--data", str(corpus_dir)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "imbalance ratio:" in out
    assert "lambda_oth:" in out


def test_distill_rule_based_aligned(corpus_dir, tmp_path):
    out = tmp_path / "distilled.jsonl"
    rc = main(["distill", "--data", str(corpus_dir), "--out", str(out)])
    assert rc == 0
    rows = [json.loads(line) for line in out.read_text().splitlines()]
    assert len(rows) == 16
    assert all(row["provenance"] == "rule_based" for row in rows)
    sample_ids = {s.id for s in load_dataset(corpus_dir)}
    assert {row["id"] for row in rows} == sample_ids


def test_pretrain_writes_metrics_and_checkpoint(corpus_dir, tmp_path, capsys):
    metrics = tmp_path / "metrics.jsonl"
    ckpt = tmp_path / "ckpt"
    rc = main([
        "pretrain", "--data", str(corpus_dir),
        "--steps", "2", "--batch-size", "2", "--log-every", "0",
        "--metrics", str(metrics), "--ckpt-dir", str(ckpt),
        *SMALL_MODEL,
    ])
    assert rc == 0
    rows = [json.loads(line) for line in metrics.read_text().splitlines()]
    assert [r["step"] for r in rows] == [0, 1]
    assert (ckpt / "manifest.tsv").exists()
    assert (ckpt / "params.bin").exists()
    assert (ckpt / "config.txt").exists()
    out = capsys.readouterr().out
    assert "final step 1" in out


def test_pretrain_resume_continues(corpus_dir, tmp_path, capsys):
    ckpt = tmp_path / "ckpt"
    rc = main([
        "pretrain", "--data", str(corpus_dir),
        "--steps", "2", "--batch-size", "2", "--log-every", "0",
        "--ckpt-dir", str(ckpt), *SMALL_MODEL,
    ])
    assert rc == 0
    capsys.readouterr()
    rc = main([
        "pretrain", "--data", str(corpus_dir),
        "--steps", "4", "--batch-size", "2", "--log-every", "0",
        "--resume", str(ckpt), "--ckpt-dir", str(ckpt),
    ])
    assert rc == 0
    out = capsys.readouterr().out
    assert "resumed" in out and "at step 2" in out
    assert "final step 3" in out


def test_pretrain_resume_rejects_config_overrides(corpus_dir, tmp_path, capsys):
    rc = main([
        "pretrain", "--data", str(corpus_dir), "--steps", "1",
        "--resume", str(tmp_path / "nowhere"), "--config", "dim=8",
    ])
    assert rc == 1
    assert "--resume" in capsys.readouterr().err


def test_pretrain_uses_distilled_file(corpus_dir, tmp_path):
    distilled = tmp_path / "d.jsonl"
    assert main(["distill", "--data", str(corpus_dir), "--out", str(distilled)]) == 0
    rc = main([
        "pretrain", "--data", str(corpus_dir),
        "--steps", "1", "--batch-size", "2", "--log-every", "0",
        "--distilled", str(distilled), *SMALL_MODEL,
    ])
    assert rc == 0


def test_pretrain_ablation_flags(corpus_dir):
    rc = main([
        "pretrain", "--data", str(corpus_dir),
        "--steps", "1", "--batch-size", "2", "--log-every", "0",
        "--no-sr", "--no-rebalance", "--no-descriptor-mask", "--no-distill",
        *SMALL_MODEL,
    ])
    assert rc == 0


def test_pretrain_rejects_unknown_config_key(corpus_dir, capsys):
    rc = main([
        "pretrain", "--data", str(corpus_dir), "--steps", "1",
        "--config", "window=7",
    ])
    assert rc == 1
    assert "unknown model config key" in capsys.readouterr().err


def test_pretrain_rejects_small_vocab_override(corpus_dir, capsys):
    rc = main([
        "pretrain", "--data", str(corpus_dir), "--steps", "1",
        "--config", "vocab_size=4",
    ])
    assert rc == 1
    assert "too small" in capsys.readouterr().err


def test_probe_runs_with_baseline(corpus_dir, tmp_path, capsys):
    ckpt = tmp_path / "ckpt"
    assert main([
        "pretrain", "--data", str(corpus_dir),
        "--steps", "1", "--batch-size", "2", "--log-every", "0",
        "--ckpt-dir", str(ckpt), *SMALL_MODEL,
    ]) == 0
    capsys.readouterr()
    rc = main(["probe", "--data", str(corpus_dir), "--ckpt", str(ckpt), "--baseline"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "macro accuracy" in out
    assert "random-init macro accuracy" in out
    assert "delta:" in out


def test_gradcheck_passes(capsys):
    rc = main(["gradcheck"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out
    assert "conv2d" in out


def test_missing_subcommand_exits_2():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2


def test_distill_help_documents_credential_env(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["distill", "--help"])
    assert exc.value.code == 0
    assert "DISTILL_API_KEY" in capsys.readouterr().out


def test_config_override_parser_types():
    model_cfg, opt_cfg = {}, {}
    parse_config_overrides(["dim=32", "opt.lr=0.001", "patch_mask_ratio=0.5"], model_cfg, opt_cfg)
    assert model_cfg == {"dim": 32, "patch_mask_ratio": 0.5}
    assert opt_cfg == {"lr": 0.001}
    with pytest.raises(ValueError):
        parse_config_overrides(["dim"], {}, {})
    with pytest.raises(ValueError):
        parse_config_overrides(["opt.momentum=0.9"], {}, {})
    with pytest.raises(ValueError):
        parse_config_overrides(["dim=abc"], {}, {})
