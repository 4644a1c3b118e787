import csv

import pytest

from eeamc import config as cfgmod
from eeamc.arch import Variant, load_weights
from eeamc.cli import build_parser, main, resolve
from eeamc.config import ConfigParseError, ExperimentConfig, dump_config, load_config, parse_config
from eeamc.inference import read_inference_log
from eeamc.metrics import aggregate, read_config_comments, read_report_csv, read_sweep_csv


def test_empty_config_is_all_defaults():
    cfg = parse_config("")
    assert cfg == ExperimentConfig()
    assert cfg.gate.threshold == 0.35
    assert cfg.gate.sweep == (0.05, 0.35, 0.6)
    assert cfg.variant is Variant.V1
    assert cfg.train.epochs == 30 and cfg.train.batch_size == 128 and cfg.train.lr == 1e-3
    assert cfg.gen.samples_per_cell == 200


def test_parse_values_and_comments():
    cfg = parse_config("# a comment\n\ngen.samples_per_cell = 20  # trailing\narch.variant = V3\n"
                       "train.shuffle = false\ngate.sweep = 0.1, 0.2\ntrain.patience = none\n")
    assert cfg.gen.samples_per_cell == 20
    assert cfg.variant is Variant.V3
    assert cfg.train.shuffle is False
    assert cfg.gate.sweep == (0.1, 0.2)
    assert cfg.train.patience is None


@pytest.mark.parametrize("text,line", [
    ("gate.threshold = 0.2\narch.variant = v9\n", 2),
    ("nosuch.key = 1\n", 1),
    ("\n\ngen.bogus = 1\n", 3),
    ("train.epochs = 0\n", 1),
    ("train.epochs = many\n", 1),
    ("gate.threshold = -1\n", 1),
    ("just words\n", 1),
])
def test_bad_config_reports_line(text, line):
    with pytest.raises(ConfigParseError) as e:
        parse_config(text)
    assert e.value.line == line
    assert f"line {line}" in str(e.value)


def test_dump_parses_back(tmp_path):
    cfg = parse_config("arch.variant = v2\ngen.seed = 9\ngate.sweep = 0.1,0.9\n")
    (tmp_path / "c.cfg").write_text(dump_config(cfg))
    assert load_config(tmp_path / "c.cfg") == cfg


def test_flags_override_config(tmp_path):
    (tmp_path / "c.cfg").write_text("gate.threshold = 0.5\narch.variant = v0\ngen.seed = 1\n")
    args = build_parser().parse_args(["eval", "--config", str(tmp_path / "c.cfg"), "--threshold", "0.2",
                                      "--seed", "7"])
    cfg = resolve(args)
    assert cfg.gate.threshold == 0.2
    assert cfg.variant is Variant.V0
    assert cfg.gen.seed == cfg.arch.seed == cfg.train.seed == 7


def test_sweep_flag_list():
    cfg = resolve(build_parser().parse_args(["sweep", "--thresholds", "0.1,0.5"]))
    assert cfg.gate.sweep == (0.1, 0.5)


# --- end to end ------------------------------------------------------------------------

def _write_cfg(path, out):
    path.write_text(f"gen.samples_per_cell = 20\ngen.seed = 3\narch.variant = v3\ntrain.epochs = 1\n"
                    f"paths.dataset = {out}/data.amcd\npaths.checkpoint = {out}/model.eewt\npaths.out = {out}\n")
    return path


def _run_pipeline(tmp_path, name):
    out = tmp_path / name
    out.mkdir()
    cfg = str(_write_cfg(out / "exp.cfg", out))
    for cmd in ("generate", "train", "eval", "sweep", "report"):
        assert main([cmd, "--config", cfg, "-q"]) == 0, cmd
    return out


@pytest.fixture(scope="module")
def pipelines(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    return _run_pipeline(tmp, "a"), _run_pipeline(tmp, "b")


def _data_rows(path, drop=("latency_ns", "mean_latency_ns", "median_latency_ns")):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(line for line in f if not line.startswith("#")))
    return [{k: v for k, v in r.items() if k not in drop} for r in rows]


def test_pipeline_outputs(pipelines):
    out = pipelines[0]
    for name in ("data.amcd", "data.amcd.config", "model.eewt", "model.eewt.txt", "history.csv",
                 "inference_log.csv", "report.csv", "confusion.csv", "sweep.csv"):
        assert (out / name).exists(), name
    assert load_weights(out / "model.eewt").variant is Variant.V3
    assert len(read_report_csv(out / "report.csv")) == 21
    assert sorted(read_sweep_csv(out / "sweep.csv")) == [0.05, 0.35, 0.6]
    meta = (out / "model.eewt.txt").read_text()
    assert "final.test_acc_exit" in meta and "arch.variant = v3" in meta
    prov = read_config_comments(out / "report.csv")
    assert prov["arch.variant"] == "v3" and prov["gate.threshold"] == "0.35"
    assert len(_data_rows(out / "inference_log.csv")) == 420


def test_pipeline_is_deterministic(pipelines):
    a, b = pipelines
    assert (a / "data.amcd").read_bytes() == (b / "data.amcd").read_bytes()
    assert (a / "model.eewt").read_bytes() == (b / "model.eewt").read_bytes()
    for name in ("inference_log.csv", "report.csv", "sweep.csv", "confusion.csv"):
        assert _data_rows(a / name) == _data_rows(b / name), name
    assert _data_rows(a / "history.csv", ("seconds",)) == _data_rows(b / "history.csv", ("seconds",))


def test_report_reaggregates_log(pipelines):
    out = pipelines[0]
    rows = read_report_csv(out / "report.csv")
    expected = aggregate(read_inference_log(out / "inference_log.csv")).rows
    assert [(r.snr_db, r.exit_correct, r.exit_incorrect, r.full_correct, r.full_incorrect) for r in rows] == \
           [(r.snr_db, r.exit_correct, r.exit_incorrect, r.full_correct, r.full_incorrect) for r in expected]
    assert sum(r.n for r in rows) == 420


def test_missing_dataset_exit_code(tmp_path, capsys):
    code = main(["train", "--dataset", str(tmp_path / "nope.amcd"), "--out", str(tmp_path), "-q"])
    assert code == 3
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error code=3 kind=missing_dataset message=")


def test_missing_checkpoint_exit_code(pipelines, tmp_path, capsys):
    code = main(["eval", "--dataset", str(pipelines[0] / "data.amcd"), "--checkpoint", str(tmp_path / "x.eewt"),
                 "--out", str(tmp_path), "-q"])
    assert code == 4
    assert "kind=missing_checkpoint" in capsys.readouterr().err


def test_bad_config_exit_code(tmp_path, capsys):
    (tmp_path / "bad.cfg").write_text("arch.variant = v9\n")
    assert main(["generate", "--config", str(tmp_path / "bad.cfg"), "-q"]) == 2
    assert "line 1" in capsys.readouterr().err


def test_corrupt_dataset_exit_code_and_cleanup(tmp_path, capsys):
    (tmp_path / "bad.amcd").write_bytes(b"AMCQ" + bytes(12))
    code = main(["eval", "--dataset", str(tmp_path / "bad.amcd"), "--checkpoint", str(tmp_path / "bad.amcd"),
                 "--out", str(tmp_path / "o"), "-q"])
    assert code == 5
    assert "kind=format" in capsys.readouterr().err
    assert not (tmp_path / "o" / "report.csv").exists()


def test_sweep_needs_exit_checkpoint(pipelines, tmp_path, capsys):
    out = pipelines[0]
    main(["train", "--config", str(out / "exp.cfg"), "--variant", "baseline",
          "--checkpoint", str(tmp_path / "base.eewt"), "--out", str(tmp_path), "-q"])
    code = main(["sweep", "--config", str(out / "exp.cfg"), "--checkpoint", str(tmp_path / "base.eewt"),
                 "--out", str(tmp_path), "-q"])
    assert code == 2
    assert not (tmp_path / "sweep.csv").exists()


def test_resolved_items_cover_every_section():
    keys = cfgmod.resolved_items(ExperimentConfig())
    assert {k.split(".")[0] for k in keys} == {"gen", "arch", "train", "gate", "paths"}
