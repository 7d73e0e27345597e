import csv
import json
import statistics

import pytest

from dtmssl import cli
from dtmssl.dtm import read_threshold_csv
from dtmssl.errors import ConfigError, ValidationError
from dtmssl.experiment import (
    EPOCH_COLUMNS,
    ExperimentConfig,
    compare_variants,
    read_epoch_csv,
    run_experiment,
)
from dtmssl.metrics import MetricsReport
from dtmssl.postprocess import read_sequence_csv

TINY = dict(steps_per_epoch=15, epochs=2, n_unlabeled=300, heldout_runs_per_class=2, hidden=8, seeds=[0, 1])


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("runs")
    cfg = ExperimentConfig(**TINY, out_dir=str(out))
    return out, run_experiment(cfg)


def test_artifact_layout_and_schemas(tiny_run):
    out, summaries = tiny_run
    assert set(summaries) == {"baseline", "ssl_fixed_threshold", "ssl_dtm", "ssl_dtm_post"}
    run = out / "ssl_dtm" / "seed_0"
    with open(run / "epochs.csv", newline="") as fh:
        header = next(csv.reader(fh))
    assert header == EPOCH_COLUMNS + ["tau_0", "tau_1", "tau_2", "tau_3"]
    rows = read_epoch_csv(run / "epochs.csv")
    assert [r["epoch"] for r in rows] == [1.0, 2.0]
    taus = read_threshold_csv(run / "thresholds.csv")
    assert taus.shape == (3, 4)
    assert taus[-1].tolist() == [rows[-1][f"tau_{c}"] for c in range(4)]
    report = MetricsReport.from_json((run / "metrics.json").read_text())
    assert len(report.per_class_f1) == 4
    labels, segs = read_sequence_csv(run / "predictions.csv")
    assert labels.size == segs.size > 0
    assert (out / "comparison.csv").is_file() and (out / "comparison.txt").is_file()


def test_summary_is_mean_of_per_seed_json(tiny_run):
    out, summaries = tiny_run
    for variant, summary in summaries.items():
        per_seed = [json.loads((out / variant / f"seed_{s}" / "metrics.json").read_text())["macro_f1"] for s in (0, 1)]
        on_disk = json.loads((out / variant / "summary.json").read_text())
        assert on_disk["macro_f1_mean"] == pytest.approx(sum(per_seed) / 2, abs=1e-12)
        assert on_disk["macro_f1_std"] == pytest.approx(statistics.stdev(per_seed), abs=1e-12)


def test_baseline_never_trains_on_pseudo_labels(tiny_run):
    out, _ = tiny_run
    for row in read_epoch_csv(out / "baseline" / "seed_0" / "epochs.csv"):
        assert row["loss_unlabeled"] == 0.0
        assert row["accepted_fraction"] == 0.0


def test_post_variant_shares_training_with_dtm(tiny_run):
    out, _ = tiny_run
    dtm_rows = read_epoch_csv(out / "ssl_dtm" / "seed_0" / "epochs.csv")
    post_rows = read_epoch_csv(out / "ssl_dtm_post" / "seed_0" / "epochs.csv")
    for a, b in zip(dtm_rows, post_rows):
        assert a["loss_total"] == b["loss_total"]
        assert a["tau_0"] == b["tau_0"]


def test_compare_variants(tiny_run):
    out, _ = tiny_run
    rows = compare_variants([out / "baseline", out / "ssl_dtm"])
    assert rows[0]["delta_vs_baseline"] == 0.0
    assert abs(rows[1]["delta_vs_baseline"] - (rows[1]["macro_f1_mean"] - rows[0]["macro_f1_mean"])) <= 1e-12

    single = compare_variants([out / "ssl_dtm"])
    assert len(single) == 1 and single[0]["delta_vs_baseline"] == 0.0

    twice = compare_variants([out / "ssl_dtm", out / "ssl_dtm"])
    assert twice[0]["macro_f1_mean"] == twice[1]["macro_f1_mean"]

    with pytest.raises(ValidationError):
        compare_variants([out / "nope"])


def test_rerun_is_byte_identical(tiny_run, tmp_path):
    out, _ = tiny_run
    run_experiment(ExperimentConfig(**TINY, out_dir=str(tmp_path)))
    files = sorted(p.relative_to(out) for p in out.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(tmp_path) for p in tmp_path.rglob("*") if p.is_file())
    for rel in files:
        assert (out / rel).read_bytes() == (tmp_path / rel).read_bytes(), rel


class TestConfig:
    def test_empty_config_is_default_benchmark(self):
        cfg = ExperimentConfig.from_dict({})
        assert cfg.class_counts == [50, 30, 15, 5] and cfg.d == 16 and cfg.n_unlabeled == 5000
        assert cfg.epochs == 15 and cfg.steps_per_epoch == 200
        assert (cfg.lambda1, cfg.lambda2, cfg.mu, cfg.ema_decay) == (1.0, 0.8, 0.9, 0.999)
        assert cfg.window == 10 and cfg.fixed_threshold == 0.95

    @pytest.mark.parametrize("data", [{"variant": "nope"}, {"seeds": []}, {"bogus": 1}, {"mu": 2.0},
                                      {"class_counts": [4, 0]}, {"weak_noise_sigma": 2.0}])
    def test_invalid(self, data):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(data)

    def test_variant_mapping(self):
        cfg = ExperimentConfig()
        base = cfg.train_config("baseline", 0)
        assert base.lambda2 == 0.0 and not base.use_unlabeled
        assert cfg.train_config("ssl_fixed_threshold", 0).threshold_mode == "fixed"
        assert cfg.train_config("ssl_dtm", 0).smoothing_window == 0
        assert cfg.train_config("ssl_dtm_post", 0).smoothing_window == 10


class TestCli:
    def test_run_with_flag_overrides(self, tmp_path, capsys):
        config = tmp_path / "cfg.json"
        config.write_text(json.dumps({k: v for k, v in TINY.items() if k != "seeds"} | {"epochs": 5}))
        code = cli.main(["run", "--config", str(config), "--seed", "3", "--variant", "ssl_dtm",
                         "--out", str(tmp_path / "o"), "--epochs", "1"])
        assert code == 0
        assert "ssl_dtm" in capsys.readouterr().out
        rows = read_epoch_csv(tmp_path / "o" / "ssl_dtm" / "seed_3" / "epochs.csv")
        assert len(rows) == 1
        assert not (tmp_path / "o" / "baseline").exists()

    def test_config_error_exit_code(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"variant": "nope"}')
        assert cli.main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
        assert cli.main(["run", "--config", str(tmp_path / "missing.json")]) == 1
        (tmp_path / "broken.json").write_text("{not json")
        assert cli.main(["run", "--config", str(tmp_path / "broken.json")]) == 1

    def test_unwritable_output(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        assert cli.main(["run", "--out", str(blocker / "sub"), "--epochs", "0"]) == 1

    def test_compare_missing_artifacts(self, tmp_path):
        assert cli.main(["compare", str(tmp_path / "none")]) == 2

    def test_compare_writes_table(self, tiny_run, tmp_path, capsys):
        out, _ = tiny_run
        assert cli.main(["compare", str(out / "baseline"), str(out / "ssl_dtm"), "--out", str(tmp_path)]) == 0
        assert "baseline" in capsys.readouterr().out
        with open(tmp_path / "comparison.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["variant"] for r in rows] == ["baseline", "ssl_dtm"]

    def test_smooth_command(self, tmp_path):
        src = tmp_path / "in.csv"
        src.write_text("segment_id,frame_index,label\n0,0,1\n0,1,1\n0,2,2\n1,0,0\n")
        assert cli.main(["smooth", str(src), str(tmp_path / "out.csv"), "--window", "3"]) == 0
        assert (tmp_path / "out.csv").read_text().splitlines()[1:] == ["0,0,1", "0,1,1", "0,2,1", "1,0,0"]
        assert cli.main(["smooth", str(tmp_path / "absent.csv"), str(tmp_path / "x.csv")]) == 1

    def test_generate_command(self, tmp_path):
        config = tmp_path / "cfg.json"
        config.write_text(json.dumps({"n_unlabeled": 20, "heldout_runs_per_class": 1}))
        assert cli.main(["generate", "--config", str(config), "--out", str(tmp_path / "data")]) == 0
        lines = (tmp_path / "data" / "labeled.csv").read_text().splitlines()
        assert lines[0].endswith(",label") and len(lines) == 1 + 100
        assert not (tmp_path / "data" / "unlabeled.csv").read_text().splitlines()[0].endswith("label")
