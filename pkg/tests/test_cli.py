import csv
import json

import pytest

from upliftkit.cli import main
from upliftkit.pipeline import RunConfig, canonical_report

SMALL = ["--n", "12000", "--num-trees", "20", "--max-leaves", "7", "--min-samples-leaf", "50",
         "--cf-replicates", "20", "--cf-num-trees", "3", "--cf-fraction", "0.5", "--shap-rows", "200"]


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    d = tmp_path_factory.mktemp("train")
    assert main(["train", "--preset", "F8DOM", *SMALL, "--output-dir", str(d)]) == 0
    return d


def test_synth_gen(tmp_path):
    out = tmp_path / "data.csv"
    assert main(["synth-gen", "--preset", "LINEAR", "--n", "500", "--seed", "3", "--out", str(out)]) == 0
    rows = _rows(out)
    assert len(rows) == 500
    assert set(rows[0]) >= {f"f{i}" for i in range(12)} | {"treatment", "visit"}
    truth = _rows(tmp_path / "data_truth.csv")
    assert len(truth) == 500 and list(truth[0]) == ["tau", "p0", "p1"]


def test_train_outputs(trained):
    names = {p.name for p in trained.iterdir()}
    assert {"models", "propensity.json", "split.json", "resolved_config.txt", "intervals_cf.csv"} <= names
    assert {f"cate_{m}.csv" for m in ("S", "T", "X", "CF")} <= names
    assert not any(n.startswith(".partial") for n in names)
    assert {p.name for p in (trained / "models").iterdir()} == {"S.json", "T.json", "X.json", "CF.json"}
    cfg = RunConfig.read(trained / "resolved_config.txt")
    assert cfg.n == 12000 and cfg.preset == "F8DOM"


def test_evaluate(trained, tmp_path, capsys):
    cates = [str(trained / f"cate_{m}.csv") for m in ("S", "T")]
    args = ["evaluate", "--preset", "F8DOM", "--n", "12000", "--output-dir", str(tmp_path)]
    for c in cates:
        args += ["--cate", c]
    assert main(args) == 0
    res = json.loads((tmp_path / "evaluation.json").read_text())
    assert set(res) == {"S", "T"}
    assert set(res["S"]) == {"qini", "capture_at_0.2", "capture_at_0.5", "cate_mean", "cate_std"}
    gain = _rows(tmp_path / "gain_S.csv")
    assert len(gain) == 101 and float(gain[0]["gain"]) == 0 and float(gain[-1]["gain"]) == 1


def test_simulate_policy(tmp_path, capsys):
    gain = tmp_path / "gain.csv"
    lines = ["phi,gain"] + [f"{i / 100!r},{(0.777 if i == 20 else i / 100)!r}" for i in range(101)]
    gain.write_text("\n".join(lines) + "\n")
    out = tmp_path / "policy.json"
    assert main(["simulate-policy", "--gain", str(gain), "--population", "1000000",
                 "--fractions", "0.2", "--label", "S-Learner", "--out", str(out)]) == 0
    rows = json.loads(out.read_text())["rows"]
    top = rows[1]
    assert top["contacts"] == 200_000 and top["efficiency"] == 3.885 and top["efficiency_label"] == "3.9x"
    assert rows[0]["efficiency"] == 1.0 and rows[2]["efficiency_label"] == "1.0x"


def test_segment(trained, tmp_path):
    out = tmp_path / "seg.json"
    assert main(["segment", "--intervals", str(trained / "intervals_cf.csv"), "--out", str(out)]) == 0
    counts = json.loads(out.read_text())["counts"]
    assert sum(counts.values()) == len(_rows(trained / "intervals_cf.csv"))


def test_attribute(trained, capsys):
    assert main(["attribute", "--run-dir", str(trained), "--rows", "150"]) == 0
    summary = _rows(trained / "shap_summary.csv")
    assert len(summary) == 13
    assert len(_rows(trained / "shap_beeswarm.csv")) == 150 * 13


def test_attribute_requires_train_dir(tmp_path):
    assert main(["attribute", "--run-dir", str(tmp_path)]) == 2


def _run(out, *extra):
    return main(["run", "--preset", "F8DOM", *SMALL, "--output-dir", str(out), *extra])


OUTPUTS = ("report.json", "cate_S.csv", "gain_X.csv", "intervals_cf.csv", "shap_summary.csv", "shap_beeswarm.csv")


def test_run_is_deterministic(tmp_path):
    out = tmp_path / "out"
    assert _run(out) == 0
    first = {name: (out / name).read_bytes() for name in OUTPUTS}
    assert _run(out) == 0
    ra, rb = json.loads(first["report.json"]), json.loads((out / "report.json").read_text())
    assert "timings" in ra
    assert canonical_report(ra) == canonical_report(rb)
    assert set(ra["models"]) == {"S", "T", "X", "CF"}
    for name in OUTPUTS[1:]:
        assert first[name] == (out / name).read_bytes(), name


def _has_null(obj):
    if obj is None:
        return True
    if isinstance(obj, dict):
        return any(_has_null(v) for v in obj.values())
    if isinstance(obj, list):
        return any(_has_null(v) for v in obj)
    return False


def test_run_report_has_no_nulls(tmp_path):
    assert _run(tmp_path, "--models", "S,T") == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert set(report["models"]) == {"S", "T"}
    assert "segmentation" not in report and not _has_null(report)
    assert not (tmp_path / "intervals_cf.csv").exists()


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("preset = F8DOM\nn = 12000  # small\nmodels = S\nnum_trees = 5\noutput_dir = %s\n" % (tmp_path / "o"))
    assert main(["run", "--config", str(cfg), "--num-trees", "6"]) == 0
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert report["gbdt_params"]["num_trees"] == 6
    assert report["config"]["models"] == "S"


@pytest.mark.parametrize("args,code", [
    (["run", "--preset", "F8DOM", "--test-fraction", "0"], 2),
    (["run", "--preset", "F8DOM", "--models", "Q"], 2),
    (["run", "--preset", "F8DOM", "--n", "many"], 2),
    (["run", "--preset", "F8DOM", "--data", "x.csv"], 2),
    (["run", "--data", "/nonexistent/file.csv"], 3),
    (["run", "--preset", "NOPE", "--n", "1000"], 2),
    (["run", "--preset", "F8DOM", "--n", "3000", "--models", "T", "--min-samples-leaf", "100000"], 4),
])
def test_exit_codes(tmp_path, args, code):
    out = tmp_path / "out"
    assert main([*args, "--output-dir", str(out)]) == code
    assert not (out / "report.json").exists()
    assert not out.exists() or not any(p.name.startswith(".partial") for p in out.iterdir())


def test_argparse_errors_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 2


@pytest.mark.slow
def test_full_scale_run(tmp_path):
    assert main(["run", "--preset", "F8DOM", "--n", "200000", "--output-dir", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert sorted(report["models"]) == ["CF", "S", "T", "X"]
    assert all("qini" in m for m in report["models"].values())
    assert report["attribution"]["ranking"][0]["feature"] == "f8"
