import json

import pytest

from treeids.cli import main
from treeids.model_io import load_model, load_prepared
from treeids.synthetic import write_capture_files


@pytest.fixture(scope="module")
def capture_dir(tmp_path_factory):
    directory = tmp_path_factory.mktemp("captures")
    paths = write_capture_files(directory, n_frames=4000, seed=21)
    return directory, paths


@pytest.fixture(scope="module")
def prepared_can(capture_dir, tmp_path_factory):
    _, paths = capture_dir
    out = tmp_path_factory.mktemp("prep") / "can.npz"
    code = main([
        "prepare", "--profile", "can", "--out", str(out),
        paths["Normal"],
        f"{paths['DoS']}=DoS",
        f"{paths['Fuzzy']}=Fuzzy",
        f"{paths['RPM-spoofing']}=RPM-spoofing",
        f"{paths['Gear-spoofing']}=Gear-spoofing",
    ])
    assert code == 0
    return out


class TestPrepare:
    def test_prepared_file_contents(self, prepared_can):
        dataset, params, meta = load_prepared(prepared_can)
        assert dataset.n_features == 9
        assert meta["profile"] == "can"
        assert set(dataset.label_names.values()) == {
            "Normal", "DoS", "Fuzzy", "RPM-spoofing", "Gear-spoofing"}

    def test_missing_input_exits_2(self, tmp_path, capsys):
        code = main(["prepare", "--profile", "can", "--out", str(tmp_path / "x.npz"),
                     "/nonexistent/file.csv"])
        assert code == 2
        assert "error" in capsys.readouterr().err

    def test_flow_profile(self, tmp_path):
        src = tmp_path / "flows.csv"
        src.write_text(
            "Destination Port,Flow Duration,Label\n"
            "80,10,BENIGN\n443,20,DoS Hulk\n22,30,BENIGN\n21,Infinity,PortScan\n"
            "25,50,PortScan\n"
        )
        out = tmp_path / "flow.npz"
        assert main(["prepare", "--profile", "flow", "--out", str(out), str(src)]) == 0
        dataset, _, meta = load_prepared(out)
        assert dataset.n_rows == 4  # Infinity row dropped
        assert meta["removed_rows"] == 1
        assert set(dataset.label_names.values()) == {"BENIGN", "DoS", "Port-Scan"}


class TestTrainEvaluate:
    def test_train_writes_artifact(self, prepared_can, tmp_path):
        out = tmp_path / "rf.json"
        code = main(["train", str(prepared_can), "--model", "rf", "--trees", "10",
                     "--seed", "3", "--out", str(out)])
        assert code == 0
        artifact = load_model(out)
        assert artifact.kind == "rf"
        assert artifact.metadata["seed"] == 3

    def test_train_determinism_across_threads(self, prepared_can, tmp_path):
        a = tmp_path / "a.json"
        b = tmp_path / "b.json"
        main(["train", str(prepared_can), "--model", "rf", "--trees", "8",
              "--seed", "5", "--threads", "1", "--out", str(a)])
        main(["train", str(prepared_can), "--model", "rf", "--trees", "8",
              "--seed", "5", "--threads", "4", "--out", str(b)])
        assert a.read_bytes() == b.read_bytes()

    def test_evaluate_artifact_holdout(self, prepared_can, tmp_path, capsys):
        model_path = tmp_path / "m.json"
        main(["train", str(prepared_can), "--model", "dt", "--seed", "0",
              "--out", str(model_path)])
        capsys.readouterr()
        code = main(["evaluate", str(prepared_can), "--artifact", str(model_path)])
        out = capsys.readouterr().out
        assert code == 0
        assert "Acc (%)" in out and "artifact:dt" in out

    def test_evaluate_artifact_schema_mismatch_exits_3(self, prepared_can, tmp_path, capsys):
        src = tmp_path / "flows.csv"
        src.write_text("alpha,beta,Label\n1,2,BENIGN\n3,4,PortScan\n5,6,BENIGN\n")
        flow_prep = tmp_path / "flow.npz"
        main(["prepare", "--profile", "flow", "--out", str(flow_prep), str(src)])
        model_path = tmp_path / "can_model.json"
        main(["train", str(prepared_can), "--model", "dt", "--seed", "0",
              "--out", str(model_path)])
        capsys.readouterr()
        code = main(["evaluate", str(flow_prep), "--artifact", str(model_path)])
        assert code == 3
        assert "differs" in capsys.readouterr().err

    def test_evaluate_cv_writes_reports_and_figures(self, prepared_can, tmp_path, capsys):
        outdir = tmp_path / "report"
        code = main(["evaluate", str(prepared_can), "--model", "rf", "--trees", "6",
                     "--folds", "3", "--outdir", str(outdir)])
        assert code == 0
        out = capsys.readouterr().out
        assert "fold 1" in out and "mean" in out and "pooled" in out
        for name in ("metrics.csv", "confusion.csv", "confusion.png", "folds.png"):
            assert (outdir / name).exists(), name

    def test_train_with_feature_select_stores_mask(self, prepared_can, tmp_path):
        out = tmp_path / "fs.json"
        code = main(["train", str(prepared_can), "--model", "dt", "--feature-select",
                     "--fs-trees", "5", "--seed", "0", "--out", str(out)])
        assert code == 0
        artifact = load_model(out)
        assert artifact.selected_features is not None
        assert 0 < len(artifact.selected_features) <= 9

    def test_train_stacking_explicit_bases(self, prepared_can, tmp_path):
        out = tmp_path / "stack.json"
        code = main(["train", str(prepared_can), "--model", "stacking",
                     "--bases", "dt,rf,et", "--meta", "rf", "--trees", "5",
                     "--folds", "3", "--seed", "0", "--out", str(out)])
        assert code == 0
        artifact = load_model(out)
        assert artifact.kind == "stacking"
        body = json.loads((out).read_text())
        assert [b["kind"] for b in body["model"]["bases"]] == ["dt", "rf", "et"]


class TestSelectFeaturesCommand:
    def test_table_and_figures(self, prepared_can, tmp_path, capsys):
        outdir = tmp_path / "fs"
        code = main(["select-features", str(prepared_can), "--trees", "5",
                     "--per-attack", "--outdir", str(outdir)])
        assert code == 0
        assert (outdir / "importance.csv").exists()
        assert (outdir / "importance.png").exists()
        assert (outdir / "per_attack_importance.csv").exists()
        table = (outdir / "importance.csv").read_text().splitlines()
        assert table[0] == "feature,weight"
        assert len(table) == 10  # header + 9 features

    def test_single_class_errors(self, tmp_path, capsys):
        src = tmp_path / "one.csv"
        src.write_text("a,Label\n1,BENIGN\n2,BENIGN\n3,BENIGN\n")
        prep = tmp_path / "one.npz"
        main(["prepare", "--profile", "flow", "--out", str(prep), str(src)])
        capsys.readouterr()
        code = main(["select-features", str(prep)])
        assert code == 2


class TestDetectCommand:
    def test_stream_and_summary(self, capture_dir, prepared_can, tmp_path, capsys):
        _, paths = capture_dir
        model_path = tmp_path / "m.json"
        main(["train", str(prepared_can), "--model", "dt", "--seed", "0",
              "--out", str(model_path)])
        capsys.readouterr()
        code = main(["detect", paths["DoS"], "--artifact", str(model_path),
                     "--profile", "can"])
        out = capsys.readouterr().out.splitlines()
        assert code == 0
        verdicts = [l for l in out if not l.startswith("#")]
        summary = [l for l in out if l.startswith("#")]
        with open(paths["DoS"]) as fh:
            n_lines = sum(1 for _ in fh)
        assert len(verdicts) == n_lines
        assert any("latency_us" in l for l in summary)
        first = verdicts[0].split(",")
        assert len(first) == 4 and first[0] == "1"

    def test_schema_mismatch_exits_3(self, prepared_can, tmp_path, capsys):
        model_path = tmp_path / "m.json"
        main(["train", str(prepared_can), "--model", "dt", "--seed", "0",
              "--out", str(model_path)])
        stream = tmp_path / "flows.csv"
        stream.write_text("a,b,Label\n1,2,x\n")
        capsys.readouterr()
        code = main(["detect", str(stream), "--artifact", str(model_path),
                     "--profile", "flow"])
        assert code == 3


class TestGridSearchCommand:
    def test_prints_points_and_chosen(self, prepared_can, tmp_path, capsys):
        outdir = tmp_path / "grid"
        code = main(["grid-search", str(prepared_can), "--model", "dt",
                     "--trees-grid", "5", "--depth-grid", "2,4", "--folds", "2",
                     "--outdir", str(outdir)])
        out = capsys.readouterr().out
        assert code == 0
        assert "chosen:" in out
        assert (outdir / "grid.csv").exists()
        assert (outdir / "grid.png").exists()
