import json

import numpy as np
import pytest

from fundus_sve.cli import (EXIT_INPUT, EXIT_OK, EXIT_USAGE, main,
                            read_scores_csv, run_pipeline)
from fundus_sve.evaluation import load_report


def write_perfect_scores(path, n_classes=3, n=12):
    rows = ["id,label," + ",".join(f"s{c}" for c in range(n_classes))]
    for i in range(n):
        label = i % n_classes
        scores = ["1.0" if c == label else "0.0" for c in range(n_classes)]
        rows.append(f"s{i},{label}," + ",".join(scores))
    path.write_text("\n".join(rows) + "\n")


def test_evaluate_perfect_scores(tmp_path, capsys):
    scores_path = tmp_path / "scores.csv"
    write_perfect_scores(scores_path)
    code = main(["evaluate", "--scores", str(scores_path),
                 "--out", str(tmp_path / "report.json")])
    assert code == EXIT_OK
    report = load_report(tmp_path / "report.json")
    assert report.metrics.overall_accuracy == 1.0
    assert "overall_accuracy: 1.0000" in capsys.readouterr().out


def test_missing_input_exit_code(tmp_path):
    code = main(["evaluate", "--scores", str(tmp_path / "nope.csv"),
                 "--out", str(tmp_path / "report.json")])
    assert code == EXIT_INPUT


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as exc:
        main(["evaluate"])  # missing required flags
    assert exc.value.code == EXIT_USAGE


def test_scores_round_trip(tmp_path):
    scores_path = tmp_path / "scores.csv"
    write_perfect_scores(scores_path, n_classes=2, n=4)
    ids, labels, scores = read_scores_csv(scores_path)
    assert len(ids) == 4 and scores.shape == (4, 2)
    assert np.array_equal(labels, [0, 1, 0, 1])


def test_stage_log_written(tmp_path):
    scores_path = tmp_path / "scores.csv"
    write_perfect_scores(scores_path)
    main(["evaluate", "--scores", str(scores_path), "--out", str(tmp_path / "r.json")])
    log = json.loads((tmp_path / "r.json.log.json").read_text())
    assert log["stage"] == "evaluate"
    assert str(scores_path) in log["inputs"]


def test_pipeline_dry_run(tmp_path, synthetic_manifest, capsys):
    code = main(["pipeline", "--manifest", str(synthetic_manifest),
                 "--out-dir", str(tmp_path / "run"), "--dry-run"])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "evaluate" in out and "augment: skipped" in out
    assert not (tmp_path / "run").exists()


def test_pipeline_unknown_config_key(tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"manifest": "m.csv", "out_dir": "o", "bogus": 1}))
    code = main(["pipeline", "--config", str(config)])
    assert code == EXIT_INPUT


def test_enhance_warns_on_unused_weight(tmp_path, synthetic_manifest, capsys):
    code = main(["enhance", "--manifest", str(synthetic_manifest),
                 "--strategy", "vessel-only", "--weight", "0.3",
                 "--out-dir", str(tmp_path / "enh"),
                 "--out", str(tmp_path / "m.csv")])
    assert code == EXIT_OK
    assert "unused" in capsys.readouterr().err


def test_stage_commands_end_to_end(tmp_path, synthetic_manifest):
    # split -> features -> train -> predict -> evaluate via the CLI
    split_csv = tmp_path / "split.csv"
    assert main(["split", "--manifest", str(synthetic_manifest), "--seed", "3",
                 "--out", str(split_csv)]) == EXIT_OK
    train_csv = tmp_path / "train.csv"
    test_csv = tmp_path / "test.csv"
    assert main(["features", "--manifest", str(split_csv), "--descriptor", "lbp",
                 "--split", "train", "--out", str(train_csv)]) == EXIT_OK
    assert main(["features", "--manifest", str(split_csv), "--descriptor", "lbp",
                 "--split", "test", "--out", str(test_csv)]) == EXIT_OK
    model = tmp_path / "model.json"
    assert main(["train", "--model", "knn", "--features", str(train_csv),
                 "--params", '{"k": 5}', "--out", str(model)]) == EXIT_OK
    scores = tmp_path / "scores.csv"
    assert main(["predict", "--model", str(model), "--features", str(test_csv),
                 "--out", str(scores)]) == EXIT_OK
    report = tmp_path / "report.json"
    assert main(["evaluate", "--scores", str(scores), "--out", str(report)]) == EXIT_OK
    assert load_report(report).metrics.overall_accuracy > 0.5


def test_import_features_cli(tmp_path):
    src = tmp_path / "deep.csv"
    src.write_text("id,label,f0,f1\na,0,1.0,2.0\nb,1,3.0,4.0\n")
    out = tmp_path / "validated.csv"
    assert main(["import-features", "--input", str(src), "--out", str(out)]) == EXIT_OK
    assert out.read_text().startswith("id,label,f0,f1")


def test_pipeline_determinism(tmp_path, synthetic_manifest):
    config = {"manifest": str(synthetic_manifest), "seed": 11}
    run_pipeline({**config, "out_dir": str(tmp_path / "a")})
    run_pipeline({**config, "out_dir": str(tmp_path / "b")})
    assert ((tmp_path / "a" / "report.json").read_bytes()
            == (tmp_path / "b" / "report.json").read_bytes())
