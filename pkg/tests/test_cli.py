import json
from pathlib import Path

import numpy as np
import pytest

from hazardcast.cli import main
from hazardcast.explain import AttributionMatrix, GlobalImportanceMatrix
from hazardcast.ingest import CountyDayTable
from hazardcast.models import ModelCheckpoint


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """synth -> ingest -> train, shared across the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    data_dir = root / "data"
    assert main(["synth", "--out", str(data_dir), "--days", "500", "--seed", "1"]) == 0

    cfg = {
        "data": {"length": 10, "stride": 1},
        "model": {"hidden_size": 8, "attention_size": 4, "d_model": 8, "heads": 2,
                  "layers": 1, "ffn_size": 8},
        "train": {"max_epochs": 2, "patience": 2, "batch_size": 64},
        "explain": {"top_events": 2, "top_features": 2, "instances": 3},
    }
    cfg_path = root / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))

    table_path = root / "table.csv"
    assert main(["ingest", "--config", str(cfg_path),
                 "--weather", str(data_dir / "weather.csv"),
                 "--events", str(data_dir / "events.csv"),
                 "--county", "SYNTH", "--out", str(table_path)]) == 0

    ckpt_path = root / "model.json"
    assert main(["train", "--config", str(cfg_path), "--data", str(table_path),
                 "--arch", "lstm", "--out", str(ckpt_path), "--seed", "3"]) == 0
    return {"root": root, "cfg": cfg_path, "table": table_path, "ckpt": ckpt_path,
            "data_dir": data_dir}


def test_synth_writes_manifest_and_is_rerunnable(tmp_path):
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    assert main(["synth", "--out", str(out1), "--days", "420", "--seed", "9"]) == 0
    manifest = json.loads((out1 / "manifest.json").read_text())
    assert manifest["command"] == "synth"
    assert manifest["seed"] == 9
    assert set(manifest["args"]) >= {"out", "days", "features", "county"}

    # rerun purely from the manifest
    args = manifest["args"]
    assert main(["synth", "--out", str(out2), "--days", str(args["days"]),
                 "--features", str(args["features"]), "--county", args["county"],
                 "--seed", str(manifest["seed"])]) == 0
    assert (out1 / "weather.csv").read_bytes() == (out2 / "weather.csv").read_bytes()
    assert (out1 / "events.csv").read_bytes() == (out2 / "events.csv").read_bytes()


def test_ingest_output_is_loadable(workspace):
    table = CountyDayTable.load(workspace["table"])
    assert table.county == "SYNTH"
    assert table.window_days == 14
    assert table.standardizer is not None
    assert len(table.feature_names) == 6
    manifest = json.loads((workspace["root"] / "table.manifest.json").read_text())
    assert str(workspace["table"]) in manifest["outputs"]
    assert len(manifest["inputs"]) == 2


def test_train_writes_checkpoint_and_history(workspace):
    ckpt = ModelCheckpoint.load(workspace["ckpt"])
    assert ckpt.config.architecture == "lstm"
    assert ckpt.feature_names == CountyDayTable.load(workspace["table"]).feature_names
    history = (workspace["root"] / "model.history.csv").read_text().splitlines()
    assert history[0] == "epoch,train_loss,val_loss"
    assert len(history) == 3  # two epochs


def test_evaluate_writes_metrics(workspace, capsys):
    out = workspace["root"] / "metrics.csv"
    code = main(["evaluate", "--config", str(workspace["cfg"]),
                 "--ckpt", str(workspace["ckpt"]), "--data", str(workspace["table"]),
                 "--split", "test", "--out", str(out)])
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "hazard,MAE,RMSE"
    assert lines[-1].startswith("average,")
    assert "evaluate[test]" in capsys.readouterr().out


def test_explain_writes_attribution_and_warnings(workspace):
    out_dir = workspace["root"] / "explained"
    code = main(["explain", "--config", str(workspace["cfg"]),
                 "--ckpt", str(workspace["ckpt"]), "--data", str(workspace["table"]),
                 "--index", "5", "--hazard", "Frost", "--out", str(out_dir),
                 "--seed", "3"])
    assert code == 0
    attr_path = out_dir / "attribution_00005_Frost.csv"
    attr = AttributionMatrix.load(attr_path)
    assert attr.hazard == "Frost"
    assert attr.values.shape == (10, 6)
    assert attr.extra["index"] == 5
    assert attr.extra["selection"]
    total = sum(attr.player_values.values())
    assert total == pytest.approx(attr.fx - attr.base_value, abs=1e-6)

    warning = (out_dir / "warning_00005.csv").read_text().splitlines()
    assert warning[0] == "hazard,expected_count,p_at_least_one"
    assert len(warning) == 7


def test_explain_is_deterministic(workspace, tmp_path):
    out1 = tmp_path / "e1"
    out2 = tmp_path / "e2"
    for out in (out1, out2):
        assert main(["explain", "--config", str(workspace["cfg"]),
                     "--ckpt", str(workspace["ckpt"]), "--data", str(workspace["table"]),
                     "--index", "7", "--hazard", "Heat", "--out", str(out),
                     "--seed", "5"]) == 0
    a = (out1 / "attribution_00007_Heat.csv").read_bytes()
    b = (out2 / "attribution_00007_Heat.csv").read_bytes()
    assert a == b


def test_global_aggregates_instances(workspace):
    out_dir = workspace["root"] / "global"
    code = main(["global", "--config", str(workspace["cfg"]),
                 "--ckpt", str(workspace["ckpt"]), "--data", str(workspace["table"]),
                 "--hazard", "Heat", "--split", "test", "--out", str(out_dir),
                 "--seed", "3"])
    assert code == 0
    matrix = GlobalImportanceMatrix.load(out_dir / "global_Heat.csv")
    assert matrix.values.shape == (6, 12)
    assert (matrix.values >= 0).all()
    assert matrix.counts.sum() >= 1
    instance_files = sorted((out_dir / "instances").glob("attribution_*.csv"))
    assert len(instance_files) == 3

    # stored instances re-aggregate to the same matrix
    from hazardcast.explain import global_aggregate
    loaded = [AttributionMatrix.load(p) for p in instance_files]
    redo = global_aggregate([(m, m.extra["selection"]) for m in loaded])
    np.testing.assert_allclose(redo.values, matrix.values, atol=1e-12)


def test_render_produces_svg(workspace):
    out_dir = workspace["root"] / "global"
    svg_path = workspace["root"] / "global.svg"
    code = main(["render", "--matrix", str(out_dir / "global_Heat.csv"),
                 "--out", str(svg_path), "--scale", "log1p", "--title", "Heat"])
    assert code == 0
    text = svg_path.read_text()
    assert text.startswith("<svg") and text.endswith("</svg>\n")
    assert main(["render", "--matrix", str(out_dir / "global_Heat.csv"),
                 "--out", str(svg_path)]) == 0  # idempotent rerun


def test_unknown_flag_suggests_alternative(capsys):
    code = main(["train", "--archh", "lstm", "--data", "x.csv", "--out", "y.json"])
    assert code == 1
    err = capsys.readouterr().err
    assert "--arch" in err and "did you mean" in err


def test_missing_required_flag_is_usage_error(capsys):
    assert main(["train", "--data", "x.csv"]) == 1
    assert "error" in capsys.readouterr().err


def test_bad_hazard_is_usage_error(workspace, capsys):
    code = main(["explain", "--config", str(workspace["cfg"]),
                 "--ckpt", str(workspace["ckpt"]), "--data", str(workspace["table"]),
                 "--index", "0", "--hazard", "Tornado", "--out", "zz"])
    assert code == 1
    assert "hazard" in capsys.readouterr().err


def test_out_of_range_index_is_usage_error(workspace):
    assert main(["explain", "--config", str(workspace["cfg"]),
                 "--ckpt", str(workspace["ckpt"]), "--data", str(workspace["table"]),
                 "--index", "99999", "--hazard", "Heat", "--out", "zz"]) == 1


def test_missing_input_file_is_data_error(workspace, capsys):
    code = main(["evaluate", "--config", str(workspace["cfg"]),
                 "--ckpt", "nope.json", "--data", str(workspace["table"]),
                 "--out", "m.csv"])
    assert code == 2
    assert "data error" in capsys.readouterr().err


def test_malformed_weather_csv_is_data_error(tmp_path, capsys):
    bad = tmp_path / "w.csv"
    bad.write_text("STATION,TMAX\nS1,40\n")  # no DATE column
    events = tmp_path / "e.csv"
    events.write_text("BEGIN_DATE,END_DATE,EVENT_TYPE,CZ_NAME,DAMAGE_PROPERTY,"
                      "DAMAGE_CROPS,INJURIES_DIRECT,DEATHS_DIRECT\n")
    code = main(["ingest", "--weather", str(bad), "--events", str(events),
                 "--county", "X", "--out", str(tmp_path / "t.csv"), "--length", "5"])
    assert code == 2


def test_unknown_config_key_is_usage_error(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"data": {"lenght": 12}}))
    code = main(["synth", "--config", str(cfg), "--out", str(tmp_path / "d")])
    assert code == 1
    assert "unknown keys" in capsys.readouterr().err


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as e:
        main(["--version"])
    assert e.value.code == 0
    assert "hazardcast" in capsys.readouterr().out
