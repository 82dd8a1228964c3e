"""End-to-end CLI behavior: config schema, subcommands, exit codes."""

import csv
import json
import subprocess
import sys


from robustharness.cli import main
from robustharness.dataset import load_manifest
from robustharness.imaging import constant_image, encode_ppm


def base_config(**overrides):
    cfg = {
        "dataset": {
            "synthetic": {
                "num_classes": 2,
                "per_class": 3,
                "width": 8,
                "height": 8,
                "seed": 1,
            }
        },
        "endpoint": {"kind": "builtin_threshold", "num_classes": 2},
        "properties": [
            {
                "id": "bright",
                "transforms": [{"kind": "brightness"}],
                "budget": {"strategy": "grid", "grid_steps": 5},
            }
        ],
        "output_dir": "out",
        "seed": 0,
        "workers": 1,
    }
    cfg.update(overrides)
    return cfg


def write_config(tmp_path, cfg, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def tree_bytes(root):
    return {
        p.relative_to(root).as_posix(): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


# -- evaluate ---------------------------------------------------------------


def test_evaluate_constant_classifier_scores_one(tmp_path, capsys):
    cfg = base_config(endpoint={"kind": "builtin_constant", "num_classes": 2, "label": 0})
    code = main(["evaluate", "--config", write_config(tmp_path, cfg)])
    assert code == 0
    out = capsys.readouterr().out
    assert "score=1.0000" in out
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["properties"][0]["robustness_score"] == 1
    assert report["properties"][0]["accuracy"] == 0.5


def test_evaluate_writes_report_tree(tmp_path):
    code = main(["evaluate", "--config", write_config(tmp_path, base_config())])
    assert code == 0
    out = tmp_path / "out"
    for name in ("report.json", "scores.csv", "scores.svg", "index.json", "index.csv"):
        assert (out / name).exists()
    report = json.loads((out / "report.json").read_text())
    prop = report["properties"][0]
    # bright-class samples drop below the threshold at factor 0.5
    assert prop["accuracy"] == 1
    assert prop["robustness_score"] == 0.5
    index = json.loads((out / "index.json").read_text())
    assert index["totals"]["non_robust"] == 3


def test_evaluate_duplicate_property_id_exits_2(tmp_path, capsys):
    cfg = base_config()
    cfg["properties"] = cfg["properties"] * 2
    code = main(["evaluate", "--config", write_config(tmp_path, cfg)])
    assert code == 2
    assert "duplicate id" in capsys.readouterr().err


def test_evaluate_unreachable_http_exits_3_with_partial(tmp_path, capsys):
    cfg = base_config(
        endpoint={
            "kind": "external_http",
            "url": "http://127.0.0.1:1",
            "num_classes": 2,
            "timeout": 2,
        }
    )
    code = main(["evaluate", "--config", write_config(tmp_path, cfg)])
    assert code == 3
    assert "error:" in capsys.readouterr().err
    partial = json.loads((tmp_path / "out" / "partial_bright.json").read_text())
    assert partial["property_id"] == "bright"
    assert partial["completed_verdicts"] == []


def test_evaluate_min_score_gate(tmp_path, capsys):
    config = write_config(tmp_path, base_config())
    assert main(["evaluate", "--config", config, "--min-score", "0.9"]) == 4
    assert "below 0.9" in capsys.readouterr().err
    assert main(["evaluate", "--config", config, "--min-score", "0.4"]) == 0


def test_evaluate_reruns_byte_identical(tmp_path):
    config = write_config(tmp_path, base_config())
    assert main(["evaluate", "--config", config, "--out", str(tmp_path / "o1")]) == 0
    assert (
        main(["evaluate", "--config", config, "--out", str(tmp_path / "o2"), "--workers", "2"])
        == 0
    )
    a = tree_bytes(tmp_path / "o1")
    b = tree_bytes(tmp_path / "o2")
    assert a.keys() == b.keys()
    assert all(a[k] == b[k] for k in a)


def test_evaluate_missing_config_exits_2(tmp_path, capsys):
    assert main(["evaluate", "--config", str(tmp_path / "absent.json")]) == 2
    assert "cannot read config" in capsys.readouterr().err


def test_evaluate_invalid_json_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    assert main(["evaluate", "--config", str(path)]) == 2
    assert "not valid JSON" in capsys.readouterr().err


# -- sweep ------------------------------------------------------------------


def rotate_config():
    cfg = base_config()
    cfg["properties"].append(
        {
            "id": "rot",
            "transforms": [{"kind": "rotate"}],
            "budget": {"strategy": "grid", "grid_steps": 5},
        }
    )
    cfg["properties"].append(
        {
            "id": "noise",
            "transforms": [{"kind": "gaussian_noise"}],
            "budget": {"strategy": "random", "random_candidates": 10},
        }
    )
    return cfg


def test_sweep_rotation_row_count(tmp_path):
    config = write_config(tmp_path, rotate_config())
    assert main(["sweep", "--config", config, "rot", "angle", "--steps", "11"]) == 0
    with open(tmp_path / "out" / "sweep_rot_angle.csv") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 12  # header + 11 steps
    assert rows[0] == ["theta_value", "robustness_fraction", "evaluated_samples"]
    assert (tmp_path / "out" / "sweep_rot_angle.svg").exists()


def test_sweep_identity_first_row(tmp_path):
    # sigma starts at 0, the identity, so the first row must be 1.0
    config = write_config(tmp_path, rotate_config())
    assert main(["sweep", "--config", config, "noise", "sigma", "--steps", "5"]) == 0
    with open(tmp_path / "out" / "sweep_noise_sigma.csv") as fh:
        rows = list(csv.reader(fh))
    assert float(rows[1][0]) == 0.0
    assert rows[1][1] == "1.000000"


def test_sweep_unknown_property_or_dim_exits_2(tmp_path, capsys):
    config = write_config(tmp_path, rotate_config())
    assert main(["sweep", "--config", config, "nope", "angle"]) == 2
    assert "unknown property" in capsys.readouterr().err
    assert main(["sweep", "--config", config, "rot", "wavelength"]) == 2
    assert "no dim" in capsys.readouterr().err


# -- compose ----------------------------------------------------------------


def test_compose_with_identity_only_part_keeps_score(tmp_path, capsys):
    cfg = base_config()
    cfg["properties"].append(
        {
            "id": "ident",
            "transforms": [
                {"kind": "brightness", "domain": {"factor": {"low": 1.0, "high": 1.0}}}
            ],
            "budget": {"strategy": "grid", "grid_steps": 3},
        }
    )
    config = write_config(tmp_path, cfg)
    assert main(["compose", "--config", config, "bright", "ident"]) == 0
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    by_id = {p["property_id"]: p for p in report["properties"]}
    assert by_id["bright+ident"]["robustness_score"] == by_id["bright"]["robustness_score"]

    # printed delta agrees with the matrix file
    out_text = capsys.readouterr().out
    with open(tmp_path / "out" / "deltas.csv") as fh:
        row = list(csv.reader(fh))[1]
    delta_pp = float(row[3])
    assert f"{delta_pp:+.2f}" in out_text


def test_compose_unknown_id_exits_2(tmp_path, capsys):
    config = write_config(tmp_path, base_config())
    assert main(["compose", "--config", config, "bright", "ghost"]) == 2
    assert "unknown property" in capsys.readouterr().err


# -- validate ---------------------------------------------------------------


def test_validate_ok(tmp_path, capsys):
    assert main(["validate", "--config", write_config(tmp_path, base_config())]) == 0
    assert capsys.readouterr().out.strip() == "OK"


def test_validate_reversed_bounds_names_field(tmp_path, capsys):
    cfg = base_config()
    cfg["properties"][0]["transforms"][0]["domain"] = {"factor": {"low": 1.5, "high": 0.5}}
    assert main(["validate", "--config", write_config(tmp_path, cfg)]) == 2
    assert "brightness.factor" in capsys.readouterr().err


def test_validate_grid_dim_limit_steers_to_random(tmp_path, capsys):
    cfg = base_config()
    cfg["properties"][0] = {
        "id": "wide",
        "transforms": [
            {"kind": "translate"},
            {"kind": "rotate"},
            {"kind": "scale"},
            {"kind": "shear"},
        ],
        "budget": {"strategy": "grid", "grid_steps": 3},
    }
    assert main(["validate", "--config", write_config(tmp_path, cfg)]) == 2
    assert "random" in capsys.readouterr().err


def test_validate_accepts_every_runnable_config(tmp_path):
    # the validate/evaluate contract: anything evaluate runs, validate passes
    for cfg in (base_config(), rotate_config()):
        config = write_config(tmp_path, cfg, name=f"c{len(cfg['properties'])}.json")
        assert main(["validate", "--config", config]) == 0
        assert main(["evaluate", "--config", config]) == 0


# -- dataset subcommands ----------------------------------------------------


def test_synth_subcommand_roundtrip(tmp_path):
    out = tmp_path / "ds"
    code = main(
        ["synth", "--out", str(out), "--classes", "3", "--per-class", "2", "--width", "6",
         "--height", "5", "--seed", "9"]
    )
    assert code == 0
    ds = load_manifest(out / "manifest.csv")
    assert ds.num_classes == 3
    assert len(ds.samples) == 6
    assert ds.samples[0].load().shape == (5, 6, 3)


def fake_gtsrb(tmp_path):
    root = tmp_path / "gtsrb"
    for cls in (0, 1):
        d = root / f"{cls:05d}"
        d.mkdir(parents=True)
        names = []
        for i in range(2):
            name = f"{i:05d}_{0:05d}.ppm"
            (d / name).write_bytes(encode_ppm(constant_image(4, 4, 0.2 + 0.5 * cls)))
            names.append(name)
        with open(d / f"GT-{cls:05d}.csv", "w", newline="") as fh:
            writer = csv.writer(fh, delimiter=";")
            writer.writerow(["Filename", "Width", "Height", "ClassId"])
            for name in names:
                writer.writerow([name, "4", "4", str(cls)])
    return root


def test_import_gtsrb_subcommand(tmp_path, capsys):
    root = fake_gtsrb(tmp_path)
    out = tmp_path / "imported"
    assert main(["import-gtsrb", "--root", str(root), "--out", str(out)]) == 0
    assert "4 samples, 2 classes" in capsys.readouterr().out
    ds = load_manifest(out / "manifest.csv")
    assert [s.label for s in ds.samples] == [0, 0, 1, 1]
    assert ds.samples[0].load().shape == (4, 4, 3)


# -- entry points -----------------------------------------------------------


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "robustharness", "--help"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert "evaluate" in proc.stdout and "sweep" in proc.stdout


def test_console_script_on_path():
    proc = subprocess.run(["robustharness", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
