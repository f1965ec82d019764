import csv
import json

import pytest

from acml import __version__
from acml.cli import main


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--n", "96", "--dim", "16", "--seed", "3", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "c.json"
    path.write_text(
        json.dumps(
            {
                "encoder": {"n_layers": 2, "hidden_dim": 16},
                "projection": {"out_dim": 8},
                "train": {"batch_size": 16, "epochs": 2},
            }
        )
    )
    return path


def pretrain(synth_dir, config, out):
    return main(
        [
            "pretrain",
            "--config",
            str(config),
            "--seed",
            "7",
            "--out",
            str(out),
            "--data",
            str(synth_dir / "molecules.jsonl"),
            "--embeddings",
            str(synth_dir / "chem.acem"),
            "--held-out",
            str(synth_dir / "held_out.txt"),
        ]
    )


@pytest.fixture(scope="module")
def run1(synth_dir, config, tmp_path_factory):
    out = tmp_path_factory.mktemp("run1")
    assert pretrain(synth_dir, config, out) == 0
    return out


def test_synth_outputs(synth_dir):
    for name in (
        "molecules.jsonl",
        "chem.acem",
        "chem.acem.ids",
        "chem_clean.acem",
        "held_out.txt",
        "isomer_pairs.csv",
    ):
        assert (synth_dir / name).exists()
    run = json.loads((synth_dir / "run.json").read_text())
    assert run["version"] == __version__ and run["seed"] == 3 and "config" in run
    assert json.loads((synth_dir / "metrics.json").read_text())["n_molecules"] == 96


def test_pretrain_is_byte_reproducible(synth_dir, config, run1, tmp_path):
    assert pretrain(synth_dir, config, tmp_path) == 0
    assert (tmp_path / "checkpoint.ackp").read_bytes() == (run1 / "checkpoint.ackp").read_bytes()
    assert (tmp_path / "metrics.json").read_text() == (run1 / "metrics.json").read_text()
    resolved = json.loads((run1 / "run.json").read_text())["config"]["resolved"]
    assert resolved["gin"]["hidden_dim"] == 16 and resolved["seed"] == 7


def test_embed_retrieve_isomer_analyze(synth_dir, run1, tmp_path):
    ck = str(run1 / "checkpoint.ackp")
    data = str(synth_dir / "molecules.jsonl")
    emb = tmp_path / "emb"
    assert (
        main(["embed", "--checkpoint", ck, "--data", data, "--chem", str(synth_dir / "chem.acem"), "--out", str(emb)])
        == 0
    )
    ret = tmp_path / "ret"
    assert (
        main(
            [
                "retrieve",
                "--pool",
                str(emb / "graph.acem"),
                "--queries",
                str(emb / "chem_proj.acem"),
                "--k",
                "1,10,100",
                "--out",
                str(ret),
            ]
        )
        == 0
    )
    rows = list(csv.reader(open(ret / "retrieval.csv")))
    assert rows[0] == ["query_id", "k", "hit", "rank_of_target"] and len(rows) == 1 + 96 * 3
    m = json.loads((ret / "metrics.json").read_text())
    assert m["top100"] == 1.0  # the pool has only 96 rows
    iso = tmp_path / "iso"
    assert (
        main(
            [
                "isomer",
                "--checkpoint",
                ck,
                "--data",
                data,
                "--pairs",
                str(synth_dir / "isomer_pairs.csv"),
                "--chem",
                str(synth_dir / "chem_clean.acem"),
                "--out",
                str(iso),
            ]
        )
        == 0
    )
    for row in csv.DictReader(open(iso / "isomer.csv")):
        assert 0.5 <= float(row["confidence"]) <= 1.0
    ana = tmp_path / "ana"
    assert main(["analyze", "--checkpoint", ck, "--data", data, "--out", str(ana)]) == 0
    assert (ana / "pcc.csv").exists() and (ana / "points.csv").exists()


def test_finetune(tmp_path):
    data = tmp_path / "d.jsonl"
    smiles = ["C" * (i % 6 + 1) + "O" * (i % 2) for i in range(30)]
    data.write_text(
        "".join(json.dumps({"id": f"m{i}", "smiles": s, "labels": [i % 2]}) + "\n" for i, s in enumerate(smiles))
    )
    out = tmp_path / "ft"
    assert (
        main(
            [
                "finetune",
                "--data",
                str(data),
                "--task",
                "classification",
                "--no-checkpoint",
                "--seed",
                "0",
                "--epochs",
                "2",
                "--lrs",
                "1e-3",
                "--out",
                str(out),
            ]
        )
        == 0
    )
    report = json.loads((out / "metrics_report.json").read_text())
    assert set(report) == {"dataset", "seed", "lr", "metric_name", "valid", "test"}
    assert (out / "split.csv").read_text().startswith("id,split\n")


def test_ingest_reports_rejects(tmp_path):
    src = tmp_path / "in.smi"
    src.write_text("CCO ethanol\nC1CC bad\nc1ccccc1\n")
    assert main(["ingest", "--input", str(src), "--out", str(tmp_path / "o")]) == 0
    rej = list(csv.DictReader(open(tmp_path / "o" / "rejected.csv")))
    assert [r["error"] for r in rej] == ["UnclosedRing"]


def test_unknown_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["retrieve", "--bogus"])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_unknown_config_key_exits_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"train": {"learning_rate": 1}}))
    assert main(["pretrain", "--config", str(bad), "--seed", "1", "--out", str(tmp_path / "o")]) == 2


def test_missing_seed_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["pretrain", "--out", "x"])
    assert exc.value.code == 2


def test_runtime_error_exits_1(tmp_path):
    assert (
        main(["embed", "--checkpoint", str(tmp_path / "none.ackp"), "--data", "x", "--out", str(tmp_path / "o")]) == 1
    )
