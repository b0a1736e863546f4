"""End-to-end command behavior, exit codes, config composition."""

import hashlib
import json

import numpy as np
import pytest
from PIL import Image

from syncprompt.cli import (
    EXIT_IO,
    EXIT_OK,
    EXIT_VALIDATION,
    dump_config,
    load_config,
    main,
)

RNG = np.random.default_rng(6)

TOY_ARGS = [
    "--set", "run.dataset=toy",
    "--set", "train.epochs=2",
    "--set", "train.lr0=0.05",
    "--set", "train.temperature=20.0",
    "--set", "toy.n_base=4",
    "--set", "toy.n_novel=2",
    "--set", "run.shots=6",
    "--set", "toy.synth_per_class=6",
    "--set", "toy.test_per_class=3",
]


def run_cli(*argv):
    return main(list(argv))


def train_toy(tmp_path, extra=()):
    out = tmp_path / "run"
    code = run_cli(
        "train", *TOY_ARGS, "--set", f"run.output_dir={out}", *extra
    )
    assert code == EXIT_OK
    return out


class TestConfigPlumbing:
    def test_defaults_carry_published_values(self):
        cfg = load_config(None, ["run.dataset=caltech101"])
        assert cfg["train"]["lr0"] == pytest.approx(2.5e-3)
        assert cfg["train"]["real_batch_size"] == 8
        assert cfg["train"]["ratio"] == 2
        assert cfg["run"]["shots"] == 16
        assert cfg["prompts"]["m1"] == 2
        assert cfg["prompts"]["m2"] == 2
        assert cfg["prompts"]["n"] == 2
        assert cfg["weights"]["alpha"] == pytest.approx(0.1)
        assert cfg["weights"]["beta"] == pytest.approx(0.5)

    def test_toy_dataset_carries_desk_scale_defaults(self):
        cfg = load_config(None, [])
        assert cfg["run"]["dataset"] == "toy"
        assert cfg["train"]["temperature"] == pytest.approx(20.0)
        assert cfg["train"]["lr0"] == pytest.approx(0.05)

    @pytest.mark.parametrize(
        "dataset,key,value",
        [
            ("imagenet", "alpha", 0.2),
            ("flowers102", "alpha", 0.2),
            ("eurosat", "beta", 2.0),
            ("fgvc_aircraft", "beta", 2.0),
        ],
    )
    def test_per_dataset_default_overrides(self, dataset, key, value):
        cfg = load_config(None, [f"run.dataset={dataset}"])
        assert cfg["weights"][key] == pytest.approx(value)

    def test_explicit_set_wins_over_dataset_default(self):
        cfg = load_config(None, ["run.dataset=eurosat", "weights.beta=0.7"])
        assert cfg["weights"]["beta"] == pytest.approx(0.7)

    def test_sets_compose_left_to_right(self):
        cfg = load_config(None, ["weights.alpha=0.3", "weights.alpha=0.7"])
        assert cfg["weights"]["alpha"] == pytest.approx(0.7)

    def test_config_file_layered_under_sets(self, tmp_path):
        f = tmp_path / "c.toml"
        f.write_text("[weights]\nalpha = 0.9\n")
        cfg = load_config(str(f), ["weights.beta=1.5"])
        assert cfg["weights"]["alpha"] == pytest.approx(0.9)
        assert cfg["weights"]["beta"] == pytest.approx(1.5)

    def test_env_var_overrides_data_root(self, monkeypatch):
        monkeypatch.setenv("SYNCPROMPT_DATA_ROOT", "/data/somewhere")
        cfg = load_config(None, [])
        assert cfg["paths"]["data_root"] == "/data/somewhere"

    def test_dump_is_valid_toml(self):
        import tomli

        cfg = load_config(None, ["weights.alpha=0.25"])
        parsed = tomli.loads(dump_config(cfg))
        assert parsed["weights"]["alpha"] == pytest.approx(0.25)


class TestTrainCommand:
    def test_trains_and_writes_artifacts(self, tmp_path, capsys):
        out = train_toy(tmp_path, extra=["--set", "weights.alpha=0.1",
                                         "--set", "weights.beta=0.5"])
        assert (out / "final.ckpt").exists()
        assert (out / "best.ckpt").exists()
        assert (out / "train_log.jsonl").exists()
        effective = (out / "effective_config.toml").read_text()
        assert "alpha = 0.1" in effective
        assert "beta = 0.5" in effective
        assert "final losses" in capsys.readouterr().out

    def test_same_config_twice_identical_checkpoint(self, tmp_path):
        out1 = train_toy(tmp_path / "a")
        out2 = train_toy(tmp_path / "b")
        h1 = hashlib.sha256((out1 / "final.ckpt").read_bytes()).hexdigest()
        h2 = hashlib.sha256((out2 / "final.ckpt").read_bytes()).hexdigest()
        assert h1 == h2

    def test_ivlp_with_domain_prompts_rejected(self, tmp_path, capsys):
        code = run_cli(
            "train", *TOY_ARGS, "--baseline", "ivlp",
            "--set", f"run.output_dir={tmp_path / 'x'}",
        )
        assert code == EXIT_VALIDATION
        assert "m1=0" in capsys.readouterr().err

    def test_unknown_dataset_rejected(self, tmp_path, capsys):
        code = run_cli("train", "--set", "run.dataset=mystery")
        assert code == EXIT_VALIDATION
        assert "unknown dataset" in capsys.readouterr().err


class TestEvalCommand:
    def test_eval_renders_table_and_writes_report(self, tmp_path, capsys):
        out = train_toy(tmp_path)
        code = run_cli(
            "eval", *TOY_ARGS, "--set", f"run.output_dir={out}",
            "--checkpoint", str(out / "final.ckpt"), "--protocol", "gzsl",
        )
        assert code == EXIT_OK
        text = capsys.readouterr().out
        for row in ("B", "N", "HM"):
            assert row in text
        assert (out / "report_gzsl.json").exists()

    def test_zsl_dominates_gzsl(self, tmp_path, capsys):
        out = train_toy(tmp_path)
        for proto in ("zsl", "gzsl"):
            assert run_cli(
                "eval", *TOY_ARGS, "--set", f"run.output_dir={out}",
                "--checkpoint", str(out / "final.ckpt"), "--protocol", proto,
            ) == EXIT_OK
        z = json.loads((out / "report_zsl.json").read_text())
        g = json.loads((out / "report_gzsl.json").read_text())
        assert z["b_acc"] >= g["b_acc"]
        assert z["n_acc"] >= g["n_acc"]

    def test_missing_checkpoint_exits_io_and_names_path(self, tmp_path, capsys):
        code = run_cli(
            "eval", *TOY_ARGS, "--checkpoint", str(tmp_path / "nope.ckpt")
        )
        assert code == EXIT_IO
        assert "nope.ckpt" in capsys.readouterr().err


def write_image_dataset(root, class_names, per_split=3):
    (root / "images").mkdir(parents=True)
    (root / "splits").mkdir()
    rng = np.random.default_rng(0)
    for split in ("train", "val", "test"):
        lines = []
        for cname in class_names:
            (root / "images" / cname).mkdir(exist_ok=True)
            for i in range(per_split):
                rel = f"{cname}/{split}_{i}.png"
                arr = (rng.random((12, 12)) * 255).astype(np.uint8)
                Image.fromarray(arr, mode="L").save(root / "images" / rel)
                lines.append(f"{rel}\t{cname}")
        (root / "splits" / f"{split}.txt").write_text("\n".join(lines) + "\n")


def write_synth_tree(root, class_names, per_class=2):
    rng = np.random.default_rng(1)
    for cname in class_names:
        d = root / cname
        d.mkdir(parents=True)
        for i in range(per_class):
            arr = (rng.random((12, 12)) * 255).astype(np.uint8)
            Image.fromarray(arr, mode="L").save(d / f"gen_{i}.png")


class TestDiskDatasetCommands:
    def test_ingest_counts(self, tmp_path, capsys):
        data_root = tmp_path / "eurosat"
        names = [f"landuse {i}" for i in range(4)]
        write_image_dataset(data_root, names)
        synth_root = tmp_path / "synth"
        write_synth_tree(synth_root, [n.replace(" ", "_") for n in names], per_class=2)
        code = run_cli(
            "ingest", "--set", "run.dataset=eurosat",
            "--set", f"paths.data_root={data_root}",
            "--synth-root", str(synth_root),
        )
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert "total\t8" in out

    def test_ingest_unmatched_class_signals_validation_error(self, tmp_path, capsys):
        data_root = tmp_path / "eurosat"
        write_image_dataset(data_root, ["alpha", "beta"])
        synth_root = tmp_path / "synth"
        write_synth_tree(synth_root, ["alpha", "gamma"])
        code = run_cli(
            "ingest", "--set", "run.dataset=eurosat",
            "--set", f"paths.data_root={data_root}",
            "--synth-root", str(synth_root),
        )
        assert code == EXIT_VALIDATION
        assert "gamma" in capsys.readouterr().err

    def test_fid_identical_directories_prints_zero(self, tmp_path, capsys):
        d = tmp_path / "imgs"
        write_synth_tree(d, ["a", "b"], per_class=3)
        code = run_cli("fid", "--real", str(d), "--synth", str(d))
        assert code == EXIT_OK
        assert capsys.readouterr().out.strip() == "0.000000"

    def test_fid_missing_directory_exits_io(self, tmp_path, capsys):
        d = tmp_path / "imgs"
        write_synth_tree(d, ["a"], per_class=3)
        assert run_cli("fid", "--real", str(d), "--synth", str(tmp_path / "no")) == EXIT_IO


class TestExportAndReport:
    def test_export_one_record_per_test_example(self, tmp_path, capsys):
        out = train_toy(tmp_path)
        dest = tmp_path / "emb.jsonl"
        code = run_cli(
            "export", *TOY_ARGS, "--checkpoint", str(out / "final.ckpt"),
            "--split", "test", "--out", str(dest),
        )
        assert code == EXIT_OK
        n_test = 6 * 3  # 6 classes x test_per_class 3
        assert len(dest.read_text().splitlines()) == n_test

    def test_report_renders_saved_reports(self, tmp_path, capsys):
        out = train_toy(tmp_path)
        for proto in ("zsl", "gzsl"):
            run_cli(
                "eval", *TOY_ARGS, "--set", f"run.output_dir={out}",
                "--checkpoint", str(out / "final.ckpt"), "--protocol", proto,
            )
        capsys.readouterr()
        code = run_cli(
            "report", str(out / "report_zsl.json"), str(out / "report_gzsl.json")
        )
        assert code == EXIT_OK
        text = capsys.readouterr().out
        assert "zsl" in text and "gzsl" in text and "HM" in text
