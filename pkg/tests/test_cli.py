import struct

import numpy as np
import pytest

from fttn.cli import main
from fttn.data import IMAGES_MAGIC, LABELS_MAGIC, load_idx_labels
from fttn.engine import count_flops
from fttn.model import load_checkpoint


def read_csv(path):
    lines = path.read_text().strip().splitlines()
    header = lines[0].split(",")
    return header, [line.split(",") for line in lines[1:]]


def strip_wall(header, rows):
    drop = [i for i, name in enumerate(header) if "wall" in name]
    return [[v for i, v in enumerate(r) if i not in drop] for r in rows]


@pytest.fixture(scope="module")
def trained_run(demo_fixture_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("train-run")
    code = main([
        "train",
        "--train-images", demo_fixture_dir["train_images"],
        "--train-labels", demo_fixture_dir["train_labels"],
        "--test-images", demo_fixture_dir["test_images"],
        "--test-labels", demo_fixture_dir["test_labels"],
        "--epochs", "2", "--chi", "4", "--learning-rate", "1e-3",
        "--seed", "11", "--out", str(out),
    ])
    assert code == 0
    return out


class TestTrain:
    def test_smoke_outputs(self, trained_run):
        header, rows = read_csv(trained_run / "metrics.csv")
        assert header == ["epoch", "step", "train_loss", "train_acc",
                          "test_acc", "beta", "wall_time_s"]
        assert len(rows) == 2
        model = load_checkpoint(trained_run / "model.fttn")
        assert model.n_sites == 784 and model.bond_dim == 4
        assert (trained_run / "config.echo").exists()

    def test_missing_dataset_exits_3_without_outputs(self, tmp_path):
        out = tmp_path / "never"
        code = main([
            "train",
            "--train-images", str(tmp_path / "missing.idx"),
            "--train-labels", str(tmp_path / "missing2.idx"),
            "--out", str(out),
        ])
        assert code == 3
        assert not out.exists()

    def test_beta_zero_equals_baseline_flag(self, demo_fixture_dir, tmp_path):
        outs = []
        for mode in (["--beta", "0"], ["--baseline", "true"]):
            out = tmp_path / f"run-{mode[0].strip('-')}"
            code = main([
                "train",
                "--train-images", demo_fixture_dir["train_images"],
                "--train-labels", demo_fixture_dir["train_labels"],
                "--epochs", "1", "--chi", "3", "--learning-rate", "1e-3",
                "--seed", "5", "--out", str(out), *mode,
            ])
            assert code == 0
            outs.append(out)
        a_head, a_rows = read_csv(outs[0] / "metrics.csv")
        b_head, b_rows = read_csv(outs[1] / "metrics.csv")
        assert strip_wall(a_head, a_rows) == strip_wall(b_head, b_rows)

    def test_rerun_from_echo_reproduces(self, trained_run, tmp_path):
        out2 = tmp_path / "rerun"
        code = main([
            "train", "--config", str(trained_run / "config.echo"),
            "--out", str(out2),
        ])
        assert code == 0
        h1, r1 = read_csv(trained_run / "metrics.csv")
        h2, r2 = read_csv(out2 / "metrics.csv")
        assert strip_wall(h1, r1) == strip_wall(h2, r2)
        assert (
            (trained_run / "model.fttn").read_bytes()
            == (out2 / "model.fttn").read_bytes()
        )

    def test_threads_reproduce(self, demo_fixture_dir, tmp_path):
        rows = []
        for threads in ("1", "3"):
            out = tmp_path / f"t{threads}"
            code = main([
                "train",
                "--train-images", demo_fixture_dir["train_images"],
                "--train-labels", demo_fixture_dir["train_labels"],
                "--epochs", "1", "--chi", "2", "--seed", "3",
                "--threads", threads, "--out", str(out),
            ])
            assert code == 0
            h, r = read_csv(out / "metrics.csv")
            rows.append(strip_wall(h, r))
        assert rows[0] == rows[1]

    def test_downscale_runs(self, demo_fixture_dir, tmp_path):
        out = tmp_path / "small"
        code = main([
            "train",
            "--train-images", demo_fixture_dir["train_images"],
            "--train-labels", demo_fixture_dir["train_labels"],
            "--epochs", "1", "--chi", "3", "--downscale", "14",
            "--out", str(out),
        ])
        assert code == 0
        assert load_checkpoint(out / "model.fttn").n_sites == 196
        assert "downscale=14" in (out / "config.echo").read_text()


class TestEval:
    def test_accuracy_matches_final_train_metric(
        self, demo_fixture_dir, trained_run, tmp_path, capsys
    ):
        _, rows = read_csv(trained_run / "metrics.csv")
        final_train_acc = float(rows[-1][3])
        out = tmp_path / "eval"
        code = main([
            "eval", "--checkpoint", str(trained_run / "model.fttn"),
            "--images", demo_fixture_dir["train_images"],
            "--labels", demo_fixture_dir["train_labels"],
            "--out", str(out),
        ])
        assert code == 0
        printed = capsys.readouterr().out
        acc = float(printed.split("accuracy=")[1].split()[0])
        assert acc == pytest.approx(final_train_acc, abs=1e-6)

    def test_confusion_rows_sum_to_class_counts(
        self, demo_fixture_dir, trained_run, tmp_path
    ):
        out = tmp_path / "eval2"
        code = main([
            "eval", "--checkpoint", str(trained_run / "model.fttn"),
            "--images", demo_fixture_dir["test_images"],
            "--labels", demo_fixture_dir["test_labels"],
            "--out", str(out),
        ])
        assert code == 0
        _, rows = read_csv(out / "confusion.csv")
        labels = load_idx_labels(demo_fixture_dir["test_labels"])
        counts = np.bincount(labels, minlength=10)
        for c, row in enumerate(rows):
            assert int(row[0]) == c
            assert sum(int(x) for x in row[1:]) == counts[c]

    def test_empty_dataset_exits_3(self, trained_run, tmp_path):
        imgs = tmp_path / "empty-images.idx"
        lbls = tmp_path / "empty-labels.idx"
        imgs.write_bytes(struct.pack(">I3I", IMAGES_MAGIC, 0, 28, 28))
        lbls.write_bytes(struct.pack(">II", LABELS_MAGIC, 0))
        code = main([
            "eval", "--checkpoint", str(trained_run / "model.fttn"),
            "--images", str(imgs), "--labels", str(lbls),
            "--out", str(tmp_path / "evalempty"),
        ])
        assert code == 3

    def test_corrupt_checkpoint_exits_3(self, demo_fixture_dir, tmp_path):
        bad = tmp_path / "bad.fttn"
        bad.write_bytes(b"FTTN\x01\x00garbage")
        code = main([
            "eval", "--checkpoint", str(bad),
            "--images", demo_fixture_dir["test_images"],
            "--labels", demo_fixture_dir["test_labels"],
            "--out", str(tmp_path / "evalbad"),
        ])
        assert code == 3


class TestAnneal:
    def test_synthetic_objective_finds_optimum(self, tmp_path, capsys):
        out = tmp_path / "ann"
        code = main([
            "anneal", "--objective", "synthetic", "--iterations", "200",
            "--seed", "2", "--out", str(out),
        ])
        assert code == 0
        beta_star = float(capsys.readouterr().out.split("beta_star=")[1])
        assert abs(beta_star - 0.4) <= 0.05
        header, rows = read_csv(out / "trace.csv")
        assert header == ["iter", "beta", "score", "accepted", "anneal_temp"]
        assert len(rows) == 200

    def test_same_seed_identical_trace_files(self, tmp_path):
        texts = []
        for name in ("a", "b"):
            out = tmp_path / name
            code = main([
                "anneal", "--objective", "synthetic", "--iterations", "60",
                "--seed", "9", "--out", str(out),
            ])
            assert code == 0
            texts.append((out / "trace.csv").read_text())
        assert texts[0] == texts[1]

    def test_accuracy_objective_on_fixture(self, demo_fixture_dir, tmp_path):
        out = tmp_path / "annacc"
        code = main([
            "anneal", "--objective", "accuracy",
            "--train-images", demo_fixture_dir["train_images"],
            "--train-labels", demo_fixture_dir["train_labels"],
            "--iterations", "3", "--proxy-epochs", "1", "--proxy-subset", "60",
            "--chi", "2", "--downscale", "14", "--learning-rate", "1e-3",
            "--out", str(out),
        ])
        assert code == 0
        _, rows = read_csv(out / "trace.csv")
        assert len(rows) == 3


class TestBench:
    def test_bench_csv_and_flops(self, tmp_path):
        out = tmp_path / "bench"
        code = main([
            "bench", "--sizes", "64,128", "--chi", "3", "--out", str(out),
        ])
        assert code == 0
        header, rows = read_csv(out / "bench.csv")
        assert header == ["order", "n_sites", "chi", "flops", "wall_time_ns"]
        assert len(rows) == 4
        for order, n, chi, flops, wall in rows:
            assert int(flops) == count_flops(int(n), int(chi), 2, 10, order)
            assert int(wall) > 0

    def test_chi_one_fast(self, tmp_path):
        import time

        start = time.perf_counter()
        code = main([
            "bench", "--sizes", "64,128,256,512,1024", "--chi", "1",
            "--out", str(tmp_path / "b1"),
        ])
        assert code == 0
        assert time.perf_counter() - start < 1.0

    def test_python_backend_selectable(self, tmp_path):
        out = tmp_path / "bpy"
        code = main([
            "bench", "--sizes", "64", "--chi", "2", "--backend", "python",
            "--out", str(out),
        ])
        assert code == 0


class TestConfigHandling:
    def test_unknown_config_key_exits_2(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("not_a_key=1\n")
        assert main(["bench", "--config", str(cfg)]) == 2

    def test_flag_overrides_file(self, tmp_path, capsys):
        cfg = tmp_path / "ok.cfg"
        cfg.write_text("# comment\nsizes=64\nchi=2\n")
        out = tmp_path / "o"
        code = main([
            "bench", "--config", str(cfg), "--chi", "3", "--out", str(out),
        ])
        assert code == 0
        _, rows = read_csv(out / "bench.csv")
        assert all(r[2] == "3" for r in rows)

    def test_bad_value_exits_2(self):
        assert main(["train", "--downscale", "13"]) == 2

    def test_echo_contains_all_keys(self, trained_run):
        text = (trained_run / "config.echo").read_text()
        for key in ("seed=11", "chi=4", "epochs=2", "command=train",
                    "feature_map=linear", "downscale=28"):
            assert key in text
