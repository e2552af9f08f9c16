import json
from pathlib import Path

import numpy as np
import pytest

from shapestat.cli import main, run_command
from shapestat.difftensor import load_tensors, save_tensors
from shapestat.geometry import dist_shape_procrustes, to_preshape
from shapestat.io import Dataset, RunManifest, load_dataset, save_dataset, write_csv


def make_dataset(rng, n=4, m=3, k=4):
    return Dataset(m=m, k=k, objects=[rng.standard_normal((m, k)) for _ in range(n)])


class TestDatasetIO:
    def test_csv_round_trip(self, rng, tmp_path):
        ds = make_dataset(rng)
        p = tmp_path / "d.csv"
        save_dataset(p, ds)
        back = load_dataset(p)
        assert back.m == ds.m and back.k == ds.k
        for a, b in zip(ds.objects, back.objects):
            assert np.array_equal(a, b)

    def test_json_round_trip_with_labels(self, rng, tmp_path):
        ds = Dataset(m=2, k=3, objects=[rng.standard_normal((2, 3)) for _ in range(2)],
                     labels=["a", "b"])
        p = tmp_path / "d.json"
        save_dataset(p, ds)
        back = load_dataset(p)
        assert back.labels == ["a", "b"]
        for a, b in zip(ds.objects, back.objects):
            assert np.array_equal(a, b)

    def test_writer_fixture_reloads(self, rng, tmp_path):
        # a 3x4-landmark 2-object fixture authored with the writer
        ds = make_dataset(rng, n=2, m=3, k=4)
        p = tmp_path / "fixture.csv"
        save_dataset(p, ds)
        back = load_dataset(p)
        assert back.m == 3 and back.k == 4 and len(back.objects) == 2
        assert len(back.configurations) == 2

    def test_csv_labels(self, rng, tmp_path):
        ds = Dataset(m=2, k=3, objects=[rng.standard_normal((2, 3))], labels=["t1"])
        p = tmp_path / "d.csv"
        save_dataset(p, ds)
        assert load_dataset(p).labels == ["t1"]

    def test_empty_file_rejected(self, tmp_path):
        p = tmp_path / "e.csv"
        p.write_text("")
        with pytest.raises(ValueError, match="empty"):
            load_dataset(p)

    def test_malformed_row_reports_line(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("2,3\n1,2,3,4,5,6\n1,2,oops,4,5,6\n")
        with pytest.raises(ValueError, match="line 3"):
            load_dataset(p)

    def test_wrong_arity_reports_line(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("2,3\n1,2,3,4\n")
        with pytest.raises(ValueError, match="line 2"):
            load_dataset(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_dataset(tmp_path / "nope.csv")

    def test_objects_centered_on_load(self, rng, tmp_path):
        ds = make_dataset(rng, n=1)
        p = tmp_path / "d.csv"
        save_dataset(p, ds)
        conf = load_dataset(p).configurations[0]
        assert conf.entries.shape == (3, 3)

    def test_dimension_mismatch_rejected(self, rng):
        with pytest.raises(ValueError, match="shape"):
            Dataset(m=2, k=3, objects=[rng.standard_normal((3, 3))])


class TestWriteCsv:
    def test_float_formatting_round_trips(self, tmp_path):
        vals = [1 / 3, np.pi, 1e-17, 123456.789012345678]
        p = tmp_path / "t.csv"
        write_csv(p, ["v"], [[v] for v in vals])
        got = [float(x) for x in p.read_text().splitlines()[1:]]
        assert got == vals


class TestManifest:
    def test_round_trip(self, tmp_path):
        m = RunManifest(command="mean", parameters={"x": 1}, seed=3, version="0.1.0",
                        outputs={"mean": "mean.csv"})
        p = tmp_path / "manifest.json"
        m.save(p)
        back = RunManifest.load(p)
        assert back.command == "mean"
        assert back.parameters == {"x": 1}
        assert back.seed == 3


@pytest.fixture
def small_dataset(rng, tmp_path):
    base = rng.standard_normal((3, 4))
    objs = [base + 0.05 * rng.standard_normal((3, 4)) for _ in range(8)]
    path = tmp_path / "data.csv"
    save_dataset(path, Dataset(m=3, k=4, objects=objs))
    return path


class TestCli:
    def test_mean_command_and_replay(self, small_dataset, tmp_path):
        out1 = tmp_path / "run1"
        code = main(["mean", "--data", str(small_dataset), "--rho", "full",
                     "--out", str(out1)])
        assert code == 0
        assert (out1 / "mean.csv").exists()
        out2 = tmp_path / "run2"
        code = main(["replay", str(out1 / "manifest.json"), "--out", str(out2)])
        assert code == 0
        assert (out1 / "mean.csv").read_bytes() == (out2 / "mean.csv").read_bytes()

    def test_mean_output_is_valid_dataset(self, small_dataset, tmp_path):
        out = tmp_path / "run"
        main(["mean", "--data", str(small_dataset), "--out", str(out)])
        ds = load_dataset(out / "mean.csv")
        assert len(ds.objects) == 1

    def test_test_command(self, small_dataset, tmp_path):
        out = tmp_path / "t"
        # hypothesis: the first object itself
        ds = load_dataset(small_dataset)
        hyp = tmp_path / "hyp.csv"
        save_dataset(hyp, Dataset(m=3, k=4, objects=[ds.objects[0]]))
        code = main(["test", "--data", str(small_dataset), "--hypothesis", str(hyp),
                     "--rho", "ziezold", "--out", str(out)])
        assert code == 0
        rows = (out / "test.csv").read_text().splitlines()
        assert rows[0].startswith("statistic")
        p_value = float(rows[1].split(",")[2])
        assert 0.0 <= p_value <= 1.0

    def test_table1_small_grid_and_replay(self, tmp_path):
        out1 = tmp_path / "t1"
        code = main(["table1", "--n", "60", "--N", "3", "--sigma", "0.1,0.01",
                     "--mu-id", "iso", "--seed", "5", "--out", str(out1)])
        assert code == 0
        lines = (out1 / "table1.csv").read_text().splitlines()
        assert len(lines) == 3  # header + 2 sigma rows
        assert lines[0].split(",")[:3] == ["kind", "mu_id", "sigma"]
        assert (out1 / "table1.png").exists()
        out2 = tmp_path / "t1b"
        main(["replay", str(out1 / "manifest.json"), "--out", str(out2)])
        a = (out1 / "table1.csv").read_text().splitlines()
        b = (out2 / "table1.csv").read_text().splitlines()
        # wall-clock columns differ; all statistical columns must be identical
        assert [",".join(r.split(",")[:9]) for r in a] == \
               [",".join(r.split(",")[:9]) for r in b]

    def test_table1_full_grid_has_nine_rows(self, tmp_path):
        out = tmp_path / "t9"
        code = main(["table1", "--n", "20", "--N", "2", "--sigma", "0.5,0.1,0.01",
                     "--seed", "1", "--out", str(out)])
        assert code == 0
        lines = (out / "table1.csv").read_text().splitlines()
        assert len(lines) == 10  # header + 3 mus x 3 sigmas

    def test_table2_runs(self, tmp_path):
        out = tmp_path / "t2"
        code = main(["table2", "--n", "50", "--N", "2", "--sigma", "0.1",
                     "--mu-id", "iso", "--seed", "2", "--out", str(out)])
        assert code == 0
        lines = (out / "table2.csv").read_text().splitlines()
        assert len(lines) == 2
        assert lines[1].split(",")[0] == "difftensor"

    def test_cltfig_small(self, tmp_path):
        out = tmp_path / "clt"
        code = main(["cltfig", "--n", "5", "--replicates", "40", "--seed", "3",
                     "--out", str(out)])
        assert code == 0
        lines = (out / "coordinates.csv").read_text().splitlines()
        assert len(lines) == 41
        assert (out / "cltfig.png").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert "ks_statistic" in manifest["extras"]

    def test_frusta_small_and_replay(self, tmp_path):
        out1 = tmp_path / "f1"
        args = ["frusta", "--ages", "4", "--trees", "3", "--kappa", "12",
                "--B", "50", "--seed", "5", "--compare", "both",
                "--out", str(out1)]
        assert main(args) == 0
        band = (out1 / "band.csv").read_text().splitlines()
        assert band[0] == "age,estimate,lower,upper"
        assert len(band) == 5
        for row in band[1:]:
            _, est, lo, hi = row.split(",")
            assert 0.0 <= float(lo) <= float(hi)
        assert (out1 / "stand.csv").exists()
        assert (out1 / "growth_curves.csv").exists()
        assert (out1 / "frusta.png").exists()
        out2 = tmp_path / "f2"
        assert main(["replay", str(out1 / "manifest.json"), "--out", str(out2)]) == 0
        assert (out1 / "band.csv").read_bytes() == (out2 / "band.csv").read_bytes()
        assert (out1 / "stand.csv").read_bytes() == (out2 / "stand.csv").read_bytes()

    def test_dtmean(self, rng, tmp_path):
        tensors = []
        for _ in range(4):
            u = np.triu(rng.standard_normal((3, 3)))
            u[np.arange(3), np.arange(3)] = rng.uniform(0.5, 1.5, 3)
            tensors.append(u.T @ u)
        data = tmp_path / "tensors.csv"
        save_tensors(data, tensors)
        out = tmp_path / "dt"
        assert main(["dtmean", "--data", str(data), "--out", str(out)]) == 0
        mean = load_tensors(out / "mean_tensor.csv")[0]
        assert mean.m == 3

    def test_missing_input_exits_nonzero(self, tmp_path):
        code = main(["mean", "--data", str(tmp_path / "nope.csv"),
                     "--out", str(tmp_path / "o")])
        assert code == 1

    def test_nonconverged_mean_exits_nonzero(self, rng, tmp_path):
        objs = [rng.standard_normal((3, 4)) for _ in range(10)]
        data = tmp_path / "d.csv"
        save_dataset(data, Dataset(m=3, k=4, objects=objs))
        out = tmp_path / "o"
        code = main(["mean", "--data", str(data), "--max-iter", "1",
                     "--tol", "1e-300", "--out", str(out)])
        assert code == 1
        assert (out / "mean.csv").exists()  # outputs still written

    def test_thread_env_does_not_change_results(self, tmp_path, monkeypatch):
        out1 = tmp_path / "s1"
        main(["table1", "--n", "40", "--N", "3", "--sigma", "0.1", "--mu-id", "iso",
              "--seed", "7", "--out", str(out1)])
        monkeypatch.setenv("SHAPESTAT_THREADS", "4")
        out2 = tmp_path / "s4"
        main(["table1", "--n", "40", "--N", "3", "--sigma", "0.1", "--mu-id", "iso",
              "--seed", "7", "--out", str(out2)])
        a = (out1 / "table1.csv").read_text().splitlines()
        b = (out2 / "table1.csv").read_text().splitlines()
        assert [",".join(r.split(",")[:9]) for r in a] == \
               [",".join(r.split(",")[:9]) for r in b]
