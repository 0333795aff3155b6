import json

import numpy as np
import pytest

from knnsv.cli import load_csv, main
from knnsv.core import InputError
from knnsv.data import gaussian_blobs


def write_csv(path, x, y, header=None):
    header = header or [f"f{j}" for j in range(x.shape[1])] + ["y"]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row, label in zip(x, y):
            fh.write(",".join(repr(float(v)) for v in row) + f",{label}\n")
    return path


@pytest.fixture
def pair(tmp_path):
    tr = gaussian_blobs(120, 3, seed=1)
    te = gaussian_blobs(15, 3, seed=2)
    return (str(write_csv(tmp_path / "train.csv", tr.x, tr.y)),
            str(write_csv(tmp_path / "test.csv", te.x, te.y)))


class TestLoadCsv:
    def test_small_file(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("a,b,y\n1,2,0\n3,4,1\n")
        ds = load_csv(p)
        assert (ds.n, ds.dim, ds.n_classes) == (2, 2, 2)

    def test_bad_cell_is_addressed(self, tmp_path):
        rows = ["1,2,3,0"] * 6 + ["1,2,oops,0"]
        p = tmp_path / "bad.csv"
        p.write_text("a,b,c,y\n" + "\n".join(rows) + "\n")
        with pytest.raises(InputError, match="row 7, column 3"):
            load_csv(p)

    def test_fractional_class_label(self, tmp_path):
        p = tmp_path / "f.csv"
        p.write_text("a,y\n1,0.5\n")
        with pytest.raises(InputError, match="row 1, column 2"):
            load_csv(p)

    def test_regression_labels_kept_real(self, tmp_path):
        p = tmp_path / "r.csv"
        p.write_text("y,a\n0.25,1\n-1.5,2\n")
        ds = load_csv(p, task="regression")
        assert ds.y.tolist() == [0.25, -1.5] and ds.x.ravel().tolist() == [1.0, 2.0]

    def test_constant_feature_normalizes_without_dividing_by_zero(self, tmp_path):
        p = tmp_path / "c.csv"
        p.write_text("a,b,y\n5,1,0\n5,3,1\n")
        ds = load_csv(p, normalize=True)
        assert ds.x[:, 0].tolist() == [0.0, 0.0]
        assert ds.x[:, 1].tolist() == [-1.0, 1.0]

    def test_missing_label_column(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("a,b\n1,2\n")
        with pytest.raises(InputError, match="label"):
            load_csv(p)


def test_values_writes_file(pair, tmp_path):
    out = tmp_path / "v.csv"
    rc = main(["values", "--train", pair[0], "--test", pair[1], "--method", "soft", "--k", "5",
               "--exact", "--out", str(out)])
    assert rc == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "index,value" and len(lines) == 121
    vals = np.array([float(line.split(",")[1]) for line in lines[1:]])
    # efficiency summed over 15 test points stays within [-0.5, 0.5] each
    assert abs(vals.sum()) <= 15 * 0.5 + 1e-9


def test_values_output_is_reproducible(pair, tmp_path, capsys):
    args = ["values", "--train", pair[0], "--test", pair[1], "--json", "--normalize"]
    main(args)
    first = capsys.readouterr().out
    main(args + ["--threads", "4"])
    assert capsys.readouterr().out == first
    assert len(json.loads(first)["values"]) == 120


def test_values_lsh(pair, capsys):
    rc = main(["values", "--train", pair[0], "--test", pair[1], "--lsh", "--k-star", "10",
               "--tables", "50", "--bits", "2", "--seed", "1"])
    assert rc == 0
    assert len(capsys.readouterr().out.splitlines()) == 121


def test_lsh_failure_reported(pair, capsys):
    rc = main(["values", "--train", pair[0], "--test", pair[1], "--lsh", "--k-star", "10",
               "--tables", "1", "--bits", "40", "--bucket-width", "0.01"])
    assert rc == 2
    assert "Fail:" in capsys.readouterr().err


def test_soft_regression_values(tmp_path, capsys):
    rng = np.random.default_rng(0)
    tr = write_csv(tmp_path / "tr.csv", rng.normal(size=(30, 2)), rng.normal(size=30))
    te = write_csv(tmp_path / "te.csv", rng.normal(size=(4, 2)), rng.normal(size=4))
    assert main(["values", "--train", str(tr), "--test", str(te), "--method", "soft-regression"]) == 0


def test_oracle_check_gate(capsys):
    assert main(["oracle-check", "--n", "8", "--trials", "100"]) == 0
    assert "PASS" in capsys.readouterr().out
    assert main(["oracle-check", "--n", "6", "--trials", "5", "--tol", "-1"]) == 1


def test_lsh_tune(pair, capsys):
    assert main(["lsh-tune", "--train", pair[0], "--test", pair[1], "--k-star", "5"]) == 0
    tun = json.loads(capsys.readouterr().out)
    assert tun["m"] >= 1 and tun["l"] >= 1


def test_detect_prints_one_record(pair, capsys):
    assert main(["detect", "--train", pair[0], "--test", pair[1], "--rule", "cluster",
                 "--flip-rate", "0.1", "--seed", "7"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 1
    assert json.loads(out[0])["seed"] == 7


def test_bench(capsys):
    assert main(["bench", "--sizes", "1000,2000", "--repeats", "1"]) == 0
    assert capsys.readouterr().out.splitlines()[0] == "n,seconds"


def test_unknown_subcommand_exits_nonzero(capsys):
    with pytest.raises(SystemExit) as err:
        main(["frobnicate"])
    assert err.value.code != 0
    assert "usage" in capsys.readouterr().err


def test_missing_file(tmp_path, capsys):
    assert main(["values", "--train", str(tmp_path / "no.csv"), "--test", str(tmp_path / "no.csv")]) == 2
