import csv
import io

import numpy as np
import pytest

from _lossless import make_lossless
from lodmsq import cli
from lodmsq.data import load_ivecs, load_vecs, save_vecs
from lodmsq.index import serialize_index
from lodmsq.lod import index_from_components


def run(*argv):
    return cli.main([str(a) for a in argv])


def read_csv(path):
    return list(csv.DictReader(io.StringIO(path.read_text())))


@pytest.fixture
def toy(tmp_path):
    X = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 2.0]], dtype=np.float32)
    Q = np.array([[1.0, 0.0], [-1.0, 0.0]], dtype=np.float32)
    save_vecs(X, tmp_path / "toy.fvecs")
    save_vecs(Q, tmp_path / "toyq.fvecs")
    return tmp_path


def test_gt_depth1_and_cache(toy, capsys):
    assert run("gt", "--data", toy / "toy.fvecs", "--queries", toy / "toyq.fvecs",
               "--depth", 1) == 0
    path = capsys.readouterr().out.strip()
    ids = load_ivecs(path)
    assert ids.shape == (2, 1)
    np.testing.assert_array_equal(ids[:, 0], [2, 1])
    before = open(path, "rb").read()
    assert run("gt", "--data", toy / "toy.fvecs", "--queries", toy / "toyq.fvecs",
               "--depth", 1) == 0
    assert capsys.readouterr().out.strip() == path
    assert open(path, "rb").read() == before


def test_gt_depth_too_large(toy, capsys):
    assert run("gt", "--data", toy / "toy.fvecs", "--queries", toy / "toyq.fvecs",
               "--depth", 4) == 2
    assert "depth" in capsys.readouterr().err


def test_missing_dataset(tmp_path, capsys):
    assert run("build", "--data", tmp_path / "nope.fvecs", "--out", tmp_path / "i.idx",
               "--seed", 0, "--m", 2, "--n_B", 2) == 2
    assert "not found" in capsys.readouterr().err


def test_seed_required(toy, capsys):
    assert run("build", "--data", toy / "toy.fvecs", "--out", toy / "i.idx",
               "--m", 2, "--n_B", 2) == 2
    assert "--seed" in capsys.readouterr().err
    assert run("ablate", "--data", toy / "toy.fvecs", "--queries", toy / "toyq.fvecs",
               "--m", 2) == 2


def test_config_file(toy, capsys):
    cfg = toy / "run.cfg"
    cfg.write_text("# toy\ndepth = 2\n")
    assert run("gt", "--config", cfg, "--data", toy / "toy.fvecs",
               "--queries", toy / "toyq.fvecs") == 0
    assert load_ivecs(capsys.readouterr().out.strip()).shape == (2, 2)
    # flags win over the file
    assert run("gt", "--config", cfg, "--data", toy / "toy.fvecs",
               "--queries", toy / "toyq.fvecs", "--depth", 1) == 0
    assert load_ivecs(capsys.readouterr().out.strip()).shape == (2, 1)
    cfg.write_text("deepth = 2\n")
    assert run("gt", "--config", cfg, "--data", toy / "toy.fvecs",
               "--queries", toy / "toyq.fvecs") == 2
    assert "deepth" in capsys.readouterr().err
    assert run("gt", "--config", toy / "missing.cfg") == 2


def test_help_lists_parameters(capsys):
    for command in ("build", "search", "ablate"):
        with pytest.raises(SystemExit):
            cli.build_parser().parse_args([command, "--help"])
        out = capsys.readouterr().out
        for name in ("m", "n_B", "n_W", "l_UQ", "l_SQ", "m_ADC"):
            assert f"--{name}" in out or f"{name}:" in out, (command, name)


def test_bad_m_adc(toy, tmp_path):
    X = np.random.default_rng(0).standard_normal((60, 8)).astype(np.float32)
    save_vecs(X, tmp_path / "x.fvecs")
    assert run("build", "--data", tmp_path / "x.fvecs", "--out", tmp_path / "x.idx",
               "--seed", 0, "--m", 4, "--n_B", 2, "--n_W", 4) == 0
    assert run("search", "--index", tmp_path / "x.idx", "--queries", tmp_path / "x.fvecs",
               "--out", tmp_path / "r", "--m_ADC", 5) == 2


def _pipeline(root, X, Q, build_args, m_adc, threads, k=10):
    save_vecs(X, root / "x.fvecs")
    save_vecs(Q, root / "q.fvecs")
    if build_args is not None:
        assert run("build", "--data", root / "x.fvecs", "--out", root / "x.idx",
                   "--threads", threads, *build_args) == 0
    assert run("gt", "--data", root / "x.fvecs", "--queries", root / "q.fvecs",
               "--depth", k, "--out_dir", root, "--threads", threads) == 0
    gt = next(root.glob("x.gt*.ivecs"))
    assert run("search", "--index", root / "x.idx", "--queries", root / "q.fvecs",
               "--k", k, "--m_ADC", m_adc, "--out", root / "res", "--threads", threads) == 0
    assert run("eval", "--results", root / "res.ids.ivecs", "--gt", gt, "--index",
               root / "x.idx", "--ks", "1,5,10", "--out", root / "eval.csv",
               "--threads", threads) == 0
    return read_csv(root / "eval.csv")


def test_lossless_end_to_end(tmp_path, capsys):
    L = make_lossless(n=2000, n_queries=200, seed=3)
    X = L["X"].astype(np.float32).astype(np.float64)
    index = index_from_components(X, L["centers"], L["rotation"], L["codebook"],
                                  L["config"], clip_quantiles=(0.0, 1.0))
    serialize_index(index, tmp_path / "x.idx")
    rows = _pipeline(tmp_path, X, L["Q"], None, L["config"].n_partitions, 1)
    assert [r["k"] for r in rows] == ["1", "5", "10"]
    assert all(float(r["recall"]) == 1.0 for r in rows)
    assert rows[0]["kind"] == "mips_lod_msq" and rows[0]["bits"] == str(8 * 4 + 8)


def test_build_points_are_centers(tmp_path):
    # one point per partition: every residual is zero, so scores are exact
    rng = np.random.default_rng(1)
    X = rng.standard_normal((40, 16)).astype(np.float32)
    Q = rng.standard_normal((30, 16)).astype(np.float32)
    rows = _pipeline(tmp_path, X, Q, ["--seed", 0, "--m", 40, "--n_B", 4], 40, 1)
    assert all(float(r["recall"]) == 1.0 for r in rows)


def test_byte_identical_runs(tmp_path, small_clustered):
    X, Q = small_clustered[0][:1500], small_clustered[1][:50]
    outs = []
    for name, threads in (("a", 1), ("b", 1), ("c", 4)):
        root = tmp_path / name
        root.mkdir()
        _pipeline(root, X, Q, ["--seed", 5, "--m", 12, "--n_B", 6, "--train_size", 800], 3,
                  threads)
        outs.append([(root / f).read_bytes()
                     for f in ("x.idx", "res.ids.ivecs", "res.scores.fvecs", "eval.csv")])
    assert outs[0] == outs[1] == outs[2]


def test_ablate_four_kinds(tmp_path, small_clustered):
    X, Q = small_clustered[0][:1200], small_clustered[1][:40]
    save_vecs(X, tmp_path / "x.fvecs")
    save_vecs(Q, tmp_path / "q.fvecs")
    assert run("ablate", "--data", tmp_path / "x.fvecs", "--queries", tmp_path / "q.fvecs",
               "--seeds", 0, "--m", 8, "--bits", 40, "--ks", "1,10",
               "--train_size", 600, "--out", tmp_path / "ab.csv") == 0
    rows = read_csv(tmp_path / "ab.csv")
    assert {r["kind"] for r in rows} == {"mips_opq", "mips_lod_msq", "mips_msq", "mips_lod_opq"}
    assert {r["bits"] for r in rows} == {"40"}
    assert len(rows) == 8
    # a budget one kind cannot meet is a usage error
    assert run("ablate", "--data", tmp_path / "x.fvecs", "--queries", tmp_path / "q.fvecs",
               "--seeds", 0, "--m", 8, "--bits", 7, "--kinds", "mips_lod_msq") == 2


def test_analyze_outputs(tmp_path):
    assert run("analyze", "variance", "--d", 8, "--samples", 2000, "--n_v", 16,
               "--out", tmp_path / "v.csv") == 0
    rows = read_csv(tmp_path / "v.csv")
    assert list(rows[0]) == ["angle", "x", "y", "var"] and len(rows) == 16
    assert run("analyze", "bounds", "--ms", "100", "--ds", "8", "--deltas", "0.5",
               "--trials", 500, "--out", tmp_path / "b.csv") == 0
    (row,) = read_csv(tmp_path / "b.csv")
    assert list(row) == ["m", "d", "delta", "L1", "L1_weak", "exact", "empirical"]
    assert float(row["L1"]) <= float(row["exact"]) + 1e-12
    assert run("analyze", "lemma1", "--ds", "1,4", "--samples", 1000,
               "--out", tmp_path / "l.csv") == 0
    rows = read_csv(tmp_path / "l.csv")
    assert rows[0]["estimate"] == "1" and len(rows) == 2
