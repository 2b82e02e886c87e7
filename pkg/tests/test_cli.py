import numpy as np
import pandas as pd
import pytest

from config import SEED_ENV, load_run_config
from lowbend.nn import load_checkpoint
from lowbend.triplet_store import read_dataset, read_header
from lowbend_cli import EXIT_ERROR, EXIT_OK, run


@pytest.fixture(autouse=True)
def isolated_cwd(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv(SEED_ENV, raising=False)


def gen(prefix, *extra):
    return run(["gen", "--dataset", "s", "--count", "50", "--res", "8", "--seed", "7",
                "--output", str(prefix), *extra])


def test_gen_is_deterministic(tmp_path):
    assert gen(tmp_path / "a") == EXIT_OK
    assert gen(tmp_path / "b") == EXIT_OK
    a = (tmp_path / "a.lbld").read_bytes()
    assert a == (tmp_path / "b.lbld").read_bytes()
    header = read_header(str(tmp_path / "a.lbld"))
    assert (int(header["count"]), int(header["width"])) == (50, 8)
    echo = load_run_config(str(tmp_path / "a.config.yaml"))
    assert (echo.seed, echo.count, echo.resolution) == (7, 50, 8)


def test_seed_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(SEED_ENV, "8")
    assert gen(tmp_path / "c") == EXIT_OK
    assert load_run_config(str(tmp_path / "c.config.yaml")).seed == 8
    monkeypatch.delenv(SEED_ENV)
    gen(tmp_path / "d")
    assert (tmp_path / "c.lbld").read_bytes() != (tmp_path / "d.lbld").read_bytes()


def test_gen_quantized(tmp_path):
    code = run(["gen", "--dataset", "g", "--count", "20", "--quantize", "--output",
                str(tmp_path / "q")])
    assert code == EXIT_OK
    for t in read_dataset(str(tmp_path / "q.lbld")):
        assert set(np.unique(t.img_x.pixels)) <= {0.0, 1.0}


def test_renderer_options_reach_the_config(tmp_path):
    assert gen(tmp_path / "r", "--s-rod-height", "0.4") == EXIT_OK
    assert load_run_config(str(tmp_path / "r.config.yaml")).options() == {"rod_height": 0.4}


def test_verify_flat_square(tmp_path):
    code = run(["verify", "--case", "flat-square", "--mc-samples", "20000",
                "--output", str(tmp_path / "flat")])
    assert code == EXIT_OK
    df = pd.read_csv(tmp_path / "flat.verify.csv", comment="#")
    assert np.all(df["abs_diff"] <= 1e-12)
    assert "status=exact" in (tmp_path / "flat.verify.csv").read_text()


def test_verify_sphere_limit(tmp_path):
    code = run(["verify", "--case", "sphere", "--lambda", "2", "--mc-samples", "20000",
                "--output", str(tmp_path / "sphere")])
    assert code == EXIT_OK
    df = pd.read_csv(tmp_path / "sphere.verify.csv", comment="#")
    assert df["limit_value"].tolist() == pytest.approx([2.0] * 4)
    assert df["epsilon"].tolist() == [0.4, 0.2, 0.1, 0.05]


def test_errors_exit_with_one(tmp_path):
    assert run(["verify", "--eps-list", "0.4,abc", "--output", str(tmp_path / "v")]) == EXIT_ERROR
    assert run(["eval", "--model", str(tmp_path / "missing.lblm"),
                "--output", str(tmp_path / "e")]) == EXIT_ERROR
    assert run(["gen", "--eps", "-1", "--output", str(tmp_path / "g")]) == EXIT_ERROR


def test_train_then_eval(tmp_path):
    prefix = str(tmp_path / "m")
    common = ["--dataset", "s", "--res", "8", "--seed", "3", "--output", prefix]
    assert run(["train", *common, "--steps", "0"]) == EXIT_OK
    untrained = load_checkpoint(prefix + ".lblm")
    assert untrained.encoder_opt.state.step == 0
    assert run(["train", *common, "--steps", "3", "--batch", "8", "--latent-dim", "5"]) == EXIT_OK
    log = pd.read_csv(prefix + ".train.csv")
    assert log["step"].tolist() == [1, 2, 3]

    eval_args = ["eval", *common, "--samples", "40", "--test-pairs", "10", "--t-steps", "5"]
    assert run(eval_args) == EXIT_OK
    out = tmp_path / "m_eval"
    projection = pd.read_csv(out / "projection.csv")
    assert len(projection) == 40
    assert (out / "projection_145.csv").exists()
    assert len(pd.read_csv(out / "pca_stds.csv")) == 5
    interp = pd.read_csv(out / "interp_err.csv")
    assert interp["err"].iloc[0] == pytest.approx(0.0, abs=1e-12)
    assert interp["err"].iloc[-1] == pytest.approx(0.0, abs=1e-12)
    assert (out / "000_input.pgm").read_bytes().startswith(b"P5\n8 8\n255\n")

    first = (out / "interp_err.csv").read_bytes()
    assert run(eval_args) == EXIT_OK
    assert (out / "interp_err.csv").read_bytes() == first


def test_train_rejects_mismatched_dataset(tmp_path):
    gen(tmp_path / "data")
    code = run(["train", "--dataset", "r", "--res", "8", "--steps", "1",
                "--dataset-file", str(tmp_path / "data.lbld"), "--output", str(tmp_path / "m")])
    assert code == EXIT_ERROR


def test_usage_errors_exit_with_one(tmp_path):
    assert run([]) == EXIT_ERROR
    assert run(["gen", "--bogus"]) == EXIT_ERROR
    assert run(["verify", "--case", "torus", "--output", str(tmp_path / "v")]) == EXIT_ERROR
    assert run(["train", "--steps", "many", "--output", str(tmp_path / "t")]) == EXIT_ERROR


def test_gen_rejects_radius_above_the_dataset_bound(tmp_path):
    assert run(["gen", "--dataset", "s", "--eps", "4", "--count", "5",
                "--output", str(tmp_path / "s")]) == EXIT_ERROR
    assert run(["gen", "--dataset", "r", "--eps", "2", "--count", "5",
                "--output", str(tmp_path / "r")]) == EXIT_ERROR
    assert not (tmp_path / "r.lbld").exists()
    assert run(["gen", "--dataset", "r", "--eps", "1.5", "--count", "5", "--res", "8",
                "--output", str(tmp_path / "ok")]) == EXIT_OK
