import json
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from twistlab import cli
from twistlab.cli import Cache, CacheKey, RunConfig, make_config, read_csv, run, write_csv

SCHEMAS = Path(__file__).resolve().parents[1] / "docs" / "schemas"
EPS = "0.6283185307179586"


@pytest.fixture(autouse=True)
def _no_env_cache(monkeypatch):
    monkeypatch.delenv(cli.CACHE_ENV, raising=False)


def _schema(name):
    return json.loads((SCHEMAS / f"{name}.schema.json").read_text())


def _run(tmp_path, argv):
    code = cli.main(argv + ["--out", str(tmp_path)])
    return code, json.loads((tmp_path / f"manifest_{argv[0]}.json").read_text())


CASES = {
    "wkam": ["wkam", "--eps", "0", "--nx", "64", "--nt", "32", "--c", "0.3"],
    "flats": ["flats", "--eps", EPS, "--p", "0", "--q", "1"],
    "upq": ["upq", "--eps", EPS, "--grid", "64"],
    "rho": ["rho", "--eps", "0", "--nx", "64", "--nt", "32", "--c", "0.5", "--periods", "20"],
    "holder": ["holder", "--eps", "0", "--nx", "64", "--nt", "32", "--c-min", "-0.2",
               "--c-max", "0.2", "--n-c", "5", "--pairs", "10"],
    "atlas": ["atlas", "--eps", "0", "--nx", "64", "--nt", "32", "--n-c", "3"],
    "validate": ["validate", "--eps", EPS],
    "connect": ["connect", "--eps", EPS, "--nx", "256", "--c1", "0", "--c2", "0.02",
                "--t0", "20", "--t1", "20", "--max-step", "1"],
}


@pytest.mark.parametrize("name", sorted(CASES))
def test_outputs_match_schemas(tmp_path, name):
    code, manifest = _run(tmp_path, CASES[name])
    assert code == 0, manifest.get("error")
    jsonschema.validate(manifest, _schema("manifest"))
    jsonschema.validate(json.loads((tmp_path / f"{name}.json").read_text()), _schema(name))


def test_integrable_values(tmp_path):
    _run(tmp_path, CASES["wkam"])
    summary = json.loads((tmp_path / "wkam.json").read_text())
    assert summary["alpha"] == pytest.approx(0.045, abs=1e-12)
    _run(tmp_path, CASES["rho"])
    rho = json.loads((tmp_path / "rho.json").read_text())
    assert rho["rho"] == pytest.approx(0.5, abs=1e-9) and rho["symbol"] == "1/2"


def test_portrait_and_beta(tmp_path):
    code, m = _run(tmp_path, ["portrait", "--eps", "0", "--seeds", "5", "--iters", "10", "--svg"])
    assert code == 0 and (tmp_path / "portrait.svg").exists()
    header, cols = read_csv(tmp_path / "portrait.csv")
    assert header == ["seed_id", "x", "p"] and len(cols) == 55
    code, m = _run(tmp_path, ["beta", "--eps", "0", "--max-q", "5"])
    _, cols = read_csv(tmp_path / "beta.csv")
    assert np.allclose(cols[:, 1], 0.5 * cols[:, 0] ** 2, atol=1e-12)


def test_deterministic_bytes(tmp_path):
    argv = ["wkam", "--eps", EPS, "--nx", "64", "--nt", "32", "--c", "0.1", "--no-cache"]
    outs = []
    for sub in ("a", "b"):
        d = tmp_path / sub
        assert cli.main(argv + ["--out", str(d)]) == 0
        outs.append(((d / "wkam.csv").read_bytes(), (d / "wkam.json").read_bytes()))
    assert outs[0] == outs[1]


def test_cache_hit_and_miss(tmp_path):
    argv = CASES["wkam"]
    _, m1 = _run(tmp_path, argv)
    _, m2 = _run(tmp_path, argv)
    assert not m1["cache"]["hit"] and m2["cache"]["hit"]
    assert m1["cache"]["key"] == m2["cache"]["key"]
    _, m3 = _run(tmp_path, argv[:3] + ["--nx", "32"] + argv[5:])
    assert not m3["cache"]["hit"] and m3["cache"]["key"] != m1["cache"]["key"]


def test_cache_version_invalidates(tmp_path):
    cfg = RunConfig()
    cache = Cache(tmp_path)
    k1 = CacheKey.make("wkam", cfg, {"c": 0.1})
    k2 = CacheKey.make("wkam", cfg, {"c": 0.1}, version="other")
    cache.put(k1, {"a": [1.0, 2.0]})
    assert cache.get(k1) == {"a": [1.0, 2.0]}
    assert k1.digest != k2.digest and cache.get(k2) is None


def test_corrupt_cache_is_evicted(tmp_path):
    argv = CASES["wkam"]
    _, m1 = _run(tmp_path, argv)
    entry = tmp_path / ".cache" / f"{m1['cache']['key']}.json"
    data = json.loads(entry.read_text())
    data["payload"]["summary"]["alpha"] = 123.0
    entry.write_text(json.dumps(data))
    with pytest.warns(UserWarning, match="CORRUPT_CACHE"):
        _, m2 = _run(tmp_path, argv)
    assert not m2["cache"]["hit"] and m2["cache"]["evicted"] == [m1["cache"]["key"]]
    assert json.loads((tmp_path / "wkam.json").read_text())["alpha"] == pytest.approx(0.045)


def test_env_cache_location(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.CACHE_ENV, str(tmp_path / "elsewhere"))
    _run(tmp_path / "out", CASES["flats"])
    assert any((tmp_path / "elsewhere").iterdir())


def test_exit_codes(tmp_path, capsys):
    code, m = _run(tmp_path, ["wkam", "--eps", "-1"])
    assert code == 2 and m["error"]["code"] == "VALIDATION"
    code, m = _run(tmp_path, ["wkam", "--eps", EPS, "--nx", "64", "--nt", "32",
                              "--max-periods", "2", "--tol", "1e-14"])
    assert code == 3 and m["status"] == "error"
    with pytest.raises(SystemExit) as ex:
        cli.main(["wkam", "--bogus"])
    assert ex.value.code == 2
    assert cli.main(CASES["flats"] + ["--out", str(tmp_path), "--json"]) == 0
    printed = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert printed["exit_code"] == 0 and "c_plus" in printed["summary"]


def test_config_file_then_flags(tmp_path):
    cfg_file = tmp_path / "run.yaml"
    cfg_file.write_text("eps: 0.5\nnx: 64\nnt: 32\nc: 0.2\n")
    cfg = make_config({"eps": 0.5, "nx": 64, "c": 0.2}, {"nx": 32})
    assert cfg.eps == 0.5 and cfg.nx == 32 and cfg.params["c"] == 0.2
    code, m = _run(tmp_path, ["wkam", "--config", str(cfg_file), "--eps", "0"])
    assert code == 0
    assert m["config"]["eps"] == 0.0 and m["config"]["nx"] == 64
    assert m["summary"]["c"] == 0.2


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal(50), rng.uniform(-1e-300, 1e300, 50)
    write_csv(tmp_path / "t.csv", ["a", "b"], [a, b])
    _, cols = read_csv(tmp_path / "t.csv")
    assert np.array_equal(cols[:, 0], a) and np.array_equal(cols[:, 1], b)
