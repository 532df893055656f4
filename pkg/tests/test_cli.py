import json

import pytest
from fastapi.testclient import TestClient

from dlasim import cli
from dlasim.service.app import app


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_validate(capsys):
    code, out, _ = run(capsys, "validate")
    assert code == 0 and "conv1" in out and "96x55x55" in out


def test_model_report(capsys, tmp_path):
    code, out, _ = run(capsys, "model", "--out", str(tmp_path))
    assert code == 0
    assert "1352 DSPs" in out and "1,067.2" in out
    body = json.loads((tmp_path / "model.json").read_text())
    assert body["resources"]["m20k_total"] == 1392


def test_model_outputs_are_byte_identical(capsys, tmp_path):
    for d in ("a", "b"):
        assert run(capsys, "model", "--out", str(tmp_path / d))[0] == 0
    assert (tmp_path / "a" / "model.json").read_bytes() == (tmp_path / "b" / "model.json").read_bytes()


def test_exit_codes(capsys, tmp_path):
    assert run(capsys, "model", "--winograd", "off")[0] == cli.EXIT_INFEASIBLE
    assert run(capsys, "model", "--cvec", "16", "--kvec", "96")[0] == cli.EXIT_INFEASIBLE
    assert run(capsys, "model", "--topology", "nope")[0] == cli.EXIT_INPUT
    assert run(capsys, "model", "--cvec", "0")[0] == cli.EXIT_INPUT
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(capsys, "validate", "--topology", str(bad))[0] == cli.EXIT_INPUT
    assert run(capsys, "simulate", "--dump")[0] == cli.EXIT_INPUT


def test_dse_csv(capsys, tmp_path):
    for d in ("a", "b"):
        code, out, _ = run(capsys, "dse", "--cvec", "4,8", "--kvec", "8:96:8", "--out", str(tmp_path / d))
        assert code == 0
    assert "best: C_vec=8 K_vec=48" in out
    csv_a = (tmp_path / "a" / "dse.csv").read_bytes()
    assert csv_a == (tmp_path / "b" / "dse.csv").read_bytes()
    lines = csv_a.decode().splitlines()
    assert len(lines) == 1 + 2 * 12
    assert lines[1].startswith("4,8,")


def test_dse_to_stdout(capsys):
    code, out, _ = run(capsys, "dse", "--cvec", "8", "--kvec", "48")
    assert code == 0 and out.startswith("c_vec,k_vec,")


def test_simulate_small_with_padding(capsys, tmp_path, tiny_doc):
    topo = tmp_path / "tiny.json"
    topo.write_text(json.dumps(tiny_doc))
    with pytest.warns(UserWarning):
        code, out, err = run(capsys, "simulate", "--topology", str(topo), "--cvec", "4", "--kvec", "8",
                             "--images", "1", "--out", str(tmp_path / "o"), "--dump")
    assert code == 0
    assert "padded with 15 zero images" in err
    assert "PASS" in out
    assert (tmp_path / "o" / "intermediates" / "conv1.dlat").is_file()
    body = json.loads((tmp_path / "o" / "simulate.json").read_text())
    assert body["batch_padding"] == 15


def test_server_mode(capsys, monkeypatch, tmp_path, tiny_doc):
    import httpx
    client = TestClient(app)
    monkeypatch.setattr(httpx, "post", lambda url, json=None, timeout=None: client.post(url.split("x", 1)[1], json=json))
    code, out, _ = run(capsys, "model", "--server", "http://x")
    assert code == 0 and "1352 DSPs" in out
    assert run(capsys, "model", "--server", "http://x", "--winograd", "off")[0] == cli.EXIT_INFEASIBLE
    topo = tmp_path / "tiny.json"
    topo.write_text(json.dumps(tiny_doc))
    # the file is sent inline, so the server never reads the client's filesystem
    code, out, _ = run(capsys, "validate", "--server", "http://x", "--topology", str(topo))
    assert code == 0 and "tiny" in out
