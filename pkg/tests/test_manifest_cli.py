import csv
import hashlib
import json
import shutil

import numpy as np
import pytest

from akc.cli import main, orbit_header, parse_point
from akc.manifest import ManifestError, clean_json, dump_json, load_run
from akc.precision import to_complex, to_mp, working_precision

from conftest import TINY_CONFIG

SQRT2 = 1 / np.sqrt(2)
POINT = f"{SQRT2}:0,0:{SQRT2}"


def corrupt_copy(src, dst, slot, **changes):
    """Copy a run and overwrite one slot of the stored chain, keeping hashes consistent."""
    shutil.copytree(src, dst)
    path = dst / "chain.json"
    doc = json.loads(path.read_text())
    doc["ladders"][0][slot].update(changes)
    doc["F"]["conj"][slot].update({("q" if k == "degree" else k): v for k, v in changes.items()})
    text = dump_json(doc)
    path.write_text(text)
    manifest = json.loads((dst / "manifest.json").read_text())
    manifest["chain_sha256"] = hashlib.sha256(text.encode()).hexdigest()
    (dst / "manifest.json").write_text(dump_json(manifest))
    return dst


# ---------------------------------------------------------------- point parsing

def test_parse_point_accepts_unit_vectors():
    z = parse_point(POINT)
    assert np.allclose(z, [SQRT2, 1j * SQRT2])
    assert np.allclose(parse_point("1,0"), [1, 0])


@pytest.mark.parametrize("text", ["1:0", "1:1,0:0", "a:b,0:0", "0.5:0,0.5:0"])
def test_parse_point_rejects(text):
    with pytest.raises(ValueError):
        parse_point(text)


def test_orbit_header():
    assert orbit_header(2) == ["step", "x_1", "x_2", "x_3", "x_4", "nearest_reference_distance"]


def test_clean_json_handles_numpy_and_nonfinite():
    doc = clean_json({"a": np.float64(np.inf), "b": np.int64(3), "c": (1, np.bool_(True)),
                      "d": 1 + 2j, "e": np.array([0.5])})
    assert doc == {"a": "inf", "b": 3, "c": [1, True], "d": [1.0, 2.0], "e": [0.5]}


# ---------------------------------------------------------------- exit codes

def test_construct_bad_config_exits_2(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("d = 1\n")
    assert main(["construct", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert main(["construct", "--config", str(tmp_path / "missing.cfg")]) == 2


def test_unknown_command_and_flags_exit_2():
    assert main(["bogus"]) == 2
    assert main(["orbit", "--length", "3"]) == 2


def test_missing_manifest_exits_2(tmp_path):
    assert main(["verify", str(tmp_path / "nothing"), "--battery", "group"]) == 2
    assert main(["report", str(tmp_path / "nothing")]) == 2


def test_unknown_battery_exits_2(tiny_run):
    out, _ = tiny_run
    assert main(["verify", str(out), "--battery", "everything"]) == 2


def test_non_unit_point_exits_2(tiny_run):
    out, _ = tiny_run
    assert main(["orbit", str(out), "--point", "1:0,1:0", "--length", "2"]) == 2
    assert main(["orbit", str(out), "--point", "1:0,0:0,0:0", "--length", "2"]) == 2
    assert main(["orbit", str(out), "--point", POINT, "--length", "0"]) == 2
    assert main(["solve-transitivity", "--point", "2,0", "--target", "0,1"]) == 2


# ---------------------------------------------------------------- manifest

def test_manifest_lists_every_slot(tiny_run):
    out, _ = tiny_run
    m = json.loads((out / "manifest.json").read_text())
    assert m["schema_version"] == 1
    files = m["stages"][0]["files"]
    assert sorted(f for f in files if "/slot_" in f) == sorted(
        f"stage_0/slot_{l}.json" for l in range(9))
    for name, digest in files.items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest
    assert {"numpy", "scipy", "gmpy2", "python", "akc"} <= set(m["versions"])
    log = json.loads((out / "run_log.json").read_text())
    assert log["seconds"] > 0 and "started" in log


def test_manifest_bytes_identical_on_rerun(tiny_run, tiny_run_repeat):
    (a, _), (b, _) = tiny_run, tiny_run_repeat
    for name in ["manifest.json", "chain.json", "stage_0/certification.json",
                 "stage_0/outer_checks.json"]:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_load_run_detects_tampering(tiny_run, tmp_path):
    out, _ = tiny_run
    bad = tmp_path / "tampered"
    shutil.copytree(out, bad)
    text = (bad / "chain.json").read_text().replace('"1/2"', '"1/3"', 1)
    (bad / "chain.json").write_text(text)
    with pytest.raises(ManifestError):
        load_run(bad)


def test_load_run_rebuilds_chain(tiny_run):
    out, _ = tiny_run
    run = load_run(out)
    assert run.config.d == 2 and len(run.chain.conj) == 9
    assert run.C0 > 1


# ---------------------------------------------------------------- verify

@pytest.mark.parametrize("battery", ["inverses", "commutation", "periodicity"])
def test_verify_batteries_pass_on_stored_run(tiny_run, tmp_path, battery):
    out, _ = tiny_run
    dest = tmp_path / f"{battery}.json"
    assert main(["verify", str(out), "--battery", battery, "--out", str(dest)]) == 0
    doc = json.loads(dest.read_text())
    assert doc["pass"] and doc["schema_version"] == 1 and doc["battery"] == battery


def test_verify_commutation_fails_on_corrupted_amplitude(tiny_run, tmp_path):
    out, _ = tiny_run
    bad = corrupt_copy(out, tmp_path / "bad", 2, amplitude="1e200")
    dest = tmp_path / "c.json"
    assert main(["verify", str(bad), "--battery", "commutation", "--out", str(dest)]) == 1
    assert json.loads(dest.read_text())["results"]["commutation"] > 1e-3


def test_verify_commutation_fails_on_mismatched_degree(tiny_run, tmp_path):
    out, _ = tiny_run
    bad = corrupt_copy(out, tmp_path / "bad", 3, degree=15)
    dest = tmp_path / "c.json"
    assert main(["verify", str(bad), "--battery", "commutation", "--out", str(dest)]) == 1


# ---------------------------------------------------------------- orbit

def read_orbit(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([[float(v) for v in r] for r in rows[1:]])


def test_orbit_first_row_is_image(tiny_run, tmp_path):
    out, _ = tiny_run
    dest = tmp_path / "o.csv"
    assert main(["orbit", str(out), "--point", POINT, "--length", "1", "--out", str(dest)]) == 0
    header, rows = read_orbit(dest)
    assert header == orbit_header(2)
    assert rows.shape == (1, 6) and rows[0, 0] == 1
    run = load_run(out)
    # oracle at 256 bits: large amplitudes amplify double rounding
    with working_precision(256):
        fx = to_complex(run.chain.apply(to_mp(parse_point(POINT)[None])))[0]
    expect = np.concatenate([[v.real, v.imag] for v in fx])
    assert np.max(np.abs(rows[0, 1:5] - expect)) <= 1e-10
    assert 0 <= rows[0, 5] < 0.5


def test_orbit_closes_after_period(tiny_run, tmp_path):
    out, _ = tiny_run
    q = load_run(out).chain.alpha.denominator
    dest = tmp_path / "o.csv"
    assert main(["orbit", str(out), "--point", POINT, "--length", str(q),
                 "--out", str(dest)]) == 0
    _, rows = read_orbit(dest)
    assert len(rows) == q and rows[-1, 0] == q
    x = np.array([SQRT2, 0, 0, SQRT2])
    assert np.max(np.abs(rows[-1, 1:5] - x)) <= 1e-8
    assert np.allclose(np.linalg.norm(rows[:, 1:5], axis=1), 1, atol=1e-12)


# ---------------------------------------------------------------- solve-transitivity

def test_solve_transitivity_to_itself(tmp_path, capsys):
    dest = tmp_path / "s.json"
    assert main(["solve-transitivity", "--point", POINT, "--target", POINT,
                 "--out", str(dest)]) == 0
    doc = json.loads(dest.read_text())
    assert doc["schema_version"] == 1 and doc["defect"] < 1e-10
    assert max(min(float(m["s"]), 1 - float(m["s"])) for m in doc["moves"]) < 1e-12
    assert len(doc["moves"]) == 5 * 2 - 3


def test_solve_transitivity_antipodal(tmp_path, capsys):
    assert main(["solve-transitivity", "--point", "1:0,0:0", "--target=-1:0,0:0"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["pass"] and doc["defect"] < 1e-6


def test_solve_transitivity_d3(capsys):
    assert main(["solve-transitivity", "--point", "0:0,1:0,0:0", "--target", "0:0,0:0,0:1"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["d"] == 3 and len(doc["moves"]) == 12 and doc["defect"] < 1e-6


# ---------------------------------------------------------------- report

def test_report_outputs(tiny_run, tmp_path):
    out, code = tiny_run
    dest = tmp_path / "report"
    assert main(["report", str(out), "--out", str(dest)]) == code
    summary = json.loads((dest / "summary.json").read_text())
    assert summary["schema_version"] == 1
    assert summary["config_hash"] == json.loads((out / "manifest.json").read_text())["config_hash"]
    with open(dest / "slots.csv") as fh:
        slots = list(csv.DictReader(fh))
    assert [int(r["l"]) for r in slots] == list(range(9))
    with open(dest / "points.csv") as fh:
        points = list(csv.DictReader(fh))
    assert {"z1=0", "z1=z2"} <= {r["point"] for r in points}


def test_construct_seed_override_changes_hash(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(TINY_CONFIG)
    from akc.config import load_config

    base = load_config(cfg)
    assert base.with_updates(seed=7).digest() != base.digest()
