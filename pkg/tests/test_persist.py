from pathlib import Path

import numpy as np
import pytest

from costshift import persist
from costshift.errors import ArtifactError


def test_round_trip_preserves_body(tmp_path):
    body = ["alpha 1 2 3", "beta " + persist.fmt_floats([0.1, -1e-17, 3.5])]
    p = tmp_path / "a.txt"
    persist.write_artifact(p, "unit-test", body)
    assert persist.read_artifact(p, "unit-test") == [ln.split() for ln in body]


def test_written_file_is_stable(tmp_path):
    body = ["k " + persist.fmt_floats([1 / 3, 2 / 7])]
    p1, p2 = tmp_path / "a.txt", tmp_path / "b.txt"
    persist.write_artifact(p1, "unit-test", body)
    rows = persist.read_artifact(p1, "unit-test")
    persist.write_artifact(p2, "unit-test", [" ".join(r) for r in rows])
    assert p1.read_bytes() == p2.read_bytes()


def test_float_formatting_round_trips_exactly():
    vals = np.array([0.1, 1.0, -0.0, 1e-300, -7.25, np.pi])
    back = persist.parse_floats(persist.fmt_floats(vals).split(), "test")
    assert np.array_equal(back, vals)
    assert np.signbit(back[2])


def test_version_bump_is_rejected(tmp_path):
    p = tmp_path / "a.txt"
    persist.write_artifact(p, "unit-test", ["x 1"])
    lines = p.read_text().splitlines()
    lines[0] = lines[0].replace(" 1", " 2")
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(ArtifactError, match="version"):
        persist.read_artifact(p, "unit-test")


def test_kind_mismatch_is_rejected(tmp_path):
    p = tmp_path / "a.txt"
    persist.write_artifact(p, "unit-test", ["x 1"])
    with pytest.raises(ArtifactError, match="unit-test"):
        persist.read_artifact(p, "other-kind")


def test_missing_file_error_names_path(tmp_path):
    missing = tmp_path / "nope.txt"
    with pytest.raises(ArtifactError, match="nope.txt"):
        persist.read_artifact(missing, "unit-test")


def test_body_reader_typed_takes(tmp_path):
    p = tmp_path / "a.txt"
    persist.write_artifact(
        p, "unit-test", ["count 3", "scale 2.5", "name alpha", "vals 1.0 2.0"]
    )
    r = persist.BodyReader(persist.read_artifact(p, "unit-test"), p)
    assert r.take_int("count") == 3
    assert r.take_float("scale") == 2.5
    assert r.take_str("name") == "alpha"
    assert np.array_equal(r.take_floats("vals"), [1.0, 2.0])
    assert r.done()


def test_body_reader_wrong_key(tmp_path):
    p = tmp_path / "a.txt"
    persist.write_artifact(p, "unit-test", ["count 3"])
    r = persist.BodyReader(persist.read_artifact(p, "unit-test"), p)
    with pytest.raises(ArtifactError, match="count"):
        r.take_int("total")
