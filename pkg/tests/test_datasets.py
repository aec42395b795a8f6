import struct

import numpy as np
import pytest

from mobman import datasets as dio
from mobman.datasets import (
    BadMagicError,
    Demonstration,
    PayloadMismatchError,
    VersionMismatchError,
    filter_and_assemble,
    load_dataset,
    read_array,
    read_demo,
    write_array,
    write_demo,
)


def test_array_round_trip_exact(tmp_path):
    gen = np.random.default_rng(0)
    for shape in ((7,), (3, 5), (2, 3, 4)):
        arr = gen.normal(size=shape).astype(np.float32)
        path = tmp_path / "a.mbrt"
        write_array(arr, path)
        back = read_array(path)
        assert back.dtype == np.float32
        assert back.shape == arr.shape
        np.testing.assert_array_equal(back, arr)


def test_array_header_layout(tmp_path):
    arr = np.arange(6, dtype=np.float32).reshape(2, 3)
    path = tmp_path / "a.mbrt"
    write_array(arr, path)
    data = path.read_bytes()
    assert data[:4] == b"MBRT"
    version, rank = struct.unpack("<II", data[4:12])
    assert (version, rank) == (1, 2)
    assert struct.unpack("<II", data[12:20]) == (2, 3)
    payload = np.frombuffer(data[20:], dtype="<f4")
    np.testing.assert_array_equal(payload, arr.ravel())
    assert len(data) == 20 + 6 * 4


def test_array_write_deterministic(tmp_path):
    arr = np.random.default_rng(1).normal(size=(4, 4)).astype(np.float32)
    write_array(arr, tmp_path / "x.mbrt")
    write_array(arr, tmp_path / "y.mbrt")
    assert (tmp_path / "x.mbrt").read_bytes() == (tmp_path / "y.mbrt").read_bytes()


def test_array_error_types(tmp_path):
    good = tmp_path / "good.mbrt"
    write_array(np.zeros((2, 2), dtype=np.float32), good)
    raw = good.read_bytes()

    bad_magic = tmp_path / "magic.mbrt"
    bad_magic.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(BadMagicError):
        read_array(bad_magic)

    bad_version = tmp_path / "version.mbrt"
    bad_version.write_bytes(raw[:4] + struct.pack("<I", 9) + raw[8:])
    with pytest.raises(VersionMismatchError):
        read_array(bad_version)

    truncated = tmp_path / "trunc.mbrt"
    truncated.write_bytes(raw[:-4])
    with pytest.raises(PayloadMismatchError):
        read_array(truncated)

    padded = tmp_path / "padded.mbrt"
    padded.write_bytes(raw + b"\x00\x00\x00\x00")
    with pytest.raises(PayloadMismatchError):
        read_array(padded)


def make_demo(episode=0, success=True, seed=0, steps=10):
    gen = np.random.default_rng(seed * 1000 + episode)
    return Demonstration(
        task_id="open-drawer",
        seed=seed,
        episode=episode,
        success=success,
        observations=gen.normal(size=(steps, 11)).astype(np.float32),
        actions=gen.normal(size=(steps, 7)).astype(np.float32),
        metadata={"scale": 1.0, "position": [1.4, 0.0, 0.0], "converged": True},
    )


def test_demo_round_trip(tmp_path):
    demo = make_demo()
    write_demo(demo, tmp_path / "ep000000")
    back = read_demo(tmp_path / "ep000000")
    assert back.task_id == demo.task_id
    assert back.seed == demo.seed and back.episode == demo.episode
    assert back.success is True
    np.testing.assert_array_equal(back.observations, demo.observations)
    np.testing.assert_array_equal(back.actions, demo.actions)
    assert back.metadata["scale"] == 1.0
    assert back.metadata["position"] == [1.4, 0.0, 0.0]
    assert back.metadata["converged"] is True


def test_demo_round_trip_is_bitwise_stable(tmp_path):
    # write -> read -> write must produce identical bytes for every file.
    demo = make_demo(episode=3)
    d1 = tmp_path / "first"
    d2 = tmp_path / "second"
    write_demo(demo, d1)
    write_demo(read_demo(d1), d2)
    for name in ("manifest.txt", "observations.mbrt", "actions.mbrt"):
        assert (d1 / name).read_bytes() == (d2 / name).read_bytes(), name


def test_demo_manifest_readable_text(tmp_path):
    write_demo(make_demo(), tmp_path / "ep")
    text = (tmp_path / "ep" / "manifest.txt").read_text()
    assert "task_id: open-drawer" in text
    assert "success: true" in text
    assert "meta.scale:" in text


def test_demo_validation():
    with pytest.raises(ValueError):
        Demonstration("t", 0, 0, True, np.zeros((0, 3)), np.zeros((0, 2)))
    with pytest.raises(ValueError):
        Demonstration("t", 0, 0, True, np.zeros((5, 3)), np.zeros((4, 2)))


def test_demo_manifest_step_mismatch_detected(tmp_path):
    write_demo(make_demo(), tmp_path / "ep")
    manifest = tmp_path / "ep" / "manifest.txt"
    text = manifest.read_text().replace("steps: 10", "steps: 11")
    manifest.write_text(text)
    with pytest.raises(PayloadMismatchError):
        read_demo(tmp_path / "ep")


def test_load_dataset_sorted_and_filtered(tmp_path):
    for i, success in enumerate([True, False, True, True, False]):
        write_demo(make_demo(episode=i, success=success), tmp_path / f"ep{i:06d}")
    (tmp_path / "not_a_demo").mkdir()
    (tmp_path / "stray.txt").write_text("ignore me")
    demos = load_dataset(tmp_path)
    assert [d.episode for d in demos] == [0, 1, 2, 3, 4]
    kept, summary = filter_and_assemble(demos)
    assert summary.kept == 3 and summary.dropped == 2
    assert all(d.success for d in kept)
    assert summary.per_task == {"open-drawer": 3}


def test_filter_and_assemble_multi_task():
    demos = [make_demo(episode=i) for i in range(3)]
    other = make_demo(episode=9)
    other.task_id = "place-object"
    demos.append(other)
    kept, summary = filter_and_assemble(demos)
    assert summary.per_task == {"open-drawer": 3, "place-object": 1}
    assert len(kept) == 4
