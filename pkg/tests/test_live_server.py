import json
import math
import os
import socket
import struct

import numpy as np
import pytest

from capascan import Scene, preset, tick_distance
from capascan.scene import PLYWOOD, STEEL, Box, EmbeddedObject
from capascan.sensor import EncoderModel
from capascan.server import (
    PROTOCOL_VERSION,
    LiveServer,
    LiveSession,
    ws_accept_key,
    ws_encode_text,
)
from capascan.session_io import loads_session
from capascan.solver import SolverConfig

T = tick_distance(EncoderModel())


@pytest.fixture(scope="module")
def small_scene():
    return Scene(
        extents_mm=(160.0, 120.0, 24.0),
        voxel_size_mm=2.0,
        layers=((PLYWOOD, 10.0),),
        objects=(
            EmbeddedObject(Box(16.0, 60.0, 8.0), position_mm=(80.0, 60.0, 16.0),
                           material=STEEL, yaw_deg=90.0),
        ),
    )


@pytest.fixture()
def session(small_scene):
    return LiveSession(seed=3, scene=small_scene,
                       config=SolverConfig(pad_xy_mm=10.0, min_domain_factor=2.0))


def only(replies, kind):
    picked = [r for r in replies if r["type"] == kind]
    assert picked, f"no {kind} in {replies}"
    return picked


def test_hello_and_version_mismatch(session):
    (reply,) = session.handle({"type": "hello", "protocol_version": PROTOCOL_VERSION})
    assert reply["type"] == "hello"
    assert PROTOCOL_VERSION in reply["versions"]
    assert reply["scene"]["tick_distance_mm"] == pytest.approx(T)
    assert not session.close_requested

    (err,) = session.handle({"type": "hello", "protocol_version": 99})
    assert err["type"] == "error" and err["code"] == "version_mismatch"
    assert session.close_requested


def test_malformed_and_unknown_messages(session):
    (err,) = session.handle_text("{not json")
    assert err["code"] == "malformed"
    (err,) = session.handle({"type": "warp_drive"})
    assert err["code"] == "unknown_type"
    (err,) = session.handle({"type": "begin_line", "origin": [10, 10]})
    assert err["code"] == "bad_request"


def test_load_scene_preset_and_violations(session):
    replies = session.handle({"type": "load_scene", "preset": "fig9_wall_stud"})
    assert replies[0]["type"] == "scene_ok"
    assert replies[0]["scene"]["scene_doc"]["layers"][0]["material"]["name"] == "drywall"

    bad = {"extents_mm": [50, 50, 20], "voxel_size_mm": 0.0, "layers": [],
           "objects": [], "ambient": "air"}
    replies = session.handle({"type": "load_scene", "scene": bad})
    assert replies[0]["type"] == "scene_error"
    assert any("voxel_size" in v for v in replies[0]["violations"])


def test_move_head_tick_arithmetic(session):
    session.handle({"type": "begin_line", "origin": [30, 60], "direction": [1, 0]})
    # advancing 23 mm crosses the 11.486 mm tick boundary exactly twice
    replies = session.handle({"type": "move_head", "x": 53.0, "y": 60.0})
    samples = [r for r in replies if r["type"] == "sample"]
    assert len(samples) == 2
    assert [s["tick"] for s in samples] == [1, 2]
    assert samples[0]["along_track_mm"] == pytest.approx(T)

    # perpendicular motion adds no along-track progress
    replies = session.handle({"type": "move_head", "x": 53.0, "y": 75.0})
    assert [r for r in replies if r["type"] == "sample"] == []

    # backward motion emits nothing and does not rewind
    replies = session.handle({"type": "move_head", "x": 40.0, "y": 60.0})
    assert [r for r in replies if r["type"] == "sample"] == []
    replies = session.handle({"type": "move_head", "x": 54.0, "y": 60.0})
    assert [r for r in replies if r["type"] == "sample"] == []


def test_out_of_bounds_clamps(session):
    session.handle({"type": "begin_line", "origin": [30, 60], "direction": [1, 0]})
    replies = session.handle({"type": "move_head", "x": 1000.0, "y": 60.0})
    errs = [r for r in replies if r["type"] == "error"]
    assert errs and errs[0]["code"] == "out_of_bounds"
    x_hi = session._bounds()[1]
    assert session.head_mm[0] == pytest.approx(x_hi)
    # ticks were still emitted up to the clamped position
    assert [r for r in replies if r["type"] == "sample"]


def test_line_lifecycle_and_image_updates(session):
    session.handle({"type": "begin_line", "origin": [30, 40], "direction": [1, 0]})
    session.handle({"type": "move_head", "x": 130.0, "y": 40.0})
    replies = session.handle({"type": "end_line"})
    kinds = [r["type"] for r in replies]
    assert kinds[0] == "line_done"
    assert "image_update" in kinds
    n1 = replies[0]["n_samples"]
    assert n1 == math.floor(100.0 / T)

    update = only(replies, "image_update")[0]
    assert update["shape"][0] == 1
    assert len(update["rows"]) == 1  # first line: every row is new

    session.handle({"type": "begin_line", "origin": [30, 80], "direction": [1, 0]})
    session.handle({"type": "move_head", "x": 130.0, "y": 80.0})
    replies = session.handle({"type": "end_line"})
    update = only(replies, "image_update")[0]
    assert update["shape"][0] > 1

    replies = session.handle({"type": "detect"})
    assert replies[0]["type"] == "detections"


def test_begin_line_requires_matching_direction(session):
    session.handle({"type": "begin_line", "origin": [30, 40], "direction": [1, 0]})
    session.handle({"type": "move_head", "x": 60.0, "y": 40.0})
    session.handle({"type": "end_line"})
    replies = session.handle({"type": "begin_line", "origin": [30, 80],
                              "direction": [0, 1]})
    assert replies[0]["type"] == "error"
    assert replies[0]["code"] == "incompatible_direction"


def test_export_rebases_ticks(session):
    session.handle({"type": "begin_line", "origin": [30, 40], "direction": [1, 0]})
    session.handle({"type": "move_head", "x": 100.0, "y": 40.0})
    session.handle({"type": "end_line"})
    (reply,) = session.handle({"type": "export"})
    assert reply["type"] == "session"
    exported = loads_session(reply["document"])
    line = exported.lines[0]
    assert [s.tick for s in line] == list(range(len(line)))
    assert line[0].along_track_mm == 0.0
    # the re-based origin sits one tick down the line
    assert exported.path.origin_mm[0] == pytest.approx(30.0 + T)


def test_event_sourced_determinism(small_scene):
    log = [
        {"type": "hello", "protocol_version": 1},
        {"type": "begin_line", "origin": [30, 40], "direction": [1, 0]},
        {"type": "move_head", "x": 95.0, "y": 40.0},
        {"type": "move_head", "x": 130.0, "y": 41.0},
        {"type": "end_line"},
        {"type": "begin_line", "origin": [30, 80], "direction": [1, 0]},
        {"type": "move_head", "x": 130.0, "y": 80.0},
        {"type": "end_line"},
        {"type": "export"},
    ]

    def replay():
        s = LiveSession(seed=11, scene=small_scene,
                        config=SolverConfig(pad_xy_mm=10.0, min_domain_factor=2.0))
        out = []
        for msg in log:
            out.extend(s.handle(msg))
        return out

    a, b = replay(), replay()
    assert a == b
    doc_a = [r for r in a if r["type"] == "session"][0]["document"]
    doc_b = [r for r in b if r["type"] == "session"][0]["document"]
    assert doc_a == doc_b


def test_sample_ticks_strictly_increasing_no_gaps(session):
    session.handle({"type": "begin_line", "origin": [30, 60], "direction": [1, 0]})
    ticks = []
    rng = np.random.default_rng(0)
    x = 30.0
    for _ in range(20):
        x += float(rng.uniform(-5, 12))
        x = min(max(x, 25.0), 135.0)
        for r in session.handle({"type": "move_head", "x": x, "y": 60.0}):
            if r["type"] == "sample":
                ticks.append(r["tick"])
    assert ticks == list(range(1, len(ticks) + 1))


# ---------------------------------------------------------------------------
# Transports
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def server(small_scene):
    srv = LiveServer(host="127.0.0.1", port=0, scene=small_scene, seed=5)
    srv.start_background()
    yield srv
    srv.shutdown()
    srv.server_close()


def test_raw_socket_transport(server):
    port = server.server_address[1]
    with socket.create_connection(("127.0.0.1", port), timeout=10) as sock:
        f = sock.makefile("rwb")
        def send(msg):
            f.write((json.dumps(msg) + "\n").encode())
            f.flush()
            return json.loads(f.readline())

        reply = send({"type": "hello", "protocol_version": 1})
        assert reply["type"] == "hello"
        reply = send({"type": "begin_line", "origin": [30, 60], "direction": [1, 0]})
        assert reply["type"] == "line_ok"
        f.write((json.dumps({"type": "move_head", "x": 53.0, "y": 60.0}) + "\n").encode())
        f.flush()
        got = [json.loads(f.readline()), json.loads(f.readline())]
        assert [g["tick"] for g in got] == [1, 2]


def _ws_client_frame(payload: bytes, mask=b"\x12\x34\x56\x78") -> bytes:
    n = len(payload)
    head = bytearray([0x81])
    if n < 126:
        head.append(0x80 | n)
    else:
        head.append(0x80 | 126)
        head += struct.pack(">H", n)
    masked = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
    return bytes(head) + mask + masked


def _ws_read_text(f):
    b0, b1 = f.read(2)
    n = b1 & 0x7F
    if n == 126:
        (n,) = struct.unpack(">H", f.read(2))
    elif n == 127:
        (n,) = struct.unpack(">Q", f.read(8))
    payload = f.read(n)
    assert b0 & 0x0F in (1, 8)
    return b0 & 0x0F, payload


def test_websocket_transport(server):
    port = server.server_address[1]
    with socket.create_connection(("127.0.0.1", port), timeout=10) as sock:
        f = sock.makefile("rwb")
        key = "dGhlIHNhbXBsZSBub25jZQ=="
        f.write((
            "GET /scan HTTP/1.1\r\n"
            f"Host: 127.0.0.1:{port}\r\n"
            "Upgrade: websocket\r\n"
            "Connection: Upgrade\r\n"
            f"Sec-WebSocket-Key: {key}\r\n"
            "Sec-WebSocket-Version: 13\r\n\r\n"
        ).encode())
        f.flush()
        status = f.readline().decode()
        assert "101" in status
        headers = {}
        while True:
            line = f.readline().decode().strip()
            if not line:
                break
            k, _, v = line.partition(":")
            headers[k.lower()] = v.strip()
        assert headers["sec-websocket-accept"] == ws_accept_key(key)

        f.write(_ws_client_frame(json.dumps(
            {"type": "hello", "protocol_version": 1}).encode()))
        f.flush()
        opcode, payload = _ws_read_text(f)
        assert opcode == 1
        assert json.loads(payload)["type"] == "hello"

        # version mismatch: error then server close frame
        f.write(_ws_client_frame(json.dumps(
            {"type": "hello", "protocol_version": 42}).encode()))
        f.flush()
        opcode, payload = _ws_read_text(f)
        assert json.loads(payload)["code"] == "version_mismatch"
        opcode, _ = _ws_read_text(f)
        assert opcode == 8  # close


def test_ws_encode_text_roundtrip_lengths():
    for n in (0, 1, 125, 126, 400):
        frame = ws_encode_text("x" * n)
        assert frame[0] == 0x81
        if n < 126:
            assert frame[1] == n
        else:
            assert frame[1] == 126


def test_scripted_fig9_replay_matches_batch():
    """Drive the live protocol along the fig9 path; the exported session
    must reproduce the batch scan sample-for-sample (same seeds)."""
    from capascan import ConverterState, ScanPath, run_scan
    from capascan import standard_assemblies

    scene = preset("fig9_wall_stud")
    assembly = standard_assemblies()["comb_default"]
    # leave one tick of slack upstream of the first sample so the live
    # head can legally start there
    fx, _ = assembly.footprint_extent_mm()
    x0 = fx / 2 + T + 2.0
    path = ScanPath(origin_mm=(x0, 40.0), direction=(1.0, 0.0),
                    line_length_mm=scene.extents_mm[0] - x0 - fx / 2 - 2.0,
                    num_lines=5, line_spacing_mm=50.0)
    batch = run_scan(scene, assembly, path, EncoderModel(),
                     ConverterState(rng_seed=21), mode="kernel")

    live = LiveSession(seed=21, scene=scene, assembly=assembly)
    live.handle({"type": "hello", "protocol_version": 1})
    dx, dy = path.direction
    n = len(batch.lines[0])
    for li in range(path.num_lines):
        ox, oy = path.line_origin(li)
        # start one tick upstream so live tick k lands on batch tick k-1
        start = (ox - T * dx, oy - T * dy)
        live.handle({"type": "begin_line", "origin": list(start), "direction": [dx, dy]})
        end_x = start[0] + dx * (n * T + 1.0)
        live.handle({"type": "move_head", "x": end_x, "y": start[1] + dy * (n * T + 1.0)})
        live.handle({"type": "end_line"})
    (reply,) = live.handle({"type": "export"})
    exported = loads_session(reply["document"])

    assert exported.path.num_lines == path.num_lines
    for got, want in zip(exported.lines, batch.lines):
        assert len(got) == len(want)
        for a, b in zip(got, want):
            assert a.calibrated_pf == pytest.approx(b.calibrated_pf, abs=1e-12)

    from capascan.imaging import assemble

    img_live = assemble(exported)
    img_batch = assemble(batch)
    assert np.allclose(img_live.values, img_batch.values)
