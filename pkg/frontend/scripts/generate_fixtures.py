"""Generate the frontend test fixtures from the live server.

Run from the repo root with the package installed:

    python frontend/scripts/generate_fixtures.py

Writes into frontend/test/fixtures/:
    fig9_log.json       server-message log of a scripted 5-line session
    fig9_session.csv    the session the server exported at the end
    fig9_cli.png/.meta.json   the batch pipeline's PNG for that session
    drag115_log.json    server messages for a single 115 mm drag
"""

import json
import sys
from pathlib import Path

FIXTURES = Path(__file__).parent.parent / "test" / "fixtures"
FIXTURES.mkdir(parents=True, exist_ok=True)

from capascan.cli import main as cli_main  # noqa: E402
from capascan.server import LiveSession  # noqa: E402

SEED = 77


def drive(session, log, msg):
    replies = session.handle(msg)
    log.extend(replies)
    return replies


def scripted_fig9():
    session = LiveSession(seed=SEED)
    log = []
    drive(session, log, {"type": "hello", "protocol_version": 1})
    drive(session, log, {"type": "load_scene", "preset": "fig9_wall_stud"})
    # five uniform lines; 20 -> 295 mm in a few strokes per line
    for li in range(5):
        y = 40.0 + 50.0 * li
        drive(session, log, {"type": "begin_line", "origin": [20.0, y],
                             "direction": [1, 0]})
        for x in (80.0, 160.0, 230.0, 295.0):
            drive(session, log, {"type": "move_head", "x": x, "y": y})
        drive(session, log, {"type": "end_line"})
    drive(session, log, {"type": "detect"})
    (reply,) = drive(session, log, {"type": "export"})
    assert reply["type"] == "session"

    (FIXTURES / "fig9_log.json").write_text(json.dumps(log, indent=1) + "\n")
    (FIXTURES / "fig9_session.csv").write_text(reply["document"])

    rc = cli_main([
        "image",
        "--session", str(FIXTURES / "fig9_session.csv"),
        "--out", str(FIXTURES / "fig9_cli"),
    ])
    assert rc == 0
    n_samples = sum(
        1 for m in log if isinstance(m, dict) and m.get("type") == "sample"
    )
    n_det = [m for m in log if m.get("type") == "detections"][0]["detections"]
    print(f"fig9 log: {len(log)} messages, {n_samples} samples, "
          f"{len(n_det)} detections")


def scripted_drag115():
    session = LiveSession(seed=SEED)
    log = []
    drive(session, log, {"type": "hello", "protocol_version": 1})
    drive(session, log, {"type": "load_scene", "preset": "fig9_wall_stud"})
    drive(session, log, {"type": "begin_line", "origin": [30.0, 60.0],
                         "direction": [1, 0]})
    drive(session, log, {"type": "move_head", "x": 145.0, "y": 60.0})  # 115 mm
    drive(session, log, {"type": "end_line"})
    (FIXTURES / "drag115_log.json").write_text(json.dumps(log, indent=1) + "\n")
    n = sum(1 for m in log if m.get("type") == "sample")
    print(f"drag115 log: {n} samples")
    assert n == 10, n


if __name__ == "__main__":
    scripted_fig9()
    scripted_drag115()
    print("fixtures written to", FIXTURES)
    sys.exit(0)
