"""Drive a live scanning session the way the web UI does.

Starts the live server in-process, connects over a plain socket, loads
the wall-stud preset, drags the head along five lines, and asks for the
accumulated image and detections - the operator workflow, scripted.

Run from the repo root:  python demos/demo_live_session.py
"""

import json
import socket

from capascan.server import LiveServer

server = LiveServer(host="127.0.0.1", port=0, seed=7)
server.start_background()
host, port = server.server_address
print(f"live server on {host}:{port}")

with socket.create_connection((host, port)) as sock:
    f = sock.makefile("rwb")

    def send(msg):
        f.write((json.dumps(msg) + "\n").encode())
        f.flush()

    def recv():
        return json.loads(f.readline())

    send({"type": "hello", "protocol_version": 1})
    hello = recv()
    print("server hello:", {k: hello[k] for k in ("versions", "seed", "phase")})

    send({"type": "load_scene", "preset": "fig9_wall_stud"})
    ok = recv()
    summary = ok["scene"]
    print(f"scene loaded: extents {summary['extents_mm']}, "
          f"background C = {summary['background_c_pf']:.3f} pF")

    x0, x1, y0, y1 = summary["head_bounds_mm"]
    for li in range(5):
        y = 40.0 + li * 50.0
        send({"type": "begin_line", "origin": [x0, y], "direction": [1, 0]})
        # drag in a few strokes, like a hand would; replies queue in order
        for frac in (0.3, 0.55, 0.8, 1.0):
            send({"type": "move_head", "x": x0 + (x1 - x0) * frac, "y": y})
        send({"type": "end_line"})
        samples = 0
        while True:
            msg = recv()
            if msg["type"] == "sample":
                samples += 1
            elif msg["type"] == "image_update":
                print(f"line {li}: {samples} samples, image now {msg['shape']}, "
                      f"{len(msg['rows'])} rows updated")
                break

    send({"type": "detect"})
    dets = recv()["detections"]
    for d in dets:
        print(f"detection: centroid {d['centroid_mm']}, yaw {d['yaw_deg']:.1f} deg, "
              f"class {d['klass']}")

    send({"type": "export"})
    doc = recv()["document"]
    print(f"exported session: {len(doc.splitlines()) - 3} samples")

server.shutdown()
server.server_close()
