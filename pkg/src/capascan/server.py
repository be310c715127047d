"""Live interactive scanning session over newline-delimited JSON messages.

One connection is one session.  The operator loads a scene, begins a
line, drags the head; the server emits one sample per encoder tick
crossed (kernel mode) and, when the line ends, the changed rows of the
accumulating image.  The same message protocol runs over a plain stream
socket or a WebSocket: the server sniffs the first bytes of each
connection, so one port serves both transports.

Encoder emulation integrates signed along-track displacement and emits a
tick each time the maximum distance so far crosses another tick spacing;
backward motion emits nothing.  A line's first sample therefore arrives
after one full tick of forward travel, and exported sessions re-base
each line's origin at its first sample.
"""

from __future__ import annotations

import base64
import dataclasses
import hashlib
import json
import math
import socket
import socketserver
import struct
import threading
from typing import Optional

import numpy as np

from . import imaging
from .electrodes import ElectrodeAssembly, standard_assemblies
from .errors import SceneError
from .scan import KernelBackend, ScanPath, ScanSession, line_converter
from .scene import PRESET_NAMES, Scene, preset, rasterize, scene_from_doc, scene_to_doc
from .sensor import ConverterState, EncoderModel, measure, tick_distance
from .session_io import dumps_session
from .solver import SolverConfig

PROTOCOL_VERSION = 1


@dataclasses.dataclass
class _LiveLine:
    line_id: int
    origin_mm: tuple[float, float]
    offset_mm: float  # cross-track offset from the first line
    along_start_mm: float  # along-track offset of the origin from line 0's
    samples: list


class LiveSession:
    """Protocol engine for one connection; feed messages, get replies."""

    def __init__(self, seed: int = 0, scene: Optional[Scene] = None,
                 assembly: Optional[ElectrodeAssembly] = None,
                 config: Optional[SolverConfig] = None):
        self.seed = seed
        self.assembly = assembly or standard_assemblies()["comb_default"]
        self.config = config or SolverConfig()
        self.encoder = EncoderModel()
        self.converter_template = ConverterState(rng_seed=seed)
        self.scene: Optional[Scene] = None
        self.backend: Optional[KernelBackend] = None
        self.phase = "idle"
        self.head_mm = (0.0, 0.0)
        self.direction: Optional[tuple[float, float]] = None
        self.lines: list[_LiveLine] = []
        self.open_line: Optional[_LiveLine] = None
        self._progress = 0.0
        self._converter: Optional[ConverterState] = None
        self._image_rows: dict = {}
        self.close_requested = False
        if scene is not None:
            self._load(scene)

    # -- helpers ----------------------------------------------------------

    def _err(self, code, detail=""):
        return {"type": "error", "code": code, "detail": detail}

    def _bounds(self):
        fx, fy = self.assembly.footprint_extent_mm()
        ex, ey = self.scene.extents_mm[0], self.scene.extents_mm[1]
        return fx / 2, ex - fx / 2, fy / 2, ey - fy / 2

    def _clamp(self, x, y):
        x0, x1, y0, y1 = self._bounds()
        return min(max(x, x0), x1), min(max(y, y0), y1)

    def _scene_summary(self):
        x0, x1, y0, y1 = self._bounds()
        # background capacitance rounded to 1e-9 pF: the solver may vary
        # in its last bits run to run (tolerance-bounded), and protocol
        # replies should be byte-stable
        return {
            "extents_mm": list(self.scene.extents_mm),
            "voxel_size_mm": self.scene.voxel_size_mm,
            "digest": self.scene.digest(),
            "head_bounds_mm": [x0, x1, y0, y1],
            "tick_distance_mm": tick_distance(self.encoder),
            "background_c_pf": round(self.backend.kernel.background_c_pf, 9),
            "scene_doc": scene_to_doc(self.scene),
        }

    def _load(self, scene: Scene):
        grid = rasterize(scene)
        self.backend = KernelBackend(scene, grid, self.assembly, self.config)
        self.scene = scene
        self.lines = []
        self.open_line = None
        self.direction = None
        self._image_rows = {}
        self.phase = "idle"
        self.head_mm = self._clamp(scene.extents_mm[0] / 2, scene.extents_mm[1] / 2)

    # -- message dispatch --------------------------------------------------

    def handle(self, msg) -> list[dict]:
        if not isinstance(msg, dict) or "type" not in msg:
            return [self._err("malformed", "message must be an object with a 'type'")]
        kind = msg["type"]
        handler = getattr(self, f"_on_{kind}", None)
        if handler is None:
            return [self._err("unknown_type", f"no such message type {kind!r}")]
        try:
            return handler(msg)
        except (KeyError, TypeError, ValueError) as e:
            return [self._err("bad_request", f"{type(e).__name__}: {e}")]

    def handle_text(self, text: str) -> list[dict]:
        try:
            msg = json.loads(text)
        except json.JSONDecodeError as e:
            return [self._err("malformed", f"invalid JSON: {e}")]
        return self.handle(msg)

    # -- message types -----------------------------------------------------

    def _on_hello(self, msg):
        version = msg.get("protocol_version")
        if version != PROTOCOL_VERSION:
            self.close_requested = True
            return [self._err("version_mismatch",
                              f"server speaks protocol {PROTOCOL_VERSION}")]
        out = {
            "type": "hello",
            "versions": [PROTOCOL_VERSION],
            "seed": self.seed,
            "phase": self.phase,
            "scene": self._scene_summary() if self.scene is not None else None,
        }
        return [out]

    def _on_load_scene(self, msg):
        try:
            if "preset" in msg:
                name = msg["preset"]
                if name not in PRESET_NAMES:
                    return [{"type": "scene_error",
                             "violations": [f"unknown preset {name!r}"]}]
                scene = preset(name)
            elif "scene" in msg:
                scene = scene_from_doc(msg["scene"])
            else:
                return [self._err("bad_request", "load_scene needs 'preset' or 'scene'")]
            self._load(scene)
        except SceneError as e:
            return [{"type": "scene_error", "violations": e.violations}]
        return [{"type": "scene_ok", "scene": self._scene_summary()}]

    def _require_scene(self):
        if self.scene is None:
            return self._err("no_scene", "load_scene first")
        return None

    def _on_begin_line(self, msg):
        err = self._require_scene()
        if err:
            return [err]
        if self.open_line is not None:
            return [self._err("line_open", "end_line before beginning another")]
        ox, oy = (float(v) for v in msg["origin"])
        dx, dy = (float(v) for v in msg["direction"])
        norm = math.hypot(dx, dy)
        if norm == 0:
            return [self._err("bad_request", "direction must be nonzero")]
        d = (dx / norm, dy / norm)
        out = []
        cx, cy = self._clamp(ox, oy)
        if (cx, cy) != (ox, oy):
            out.append(self._err("out_of_bounds", "line origin clamped to scene bounds"))
        if self.direction is None:
            self.direction = d
        elif abs(d[0] - self.direction[0]) > 1e-9 or abs(d[1] - self.direction[1]) > 1e-9:
            out.append(self._err(
                "incompatible_direction",
                "all lines of a session must share the first line's direction",
            ))
            return out
        line_id = len(self.lines)
        px, py = -self.direction[1], self.direction[0]
        origin0 = self.lines[0].origin_mm if self.lines else (cx, cy)
        offset = (cx - origin0[0]) * px + (cy - origin0[1]) * py
        along = (cx - origin0[0]) * self.direction[0] + (cy - origin0[1]) * self.direction[1]
        self.open_line = _LiveLine(line_id, (cx, cy), offset, along, [])
        self.lines.append(self.open_line)
        self._converter = line_converter(self.converter_template, line_id)
        self._progress = 0.0
        self.head_mm = (cx, cy)
        self.phase = "scanning"
        out.append({"type": "line_ok", "line_id": line_id})
        return out

    def _on_move_head(self, msg):
        err = self._require_scene()
        if err:
            return [err]
        x, y = float(msg["x"]), float(msg["y"])
        cx, cy = self._clamp(x, y)
        out = []
        if (cx, cy) != (x, y):
            out.append(self._err("out_of_bounds", "head clamped to scene bounds"))
        self.head_mm = (cx, cy)
        if self.open_line is None:
            return out
        line = self.open_line
        ox, oy = line.origin_mm
        dx, dy = self.direction
        s = (cx - ox) * dx + (cy - oy) * dy
        self._progress = max(self._progress, s)
        t = tick_distance(self.encoder)
        while (len(line.samples) + 1) * t <= self._progress + 1e-9:
            k = len(line.samples) + 1
            along = k * t
            hx, hy = ox + along * dx, oy + along * dy
            true_c = self.backend.true_capacitance((hx, hy))
            sample, _ = measure(true_c, self._converter, along_track_mm=along, tick=k)
            line.samples.append(sample)
            out.append({
                "type": "sample",
                "line_id": line.line_id,
                "tick": k,
                "along_track_mm": along,
                "raw_pf": sample.raw_pf,
                "capdac_pf": sample.capdac_pf,
                "calibrated_pf": sample.calibrated_pf,
                "flags": sample.flags,
            })
        return out

    def _on_end_line(self, msg):
        if self.open_line is None:
            return [self._err("no_line", "begin_line first")]
        line = self.open_line
        self.open_line = None
        self.phase = "idle"
        out = [{"type": "line_done", "line_id": line.line_id,
                "n_samples": len(line.samples)}]
        if not line.samples:
            self.lines.remove(line)
            return out
        out.append(self._image_update())
        return out

    # -- image accumulation -------------------------------------------------

    def _image(self) -> Optional[imaging.SubsurfaceImage]:
        lines = [l for l in self.lines if l.samples and l is not self.open_line]
        if not lines:
            return None
        t = tick_distance(self.encoder)
        # align columns on the common tick grid (lines may start at
        # different along-track positions)
        starts = [l.along_start_mm + t for l in lines]  # first sample position
        s_min = min(starts)
        n_cols = max(
            int(round((st - s_min) / t)) + len(l.samples) for st, l in zip(starts, lines)
        )
        ordered = sorted(lines, key=lambda l: l.offset_mm)
        rows = []
        offsets = []
        for l in ordered:
            vals = np.array([s.calibrated_pf for s in l.samples])
            anom = vals - np.median(vals)
            row = np.zeros(n_cols)
            c0 = int(round((l.along_start_mm + t - s_min) / t))
            row[c0 : c0 + len(anom)] = anom
            if offsets and abs(l.offset_mm - offsets[-1]) < 1e-9:
                rows[-1] = row  # re-scan of the same offset replaces it
            else:
                rows.append(row)
                offsets.append(l.offset_mm)
        rows = np.array(rows)
        offsets = np.array(offsets)
        noise_scale = imaging.anomaly_noise_scale(
            rows, quantum_pf=self.converter_template.resolution_pf)
        if len(rows) == 1:
            values = rows
        else:
            # interpolate in offsets relative to the first line: the same
            # float arithmetic as imaging.assemble, so an exported session
            # re-imaged by the batch pipeline reproduces these values
            # bit-for-bit
            rel = offsets - offsets[0]
            span = rel[-1]
            n_rows = int(math.floor(span / t + 1e-9)) + 1
            ys = np.arange(n_rows) * t
            values = np.empty((n_rows, n_cols))
            for c in range(n_cols):
                values[:, c] = np.interp(ys, rel, rows[:, c])
        return imaging.SubsurfaceImage(
            values=values,
            x_pitch_mm=t,
            y_pitch_mm=t,
            origin_mm=(s_min, float(offsets[0])),
            provenance=self.scene.digest(),
            noise_scale_pf=noise_scale,
        )

    def _image_update(self):
        img = self._image()
        msg = {
            "type": "image_update",
            "origin_mm": list(img.origin_mm),
            "x_pitch_mm": img.x_pitch_mm,
            "y_pitch_mm": img.y_pitch_mm,
            "shape": list(img.values.shape),
            "value_range": [float(img.values.min()), float(img.values.max())],
        }
        new_rows = {}
        changed = []
        for i, row in enumerate(img.values):
            key = hashlib.sha256(row.tobytes()).hexdigest()
            new_rows[i] = (key, row)
            old = self._image_rows.get(i)
            if old is None or old[0] != key:
                changed.append({"index": i, "values": [float(v) for v in row]})
        self._image_rows = new_rows
        msg["rows"] = changed
        return msg

    def _on_detect(self, msg):
        img = self._image()
        if img is None:
            return [{"type": "detections", "detections": []}]
        dets = imaging.detect(img)
        dets = imaging.classify(dets, img)
        return [{"type": "detections", "detections": [d.to_doc() for d in dets]}]

    def _on_export(self, msg):
        session = self.to_session()
        if session is None:
            return [self._err("no_data", "no completed lines to export")]
        return [{"type": "session", "document": dumps_session(session)}]

    def to_session(self) -> Optional[ScanSession]:
        """Completed lines as a ScanSession (uniform spacing required).

        Lines are truncated to the shortest and re-based so the first
        emitted tick is each line's sample 0.
        """
        lines = [l for l in self.lines if l.samples and l is not self.open_line]
        if not lines:
            return None
        ordered = sorted(lines, key=lambda l: l.offset_mm)
        offsets = [l.offset_mm for l in ordered]
        spacing = offsets[1] - offsets[0] if len(offsets) > 1 else 50.0
        for a, b in zip(offsets, offsets[1:]):
            if abs((b - a) - spacing) > 1e-6:
                raise SceneError(
                    ["export: scan lines are not uniformly spaced; "
                     "re-scan with uniform offsets"]
                )
        t = tick_distance(self.encoder)
        n = min(len(l.samples) for l in ordered)
        first = ordered[0]
        dx, dy = self.direction
        base_origin = (first.origin_mm[0] + t * dx, first.origin_mm[1] + t * dy)
        path = ScanPath(
            origin_mm=base_origin,
            direction=self.direction,
            line_length_mm=(n - 1) * t + t / 2 if n > 1 else t / 2,
            num_lines=len(ordered),
            line_spacing_mm=spacing if spacing > 0 else 50.0,
        )
        out_lines = []
        for l in ordered:
            rebased = [
                dataclasses.replace(s, tick=s.tick - 1, along_track_mm=(s.tick - 1) * t)
                for s in l.samples[:n]
            ]
            out_lines.append(rebased)
        return ScanSession(
            path=path,
            assembly=self.assembly,
            encoder=self.encoder,
            lines=out_lines,
            scene_digest=self.scene.digest(),
            mode="kernel",
            voxel_mm=self.scene.voxel_size_mm,
            base_seed=self.seed,
            noise_sigma_pf=self.converter_template.noise_sigma_pf,
            drift_pf_per_m=self.converter_template.drift_pf_per_m,
            resolution_pf=self.converter_template.resolution_pf,
        )


# ---------------------------------------------------------------------------
# WebSocket framing (RFC 6455, server side)
# ---------------------------------------------------------------------------

_WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"


def ws_accept_key(client_key: str) -> str:
    digest = hashlib.sha1((client_key + _WS_GUID).encode()).digest()
    return base64.b64encode(digest).decode()


def ws_encode_text(payload: str) -> bytes:
    data = payload.encode()
    n = len(data)
    head = bytearray([0x81])  # FIN + text
    if n < 126:
        head.append(n)
    elif n < (1 << 16):
        head.append(126)
        head += struct.pack(">H", n)
    else:
        head.append(127)
        head += struct.pack(">Q", n)
    return bytes(head) + data


def ws_encode_close(code: int = 1000) -> bytes:
    return b"\x88\x02" + struct.pack(">H", code)


def _read_exact(rfile, n):
    buf = b""
    while len(buf) < n:
        chunk = rfile.read(n - len(buf))
        if not chunk:
            raise ConnectionError("peer closed")
        buf += chunk
    return buf


def ws_read_message(rfile) -> tuple[int, bytes]:
    """Read one complete (possibly fragmented) message: (opcode, payload)."""
    opcode = None
    parts = []
    while True:
        b0, b1 = _read_exact(rfile, 2)
        fin = b0 & 0x80
        op = b0 & 0x0F
        masked = b1 & 0x80
        n = b1 & 0x7F
        if n == 126:
            (n,) = struct.unpack(">H", _read_exact(rfile, 2))
        elif n == 127:
            (n,) = struct.unpack(">Q", _read_exact(rfile, 8))
        mask = _read_exact(rfile, 4) if masked else None
        payload = _read_exact(rfile, n)
        if mask:
            payload = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
        if op != 0:
            opcode = op
        parts.append(payload)
        if op in (8, 9, 10):  # control frames are never fragmented
            return op, payload
        if fin:
            return opcode, b"".join(parts)


# ---------------------------------------------------------------------------
# Socket server (sniffs raw-JSON vs WebSocket per connection)
# ---------------------------------------------------------------------------


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        first = self.rfile.peek(4)[:4] if hasattr(self.rfile, "peek") else b""
        if first.startswith(b"GET"):
            self._handle_websocket()
        else:
            self._handle_raw()

    def _session(self) -> LiveSession:
        return LiveSession(
            seed=self.server.seed,
            scene=self.server.scene,
            assembly=self.server.assembly,
        )

    def _handle_raw(self):
        session = self._session()
        for raw in self.rfile:
            text = raw.decode("utf-8", errors="replace").strip()
            if not text:
                continue
            for reply in session.handle_text(text):
                self.wfile.write((json.dumps(reply) + "\n").encode())
            self.wfile.flush()
            if session.close_requested:
                break

    def _handle_websocket(self):
        request_line = self.rfile.readline().decode("latin-1").strip()
        headers = {}
        while True:
            line = self.rfile.readline().decode("latin-1").strip()
            if not line:
                break
            k, _, v = line.partition(":")
            headers[k.strip().lower()] = v.strip()
        key = headers.get("sec-websocket-key")
        if not key or "websocket" not in headers.get("upgrade", "").lower():
            self.wfile.write(b"HTTP/1.1 400 Bad Request\r\n\r\n")
            return
        accept = ws_accept_key(key)
        self.wfile.write(
            (
                "HTTP/1.1 101 Switching Protocols\r\n"
                "Upgrade: websocket\r\n"
                "Connection: Upgrade\r\n"
                f"Sec-WebSocket-Accept: {accept}\r\n\r\n"
            ).encode()
        )
        self.wfile.flush()
        session = self._session()
        try:
            while True:
                opcode, payload = ws_read_message(self.rfile)
                if opcode == 8:  # close
                    self.wfile.write(ws_encode_close())
                    self.wfile.flush()
                    return
                if opcode == 9:  # ping -> pong
                    self.wfile.write(b"\x8a" + bytes([len(payload)]) + payload)
                    self.wfile.flush()
                    continue
                if opcode not in (1, 2):
                    continue
                for reply in session.handle_text(payload.decode("utf-8")):
                    self.wfile.write(ws_encode_text(json.dumps(reply)))
                self.wfile.flush()
                if session.close_requested:
                    self.wfile.write(ws_encode_close(1002))
                    self.wfile.flush()
                    return
        except ConnectionError:
            return


class LiveServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, host="127.0.0.1", port=8765, scene=None, assembly=None, seed=0):
        self.scene = scene
        self.assembly = assembly
        self.seed = seed
        super().__init__((host, port), _Handler)

    def start_background(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return thread


def serve(host="127.0.0.1", port=8765, scene=None, assembly=None, seed=0):
    server = LiveServer(host=host, port=port, scene=scene, assembly=assembly, seed=seed)
    print(f"capascan live server on {host}:{port} (raw JSON lines or WebSocket)")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return server
