"""Session persistence: structured-text header plus a CSV sample table.

    #%capascan-session 1
    #%{... json header: path, assembly, encoder, converter, digest ...}
    line,tick,along_track_mm,raw_pF,capdac_pF,calibrated_pF,flags
    0,0,0.0,1.2345,0.0,1.2345,0

Floats are written with repr() so a round trip is bit-lossless; the
session digest is the SHA-256 of the serialized form.
"""

from __future__ import annotations

import hashlib
import io
import json

from .electrodes import assembly_from_doc, assembly_to_doc
from .errors import SessionFormatError
from .scan import ScanPath, ScanSession, samples_per_line
from .sensor import EncoderModel, ScanSample

FORMAT_VERSION = 1
MAGIC = "#%capascan-session"
CSV_HEADER = "line,tick,along_track_mm,raw_pF,capdac_pF,calibrated_pF,flags"


def session_header_doc(session: ScanSession) -> dict:
    return {
        "version": FORMAT_VERSION,
        "path": {
            "origin_mm": list(session.path.origin_mm),
            "direction": list(session.path.direction),
            "line_length_mm": session.path.line_length_mm,
            "num_lines": session.path.num_lines,
            "line_spacing_mm": session.path.line_spacing_mm,
        },
        "assembly": assembly_to_doc(session.assembly),
        "encoder": {
            "pulses_per_rev": session.encoder.pulses_per_rev,
            "wheel_diameter_mm": session.encoder.wheel_diameter_mm,
        },
        "scene_digest": session.scene_digest,
        "mode": session.mode,
        "voxel_mm": session.voxel_mm,
        "base_seed": session.base_seed,
        "noise_sigma_pf": session.noise_sigma_pf,
        "drift_pf_per_m": session.drift_pf_per_m,
        "resolution_pf": session.resolution_pf,
    }


def dumps_session(session: ScanSession) -> str:
    out = io.StringIO()
    out.write(f"{MAGIC} {FORMAT_VERSION}\n")
    out.write("#%" + json.dumps(session_header_doc(session), sort_keys=True) + "\n")
    out.write(CSV_HEADER + "\n")
    for line_id, line in enumerate(session.lines):
        for s in line:
            out.write(
                f"{line_id},{s.tick},{repr(s.along_track_mm)},{repr(s.raw_pf)},"
                f"{repr(s.capdac_pf)},{repr(s.calibrated_pf)},{s.flags}\n"
            )
    return out.getvalue()


def save_session(session: ScanSession, path):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(dumps_session(session))


def session_digest(session: ScanSession) -> str:
    return hashlib.sha256(dumps_session(session).encode()).hexdigest()


def _parse_header(lines) -> dict:
    if not lines or not lines[0].startswith(MAGIC):
        raise SessionFormatError("not a capascan session file (missing magic)")
    try:
        version = int(lines[0].split()[-1])
    except ValueError:
        raise SessionFormatError("malformed version line") from None
    if version != FORMAT_VERSION:
        raise SessionFormatError(
            f"unsupported session format version {version} (expected {FORMAT_VERSION})"
        )
    if len(lines) < 2 or not lines[1].startswith("#%"):
        raise SessionFormatError("missing header document on line 2")
    try:
        return json.loads(lines[1][2:])
    except json.JSONDecodeError as e:
        raise SessionFormatError(f"malformed header document: {e}") from None


def loads_session(text: str) -> ScanSession:
    lines = text.splitlines()
    header = _parse_header(lines)
    if len(lines) < 3 or lines[2] != CSV_HEADER:
        raise SessionFormatError("missing CSV header on line 3")

    p = header["path"]
    path = ScanPath(
        origin_mm=tuple(p["origin_mm"]),
        direction=tuple(p["direction"]),
        line_length_mm=p["line_length_mm"],
        num_lines=p["num_lines"],
        line_spacing_mm=p["line_spacing_mm"],
    )
    encoder = EncoderModel(**header["encoder"])
    assembly = assembly_from_doc(header["assembly"])

    sample_lines: list[list[ScanSample]] = [[] for _ in range(path.num_lines)]
    last_good = None
    for ln, row in enumerate(lines[3:], start=4):
        if not row.strip():
            continue
        fields = row.split(",")
        if len(fields) != 7:
            raise SessionFormatError(
                f"line {ln}: expected 7 fields, got {len(fields)} "
                f"(last good row at line {last_good or 'none'})"
            )
        try:
            line_id = int(fields[0])
            sample = ScanSample.from_flags(
                tick=int(fields[1]),
                along_track_mm=float(fields[2]),
                raw_pf=float(fields[3]),
                capdac_pf=float(fields[4]),
                calibrated_pf=float(fields[5]),
                flags=int(fields[6]),
            )
        except ValueError as e:
            raise SessionFormatError(
                f"line {ln}: {e} (last good row at line {last_good or 'none'})"
            ) from None
        if not 0 <= line_id < path.num_lines:
            raise SessionFormatError(f"line {ln}: line id {line_id} out of range")
        sample_lines[line_id].append(sample)
        last_good = ln

    expected = samples_per_line(path, encoder) * path.num_lines
    got = sum(len(l) for l in sample_lines)
    if got != expected:
        raise SessionFormatError(
            f"truncated session: {got} of {expected} samples "
            f"(last good row at line {last_good or 'none'})"
        )
    return ScanSession(
        path=path,
        assembly=assembly,
        encoder=encoder,
        lines=sample_lines,
        scene_digest=header["scene_digest"],
        mode=header["mode"],
        voxel_mm=header["voxel_mm"],
        base_seed=header["base_seed"],
        noise_sigma_pf=header.get("noise_sigma_pf", 0.0),
        drift_pf_per_m=header.get("drift_pf_per_m", 0.0),
        resolution_pf=header.get("resolution_pf", 0.0005),
    )


def load_session(path) -> ScanSession:
    with open(path, "r", encoding="utf-8") as f:
        return loads_session(f.read())
