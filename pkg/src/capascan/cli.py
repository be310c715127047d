"""Batch command surface: every study and experiment as a subcommand.

    capascan solve --scene F --assembly comb [--out prefix]
    capascan sweep --param separation --values 2,4,8,16 --out sweep
    capascan scan --scene F --preset-path five_lines --mode exact --seed N --out s.csv
    capascan image --session F --ypitch MM --out img
    capascan detect --image F [--k-mad 4] [--metal-ratio 3]
    capascan emulate-device --session F --out frames.bin
    capascan parse-frames --in frames.bin
    capascan serve --scene F --port N
    capascan repro fig7|fig8|fig9|fig10 [--out dir]

Exit codes: 0 success, 2 usage error, 3 validation error, 4 numerical
failure.  CAPASCAN_THREADS caps sweep parallelism.  Every file output
carries the artifact version and the full parameter set in its header.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, imaging, session_io
from .errors import (
    CapascanError,
    ConvergenceError,
    OutOfDomainError,
    SceneError,
    SessionFormatError,
)
from .scan import MODES, ScanPath, default_path, run_scan
from .scene import PRESET_NAMES, load_scene_file, preset, rasterize, scene_to_doc
from .sensor import ConverterState, EncoderModel, tick_distance
from .solver import (
    SolverConfig,
    capacitance_charge,
    capacitance_energy,
    centerline_profile,
    solve,
    sweep_assembly,
)
from .electrodes import assembly_from_doc, standard_assemblies

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_NUMERICAL = 4

REPRO_SEED = 20240126


def _threads() -> int:
    try:
        return max(int(os.environ.get("CAPASCAN_THREADS", "4")), 1)
    except ValueError:
        return 4


def _load_scene(ref: str):
    """Scene from a preset name or a JSON file path."""
    if ref in PRESET_NAMES:
        return preset(ref), None
    if not Path(ref).exists():
        raise SceneError([f"scene: no preset or file named {ref!r}"])
    return load_scene_file(ref)


def _pick_assembly(name, inline_doc):
    if name:
        presets = standard_assemblies()
        key = name if name in presets else f"{name}_default"
        if key not in presets:
            raise SceneError([f"assembly: unknown preset {name!r}"])
        return presets[key]
    if inline_doc:
        return assembly_from_doc(inline_doc)
    return standard_assemblies()["comb_default"]


def _params_header(args, extra=None) -> dict:
    params = {k: v for k, v in vars(args).items() if k != "func" and v is not None}
    doc = {"capascan_version": __version__, "parameters": params}
    if extra:
        doc.update(extra)
    return doc


def _write_csv(path, header_doc, columns, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("# " + json.dumps(header_doc, sort_keys=True) + "\n")
        f.write(",".join(columns) + "\n")
        for row in rows:
            f.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_solve(args):
    scene, inline = _load_scene(args.scene)
    assembly = _pick_assembly(args.assembly, inline)
    grid = rasterize(scene, args.voxel)
    head = (
        tuple(float(v) for v in args.head.split(","))
        if args.head
        else (scene.extents_mm[0] / 2, scene.extents_mm[1] / 2)
    )
    field = solve(grid, assembly, head, SolverConfig())
    ce = capacitance_energy(field)
    cc = capacitance_charge(field)
    print(f"capacitance_energy_pF={ce!r}")
    print(f"capacitance_charge_pF={cc!r}")
    print(f"iterations={field.iterations_used} residual={field.achieved_residual:.3e}")
    if args.out:
        from .render import render_heatmap_png

        j = field.center_ij[1]
        slice_xz = field.phi[:, j, :].T  # rows walk depth
        render_heatmap_png(
            slice_xz,
            f"{args.out}_potential.png",
            scale=4,
            metadata=_params_header(args, {"content": "potential x-z slice (V)"}),
        )
        prof = centerline_profile(field)
        _write_csv(
            f"{args.out}_profile.csv",
            _params_header(args),
            ["depth_mm", "field_V_per_mm"],
            [(float(d), float(e)) for d, e in zip(prof.depth_mm, prof.e_v_per_mm)],
        )
        print(f"wrote {args.out}_potential.png, {args.out}_profile.csv")
    return EXIT_OK


_SWEEP_VALUES = {
    "separation": [2.0, 4.0, 8.0, 16.0],
    "liftoff": [1.0, 2.0, 4.0, 8.0],
    "shape": ["comb", "circular", "triangular", "plate"],
}


def cmd_sweep(args):
    param = {"separation": "separation", "liftoff": "lift_off", "shape": "shape"}[args.param]
    values = args.values.split(",") if args.values else _SWEEP_VALUES[args.param]
    if args.param != "shape":
        values = [float(v) for v in values]

    if args.scene:
        scene, inline = _load_scene(args.scene)
    else:
        from .scene import CONCRETE, Scene

        scene = Scene(extents_mm=(110.0, 110.0, 40.0), voxel_size_mm=1.0,
                      layers=((CONCRETE, 40.0),))
        inline = None
    base = _pick_assembly(args.assembly, inline)
    grid = rasterize(scene, args.voxel)
    head = (scene.extents_mm[0] / 2, scene.extents_mm[1] / 2)
    config = SolverConfig()

    def one(value):
        assembly = sweep_assembly(base, param, value)
        field = solve(grid, assembly, head, config)
        return capacitance_energy(field), centerline_profile(field)

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        results = list(pool.map(one, values))

    rows = []
    for value, (cap, prof) in zip(values, results):
        for d, e in zip(prof.depth_mm, prof.e_v_per_mm):
            rows.append((value, float(cap), float(d), float(e)))
    out = args.out or f"sweep_{args.param}"
    _write_csv(
        f"{out}.csv",
        _params_header(args, {"columns_note": "long format, one row per depth"}),
        ["value", "capacitance_pF", "depth_mm", "field_V_per_mm"],
        rows,
    )

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for value, (_, prof) in zip(values, results):
        ax.plot(prof.depth_mm, prof.e_v_per_mm, label=f"{args.param}={value}")
    ax.set_xlabel("depth (mm)")
    ax.set_ylabel("|E| (V/mm)")
    ax.set_title(f"centerline field vs depth ({args.param} sweep)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(f"{out}_profile.png", dpi=120)
    print(f"wrote {out}.csv, {out}_profile.png")
    return EXIT_OK


def _build_path(args, scene, assembly):
    if args.preset_path and args.preset_path != "five_lines":
        raise SceneError([f"preset-path: unknown preset {args.preset_path!r}"])
    if args.path_origin:
        ox, oy = (float(v) for v in args.path_origin.split(","))
        dx, dy = (float(v) for v in args.path_direction.split(","))
        return ScanPath(
            origin_mm=(ox, oy),
            direction=(dx, dy),
            line_length_mm=args.path_length,
            num_lines=args.lines,
            line_spacing_mm=args.spacing,
        )
    return default_path(scene, assembly, num_lines=args.lines, line_spacing_mm=args.spacing)


def cmd_scan(args):
    scene, inline = _load_scene(args.scene)
    assembly = _pick_assembly(args.assembly, inline)
    path = _build_path(args, scene, assembly)
    encoder = EncoderModel()
    converter = ConverterState(
        noise_sigma_pf=args.noise, drift_pf_per_m=args.drift, rng_seed=args.seed
    )
    session = run_scan(
        scene, assembly, path, encoder, converter, mode=args.mode, voxel_mm=args.voxel
    )
    session_io.save_session(session, args.out)
    print(f"wrote {args.out} ({path.num_lines} lines, digest {session_io.session_digest(session)[:12]})")
    return EXIT_OK


def cmd_image(args):
    session = session_io.load_session(args.session)
    img = imaging.assemble(session, y_pitch_mm=args.ypitch)
    imaging.image_to_csv(img, f"{args.out}.csv", extra_header=_params_header(args))
    meta = imaging.image_to_png(img, f"{args.out}.png", scale=args.scale,
                                extra_metadata=_params_header(args))
    with open(f"{args.out}.meta.json", "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"wrote {args.out}.csv, {args.out}.png, {args.out}.meta.json")
    return EXIT_OK


def cmd_detect(args):
    img = imaging.image_from_csv(args.image)
    dets = imaging.detect(img, k_mad=args.k_mad)
    dets = imaging.classify(dets, img, metal_ratio=args.metal_ratio, k_mad=args.k_mad)
    doc = {
        "capascan_version": __version__,
        "k_mad": args.k_mad,
        "metal_ratio": args.metal_ratio,
        "detections": [d.to_doc() for d in dets],
    }
    text = json.dumps(doc, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        print(f"wrote {args.out} ({len(dets)} detections)")
    else:
        print(text)
    return EXIT_OK


def cmd_emulate_device(args):
    from .wire import encode_frame

    session = session_io.load_session(args.session)
    blob = bytearray()
    for line_id, line in enumerate(session.lines):
        for sample in line:
            blob += encode_frame(sample, line_id)
    Path(getattr(args, "out")).write_bytes(bytes(blob))
    print(f"wrote {args.out} ({len(blob)} bytes, {len(blob)//16} frames)")
    return EXIT_OK


def cmd_parse_frames(args):
    from .wire import parse_stream

    data = Path(getattr(args, "infile")).read_bytes()
    frames, diag = parse_stream(data)
    print(
        f"frames={diag.frames} bad_crc={diag.bad_crc} "
        f"bytes_discarded={diag.bytes_discarded}"
    )
    for fr in frames[: args.head]:
        print(
            f"line={fr.line_id} tick={fr.tick} calibrated_pF={fr.calibrated_pf!r} "
            f"capdac={fr.capdac_index} flags={fr.flags}"
        )
    if len(frames) > args.head:
        print(f"... {len(frames) - args.head} more")
    return EXIT_OK


def cmd_serve(args):
    from .server import serve

    scene = None
    if args.scene:
        scene, _ = _load_scene(args.scene)
    serve(host=args.host, port=args.port, scene=scene, seed=args.seed)
    return EXIT_OK


# ---------------------------------------------------------------------------
# repro: preset pipeline + its acceptance assertions
# ---------------------------------------------------------------------------


def _repro_checks(fig: str, session, img, dets, path):
    """Assertion set per experiment; raises AssertionError on failure."""
    t = tick_distance(session.encoder)

    def scene_xy(d):
        return (path.origin_mm[0] + d.centroid_mm[0], path.origin_mm[1] + d.centroid_mm[1])

    if fig == "fig7":
        assert len(dets) == 2, f"expected 2 detections, got {len(dets)}"
        yaws = sorted(d.yaw_deg for d in dets)
        near0 = min(yaws[0], 180 - yaws[0])
        assert near0 <= 10, f"first yaw {yaws[0]:.1f} not within 10 deg of 0"
        assert abs(yaws[1] - 90) <= 10, f"second yaw {yaws[1]:.1f} not within 10 deg of 90"
    elif fig == "fig8":
        assert len(dets) == 1, f"expected 1 detection, got {len(dets)}"
        x = scene_xy(dets[0])[0]
        assert abs(x - 120.0) <= t, f"centroid x {x:.1f} more than one tick from 120"
        vals = np.array([[s.calibrated_pf for s in line] for line in session.lines])
        anom = vals - np.median(vals, axis=1, keepdims=True)
        mid_mm = path.line_length_mm / 2
        for li, row in enumerate(anom):
            k = int(np.argmax(row))
            assert abs(k * t - mid_mm) <= t, (
                f"line {li}: max at tick {k}, not the mid-scan tick"
            )
    elif fig == "fig9":
        assert len(dets) == 1, f"expected 1 detection, got {len(dets)}"
        assert abs(dets[0].yaw_deg - 90) <= 10, (
            f"yaw {dets[0].yaw_deg:.1f} not within 10 deg of the stud axis"
        )
    elif fig == "fig10":
        classes = {d.klass for d in dets}
        assert classes == {"metal", "wood"}, f"classes {classes} != {{metal, wood}}"
        metal = next(d for d in dets if d.klass == "metal")
        wood = next(d for d in dets if d.klass == "wood")
        assert metal.peak_anomaly_pf > wood.peak_anomaly_pf, "metal peak not above wood peak"
        mx = scene_xy(metal)[0]
        wx = scene_xy(wood)[0]
        assert abs(mx - 140.0) < abs(mx - 360.0), f"metal detection at x={mx:.0f} not at 140"
        assert abs(wx - 360.0) < abs(wx - 140.0), f"wood detection at x={wx:.0f} not at 360"
    else:
        raise SceneError([f"repro: unknown figure {fig!r}"])


REPRO_MODES = {"fig7": "exact", "fig8": "kernel", "fig9": "kernel", "fig10": "kernel"}


def run_repro(fig: str, out_dir, seed: int = REPRO_SEED, mode: str = None):
    """Full preset pipeline for one experiment; returns (session, image, detections)."""
    name = {
        "fig7": "fig7_plywood_cross_bars",
        "fig8": "fig8_concrete_rebar",
        "fig9": "fig9_wall_stud",
        "fig10": "fig10_metal_and_wood",
    }[fig]
    mode = mode or REPRO_MODES[fig]
    scene = preset(name)
    assembly = standard_assemblies()["comb_default"]
    path = default_path(scene, assembly)
    encoder = EncoderModel()
    converter = ConverterState(rng_seed=seed)  # noise off for determinism
    session = run_scan(scene, assembly, path, encoder, converter, mode=mode)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    session_io.save_session(session, out_dir / f"{fig}_session.csv")
    img = imaging.assemble(session)
    header = {"capascan_version": __version__, "figure": fig, "seed": seed, "mode": mode}
    imaging.image_to_csv(img, out_dir / f"{fig}_image.csv", extra_header=header)
    imaging.image_to_png(img, out_dir / f"{fig}_image.png", extra_metadata=header)
    dets = imaging.detect(img)
    dets = imaging.classify(dets, img)
    (out_dir / f"{fig}_detections.json").write_text(
        json.dumps({**header, "detections": [d.to_doc() for d in dets]},
                   indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    _repro_checks(fig, session, img, dets, path)
    return session, img, dets


def cmd_repro(args):
    try:
        run_repro(args.figure, args.out, seed=args.seed,
                  mode=args.mode)
    except AssertionError as e:
        print(f"error: repro-check-failed: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    print(f"repro {args.figure}: all checks passed; outputs in {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="capascan",
        description="Capacitive subsurface-imaging twin: studies, scans, imaging, live server.",
    )
    ap.add_argument("--version", action="version", version=f"capascan {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="one field solve: capacitance both routes + slice PNG")
    p.add_argument("--scene", required=True, help="scene JSON file or preset name")
    p.add_argument("--assembly", help="assembly preset (comb/circular/triangular/plate)")
    p.add_argument("--head", help="head position 'x,y' in mm (default scene center)")
    p.add_argument("--voxel", type=float, help="override voxel size in mm")
    p.add_argument("--out", help="output file prefix")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="parameter sweep: CSV + profile plot")
    p.add_argument("--param", required=True, choices=["separation", "liftoff", "shape"])
    p.add_argument("--values", help="comma-separated values (defaults per parameter)")
    p.add_argument("--scene", help="scene JSON or preset (default: bare concrete slab)")
    p.add_argument("--assembly", help="base assembly preset (default plate)")
    p.add_argument("--voxel", type=float, help="override voxel size in mm")
    p.add_argument("--out", help="output prefix (default sweep_<param>)")
    p.set_defaults(func=cmd_sweep, assembly_default="plate")

    p = sub.add_parser("scan", help="run a scan session over a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--assembly")
    p.add_argument("--preset-path", dest="preset_path", default="five_lines")
    p.add_argument("--path-origin", dest="path_origin", help="'x,y' mm")
    p.add_argument("--path-direction", dest="path_direction", default="1,0")
    p.add_argument("--path-length", dest="path_length", type=float)
    p.add_argument("--lines", type=int, default=5)
    p.add_argument("--spacing", type=float, default=50.0)
    p.add_argument("--mode", choices=list(MODES), default="exact")
    p.add_argument("--voxel", type=float)
    p.add_argument("--noise", type=float, default=0.0, help="noise sigma pF")
    p.add_argument("--drift", type=float, default=0.0, help="drift pF per meter")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("image", help="stitch a session into CSV + PNG")
    p.add_argument("--session", required=True)
    p.add_argument("--ypitch", type=float, help="cross-track pitch mm (default tick pitch)")
    p.add_argument("--scale", type=int, default=4, help="PNG pixels per cell")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_image)

    p = sub.add_parser("detect", help="detect objects in an image CSV")
    p.add_argument("--image", required=True)
    p.add_argument("--k-mad", dest="k_mad", type=float, default=4.0)
    p.add_argument("--metal-ratio", dest="metal_ratio", type=float, default=3.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("emulate-device", help="serialize a session as wire frames")
    p.add_argument("--session", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_emulate_device)

    p = sub.add_parser("parse-frames", help="parse a wire-frame capture")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--head", type=int, default=5, help="frames to print")
    p.set_defaults(func=cmd_parse_frames)

    p = sub.add_parser("serve", help="live interactive scan server")
    p.add_argument("--scene", help="initial scene JSON or preset")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("repro", help="run a full experiment pipeline + its checks")
    p.add_argument("figure", choices=["fig7", "fig8", "fig9", "fig10"])
    p.add_argument("--out", default="repro_out")
    p.add_argument("--seed", type=int, default=REPRO_SEED)
    p.add_argument("--mode", choices=list(MODES), help="override the default mode")
    p.set_defaults(func=cmd_repro)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (SceneError, SessionFormatError, OutOfDomainError) as e:
        print(f"error: validation: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except ConvergenceError as e:
        print(f"error: numerical: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except CapascanError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (KeyError, ValueError) as e:
        print(f"error: usage: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
