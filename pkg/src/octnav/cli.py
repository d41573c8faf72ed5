"""Command line entry points.

    octnav simulate   run a seeded batch and write records + aggregate
    octnav calibrate  run the simulated galvo calibration, write the 6-number file
    octnav replay     re-render the frames of a recorded trial to PNG
    octnav serve      run the interactive websocket bridge for the browser UI
    octnav config     write the default trial configuration as YAML
"""

from __future__ import annotations

import argparse
import json
import sys


def _add_config_arg(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="trial config YAML; defaults apply when omitted")
    p.add_argument("--seed", type=int, help="override the master seed")


def _load_cfg(args):
    from octnav.trial import TrialConfig, load_config

    cfg = load_config(args.config) if args.config else TrialConfig()
    if args.seed is not None:
        import dataclasses

        cfg = dataclasses.replace(cfg, master_seed=args.seed)
    return cfg


def _cmd_simulate(args) -> int:
    import dataclasses

    from octnav.trial import run_batch

    cfg = _load_cfg(args)
    overrides = {}
    if args.eyes is not None:
        overrides["n_eyes"] = args.eyes
    if args.trials is not None:
        overrides["trials_per_eye"] = args.trials
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    result = run_batch(cfg, out_dir=args.out, verbose=not args.quiet)
    print(f"{result.n_done}/{len(result.records)} trials done")
    print(f"determinism hash {result.determinism_hash}")
    for name, stats in result.aggregate.items():
        print(f"  {name}: {stats['mean']:.3f} +/- {stats['std']:.3f} (n={stats['n']})")
    if args.out:
        print(f"records written to {args.out}")
    return 0


def _cmd_calibrate(args) -> int:
    import numpy as np

    from octnav.galvo import collect_samples, fit_calibration, save_calibration, voltage_grid
    from octnav.trial import STREAM_GALVO, _random_galvo, stream_rng
    from octnav.imaging import CameraModel

    rng = stream_rng(args.seed, STREAM_GALVO, 0)
    truth = _random_galvo(rng, CameraModel())
    samples = collect_samples(truth, voltage_grid(args.grid, args.span), args.noise_px, rng)
    fitted = fit_calibration(samples)
    save_calibration(fitted, args.out)
    err = float(np.max(np.abs(fitted.gain - truth.gain)))
    print(f"calibration written to {args.out}")
    print(f"max |gain error| vs hidden truth: {err:.3e} px/V")
    return 0


def _cmd_replay(args) -> int:
    from octnav.metrics import record_from_json
    from octnav.trial import replay

    with open(args.record) as f:
        rec = record_from_json(f.read())
    kinds = tuple(args.frames.split(","))
    written = replay(rec, args.out, kinds=kinds)
    print(f"{len(written)} frames written to {args.out}")
    return 0


def _cmd_serve(args) -> int:
    from octnav.bridge import serve

    cfg = _load_cfg(args)
    serve(
        cfg,
        host=args.host,
        port=args.port,
        speed=args.speed,
        out_dir=args.out,
        frame_stride=args.frame_stride,
    )
    return 0


def _cmd_config(args) -> int:
    from octnav.trial import TrialConfig, save_config

    save_config(TrialConfig(), args.out)
    print(f"default config written to {args.out}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="octnav", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a seeded trial batch")
    _add_config_arg(p)
    p.add_argument("--eyes", type=int, help="number of phantom eyes")
    p.add_argument("--trials", type=int, help="trials per eye")
    p.add_argument("--out", help="output directory for records and aggregate")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("calibrate", help="simulated galvo calibration")
    p.add_argument("--out", default="galvo_calibration.txt")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid", type=int, default=5, help="grid points per axis")
    p.add_argument("--span", type=float, default=2.0, help="grid half-span in volts")
    p.add_argument("--noise-px", type=float, default=0.0, dest="noise_px")
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("replay", help="re-render recorded frames")
    p.add_argument("record", help="trial record JSON")
    p.add_argument("--out", default="replay")
    p.add_argument("--frames", default="microscope,bscan")
    p.set_defaults(func=_cmd_replay)

    p = sub.add_parser("serve", help="interactive websocket bridge")
    _add_config_arg(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--speed", type=float, default=1.0, help="sim seconds per wall second")
    p.add_argument("--frame-stride", type=int, default=1, dest="frame_stride",
                   help="stream every n-th frame")
    p.add_argument("--out", help="directory for the finished trial record")
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("config", help="write the default config YAML")
    p.add_argument("--out", default="trial_config.yaml")
    p.set_defaults(func=_cmd_config)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
