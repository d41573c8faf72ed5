#!/usr/bin/env python3
"""Record a complete interactive bridge session to JSONL.

Drives a scripted client against an in-process BridgeServer: clicks a
microscope goal during bootstrap, probes the rejection paths (early
subretinal click, click above the tip), then places a valid subretinal goal
and runs to trial_done. Every message is written as one line
{"dir": "s2c"|"c2s", "msg": {...}} in arrival order. The browser UI replays
the s2c half in its protocol tests and checks its own gating against c2s.
"""

import argparse
import asyncio
import json
from pathlib import Path

import websockets

from octnav.bridge import BridgeServer
from octnav.trial import GoalRanges, TrialConfig


async def record(path: Path, seed: int, stride: int) -> None:
    cfg = TrialConfig(master_seed=seed, goals=GoalRanges(start_height_um=150.0))
    server = BridgeServer(cfg, speed=2000.0, frame_stride=stride)
    port = await server.start()
    lines = []

    def log(direction, msg):
        lines.append(json.dumps({"dir": direction, "msg": msg}, sort_keys=True))

    async def send(ws, msg):
        log("c2s", msg)
        await ws.send(json.dumps(msg))

    async with websockets.connect(f"ws://127.0.0.1:{port}", max_size=2**24) as ws:
        clicked_ilm = False
        probed_early = False
        probed_above = False
        await send(ws, {"kind": "start"})
        while True:
            msg = json.loads(await ws.recv())
            log("s2c", msg)
            if msg["kind"] == "trial_done":
                break
            if msg["kind"] != "state":
                continue
            phase = msg["phase"]
            if not probed_early:
                # too early: subretinal clicks only count at the surface
                await send(ws, {"kind": "click_subretinal_goal", "col": 255, "row": 520})
                probed_early = True
            elif not clicked_ilm and phase in ("BOOTSTRAP", "AWAIT_ILM_GOAL"):
                await send(ws, {"kind": "click_ilm_goal", "x": 400, "y": 320})
                clicked_ilm = True
            elif phase == "AWAIT_SUBRETINAL_GOAL" and msg["tip_oct_px"] is not None:
                col, row = msg["tip_oct_px"]
                if not probed_above:
                    await send(ws, {"kind": "click_subretinal_goal", "col": col, "row": row - 40})
                    probed_above = True
                elif msg["goal_subretinal_px"] is None:
                    await send(ws, {"kind": "click_subretinal_goal", "col": col, "row": row + 40})
    await server.stop()
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    print(f"{len(lines)} messages -> {path}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="frontend/tests/fixtures/session.jsonl")
    ap.add_argument("--seed", type=int, default=5)
    ap.add_argument("--frame-stride", type=int, default=25)
    args = ap.parse_args()
    asyncio.run(record(Path(args.out), args.seed, args.frame_stride))


if __name__ == "__main__":
    main()
