"""Websocket bridge between the simulator and a browser UI.

Wire protocol: one JSON object per text frame, every server message stamped
with a strictly increasing seq. Broadcast messages (frames, state, goal
acks, trial_done) are fanned out identically to every connected client;
per-client replies (click rejections, errors) draw from the same counter,
so seq stays strictly increasing on every connection even though gaps may
appear.

Server -> client kinds:
    state            {phase, running, sim_time_s, tip_rgb_px, tip_oct_px,
                      rcm_error_um, goal_ilm_px, goal_subretinal_px, durations}
    microscope_frame {tick, sim_time_s, png (base64), width, height,
                      annotations {tip_px, base_px, valid}}
    bscan_frame      {tick, sim_time_s, png, width, height,
                      line_center_px, line_tangent_px,
                      annotations {tip_px, base_px, valid, ilm_rows, rpe_rows}}
    goal_ack         {goal: "ilm"|"subretinal", px}
    click_rejected   {goal, reason, phase}
    trial_done       {status, record}
    error            {message}

Client -> server kinds:
    start | pause | reset {config?} |
    click_ilm_goal {x, y} | click_subretinal_goal {col, row}

Unknown kinds are ignored with a logged warning. Clicks are buffered and
consumed by the controller at its next decision tick; the acknowledging
goal_ack (and the goals echoed in every state message) are what a UI may
render as the active goals.
"""

from __future__ import annotations

import asyncio
import base64
import io
import json
import logging
import time

import numpy as np

from octnav.metrics import record_to_dict, record_to_json, write_trace_csv
from octnav.servo import Phase
from octnav.trial import (
    InteractiveGoals,
    TrialConfig,
    TrialSession,
    config_from_dict,
    config_to_dict,
)

log = logging.getLogger("octnav.bridge")


def _png_b64(img: np.ndarray) -> str:
    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(img, mode="L").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _merge_config(base: dict, overrides: dict) -> dict:
    out = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge_config(out[key], value)
        else:
            out[key] = value
    return out


class BridgeServer:
    """One simulator session shared by all connected clients."""

    def __init__(
        self,
        cfg: TrialConfig = TrialConfig(),
        speed: float = 1.0,
        out_dir=None,
        frame_stride: int = 1,
    ):
        if speed <= 0:
            raise ValueError("speed must be positive")
        if frame_stride < 1:
            raise ValueError("frame stride must be at least 1")
        self.base_cfg = cfg
        self.speed = speed
        self.out_dir = out_dir
        self.frame_stride = frame_stride
        self.clients: set = set()
        self._seq = 0
        self._running = False
        self._frame_counts = {"microscope": 0, "bscan": 0}
        self._server = None
        self._loop_task = None
        self._stop = asyncio.Event()
        self._new_session(cfg)

    # -- session ---------------------------------------------------------

    def _new_session(self, cfg: TrialConfig) -> None:
        self.cfg = cfg
        self.goals = InteractiveGoals(cfg.camera, start_height_um=cfg.goals.start_height_um)
        self.session = TrialSession(cfg, goals=self.goals)
        self._running = False
        self._frame_counts = {"microscope": 0, "bscan": 0}
        self._record_written = False

    def _phase(self) -> str:
        return self.session.phase_name()

    def _durations_so_far(self) -> dict:
        out: dict[str, float] = {}
        trace = self.session.record.phase_trace
        entries = list(trace) + [(self.session.sim_time, "_now")]
        for (t0, name), (t1, _) in zip(entries[:-1], entries[1:]):
            out[name] = out.get(name, 0.0) + (t1 - t0)
        return out

    def _state_message(self) -> dict:
        s = self.session
        msg = {
            "kind": "state",
            "phase": self._phase(),
            "running": self._running and not s.finished,
            "sim_time_s": s.sim_time,
            "tip_rgb_px": None,
            "tip_oct_px": None,
            "rcm_error_um": None,
            "goal_ilm_px": None,
            "goal_subretinal_px": None,
            "durations_s": self._durations_so_far(),
        }
        if s.rgb_obs is not None and s.rgb_obs.valid:
            msg["tip_rgb_px"] = s.rgb_obs.tip_px.tolist()
        if s.oct_obs is not None and s.oct_obs.valid:
            msg["tip_oct_px"] = s.oct_obs.tip_px.tolist()
        if s._trace["rcm_error_um"]:
            msg["rcm_error_um"] = s._trace["rcm_error_um"][-1]
        ilm = self.goals.ilm_goal_px()
        if ilm is not None:
            msg["goal_ilm_px"] = ilm.tolist()
        sub = self.goals.subretinal_goal_px(None)
        if sub is not None:
            msg["goal_subretinal_px"] = sub.tolist()
        return msg

    # -- messaging ---------------------------------------------------------

    def _stamp(self, msg: dict) -> str:
        self._seq += 1
        msg["seq"] = self._seq
        return json.dumps(msg)

    async def _broadcast(self, msg: dict) -> None:
        text = self._stamp(msg)
        dead = []
        for ws in self.clients:
            try:
                await ws.send(text)
            except Exception:
                dead.append(ws)
        for ws in dead:
            self.clients.discard(ws)

    async def _send_one(self, ws, msg: dict) -> None:
        try:
            await ws.send(self._stamp(msg))
        except Exception:
            self.clients.discard(ws)

    def _frame_message(self, kind: str, frame, obs) -> dict | None:
        short = "microscope" if kind == "microscope_frame" else "bscan"
        self._frame_counts[short] += 1
        if (self._frame_counts[short] - 1) % self.frame_stride != 0:
            return None
        img = frame.render()
        msg = {
            "kind": kind,
            "tick": self.session.tick_index,
            "sim_time_s": frame.timestamp_s,
            "png": _png_b64(img),
            "width": int(img.shape[1]),
            "height": int(img.shape[0]),
        }
        if kind == "microscope_frame":
            msg["annotations"] = {
                "tip_px": obs.tip_px.tolist(),
                "base_px": obs.base_px.tolist(),
                "valid": obs.valid,
            }
        else:
            msg["line_center_px"] = frame.scan_line.center_px.tolist()
            msg["line_tangent_px"] = frame.scan_line.tangent_px.tolist()
            msg["annotations"] = {
                "tip_px": obs.tip_px.tolist(),
                "base_px": obs.base_px.tolist(),
                "valid": obs.valid,
                "ilm_rows": obs.ilm_rows.tolist(),
                "rpe_rows": obs.rpe_rows.tolist(),
            }
        return msg

    async def _emit_events(self, events: list) -> None:
        state_due = False
        for event in events:
            if event[0] in ("microscope_frame", "bscan_frame"):
                msg = self._frame_message(event[0], event[1], event[2])
                if msg is not None:
                    await self._broadcast(msg)
                if event[0] == "bscan_frame":
                    state_due = True
            elif event[0] == "phase":
                state_due = True
            elif event[0] == "done":
                record = event[1]
                self._write_record(record)
                await self._broadcast(self._state_message())
                await self._broadcast(
                    {
                        "kind": "trial_done",
                        "status": record.status,
                        "record": record_to_dict(record),
                    }
                )
                state_due = False
        if state_due:
            await self._broadcast(self._state_message())

    def _write_record(self, record) -> None:
        if self.out_dir is None or self._record_written:
            return
        import os

        os.makedirs(self.out_dir, exist_ok=True)
        with open(os.path.join(self.out_dir, "interactive_record.json"), "w") as f:
            f.write(record_to_json(record))
        write_trace_csv(record, os.path.join(self.out_dir, "interactive_trace.csv"))
        self._record_written = True

    # -- client handling ----------------------------------------------------

    async def _handle_client(self, ws) -> None:
        self.clients.add(ws)
        await self._broadcast(self._state_message())
        try:
            async for raw in ws:
                await self._handle_message(ws, raw)
        except Exception:
            pass
        finally:
            self.clients.discard(ws)

    async def _handle_message(self, ws, raw) -> None:
        try:
            msg = json.loads(raw)
            if not isinstance(msg, dict):
                raise ValueError("message must be a JSON object")
        except ValueError as exc:
            await self._send_one(ws, {"kind": "error", "message": f"bad message: {exc}"})
            return
        kind = msg.get("kind")
        if kind == "start":
            self._running = True
            await self._broadcast(self._state_message())
        elif kind == "pause":
            self._running = False
            await self._broadcast(self._state_message())
        elif kind == "reset":
            doc = config_to_dict(self.base_cfg)
            overrides = msg.get("config") or {}
            try:
                cfg = config_from_dict(_merge_config(doc, overrides))
            except (TypeError, ValueError) as exc:
                await self._send_one(
                    ws, {"kind": "error", "message": f"bad config: {exc}"}
                )
                return
            self._new_session(cfg)
            await self._broadcast(self._state_message())
        elif kind == "click_ilm_goal":
            await self._click_ilm(ws, msg)
        elif kind == "click_subretinal_goal":
            await self._click_subretinal(ws, msg)
        else:
            log.warning("ignoring unknown message kind %r", kind)

    async def _click_ilm(self, ws, msg: dict) -> None:
        phase = self._phase()
        if phase not in ("BOOTSTRAP", "AWAIT_ILM_GOAL"):
            await self._send_one(
                ws,
                {
                    "kind": "click_rejected",
                    "goal": "ilm",
                    "reason": "microscope goal already set or trial finished",
                    "phase": phase,
                },
            )
            return
        try:
            self.goals.set_ilm_goal([msg["x"], msg["y"]])
        except (KeyError, TypeError, ValueError) as exc:
            await self._send_one(
                ws,
                {"kind": "click_rejected", "goal": "ilm", "reason": str(exc), "phase": phase},
            )
            return
        await self._broadcast(
            {"kind": "goal_ack", "goal": "ilm", "px": self.goals.ilm_goal_px().tolist()}
        )

    async def _click_subretinal(self, ws, msg: dict) -> None:
        phase = self._phase()
        if phase != Phase.AWAIT_SUBRETINAL_GOAL.value:
            await self._send_one(
                ws,
                {
                    "kind": "click_rejected",
                    "goal": "subretinal",
                    "reason": "subretinal goal is only accepted at the surface",
                    "phase": phase,
                },
            )
            return
        oct_obs = self.session.oct_obs
        try:
            col = float(msg["col"])
            row = float(msg["row"])
            if oct_obs is not None and oct_obs.valid and row < float(oct_obs.tip_px[1]):
                raise ValueError("goal sits above the needle tip")
            self.goals.set_subretinal_goal([col, row])
        except (KeyError, TypeError, ValueError) as exc:
            await self._send_one(
                ws,
                {
                    "kind": "click_rejected",
                    "goal": "subretinal",
                    "reason": str(exc),
                    "phase": phase,
                },
            )
            return
        await self._broadcast(
            {
                "kind": "goal_ack",
                "goal": "subretinal",
                "px": self.goals.subretinal_goal_px(None).tolist(),
            }
        )

    # -- lifecycle ----------------------------------------------------------

    async def _sim_loop(self) -> None:
        tick_budget = None
        while not self._stop.is_set():
            if self._running and not self.session.finished:
                start_wall = time.monotonic()
                events = self.session.tick()
                await self._emit_events(events)
                if tick_budget is None:
                    tick_budget = self.session.dt / self.speed
                elapsed = time.monotonic() - start_wall
                await asyncio.sleep(max(0.0, tick_budget - elapsed))
            else:
                await asyncio.sleep(0.02)

    async def start(self, host: str = "127.0.0.1", port: int = 0) -> int:
        import websockets

        self._server = await websockets.serve(self._handle_client, host, port)
        self._loop_task = asyncio.create_task(self._sim_loop())
        return self._server.sockets[0].getsockname()[1]

    async def stop(self) -> None:
        self._stop.set()
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
        if self._loop_task is not None:
            self._loop_task.cancel()
            try:
                await self._loop_task
            except asyncio.CancelledError:
                pass


def serve(
    cfg: TrialConfig = TrialConfig(),
    host: str = "127.0.0.1",
    port: int = 8765,
    speed: float = 1.0,
    out_dir=None,
    frame_stride: int = 1,
) -> None:
    """Run the bridge until interrupted."""

    async def _run():
        server = BridgeServer(cfg, speed=speed, out_dir=out_dir, frame_stride=frame_stride)
        bound = await server.start(host, port)
        print(f"octnav bridge listening on ws://{host}:{bound}")
        try:
            await asyncio.Future()
        finally:
            await server.stop()

    try:
        asyncio.run(_run())
    except KeyboardInterrupt:
        pass
