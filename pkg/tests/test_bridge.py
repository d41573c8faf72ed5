import asyncio
import dataclasses
import json

import pytest
import websockets

from conftest import fast_config
from octnav.bridge import BridgeServer
from octnav.trial import GoalRanges


def run(coro, timeout=120):
    return asyncio.run(asyncio.wait_for(coro, timeout))


async def recv_json(ws):
    return json.loads(await ws.recv())


async def recv_until(ws, pred):
    while True:
        msg = json.loads(await ws.recv())
        if pred(msg):
            return msg


def quick_cfg(**kw):
    # low start keeps the interactive descent short
    base = dict(master_seed=5, goals=GoalRanges(start_height_um=150.0))
    base.update(kw)
    return fast_config(**base)


def test_server_rejects_bad_settings():
    with pytest.raises(ValueError):
        BridgeServer(quick_cfg(), speed=0.0)
    with pytest.raises(ValueError):
        BridgeServer(quick_cfg(), frame_stride=0)


def test_join_state_and_click_gating():
    async def scenario():
        server = BridgeServer(quick_cfg())
        port = await server.start()
        try:
            async with websockets.connect(f"ws://127.0.0.1:{port}") as ws:
                hello = await recv_json(ws)
                assert hello["kind"] == "state"
                assert hello["phase"] == "BOOTSTRAP"
                assert hello["running"] is False
                assert hello["seq"] >= 1

                # subretinal clicks only make sense at the surface
                await ws.send(json.dumps({"kind": "click_subretinal_goal", "col": 255, "row": 520}))
                reply = await recv_json(ws)
                assert reply["kind"] == "click_rejected"
                assert reply["goal"] == "subretinal"
                assert reply["phase"] == "BOOTSTRAP"

                # microscope click outside the frame bounds
                await ws.send(json.dumps({"kind": "click_ilm_goal", "x": 5000, "y": 10}))
                reply = await recv_json(ws)
                assert reply["kind"] == "click_rejected"
                assert "outside the microscope frame" in reply["reason"]

                # a valid click is acknowledged and echoed in state
                await ws.send(json.dumps({"kind": "click_ilm_goal", "x": 400, "y": 320}))
                ack = await recv_json(ws)
                assert ack["kind"] == "goal_ack"
                assert ack["px"] == [400, 320]
        finally:
            await server.stop()

    run(scenario())


def test_malformed_and_unknown_messages():
    async def scenario():
        server = BridgeServer(quick_cfg())
        port = await server.start()
        try:
            async with websockets.connect(f"ws://127.0.0.1:{port}") as ws:
                await recv_json(ws)  # join state
                await ws.send("this is not json")
                reply = await recv_json(ws)
                assert reply["kind"] == "error"
                assert "bad message" in reply["message"]

                # unknown kinds are dropped; the connection keeps working
                await ws.send(json.dumps({"kind": "wiggle"}))
                await ws.send(json.dumps({"kind": "pause"}))
                reply = await recv_json(ws)
                assert reply["kind"] == "state"
        finally:
            await server.stop()

    run(scenario())


def test_reset_applies_overrides_and_rejects_garbage():
    async def scenario():
        server = BridgeServer(quick_cfg())
        port = await server.start()
        try:
            async with websockets.connect(f"ws://127.0.0.1:{port}") as ws:
                await recv_json(ws)
                await ws.send(json.dumps({"kind": "reset", "config": {"master_seed": 9}}))
                state = await recv_until(ws, lambda m: m["kind"] == "state")
                assert state["phase"] == "BOOTSTRAP"
                assert state["sim_time_s"] == 0.0
                assert server.cfg.master_seed == 9

                await ws.send(
                    json.dumps({"kind": "reset", "config": {"noise": {"dropout_rate": 2.0}}})
                )
                reply = await recv_json(ws)
                assert reply["kind"] == "error"
                assert "bad config" in reply["message"]
        finally:
            await server.stop()

    run(scenario())


def test_live_loop_two_clients(tmp_path):
    """Full interactive trial: both clients see identical broadcasts and the
    final record matches what lands on disk."""

    async def drain(ws, sink):
        while True:
            msg = json.loads(await ws.recv())
            sink.append(msg)
            if msg["kind"] == "trial_done":
                return msg

    async def drive(ws, sink):
        clicked_ilm = False
        rejected_second_ilm = False
        probed_bad_subretinal = False
        while True:
            msg = json.loads(await ws.recv())
            sink.append(msg)
            kind = msg["kind"]
            if kind == "trial_done":
                return msg
            if kind != "state":
                continue
            phase = msg["phase"]
            if not clicked_ilm and phase in ("BOOTSTRAP", "AWAIT_ILM_GOAL"):
                await ws.send(json.dumps({"kind": "click_ilm_goal", "x": 400, "y": 320}))
                clicked_ilm = True
            elif clicked_ilm and not rejected_second_ilm and phase in ("ALIGN_XY", "LOWER_Z"):
                await ws.send(json.dumps({"kind": "click_ilm_goal", "x": 100, "y": 100}))
                rejected_second_ilm = True
            elif phase == "AWAIT_SUBRETINAL_GOAL" and msg["tip_oct_px"] is not None:
                col, row = msg["tip_oct_px"]
                if not probed_bad_subretinal:
                    await ws.send(
                        json.dumps(
                            {"kind": "click_subretinal_goal", "col": col, "row": row - 50}
                        )
                    )
                    probed_bad_subretinal = True
                elif msg["goal_subretinal_px"] is None and any(
                    m["kind"] == "click_rejected" and m["goal"] == "subretinal" for m in sink
                ):
                    await ws.send(
                        json.dumps(
                            {"kind": "click_subretinal_goal", "col": col, "row": row + 40}
                        )
                    )

    async def scenario():
        server = BridgeServer(
            quick_cfg(), speed=2000.0, out_dir=str(tmp_path), frame_stride=25
        )
        port = await server.start()
        try:
            uri = f"ws://127.0.0.1:{port}"
            async with websockets.connect(uri, max_size=2**24) as wa:
                await recv_json(wa)  # A's join state
                async with websockets.connect(uri, max_size=2**24) as wb:
                    b_sink = []
                    hello_b = json.loads(await wb.recv())
                    b_sink.append(hello_b)
                    seq0 = hello_b["seq"]
                    a_sink = []
                    drain_task = asyncio.create_task(drain(wb, b_sink))
                    await wa.send(json.dumps({"kind": "start"}))
                    done_a = await drive(wa, a_sink)
                    done_b = await drain_task
            return a_sink, b_sink, seq0, done_a, done_b
        finally:
            await server.stop()

    a_sink, b_sink, seq0, done_a, done_b = run(scenario(), timeout=300)

    assert done_a["status"] == "done"
    assert done_a["record"]["status"] == "done"

    # per-client rejections happened on A but must not reach B
    rejected = [m for m in a_sink if m["kind"] == "click_rejected"]
    assert {(m["goal"]) for m in rejected} == {"ilm", "subretinal"}
    assert all(m["kind"] != "click_rejected" for m in b_sink)

    # everything broadcast after B joined is identical on both connections
    broadcast_a = [m for m in a_sink if m["seq"] > seq0 and m["kind"] not in ("click_rejected", "error")]
    broadcast_b = [m for m in b_sink if m["seq"] > seq0]
    assert broadcast_a == broadcast_b

    # seq strictly increases on each connection
    for sink in (a_sink, b_sink):
        seqs = [m["seq"] for m in sink]
        assert all(b > a for a, b in zip(seqs, seqs[1:]))

    # frames carry images and annotations
    frames = [m for m in a_sink if m["kind"] in ("microscope_frame", "bscan_frame")]
    assert frames
    assert all(m["png"] and m["annotations"] for m in frames)
    bscans = [m for m in frames if m["kind"] == "bscan_frame"]
    assert all("ilm_rows" in m["annotations"] for m in bscans)

    # the record broadcast equals the record written to disk
    written = json.loads((tmp_path / "interactive_record.json").read_text())
    assert written == done_a["record"]
    assert (tmp_path / "interactive_trace.csv").exists()


def test_pause_stops_time():
    async def scenario():
        server = BridgeServer(quick_cfg(), speed=2000.0, frame_stride=1000)
        port = await server.start()
        try:
            async with websockets.connect(f"ws://127.0.0.1:{port}") as ws:
                await recv_json(ws)
                await ws.send(json.dumps({"kind": "start"}))
                state = await recv_until(
                    ws, lambda m: m["kind"] == "state" and m["sim_time_s"] > 0.2
                )
                assert state["running"] is True
                await ws.send(json.dumps({"kind": "pause"}))
                paused = await recv_until(ws, lambda m: m["kind"] == "state" and m["running"] is False)
                t0 = paused["sim_time_s"]
                await asyncio.sleep(0.3)
                assert server.session.sim_time == t0
        finally:
            await server.stop()

    run(scenario())


def test_frame_stride_thins_stream():
    async def scenario():
        server = BridgeServer(quick_cfg(), speed=2000.0, frame_stride=5)
        port = await server.start()
        try:
            async with websockets.connect(f"ws://127.0.0.1:{port}", max_size=2**24) as ws:
                await recv_json(ws)
                await ws.send(json.dumps({"kind": "start"}))
                frames = 0
                state = None
                while state is None or state["sim_time_s"] < 1.0:
                    msg = await recv_json(ws)
                    if msg["kind"] == "microscope_frame":
                        frames += 1
                    if msg["kind"] == "state":
                        state = msg
                # 1 sim second at 30 Hz is 30 frames; stride 5 passes 6
                assert frames <= 8
                assert frames >= 4
        finally:
            await server.stop()

    run(scenario())
