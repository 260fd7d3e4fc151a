import asyncio
import base64
import io
import json

import numpy as np
import pytest
from PIL import Image

from mulsa.demos import expert_policy_fn, make_env, run_episode
from mulsa.sensordata import load_episode
from mulsa.teleop import TeleopSession


def drive(session, values=None):
    if values is not None:
        reply = session.handle_message(json.dumps({"type": "action", "values": values}))
        assert reply is None
    return session.tick_once()


class TestMessages:
    def test_malformed_json(self):
        session = TeleopSession("packing", "left_flat")
        reply = session.handle_message("{oops")
        assert reply["type"] == "error"

    def test_missing_type(self):
        session = TeleopSession("packing", "left_flat")
        assert session.handle_message(json.dumps({"values": [0, 0, 0]}))["type"] == "error"

    def test_unknown_type(self):
        session = TeleopSession("packing", "left_flat")
        assert session.handle_message(json.dumps({"type": "dance"}))["type"] == "error"

    def test_valid_action_fills_mailbox(self):
        session = TeleopSession("packing", "left_flat")
        assert session.handle_message(json.dumps({"type": "action", "values": [1, 0, -1]})) is None
        assert session.session.pending_action == [1, 0, -1]

    def test_out_of_range_action_leaves_mailbox(self):
        session = TeleopSession("packing", "left_flat")
        session.handle_message(json.dumps({"type": "action", "values": [0, 0, 1]}))
        reply = session.handle_message(json.dumps({"type": "action", "values": [2, 0, 0]}))
        assert reply["type"] == "error"
        assert session.session.pending_action == [0, 0, 1]

    def test_wrong_arity_rejected(self):
        session = TeleopSession("pouring", "60")
        reply = session.handle_message(json.dumps({"type": "action", "values": [1, 0, 0]}))
        assert reply["type"] == "error"

    def test_ping_pong(self):
        session = TeleopSession("packing", "left_flat")
        assert session.handle_message(json.dumps({"type": "ping"})) == {"type": "pong"}

    def test_reset_changes_scenario_and_seed(self):
        session = TeleopSession("packing", "left_flat", seed=0)
        session.handle_message(json.dumps({"type": "reset", "scenario": "back_flat", "seed": 9}))
        packet = session.tick_once()
        assert packet["scenario"] == "back_flat"
        assert session.session.seed == 9
        assert packet["tick"] == 1


class TestTickLoop:
    def test_mailbox_consumed_once(self):
        session = TeleopSession("packing", "left_flat")
        drive(session, [0, 1, 0])
        assert session.session.pending_action is None
        # no new message: next tick applies the zero action
        before = session.env.state.peg_position
        session.tick_once()
        assert session.env.state.peg_position == before

    def test_packet_contents(self):
        session = TeleopSession("packing", "left_flat")
        packet = drive(session, [1, 0, 0])
        assert packet["type"] == "obs"
        assert packet["task"] == "packing"
        assert packet["terminal"] is False
        assert packet["applied_class"] == 22  # (1, 0, 0)
        vis = np.asarray(Image.open(io.BytesIO(base64.b64decode(packet["visual"]))))
        assert vis.shape == (240, 320, 3)
        tac = np.asarray(Image.open(io.BytesIO(base64.b64decode(packet["tactile"]))))
        assert tac.shape == (300, 400, 3)
        mel = np.asarray(packet["mel"])
        assert mel.shape == (64, 50)

    def test_pouring_packet_has_scale(self):
        session = TeleopSession("pouring", "60")
        packet = drive(session, [0, 0])
        assert packet["scale_g"] == 0.0

    def test_terminal_packet_has_outcome(self):
        session = TeleopSession("packing", "soft_slanted")
        for _ in range(80):
            packet = drive(session, [0, 0, -1])
            if packet["terminal"]:
                break
        assert packet["terminal"]
        assert packet["outcome"]["success"] is True
        # further ticks do not step the env and keep reporting terminal
        packet = session.tick_once()
        assert packet["terminal"]
        assert packet["applied_class"] is None


class TestRecording:
    def test_record_toggle_saves_episode(self, tmp_path):
        session = TeleopSession("packing", "soft_slanted", record_dir=tmp_path, seed=4)
        session.handle_message(json.dumps({"type": "record", "on": True}))
        for _ in range(80):
            packet = drive(session, [0, 0, -1])
            if packet["terminal"]:
                break
        session.handle_message(json.dumps({"type": "record", "on": False}))
        assert len(session.saved_episodes) == 1
        episode = load_episode(session.saved_episodes[0])
        assert episode.metadata.source == "teleop"
        assert episode.outcome["success"] is True
        assert all(s.action.values == (0, 0, -1) for s in episode.steps)

    def test_no_save_when_not_recording(self, tmp_path):
        session = TeleopSession("packing", "left_flat", record_dir=tmp_path)
        drive(session, [0, 0, -1])
        session.handle_message(json.dumps({"type": "reset"}))
        assert session.saved_episodes == []

    def test_reset_rotates_recorded_episode(self, tmp_path):
        session = TeleopSession("packing", "left_flat", record_dir=tmp_path, seed=1)
        session.handle_message(json.dumps({"type": "record", "on": True}))
        for _ in range(5):
            drive(session, [1, 0, 0])
        session.handle_message(json.dumps({"type": "reset", "seed": 2}))
        assert len(session.saved_episodes) == 1
        episode = load_episode(session.saved_episodes[0])
        assert len(episode.steps) == 5


class TestWirePathEquivalence:
    @pytest.mark.parametrize("task,scenario", [("packing", "hard_slanted"), ("pouring", "60")])
    def test_lockstep_replica_matches_direct_expert(self, task, scenario):
        # a client that mirrors the env via the wire protocol and replies with
        # the expert action reproduces the direct expert's outcome exactly
        seed = 12
        direct = run_episode(make_env(task, scenario), expert_policy_fn(task), seed, "scripted")

        session = TeleopSession(task, scenario, seed=seed)
        replica = make_env(task, scenario)
        replica.reset(seed)
        expert = expert_policy_fn(task)
        applied = []
        action = expert(replica.state, replica, None).values
        for _ in range(300):
            packet = drive(session, list(action))
            if packet["applied_class"] is not None:
                replica_state, _ = replica.step(action)
                applied.append(packet["applied_class"])
            if packet["terminal"]:
                break
            action = expert(replica.state, replica, None).values

        direct_actions = [s.action.class_index for s in direct.steps[:-1]]
        assert applied == direct_actions
        if task == "packing":
            assert session.env.state.success == direct.outcome["success"]
        else:
            assert session.env.outcome().weight_error_g == direct.outcome["weight_error_g"]
        assert session.env.state.step_count == direct.outcome["steps_used"]


class TestServer:
    def test_websocket_round_trip(self):
        import websockets

        async def scenario():
            session = TeleopSession("packing", "left_flat", tick_period=0.02)
            server_task = asyncio.create_task(session.serve("127.0.0.1", 8971))
            await asyncio.sleep(0.2)
            try:
                async with websockets.connect("ws://127.0.0.1:8971") as ws:
                    await ws.send(json.dumps({"type": "ping"}))
                    frames = []
                    for _ in range(12):
                        frames.append(json.loads(await asyncio.wait_for(ws.recv(), 2)))
                    kinds = {f["type"] for f in frames}
                    assert "pong" in kinds
                    obs = [f for f in frames if f["type"] == "obs"]
                    assert len(obs) >= 5
                    ticks = [f["tick"] for f in obs]
                    assert ticks == sorted(ticks)
            finally:
                session.stop()
                await asyncio.wait_for(server_task, 5)

        asyncio.run(scenario())
