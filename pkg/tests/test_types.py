import numpy as np
import pytest
from hypothesis import given, strategies as st

from rlsf.types import (
    Segment,
    TabularCMDP,
    Trajectory,
    Transition,
    ValidationError,
    read_trajectory_jsonl,
    split_into_segments,
    trajectory_from_records,
    trajectory_to_records,
    write_trajectory_jsonl,
)


def make_traj(n, traj_id="t0"):
    transitions = [
        Transition(t=i, state=np.array([float(i), 0.5]), action=np.array([1.0]),
                   reward=-1.0, done=(i == n - 1))
        for i in range(n)
    ]
    return Trajectory(transitions, env_seed=7, policy_version=3, traj_id=traj_id)


class TestTransition:
    def test_negative_timestep_rejected(self):
        with pytest.raises(ValidationError):
            Transition(t=-1, state=np.zeros(2), action=np.zeros(1), reward=0.0)

    def test_nonfinite_state_rejected(self):
        with pytest.raises(ValidationError):
            Transition(t=0, state=np.array([np.nan]), action=np.zeros(1), reward=0.0)

    def test_nonfinite_reward_rejected(self):
        with pytest.raises(ValidationError):
            Transition(t=0, state=np.zeros(1), action=np.zeros(1), reward=np.inf)


class TestTrajectory:
    def test_timesteps_must_be_consecutive(self):
        good = make_traj(3)
        bad = [good.transitions[0], good.transitions[2]]
        with pytest.raises(ValidationError):
            Trajectory(bad)

    def test_done_only_on_final_transition(self):
        transitions = [
            Transition(t=0, state=np.zeros(1), action=np.zeros(1), reward=0.0, done=True),
            Transition(t=1, state=np.zeros(1), action=np.zeros(1), reward=0.0, done=True),
        ]
        with pytest.raises(ValidationError):
            Trajectory(transitions)

    def test_array_views(self):
        traj = make_traj(4)
        assert traj.states().shape == (4, 2)
        assert traj.actions().shape == (4, 1)
        np.testing.assert_array_equal(traj.rewards(), -np.ones(4))


class TestSplitIntoSegments:
    def test_exact_division(self):
        segs = split_into_segments(make_traj(10), k=5)
        assert [(s.start, s.end) for s in segs] == [(0, 4), (5, 9)]

    def test_whole_episode_segment(self):
        segs = split_into_segments(make_traj(10), k=10)
        assert [(s.start, s.end) for s in segs] == [(0, 9)]

    def test_remainder_segment(self):
        segs = split_into_segments(make_traj(7), k=3)
        assert [(s.start, s.end) for s in segs] == [(0, 2), (3, 5), (6, 6)]

    def test_k_must_be_positive(self):
        with pytest.raises(ValidationError):
            split_into_segments(make_traj(3), k=0)

    def test_empty_trajectory_rejected(self):
        with pytest.raises(ValidationError):
            split_into_segments(Trajectory([]), k=3)

    @given(n=st.integers(1, 200), k=st.integers(1, 60))
    def test_segments_partition_timesteps(self, n, k):
        segs = split_into_segments(make_traj(n), k=k)
        covered = [t for s in segs for t in range(s.start, s.end + 1)]
        assert covered == list(range(n))
        assert all(len(s) <= k for s in segs)
        assert all(len(s) == k for s in segs[:-1])


class TestSegment:
    def test_invalid_bounds(self):
        with pytest.raises(ValidationError):
            Segment("t", 3, 2)
        with pytest.raises(ValidationError):
            Segment("t", -1, 2)


class TestTabularCMDP:
    def build(self, **overrides):
        kwargs = dict(
            P=np.full((2, 2, 2), 0.5),
            r=np.zeros((2, 2)),
            c_gt=np.zeros((2, 2)),
            mu=np.array([1.0, 0.0]),
            gamma=0.9,
            c_max=0.0,
        )
        kwargs.update(overrides)
        return TabularCMDP(**kwargs)

    def test_valid_construction(self):
        cmdp = self.build()
        assert cmdp.n_states == 2 and cmdp.n_actions == 2

    def test_nonstochastic_rows_rejected(self):
        P = np.full((2, 2, 2), 0.5)
        P[0, 0] = [0.6, 0.6]
        with pytest.raises(ValidationError):
            self.build(P=P)

    def test_mu_must_sum_to_one(self):
        with pytest.raises(ValidationError):
            self.build(mu=np.array([0.9, 0.0]))

    def test_cost_must_be_binary(self):
        c = np.zeros((2, 2))
        c[0, 0] = 0.5
        with pytest.raises(ValidationError):
            self.build(c_gt=c)


class TestSerialization:
    def test_record_round_trip(self):
        traj = make_traj(5)
        records = trajectory_to_records(traj)
        assert records[0] == {"t": 0, "state": [0.0, 0.5], "action": [1.0],
                              "reward": -1.0, "done": False}
        back = trajectory_from_records(records, env_seed=7, policy_version=3, traj_id="t0")
        np.testing.assert_array_equal(back.states(), traj.states())
        np.testing.assert_array_equal(back.rewards(), traj.rewards())
        assert back.transitions[-1].done

    def test_jsonl_round_trip(self, tmp_path):
        traj = make_traj(6, traj_id="roundtrip")
        path = tmp_path / "traj.jsonl"
        write_trajectory_jsonl(traj, path)
        back = read_trajectory_jsonl(path)
        assert back.traj_id == "roundtrip"
        assert back.env_seed == 7 and back.policy_version == 3
        np.testing.assert_array_equal(back.states(), traj.states())
        # writing the reloaded trajectory reproduces the file byte-for-byte
        path2 = tmp_path / "traj2.jsonl"
        write_trajectory_jsonl(back, path2)
        assert path.read_bytes() == path2.read_bytes()
