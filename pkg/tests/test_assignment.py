import numpy as np
import pytest
from hypothesis import given, strategies as st

from sldsed.assignment import INACTIVE, assign_frames, frames_to_events
from sldsed.ctc import Spike
from sldsed.synth import Event

a, b = 0, 1


def mask(n, active):
    m = np.zeros(n, dtype=bool)
    m[list(active)] = True
    return m


def test_single_spike_labels_all_active():
    labels = assign_frames(mask(12, {2, 3, 9}), [Spike(a, 5)])
    assert labels[[2, 3, 9]].tolist() == [a, a, a]
    assert np.all(np.delete(labels, [2, 3, 9]) == INACTIVE)


def test_equidistant_frame_goes_to_earlier_spike():
    assert assign_frames(mask(10, {5}), [Spike(a, 2), Spike(b, 8)])[5] == a


def test_nearest_spike():
    labels = assign_frames(mask(10, {1, 2, 3, 7, 8, 9}), [Spike(a, 2), Spike(b, 8)])
    assert labels[[1, 2, 3, 7, 8, 9]].tolist() == [a, a, a, b, b, b]


def test_no_spikes_all_inactive():
    assert np.all(assign_frames(mask(5, {0, 1, 2}), []) == INACTIVE)


def brute_nearest(frame, spikes):
    best = None
    for s in spikes:  # earlier spike kept on ties
        if best is None or abs(frame - s.frame) < abs(frame - best.frame):
            best = s
    return best.cls


@given(st.integers(0, 10_000), st.integers(0, 30))
def test_assignment_properties(seed, shift):
    rng = np.random.default_rng(seed)
    T = 40
    frames = sorted(rng.choice(T, size=int(rng.integers(1, 6)), replace=False).tolist())
    spikes = [Spike(int(rng.integers(0, 4)), f) for f in frames]
    active = rng.random(T) < 0.5
    labels = assign_frames(active, spikes)
    for i in np.flatnonzero(active):
        assert labels[i] == brute_nearest(i, spikes)
    assert set(labels[active].tolist()) <= {s.cls for s in spikes}
    # run order follows spike order
    collapse = lambda seq: [x for i, x in enumerate(seq) if i == 0 or seq[i - 1] != x]
    runs = collapse(labels[active].tolist())
    it = iter(collapse([s.cls for s in spikes]))
    assert all(any(r == c for c in it) for r in runs)
    # translation equivariance
    shifted = assign_frames(np.r_[np.zeros(shift, bool), active], [Spike(s.cls, s.frame + shift) for s in spikes])
    np.testing.assert_array_equal(shifted[shift:], labels)


def test_run_to_event():
    events = frames_to_events([a, a, a, INACTIVE], 0.032, min_dur=0.0)
    assert len(events) == 1
    assert events[0].cls == a
    assert events[0].onset == pytest.approx(0.0)
    assert events[0].offset == pytest.approx(0.096)


def test_short_gap_merged():
    labels = [a, a, a, INACTIVE, a, a, a]
    events = frames_to_events(labels, 0.032)
    assert len(events) == 1
    assert events[0].onset == pytest.approx(0.0) and events[0].offset == pytest.approx(7 * 0.032)


def test_long_gap_not_merged_and_other_class_blocks_merge():
    labels = [a] * 5 + [INACTIVE] * 4 + [a] * 5
    assert len(frames_to_events(labels, 0.032)) == 2
    labels = [a] * 5 + [b] * 4 + [a] * 5
    assert [e.cls for e in frames_to_events(labels, 0.032)] == [a, b, a]


def test_single_frame_run_dropped():
    assert frames_to_events([INACTIVE, b, INACTIVE, INACTIVE, INACTIVE, INACTIVE], 0.032) == []
    assert len(frames_to_events([INACTIVE, b, INACTIVE], 0.032, min_dur=0.0)) == 1


@given(st.lists(st.sampled_from([INACTIVE, 0, 1, 2]), max_size=80))
def test_events_on_hop_grid_and_non_overlapping(labels):
    hop = 0.032
    events = frames_to_events(labels, hop)
    for e in events:
        assert e.onset / hop == pytest.approx(round(e.onset / hop))
        assert e.offset / hop == pytest.approx(round(e.offset / hop))
        assert 0 <= e.onset < e.offset <= len(labels) * hop + 1e-9
    for e, nxt in zip(events, events[1:]):
        assert e.offset <= nxt.onset + 1e-9
