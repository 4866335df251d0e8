import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fepkit import datamodel as dm
from fepkit.numcore import InputError


def make_match(frames=None, events=None, **meta_over):
    meta_kw = dict(match_id="m000", total_bandwidth_hz=40e6, allocation="randomized",
                   ref_power=1.0, initial_channel=0, n_channels=4, mcs_count=11)
    meta_kw.update(meta_over)
    return dm.MatchLog(meta=dm.MatchMeta(**meta_kw), frames=frames or [],
                       events=events or [])


def frame(src=0, dst=1000, t=0, nv=0.1, mcs=3, bw=10e6, psd=-12.0, psd2=-11.0,
          decoded=True, channel=None):
    return dm.FrameRecord(src=src, dst=dst, t_ms=t, noise_variance=nv, mcs=mcs,
                          bandwidth_hz=bw, psd_measured=psd, psd_estimated=psd2,
                          decoded=decoded, channel_index=channel)


# ----------------------------------------------------------------------
# match-log files
# ----------------------------------------------------------------------

def test_round_trip(tmp_path):
    match = make_match(
        frames=[frame(t=0, nv=0.25), frame(t=10, nv=0.017, decoded=False)],
        events=[dm.ChannelEvent(node=0, t_ms=0, channel_index=2)])
    path = tmp_path / "m.jsonl"
    dm.save_match_log(match, path)
    assert dm.load_match_log(path) == match


frame_values = st.fixed_dictionaries({
    "t": st.integers(0, 10_000),
    "nv": st.floats(1e-6, 100.0, allow_nan=False),
    "mcs": st.integers(0, 10),
    "decoded": st.booleans(),
    "psd": st.floats(-40, 0),
})


@settings(deadline=None, max_examples=50)
@given(st.lists(frame_values, min_size=1, max_size=30))
def test_round_trip_randomized(tmp_path_factory, rows):
    rows = sorted(rows, key=lambda r: r["t"])
    match = make_match(frames=[
        frame(t=r["t"], nv=r["nv"], mcs=r["mcs"], decoded=r["decoded"], psd=r["psd"])
        for r in rows])
    path = tmp_path_factory.mktemp("logs") / "m.jsonl"
    dm.save_match_log(match, path)
    assert dm.load_match_log(path) == match


def test_malformed_lines_reported_with_numbers(tmp_path):
    path = tmp_path / "bad.jsonl"
    good_meta = json.dumps({"type": "meta", "match_id": "x", "total_bandwidth_hz": 40e6,
                            "allocation": "fixed", "ref_power": 1.0,
                            "initial_channel": 0, "n_channels": 1, "mcs_count": 2})
    path.write_text(good_meta + "\nnot json at all\n" +
                    json.dumps({"type": "frame", "src": 0}) + "\n")
    with pytest.raises(dm.IngestError) as exc:
        dm.load_match_log(path)
    assert "line 2" in str(exc.value)
    assert "line 3" in str(exc.value)


def test_unknown_field_rejected(tmp_path):
    path = tmp_path / "bad.jsonl"
    match = make_match(frames=[frame()])
    dm.save_match_log(match, path)
    doc = json.loads(path.read_text().splitlines()[1])
    doc["surprise"] = 1
    path.write_text(path.read_text() + json.dumps(doc) + "\n")
    with pytest.raises(dm.IngestError, match="surprise"):
        dm.load_match_log(path)


def test_nonpositive_noise_variance_rejected(tmp_path):
    path = tmp_path / "bad.jsonl"
    match = make_match(frames=[frame()])
    dm.save_match_log(match, path)
    bad = json.loads(path.read_text().splitlines()[1])
    bad["noise_variance"] = 0.0
    path.write_text(path.read_text().splitlines()[0] + "\n" + json.dumps(bad) + "\n")
    with pytest.raises(dm.IngestError, match="noise_variance"):
        dm.load_match_log(path)


def test_non_monotone_timestamps_rejected(tmp_path):
    path = tmp_path / "bad.jsonl"
    match = make_match(frames=[frame(t=100), frame(t=50)])
    dm.save_match_log(match, path)
    with pytest.raises(dm.IngestError, match="non-monotone"):
        dm.load_match_log(path)


def test_bandwidth_filter_drops_small_scenarios(tmp_path):
    big = make_match(frames=[frame()])
    small = make_match(frames=[frame()], match_id="m001", total_bandwidth_hz=10e6)
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    dm.save_match_log(big, p1)
    dm.save_match_log(small, p2)
    logs = dm.load_corpus([p1, p2])
    assert [m.meta.match_id for m in logs] == ["m000"]


# ----------------------------------------------------------------------
# channel joining
# ----------------------------------------------------------------------

def test_single_event_covers_all_frames():
    frames = [frame(t=t) for t in (0, 5, 10)]
    events = [dm.ChannelEvent(node=0, t_ms=0, channel_index=3)]
    out = dm.join_channel_events(frames, events)
    assert [f.channel_index for f in out] == [3, 3, 3]


def test_event_boundary_is_inclusive():
    frames = [frame(t=99), frame(t=100)]
    events = [dm.ChannelEvent(node=0, t_ms=100, channel_index=5)]
    out = dm.join_channel_events(frames, events, initial_channel=1)
    assert [f.channel_index for f in out] == [1, 5]


def test_join_is_idempotent():
    frames = [frame(t=t) for t in range(0, 50, 7)]
    events = [dm.ChannelEvent(node=0, t_ms=20, channel_index=2),
              dm.ChannelEvent(node=0, t_ms=40, channel_index=6)]
    once = dm.join_channel_events(frames, events)
    twice = dm.join_channel_events(once, events)
    assert once == twice


def test_join_only_matches_frames_own_transmitter():
    frames = [frame(src=0, t=10), frame(src=1, dst=1001, t=10)]
    events = [dm.ChannelEvent(node=1, t_ms=0, channel_index=7)]
    out = dm.join_channel_events(frames, events, initial_channel=0)
    assert out[0].channel_index == 0
    assert out[1].channel_index == 7


def test_unordered_events_rejected():
    events = [dm.ChannelEvent(node=0, t_ms=10, channel_index=1),
              dm.ChannelEvent(node=0, t_ms=5, channel_index=2)]
    with pytest.raises(InputError):
        dm.join_channel_events([frame()], events)


# ----------------------------------------------------------------------
# SNR
# ----------------------------------------------------------------------

@pytest.mark.parametrize("nv,ref,expected", [
    (0.01, 1.0, 20.0),
    (1.0, 1.0, 0.0),
    (10.0, 1.0, -10.0),
])
def test_snr_db_cases(nv, ref, expected):
    assert dm.snr_db(nv, ref) == pytest.approx(expected)


def test_snr_db_rejects_nonpositive():
    with pytest.raises(InputError):
        dm.snr_db(0.0, 1.0)
    with pytest.raises(InputError):
        dm.snr_db(0.1, -1.0)


@settings(deadline=None, max_examples=50)
@given(st.floats(1e-9, 1e6), st.floats(1e-9, 1e6))
def test_snr_strictly_decreasing_in_noise(nv, factor):
    bigger = nv * (1.0 + max(factor, 1e-6))
    assert dm.snr_db(bigger, 1.0) < dm.snr_db(nv, 1.0)


# ----------------------------------------------------------------------
# feature assembly
# ----------------------------------------------------------------------

def _table_from_tiny(tiny_table):
    return tiny_table


def test_feature_dims_match_table_ii(tiny_table):
    n = tiny_table.n
    train = np.zeros(n, dtype=bool)
    train[: n // 2] = True
    two = dm.assemble_features(tiny_table, ["noise_variance", "mcs"], train)
    assert two.X.shape == (n, 2)
    three = dm.assemble_features(
        tiny_table, ["bandwidth", "noise_variance", "mcs"], train)
    assert three.X.shape == (n, 3)
    # canonical ordering regardless of the order given
    assert three.feature_names == ("noise_variance", "mcs", "bandwidth")


def test_training_rows_standardized(tiny_table):
    n = tiny_table.n
    train = np.zeros(n, dtype=bool)
    train[::3] = True
    view = dm.assemble_features(tiny_table, ["noise_variance", "mcs"], train)
    tr = view.X[train]
    assert np.all(np.abs(tr.mean(axis=0)) < 1e-9)
    assert np.all(np.abs(tr.std(axis=0) - 1.0) < 1e-9)


def test_constant_feature_centered_with_warning(tiny_table):
    n = tiny_table.n
    table = dm.FrameTable(
        link_ids=tiny_table.link_ids, t_ms=tiny_table.t_ms,
        labels=tiny_table.labels, snr_db=tiny_table.snr_db,
        features={**tiny_table.features, "bandwidth": np.full(n, 5e6)})
    train = np.ones(n, dtype=bool)
    with pytest.warns(UserWarning, match="bandwidth"):
        view = dm.assemble_features(table, ["noise_variance", "bandwidth"], train)
    bw_col = view.X[:, view.feature_names.index("bandwidth")]
    assert np.all(bw_col == 0.0)


def test_unknown_or_empty_subset_rejected(tiny_table):
    train = np.ones(tiny_table.n, dtype=bool)
    with pytest.raises(InputError):
        dm.assemble_features(tiny_table, ["nonsense"], train)
    with pytest.raises(InputError):
        dm.assemble_features(tiny_table, [], train)


def test_standardization_uses_training_rows_only(tiny_table):
    n = tiny_table.n
    half = np.zeros(n, dtype=bool)
    half[: n // 2] = True
    v1 = dm.assemble_features(tiny_table, ["noise_variance"], half)
    all_rows = np.ones(n, dtype=bool)
    v2 = dm.assemble_features(tiny_table, ["noise_variance"], all_rows)
    assert not np.allclose(v1.mean, v2.mean)
    got = dm.view_with_constants(tiny_table, v1.feature_names, v1.mean, v1.std)
    assert np.array_equal(got.X, v1.X)


def test_frame_table_sorted_per_link(tiny_table):
    ids = tiny_table.link_ids
    t = tiny_table.t_ms
    for link in np.unique(ids):
        tt = t[ids == link]
        assert np.all(np.diff(tt) >= 0)
