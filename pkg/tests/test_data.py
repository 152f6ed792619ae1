from __future__ import annotations

import numpy as np
import pytest

from genmove.data import (
    Dataset,
    DatasetFormatError,
    EprParams,
    Location,
    LocationReferenceError,
    Trajectory,
    load_dataset,
    save_dataset,
    split_by_user,
    synthesize_epr,
)


def test_epr_no_exploration_stays_home():
    params = EprParams(rho=0.0, gamma=0.5, n_users=5, days=2, grid_side=4, seed=3)
    ds = synthesize_epr(params)
    for traj in ds.trajectories:
        home = ds.histories[traj.user_id][0].locations[0]
        assert set(traj.locations) == {home}
        for hist in ds.histories[traj.user_id]:
            assert set(hist.locations) == {home}


def test_epr_deterministic():
    params = EprParams(n_users=6, days=3, grid_side=6, seed=42)
    assert synthesize_epr(params) == synthesize_epr(params)


def test_epr_structure():
    ds = synthesize_epr(
        EprParams(n_users=500, days=7, grid_side=16, seed=0, slots_per_day=48)
    )
    assert len(ds.trajectories) == 500
    assert len(ds.vocabulary) <= 256 and len(ds.vocabulary) == 256
    assert all(len(t) == 48 for t in ds.trajectories)
    for user in ds.users():
        hists = ds.histories[user]
        assert len(hists) == 6
        assert all(len(h) == 48 for h in hists)


def test_epr_sublinear_exploration():
    # distinct locations grow sublinearly: distinct(2L) < 2 * distinct(L) on average
    ds = synthesize_epr(EprParams(rho=0.6, gamma=0.4, n_users=30, days=4, grid_side=12, seed=5))
    ratios = []
    for user in ds.users():
        locs = [l for h in ds.histories[user] for l in h.locations] + list(
            ds.trajectories[user].locations
        )
        half = len(locs) // 2
        d_half = len(set(locs[:half]))
        d_full = len(set(locs))
        ratios.append(d_full / d_half)
    assert np.mean(ratios) < 2.0


def test_epr_rejects_tiny_grid():
    with pytest.raises(ValueError):
        EprParams(grid_side=1)


def test_roundtrip_identity(tmp_path, small_dataset):
    path = tmp_path / "data.jsonl"
    save_dataset(small_dataset, path)
    assert load_dataset(path) == small_dataset


def test_load_rejects_out_of_range_id(tmp_path, small_dataset):
    path = tmp_path / "data.jsonl"
    save_dataset(small_dataset, path)
    lines = path.read_text().splitlines()
    bad = lines[1].replace("[", f"[{len(small_dataset.vocabulary)}, ", 1)
    path.write_text("\n".join([lines[0], bad]) + "\n")
    with pytest.raises(LocationReferenceError):
        load_dataset(path)


def test_load_reports_line_number(tmp_path, small_dataset):
    path = tmp_path / "data.jsonl"
    save_dataset(small_dataset, path)
    lines = path.read_text().splitlines()
    path.write_text("\n".join([lines[0], lines[1], "{not json"]) + "\n")
    with pytest.raises(DatasetFormatError, match="line 3"):
        load_dataset(path)


def test_load_empty_trajectory_section(tmp_path, small_dataset):
    path = tmp_path / "data.jsonl"
    save_dataset(small_dataset, path)
    header = path.read_text().splitlines()[0]
    path.write_text(header + "\n")
    ds = load_dataset(path)
    assert ds.trajectories == ()
    assert ds.vocabulary == small_dataset.vocabulary


def test_split_sizes_paper_ratios():
    ds = synthesize_epr(EprParams(n_users=10, days=2, grid_side=4, seed=1))
    train, valid, test = split_by_user(ds, seed=0)
    assert (len(train.users()), len(valid.users()), len(test.users())) == (7, 1, 2)


def test_split_three_users_partitions():
    ds = synthesize_epr(EprParams(n_users=3, days=2, grid_side=4, seed=1))
    train, valid, test = split_by_user(ds, seed=9)
    users = [set(s.users()) for s in (train, valid, test)]
    assert sum(len(u) for u in users) == 3
    assert set.union(*users) == set(ds.users())
    for i in range(3):
        for j in range(i + 1, 3):
            assert not users[i] & users[j]


def test_split_deterministic():
    ds = synthesize_epr(EprParams(n_users=20, days=2, grid_side=4, seed=1))
    a = split_by_user(ds, seed=5)
    b = split_by_user(ds, seed=5)
    for x, y in zip(a, b):
        assert x.users() == y.users()


def test_split_partition_property_many_seeds():
    ds = synthesize_epr(EprParams(n_users=23, days=2, grid_side=4, seed=2))
    for seed in range(10):
        parts = split_by_user(ds, seed=seed)
        users = [set(p.users()) for p in parts]
        assert set.union(*users) == set(ds.users())
        assert sum(len(u) for u in users) == len(ds.users())
        n = len(ds.users())
        for part, frac in zip(parts, (0.7, 0.1, 0.2)):
            assert abs(len(part.users()) - frac * n) <= 1


def test_split_requires_three_users():
    ds = synthesize_epr(EprParams(n_users=2, days=2, grid_side=4, seed=1))
    with pytest.raises(ValueError):
        split_by_user(ds)


def test_histories_fraction_preserved_in_split():
    ds = synthesize_epr(EprParams(n_users=9, days=3, grid_side=4, seed=3))
    train, _, _ = split_by_user(ds, seed=0)
    for user in train.users():
        assert train.histories[user] == ds.histories[user]


def test_dataset_rejects_bad_vocabulary():
    with pytest.raises(ValueError):
        Dataset(
            vocabulary=(Location(id=1, x=0.0, y=0.0),),
            trajectories=(),
        )


def test_trajectory_requires_locations():
    with pytest.raises(ValueError):
        Trajectory(user_id=0, start_slot=0, locations=())
