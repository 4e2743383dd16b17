import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedmutual.data import (
    DataError,
    Dataset,
    fold_count,
    generate_synthetic,
    load_csv,
    normalize,
    pop_fold,
    stratified_holdout,
    stratified_kfold,
    write_csv,
)


def balanced(n, seed=0):
    return generate_synthetic(n, 2, 1.0, seed)


@pytest.mark.parametrize("clients,rounds,expected", [(5, 12, 73), (1, 1, 3), (2, 1, 4)])
def test_fold_count_formula(clients, rounds, expected):
    assert fold_count(clients, rounds) == expected


def test_five_clients_twelve_rounds_gives_73_folds_of_5_per_class():
    sched = stratified_kfold(balanced(730), 5, 12, seed=3)
    assert len(sched) == 73
    ds = balanced(730)
    for fold in sched.folds:
        assert fold.size == 10
        assert ds.labels[fold].sum() == 5


def exhaustive_fold_check(ds, sched, k):
    folds = list(sched.folds)
    assert len(folds) == k
    seen = np.concatenate(folds + [sched.remainder])
    assert np.array_equal(np.sort(seen), np.arange(len(ds)))
    sizes = {f.size for f in folds}
    assert len(sizes) == 1
    assert sched.remainder.size < 2 * k  # under one fold's worth per class
    frac = ds.class_counts[1] / len(ds)
    for f in folds:
        ones = ds.labels[f].sum()
        assert abs(ones - frac * f.size) <= 1
        assert abs((f.size - ones) - (1 - frac) * f.size) <= 1


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 10), st.integers(1, 20), st.integers(0, 10_000))
def test_schedule_partition_property(clients, rounds, seed):
    k = fold_count(clients, rounds)
    ds = balanced(2 * k + 2 * (seed % 50), seed)
    exhaustive_fold_check(ds, stratified_kfold(ds, clients, rounds, seed), k)


def test_unbalanced_dataset_stays_proportional():
    rng = np.random.default_rng(0)
    ds = Dataset(rng.normal(size=(400, 2)), np.r_[np.zeros(300, int), np.ones(100, int)])
    exhaustive_fold_check(ds, stratified_kfold(ds, 2, 3, seed=1), 10)


def test_schedule_deterministic_per_seed():
    ds = balanced(400)
    a = [f.tolist() for f in stratified_kfold(ds, 3, 2, seed=5).folds]
    b = [f.tolist() for f in stratified_kfold(ds, 3, 2, seed=5).folds]
    c = [f.tolist() for f in stratified_kfold(ds, 3, 2, seed=6).folds]
    assert a == b and a != c


def test_too_small_dataset_rejected_with_minimum():
    with pytest.raises(DataError, match="minimum dataset size 146"):
        stratified_kfold(balanced(100), 5, 12)


def test_pop_fold_fifo_and_exhaustion():
    sched = stratified_kfold(balanced(60), 1, 1)
    expected = [f.copy() for f in sched.folds]
    got = [pop_fold(sched) for _ in range(3)]
    assert all(np.array_equal(a, b) for a, b in zip(got, expected))
    assert len(sched) == 0 and sched.consumed_count == 3
    with pytest.raises(IndexError, match="exhausted"):
        pop_fold(sched)


def test_synthetic_deterministic_and_balanced():
    a = generate_synthetic(100, 3, 2.0, 9)
    b = generate_synthetic(100, 3, 2.0, 9)
    assert a.features.tobytes() == b.features.tobytes()
    assert a.labels.tobytes() == b.labels.tobytes()
    assert a.class_counts == (50, 50)


def test_synthetic_midpoint_threshold_accuracy():
    ds = generate_synthetic(1000, 2, 6.0, 0)
    acc = np.mean((ds.features[:, 0] > 0).astype(int) == ds.labels)
    assert acc >= 0.99


def test_synthetic_zero_separation_is_chance():
    accs = [np.mean((ds.features[:, 0] > 0) == ds.labels)
            for ds in (generate_synthetic(2000, 2, 0.0, s) for s in range(5))]
    assert abs(np.mean(accs) - 0.5) < 0.03


@pytest.mark.parametrize("n,dim,sep", [(7, 2, 1.0), (10, 1, 1.0), (10, 2, -1.0)])
def test_synthetic_rejects_bad_arguments(n, dim, sep):
    with pytest.raises(DataError):
        generate_synthetic(n, dim, sep, 0)


def test_normalize_examples():
    ds = Dataset(np.array([[0.0, 5.0], [2.0, 5.0]]), np.array([0, 1]))
    out, stats = normalize(ds)
    assert np.allclose(out.features[:, 0], [-1, 1])
    assert np.all(out.features[:, 1] == 0)
    assert stats.mean.tolist() == [1.0, 5.0]


def test_normalize_idempotent():
    out, _ = normalize(generate_synthetic(200, 4, 3.0, 1))
    again, _ = normalize(out)
    assert np.max(np.abs(again.features - out.features)) < 1e-9


def test_normalize_stats_apply_to_held_out():
    train, stats = normalize(generate_synthetic(200, 2, 3.0, 1))
    test = generate_synthetic(50, 2, 3.0, 2)
    assert np.allclose(stats.apply(test).features, (test.features - stats.mean) / stats.std)


def test_csv_round_trip(tmp_path):
    ds = generate_synthetic(40, 3, 2.0, 4)
    write_csv(ds, tmp_path / "d.csv")
    back = load_csv(tmp_path / "d.csv")
    assert back.features.tobytes() == ds.features.tobytes()
    assert back.labels.tolist() == ds.labels.tolist()
    assert (tmp_path / "d.csv").read_text().splitlines()[0] == "f0,f1,f2,label"


def test_csv_class_counts(tmp_path):
    (tmp_path / "d.csv").write_text("f0,f1,label\n1,2,0\n3,4,1\n5,6,0\n7,8,1\n")
    assert load_csv(tmp_path / "d.csv").class_counts == (2, 2)


def test_csv_bad_label_cites_row(tmp_path):
    rows = ["0.5,0" if i != 7 else "0.5,2" for i in range(1, 9)]
    (tmp_path / "d.csv").write_text("f0,label\n" + "\n".join(rows) + "\n")
    with pytest.raises(DataError, match="row 7"):
        load_csv(tmp_path / "d.csv")


@pytest.mark.parametrize("body,match", [
    ("f0,label\n", "no data rows"),
    ("f0,f1\n1,0\n", "label"),
    ("f0,label\n1,0\nabc,1\n", "row 2, column 'f0'"),
    ("", "empty"),
])
def test_csv_rejections(tmp_path, body, match):
    (tmp_path / "d.csv").write_text(body)
    with pytest.raises(DataError, match=match):
        load_csv(tmp_path / "d.csv")


def test_stratified_holdout_disjoint():
    ds = generate_synthetic(200, 2, 1.0, 0)
    train, test = stratified_holdout(ds, 0.25, 1)
    assert len(train) == 150 and len(test) == 50
    assert test.class_counts == (25, 25)
