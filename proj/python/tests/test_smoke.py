"""End-to-end smoke of the python surface on a miniature population."""

import math

import numpy as np
import pytest

import reqedit


@pytest.fixture(scope="module")
def ds():
    return reqedit.synth_dataset("adult", 1200, 31)


@pytest.fixture(scope="module")
def zoo(ds, tmp_path_factory):
    out = tmp_path_factory.mktemp("zoo")
    return reqedit.build_zoo(6, ds, seed=9, out_dir=str(out), epochs=2)


def test_dataset_shape(ds):
    assert ds.name == "adult"
    assert ds.n == 1200
    assert ds.n_classes == 2
    assert ds.n_groups == 2
    rows = ds.rows("test", cap=64)
    assert rows["X"].shape == (64, ds.d_in)
    assert len(rows["y"]) == 64
    assert len(rows["s"]) == 64
    with pytest.raises(reqedit.ValidationError):
        ds.rows("holdout")


def test_zoo_population(zoo, ds):
    assert zoo.n_checkpoints == 18
    train, val, test = zoo.ids("train"), zoo.ids("val"), zoo.ids("test")
    assert len(train) + len(val) + len(test) == 18
    assert not set(train) & set(test)

    m = zoo.load(test[0])
    rows = ds.rows("test", cap=64)
    probs = m.forward(rows["X"])
    assert probs.shape == (64, 2)
    assert 0.0 <= m.accuracy(rows["X"], rows["y"]) <= 1.0


def test_train_edit_compose(zoo, ds, tmp_path):
    train_models = [zoo.load(i) for i in zoo.ids("train")]
    val_models = [zoo.load(i) for i in zoo.ids("val")]

    editor, report = reqedit.train_editor(
        train_models,
        val_models,
        ds,
        mode="dm",
        lam=0.1,
        k=32,
        hidden=8,
        depth=2,
        activation="tanh",
        model_batch=2,
        epochs=1000,
        max_steps=4,
        patience=50,
        val_batch=48,
        seed=9,
    )
    assert editor.mode == "dm"
    assert editor.trained_lambda == 0.1
    assert report["steps"] == 4

    path = tmp_path / "editor.bin"
    editor.save(str(path))
    loaded = reqedit.load_editor(str(path))
    assert loaded.mode == "dm"

    model = zoo.load(zoo.ids("test")[0])
    rows = ds.rows("test", cap=64)
    res = reqedit.edit(model, loaded, x=rows["X"])
    assert math.isfinite(res["jsd"])
    assert 0 <= res["requirement"] <= ds.d_in
    assert res["edit_seconds"] > 0
    kept = res["hard_mask"]
    assert set(np.unique(kept)) <= {0.0, 1.0}
    assert res["edited"].d_in == model.d_in

    # the edited model's masked inputs are provably dead
    edited = res["edited"]
    x = rows["X"].copy()
    x[:, kept == 0.0] = 7.5
    np.testing.assert_array_equal(edited.forward(x), edited.forward(rows["X"]))

    comp = reqedit.compose(model, [loaded, loaded], rows["X"])
    assert len(comp["stages"]) == 2
    # jsd is not a metric, so stage sums bound the composite only loosely
    assert comp["composite_jsd"] <= comp["stages"][0]["jsd"] + comp["stages"][1]["jsd"] + 0.05


def test_baselines_against_core(zoo, ds):
    model = zoo.load(zoo.ids("test")[0])
    fit = ds.rows("val")
    rows = ds.rows("test", cap=96)

    order = reqedit.pfi_rank(model, fit["X"], fit["y"], shuffles=2, seed=0)
    assert sorted(order) == list(range(ds.d_in))

    full = reqedit.fs_mask(model, order, ds.d_in)
    assert reqedit.preservation_loss(model, full["edited"], rows["X"]) == 0.0

    half = reqedit.fs_retrain(model, order, ds.d_in // 2, ds, epochs=2)
    assert half["requirement"] == 0  # unmeasured until scored on data
    assert reqedit.preservation_loss(model, half["edited"], rows["X"]) <= math.log(2)

    pruned = reqedit.prune_baseline(model, 0.5, "magnitude", ds)
    want = model.n_edges - round(0.5 * model.n_edges)
    assert int(pruned["hard_mask"].sum()) == want

    scores = reqedit.positive_scores(model, fit["X"])
    rule = reqedit.threshold_opt_fit(scores, fit["y"], fit["s"])
    assert 0 <= rule.eod <= 1
    point = reqedit.threshold_opt_eval(rule, reqedit.positive_scores(model, rows["X"]), rows["y"], rows["s"])
    assert 0 <= point["eod"] <= 1
    assert 0 <= point["jsd"] <= math.log(2) + 1e-12

    with pytest.raises(reqedit.ValidationError):
        reqedit.prune_baseline(model, 1.5, "magnitude", ds)
    with pytest.raises(reqedit.ValidationError):
        reqedit.prune_baseline(model, 0.5, "optimal_brain", ds)


def test_pareto_and_jsd():
    pts = np.array([[1.0, 2.0], [2.0, 1.0], [2.0, 2.0]])
    assert list(reqedit.pareto_filter(pts)) == [0, 1]

    p = np.array([[0.5, 0.5], [0.9, 0.1]])
    assert reqedit.jsd_rows(p, p) == 0.0
    q = np.array([[0.1, 0.9], [0.9, 0.1]])
    val = reqedit.jsd_rows(p, q)
    assert 0 < val < math.log(2)

    with pytest.raises(reqedit.ValidationError):
        reqedit.pareto_filter(np.array([[1.0, 2.0, 3.0]]))
