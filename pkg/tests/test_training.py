import json

import numpy as np
import pytest

from thegcn import tensor as T
from thegcn.errors import ContractError, TrainingDivergence
from thegcn.graph import EventGraph, LabeledQuery, NodeFeatures
from thegcn.synthgen import SynthSpec, generate_synthetic
from thegcn.training import (HISTOGRAM_EDGES, RunConfig, attention_histogram, build_model,
                             evaluate, read_predictions, run_ablation_suite, run_param_study,
                             split_hash, split_queries, train, write_predictions)

from conftest import five_event_graph


def tiny_cfg(**kw):
    base = dict(h_max=1, n_max=5, num_layers=1, epochs=3, hidden=8, time_dim=2, window=8.0)
    base.update(kw)
    return RunConfig(**base)


@pytest.fixture(scope="module")
def small_synth():
    return generate_synthetic(SynthSpec(num_nodes=40, event_rate=30.0, duration=48.0,
                                        feature_noise=0.8, seed=2)).graph


# ---------------------------------------------------------------- config

def test_run_config_round_trip_and_validation():
    cfg = RunConfig(n_max=7, split=[0.5, 0.25, 0.25])
    assert RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    with pytest.raises(ContractError, match="unknown"):
        RunConfig.from_dict({"nmax": 3})
    for bad in (dict(n_max=0), dict(split=(0.5, 0.5, 0.5)), dict(signed_mode="relu"),
                dict(learning_rate=0.0), dict(window=-1.0), dict(direction="out")):
        with pytest.raises(ContractError):
            RunConfig(**bad).validate()


def test_config_hash_tracks_content():
    assert RunConfig().config_hash() == RunConfig().config_hash()
    assert RunConfig().config_hash() != RunConfig(seed=1).config_hash()


# ---------------------------------------------------------------- splits

def queries(n, nodes=None):
    return [LabeledQuery(i if nodes is None else i % nodes, float(i), i % 2) for i in range(n)]


def test_split_sizes_for_ten():
    tr, va, te = split_queries(queries(10), (0.6, 0.2, 0.2), seed=0)
    assert (len(tr), len(va), len(te)) == (6, 2, 2)


def test_split_is_a_partition():
    qs = queries(57)
    parts = split_queries(qs, (0.6, 0.2, 0.2), seed=3)
    flat = [q for p in parts for q in p]
    assert sorted(flat) == sorted(qs) and len(set(flat)) == len(qs)
    assert split_queries(qs, seed=3) == parts
    assert split_hash(split_queries(qs, seed=4)) != split_hash(parts)


def test_static_label_split_keeps_nodes_together():
    qs = queries(90, nodes=30)
    parts = split_queries(qs, (0.6, 0.2, 0.2), seed=1, by_node=True)
    node_sets = [{q.node for q in p} for p in parts]
    assert not (node_sets[0] & node_sets[1]) and not (node_sets[0] & node_sets[2])
    assert not (node_sets[1] & node_sets[2])


def test_empty_split_is_an_error():
    with pytest.raises(ContractError):
        split_queries(queries(2), (0.6, 0.2, 0.2))
    with pytest.raises(ContractError):
        split_queries(queries(10), (0.5, 0.2, 0.2))


# ---------------------------------------------------------------- training

def test_single_query_memorized():
    g = five_event_graph()
    q = [LabeledQuery(1, 6.0, 1)]
    _, rep = train(g, tiny_cfg(epochs=50, h_max=2, learning_rate=0.01), splits=(q, q, q))
    assert rep.train_loss[-1] < rep.train_loss[0]
    assert rep.test_acc == 1.0


def test_separable_dataset_reaches_high_accuracy():
    g = generate_synthetic(SynthSpec(num_nodes=60, event_rate=40.0, duration=48.0,
                                     feature_noise=0.15, seed=5)).graph
    _, rep = train(g, tiny_cfg(epochs=30, n_max=10, hidden=16))
    assert rep.test_acc >= 0.9


def test_report_fields(small_synth):
    cfg = tiny_cfg(epochs=4)
    _, rep = train(small_synth, cfg)
    assert len(rep.train_loss) == len(rep.val_acc) == len(rep.epoch_seconds) == 4
    assert rep.best_val_acc == max(rep.val_acc)
    assert rep.val_acc.index(rep.best_val_acc) == rep.best_epoch   # earliest best epoch
    assert 0.0 <= rep.test_acc <= 1.0
    assert rep.config == cfg.to_dict()
    assert sum(rep.split_sizes) == len(small_synth.queries())
    d = json.loads(rep.to_json(timing=False))
    assert "wall_clock_seconds" not in d and "epoch_seconds" not in d


def test_training_is_deterministic(small_synth):
    a = train(small_synth, tiny_cfg(seed=9))[1]
    b = train(small_synth, tiny_cfg(seed=9))[1]
    assert a.to_json(timing=False) == b.to_json(timing=False)
    assert a.content_hash() == b.content_hash()
    c = train(small_synth, tiny_cfg(seed=10))[1]
    assert c.content_hash() != a.content_hash()


def test_frozen_contexts_option(small_synth):
    _, rep = train(small_synth, tiny_cfg(resample_per_epoch=False))
    assert len(rep.train_loss) == 3


def test_returned_model_is_best_validation_checkpoint(small_synth):
    cfg = tiny_cfg(epochs=6, learning_rate=0.05)
    model, rep = train(small_synth, cfg)
    _, val_q, test_q = split_queries(small_synth.queries(), cfg.split, cfg.seed)
    assert evaluate(model, small_synth, val_q, cfg) == rep.best_val_acc
    assert evaluate(model, small_synth, test_q, cfg) == rep.test_acc


def test_non_finite_loss_aborts():
    feats = np.array([[np.nan, 0.0], [1.0, 0.0]])
    g = EventGraph(2, [0, 1, 0], [1, 0, 1], [1.0, 2.0, 3.0], features=NodeFeatures.static(feats),
                   labels=[(0, 4.0, 0), (1, 4.0, 1)], num_classes=2)
    q = g.queries()
    with pytest.raises(TrainingDivergence):
        train(g, tiny_cfg(), splits=(q, q, q))


def test_training_needs_two_classes():
    g = EventGraph(2, [0], [1], [1.0], labels=[(0, 2.0, 0), (1, 2.0, 0)], num_classes=1)
    with pytest.raises(ContractError):
        train(g, tiny_cfg())


# ---------------------------------------------------------------- evaluation

def test_untrained_model_is_near_chance(small_synth):
    cfg = tiny_cfg()
    accs = [evaluate(build_model(small_synth, cfg.replace(seed=s)), small_synth, small_synth.queries(), cfg)
            for s in range(5)]
    n = len(small_synth.queries())
    # averaged over five random models; 4 sigma of a fair coin on n queries
    assert abs(np.mean(accs) - 0.5) < 4 * np.sqrt(0.25 / n) + 0.1


def test_accuracy_equals_recount_of_prediction_dump(tmp_path, small_synth):
    cfg = tiny_cfg()
    model, _ = train(small_synth, cfg)
    qs = small_synth.queries()[:100]
    acc, rows = evaluate(model, small_synth, qs, cfg, return_predictions=True)
    write_predictions(tmp_path / "p.csv", rows)
    back = read_predictions(tmp_path / "p.csv")
    assert back == rows
    assert acc == sum(y == p for _, _, y, p in back) / len(back)


def test_evaluation_leaves_gradients_untouched(small_synth):
    cfg = tiny_cfg()
    model, _ = train(small_synth, cfg)
    params = model.parameters()
    for p in params.values():
        p.grad = np.full_like(p.data, 0.125)
    before = {k: (p.data.copy(), p.grad.copy()) for k, p in params.items()}
    evaluate(model, small_synth, small_synth.queries(), cfg)
    for k, p in params.items():
        assert np.array_equal(p.data, before[k][0]) and np.array_equal(p.grad, before[k][1])


def test_evaluate_rejects_empty():
    g = five_event_graph()
    with pytest.raises(ContractError):
        evaluate(build_model(g, tiny_cfg()), g, [], tiny_cfg())


def test_training_contexts_are_causal(small_synth, monkeypatch):
    from thegcn import training
    seen = []
    orig = training.check_causality

    def spy(ctx):
        orig(ctx)
        seen.append(ctx)
    monkeypatch.setattr(training, "check_causality", spy)
    train(small_synth, tiny_cfg(epochs=1, h_max=2))
    assert seen
    for ctx in seen:
        assert np.all(ctx.event_time < ctx.anchor_time)


# ---------------------------------------------------------------- experiments

def test_attention_histogram_bins():
    assert np.allclose(np.diff(HISTOGRAM_EDGES), 0.2) and HISTOGRAM_EDGES[0] == -1.0
    diag = {"layer": np.array([0, 0, 0, 1]), "delta": np.array([1.0, 5.0, 0.5, 0.1]),
            "signed": np.array([-0.7, 0.3, -0.65, 0.9])}
    h = attention_histogram(diag, max_delta=2.0)
    assert h["total"] == 2 and h["counts"][1] == 2 and h["fraction_negative"] == 1.0
    assert attention_histogram(diag)["fraction_negative"] == pytest.approx(2 / 3)


def test_ablation_suite_shares_splits(small_synth):
    res = run_ablation_suite(small_synth, tiny_cfg(epochs=1), seeds=[0, 1])
    hashes = [v["split_hashes"] for v in res["variants"].values()]
    assert hashes[0] == hashes[1] == hashes[2]
    assert res["variants"]["nonneg_sigmoid"]["config"]["signed_mode"] == "nonneg_sigmoid"
    assert res["variants"]["no_time_encoding"]["config"]["use_time_encoding"] is False
    full = res["variants"]["full"]
    for name, comp in res["comparisons"].items():
        assert comp["delta_mean"] == pytest.approx(full["mean"] - res["variants"][name]["mean"])
    assert len(res["attention_histogram"]["counts"]) == 10


def test_param_study_grid(small_synth):
    res = run_param_study(small_synth, tiny_cfg(epochs=1), seeds=range(5))
    assert len(res["cells"]) == 9 and res["num_runs"] == 45
    cell = next(c for c in res["cells"] if c["n_max"] == 5 and c["num_layers"] == 1)
    assert cell["config"]["n_max"] == 5 and cell["config"]["num_layers"] == 1
    for c in res["cells"]:
        accs = [r["test_acc"] for r in c["reports"]]
        assert accs == c["test_acc"]
        assert c["mean"] == pytest.approx(sum(accs) / len(accs))
        assert all(r["config"]["n_max"] == c["n_max"] for r in c["reports"])
    with pytest.raises(ContractError):
        run_param_study(small_synth, tiny_cfg(), n_max_grid=[])
