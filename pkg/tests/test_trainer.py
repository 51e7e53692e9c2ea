import numpy as np
import pytest

from attnrec import attncf, corpus, trainer
from attnrec.baselines import dan
from attnrec.corpus import SplitInstance
from attnrec.trainer import TrainConfig


def tiny_instances(n=40, n_items=30, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        items = rng.choice(n_items, 6, replace=False).tolist()
        out.append(SplitInstance(f"u{i}", tuple(items[:3]), tuple(items[3:])))
    return out


def forced_plateau(train_fn, **model_kw):
    rng = np.random.default_rng(1)
    V = rng.standard_normal((30, 4))
    insts = tiny_instances()
    cfg = TrainConfig(batch_size=8, n_future=3, n_negatives=5, eval_period=2, patience=5)
    # a constant objective never improves, so every patience window ends in a decay
    _, res = train_fn(insts[:32], insts[32:], V, np.ones(30), cfg, objective=lambda t: 1.0, **model_kw)
    return cfg, res


@pytest.mark.parametrize("train_fn, kw", [(attncf.train, dict(d_hidden=3, depth=2)),
                                          (dan.dan_train, dict(hidden=5, n_hidden=1))])
def test_forced_plateau_lr_sequence(train_fn, kw):
    cfg, res = forced_plateau(train_fn, **kw)
    red = res.lr_reductions()
    assert len(red) == 20
    for j, ev in enumerate(red, 1):
        assert ev["lr"] == 0.002 * 0.8 ** j
        assert ev["reductions"] == j
    lr = 0.002
    for ev in red:
        lr *= 0.8
        assert ev["lr"] == pytest.approx(lr, rel=1e-13)
    assert res.updates == 20 * cfg.patience * cfg.eval_period
    assert res.log[-1]["event"] == "done"


def test_config_validation():
    for bad in (dict(batch_size=0), dict(lr=0), dict(decay=1.0), dict(gamma=1.5), dict(eval_period=0)):
        with pytest.raises(ValueError):
            TrainConfig(**bad)
    assert TrainConfig().resolved_eval_period(100) == 50
    assert TrainConfig().resolved_eval_period(64 * 10 * 80) == 80


def test_balanced_loss_halves():
    logits = np.zeros((1, 4))
    labels = np.array([[1.0, 0.0, 0.0, 0.0]])
    weights = np.array([[0.5, 1 / 6, 1 / 6, 1 / 6]])
    loss, d = trainer.balanced_loss(logits, labels, weights)
    assert loss[0] == pytest.approx(np.log(2), abs=1e-15)
    assert d[0].tolist() == pytest.approx([-0.25, 1 / 12, 1 / 12, 1 / 12], abs=1e-15)


def test_holdout_split():
    insts = tiny_instances(n=100)
    tr, ho = trainer.holdout_split(insts, np.random.default_rng(0), 0.05)
    assert len(ho) == 5 and len(tr) == 95
    assert not {i.user_id for i in tr} & {i.user_id for i in ho}
    _, ho = trainer.holdout_split(insts, np.random.default_rng(0), 0.5, cap=7)
    assert len(ho) == 7
    with pytest.raises(ValueError):
        trainer.holdout_split(insts[:1], np.random.default_rng(0))


def test_training_is_deterministic():
    rng = np.random.default_rng(2)
    V = rng.standard_normal((30, 4))
    insts = tiny_instances()
    cfg = TrainConfig(batch_size=8, n_future=3, n_negatives=5, eval_period=3, max_updates=12)
    a, ra = attncf.train(insts[:32], insts[32:], V, np.ones(30), cfg, d_hidden=3, depth=2)
    b, rb = attncf.train(insts[:32], insts[32:], V, np.ones(30), cfg, d_hidden=3, depth=2)
    assert ra.log == rb.log
    assert all(a.tensors[k].tobytes() == b.tensors[k].tobytes() for k in a.tensors)


def synthetic_task(seed=0):
    vocab, hists = corpus.synth_generate(400, 120, 8, 30, 0.1, seed)
    # planted clusters are contiguous index blocks, so one-hot-ish cluster codes work as embeddings
    labels = corpus.cluster_labels(vocab, 120, 8)
    rng = np.random.default_rng(seed)
    V = np.eye(8)[labels] + 0.1 * rng.standard_normal((len(vocab), 8))
    insts = [x for x in (corpus.temporal_split(h, 5, vocab) for h in hists) if x is not None]
    tr, ho = trainer.holdout_split(insts, rng, 0.1)
    return V, tr, ho, corpus.user_item_counts(hists, vocab)


@pytest.mark.parametrize("train_fn, kw", [(attncf.train, dict(d_hidden=8, depth=2)),
                                          (dan.dan_train, dict(hidden=16, n_hidden=1))])
def test_holdout_loss_improves_on_synthetic_data(train_fn, kw):
    V, tr, ho, counts = synthetic_task()
    cfg = TrainConfig(batch_size=32, n_future=5, n_negatives=20, eval_period=10, patience=5,
                      max_reductions=5, max_updates=3000, lr=0.005)
    _, res = train_fn(tr, ho, V, counts, cfg, **kw)
    assert res.best_holdout <= 0.8 * res.initial_holdout
