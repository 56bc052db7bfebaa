"""End-to-end acceptance suite.

One test per numbered criterion; each prints a PASS/FAIL line (run with -s
to watch).  Criteria 8-10 train small models from scratch and dominate the
runtime (roughly 45-60 minutes on two cores).
"""

import collections
import os
import string
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pytest

from bidaflab import tensor as T
from bidaflab.attention import context2query, query2context, similarity
from bidaflab.data import SquadExample
from bidaflab.encoder import EncoderVariant, ModelEncoder, densenet_width_plan, \
    parse_variant
from bidaflab.metrics import evaluate_predictions, f1_score
from bidaflab.nn import Module
from bidaflab.output import OutputLayer, decode_best_span
from bidaflab.plots import PlotSpec, emit_plot
from bidaflab.rng import RngStream
from bidaflab.tensor import Tensor
from bidaflab.train import (RunConfig, evaluate_split, load_corpora,
                            load_model_from_checkpoint, predict_split, sweep,
                            train)
from bidaflab.verify import run_all_families

GRADCHECK_TOL = 1e-4


def _report(criterion: int, label: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    print(f"[acceptance] criterion {criterion:>2} ({label}): {status}  {detail}")
    assert ok, f"criterion {criterion} ({label}) failed: {detail}"


class _Wrap(Module):
    def __init__(self, **mods):
        super().__init__()
        for name, m in mods.items():
            setattr(self, name, m)


# -- 1: gradient verification ---------------------------------------------------

def test_criterion_01_gradient_verification():
    t0 = time.time()
    worst: dict[str, float] = {}
    for seed in range(5):
        for family, err in run_all_families(seed, h=1e-5).items():
            worst[family] = max(worst.get(family, 0.0), err)
    elapsed = time.time() - t0
    bad = {k: v for k, v in worst.items() if v >= GRADCHECK_TOL}
    detail = (f"max err {max(worst.values()):.2e} over {len(worst)} families, "
              f"5 seeds, {elapsed:.0f}s")
    _report(1, "gradient verification", not bad and elapsed < 120.0,
            detail + (f"; failing: {bad}" if bad else ""))


# -- 2: highway gate saturation ---------------------------------------------------

def test_criterion_02_gate_saturation_identity():
    hidden = 8
    wrap = _Wrap(enc=ModelEncoder(parse_variant("highway:8"), hidden))
    wrap.initialize(11, np.float64)
    for gate in wrap.enc.gates:
        gate.b.data[...] = -20.0
    rng = RngStream(12)
    x = Tensor(rng.normal(0, 1, (2, 6, 2 * hidden)), requires_grad=True)
    mask = np.ones((2, 6), dtype=bool)
    out, _ = wrap.enc.encode_highway(x, mask, None)
    dev = float(np.abs(out.data - x.data).max())
    _report(2, "gate saturation identity", dev < 1e-5, f"max|out-in| {dev:.2e}")


# -- 3: residual identity at init ---------------------------------------------------

def test_criterion_03_residual_identity():
    hidden = 8
    ok = True
    details = []
    for depth in (1, 3):
        wrap = _Wrap(enc=ModelEncoder(parse_variant(f"bypass:{depth}"), hidden))
        wrap.initialize(13, np.float64)
        for block in wrap.enc.blocks:
            block.out_proj.w.data[...] = 0
            block.out_proj.b.data[...] = 0
        x = Tensor(RngStream(14).normal(0, 1, (2, 5, 2 * hidden)))
        out, layer_outs = wrap.enc.encode_bypass(x, np.ones((2, 5), bool), None)
        exact = np.array_equal(out.data, x.data) and \
            all(np.array_equal(lo.data, x.data) for lo in layer_outs)
        ok = ok and exact
        details.append(f"L={depth}: {'bitwise' if exact else 'DIFFERS'}")
    _report(3, "residual identity at init", ok, "; ".join(details))


# -- 4: attention oracle ---------------------------------------------------

def test_criterion_04_attention_oracle():
    b, n, m, two_h = 2, 5, 4, 6
    rng = RngStream(15)
    c = Tensor(rng.normal(0, 1, (b, n, two_h)))
    q = Tensor(rng.normal(0, 1, (b, m, two_h)))
    w = Tensor(rng.normal(0, 1, (3 * two_h, 1)))
    cm = np.ones((b, n), bool)
    qm = np.ones((b, m), bool)
    cm[0, -1] = False
    qm[1, -1] = False
    sim = similarity(c, q, w, cm, qm)
    c2q = context2query(sim, q)
    q2c = query2context(sim, c)

    w1, w2, w3 = w.data[:two_h, 0], w.data[two_h:2 * two_h, 0], w.data[2 * two_h:, 0]
    worst = 0.0
    for bi in range(b):
        q_idx = np.where(qm[bi])[0]
        c_idx = np.where(cm[bi])[0]
        s_rows = {}
        for i in range(n):
            row = np.array([w1 @ c.data[bi, i] + w2 @ q.data[bi, j]
                            + w3 @ (c.data[bi, i] * q.data[bi, j])
                            for j in q_idx])
            s_rows[i] = row
            if not cm[bi, i]:
                continue  # padded context rows carry no attention contract
            worst = max(worst, float(np.abs(
                row - sim.s.data[bi, i, q_idx]).max()))
            e = np.exp(row - row.max())
            attn = e / e.sum()
            expect = attn @ q.data[bi, q_idx]
            worst = max(worst, float(np.abs(expect - c2q.data[bi, i]).max()))
        maxes = np.array([s_rows[i].max() for i in c_idx])
        e = np.exp(maxes - maxes.max())
        attn = e / e.sum()
        expect = attn @ c.data[bi, c_idx]
        worst = max(worst, float(np.abs(expect - q2c.data[bi]).max()))

    attn_rows = T.masked_softmax(sim.s, qm[:, None, :], axis=-1)
    sums_ok = np.allclose(attn_rows.data.sum(-1), 1.0, atol=1e-6)
    masked_zero = np.all(attn_rows.data[:, :, ~qm[1]][1] == 0.0) and \
        np.all(attn_rows.data[1][:, qm[1]].min() > 0)
    _report(4, "attention oracle", worst < 1e-10 and sums_ok and masked_zero,
            f"max oracle dev {worst:.2e}; rows sum to 1: {sums_ok}; "
            f"masked mass zero: {masked_zero}")


# -- 5: metrics oracle ---------------------------------------------------

def _oracle_clean(s):
    kept = [ch for ch in s.lower() if ch not in string.punctuation]
    return [w for w in "".join(kept).split() if w not in ("a", "an", "the")]


def _oracle_pair(pred, golds):
    golds = golds if golds else [""]
    best = (0.0, 0.0)
    p = _oracle_clean(pred)
    for g in golds:
        gt = _oracle_clean(g)
        em = float(p == gt)
        if not p and not gt:
            f1 = 1.0
        elif not p or not gt:
            f1 = 0.0
        else:
            common = sum((collections.Counter(p) & collections.Counter(gt)).values())
            f1 = 0.0 if common == 0 else \
                2 * (common / len(p)) * (common / len(gt)) / \
                ((common / len(p)) + (common / len(gt)))
        best = max(best, (em, f1))
    return best


def test_criterion_05_metrics_oracle():
    worked = f1_score("green eggs", ["green eggs and ham"])
    worked_ok = worked == pytest.approx(2 / 3, abs=1e-15)

    rng = RngStream(16)
    words = ["the", "cat", "sat", "on", "a", "mat!", "dog", "bird,", "ran"]
    golds, preds = [], {}
    for i in range(200):
        n_golds = int(rng.integers(0, 3))
        answers = [(" ".join(rng.choice(words, size=int(rng.integers(1, 4)))), 0)
                   for _ in range(n_golds)]
        golds.append(SquadExample(str(i), "c", "q", answers, n_golds == 0))
        preds[str(i)] = "" if rng.random() < 0.25 else \
            " ".join(rng.choice(words, size=int(rng.integers(1, 4))))
    got = evaluate_predictions(preds, golds)
    em = f1 = av = 0.0
    for g in golds:
        texts = [] if g.is_impossible else [t for t, _ in g.answers]
        pe, pf = _oracle_pair(preds[g.id], texts)
        em += pe
        f1 += pf
        av += float((preds[g.id] != "") == (not g.is_impossible))
    n = len(golds)
    dev = max(abs(got.em - 100 * em / n), abs(got.f1 - 100 * f1 / n),
              abs(got.avna - 100 * av / n))
    _report(5, "metrics oracle", worked_ok and dev < 1e-12,
            f"200-pair max dev {dev:.2e}; worked example F1 {worked:.12f}")


# -- 6: decode oracle ---------------------------------------------------

def test_criterion_06_decode_oracle():
    rng = RngStream(17)
    mismatches = 0
    for _ in range(500):
        n = int(rng.integers(2, 9))
        ps = rng.uniform(0, 1, n)
        pe = rng.uniform(0, 1, n)
        if rng.random() < 0.2:  # push mass onto the sentinel
            ps[0] += 3.0
            pe[0] += 3.0
        ps /= ps.sum()
        pe /= pe.sum()
        max_len = int(rng.integers(1, 9))
        got = decode_best_span(ps, pe, max_len)
        best = (0, 0, float(ps[0] * pe[0]))
        for i in range(1, n):
            for j in range(i, min(n - 1, i + max_len) + 1):
                p = float(ps[i] * pe[j])
                if p > best[2]:
                    best = (i, j, p)
        if (got.start, got.end) != best[:2]:
            mismatches += 1
    _report(6, "decode oracle", mismatches == 0,
            f"{mismatches}/500 mismatches vs exhaustive enumeration")


# -- experiment plumbing for criteria 7-10 ------------------------------------------

def _experiment_config(task, variant, use_char, seed, steps, out_dir,
                       hidden=32, dropout=0.1, vocab_size=32, n_train=4000,
                       n_dev=400, batch=64, context_len=12):
    return RunConfig(
        variant=variant, use_char=use_char, word_dim=24, char_dim=12,
        char_filters=32, char_kernel=3, hidden=hidden, dropout=dropout,
        optimizer="adam", lr=2e-3, batch_size=batch, max_steps=steps,
        eval_every=200, seed=seed, eval_train=False,
        synthetic={"task": task, "n_train": n_train, "n_dev": n_dev,
                   "vocab_size": vocab_size, "context_len": context_len,
                   "seed": 0},
        out_dir=out_dir)


def _run_quiet(config: RunConfig) -> float:
    return train(config, quiet=True).best_f1


def _mean_best_f1(configs) -> float:
    with ProcessPoolExecutor(max_workers=2) as pool:
        scores = list(pool.map(_run_quiet, configs))
    return float(np.mean(scores))


def test_criterion_07_desk_scale_overfit():
    t0 = time.time()
    with tempfile.TemporaryDirectory() as tmp:
        cfg = RunConfig(
            variant="baseline", use_char=False, word_dim=50, hidden=32,
            dropout=0.0, optimizer="adam", lr=2e-3, batch_size=16,
            max_steps=300, eval_every=25, seed=0, eval_train=True,
            synthetic={"task": "copy", "n_train": 64, "n_dev": 16,
                       "vocab_size": 50, "context_len": 15, "seed": 0},
            out_dir=os.path.join(tmp, "run"))
        res = train(cfg, quiet=True)
    elapsed = time.time() - t0
    hits = [r.step for r in res.records
            if r.split == "train" and r.em == 100.0]
    ok = bool(hits) and hits[0] <= 300 and elapsed < 300.0
    _report(7, "desk-scale overfit",
            ok, f"train EM 100 at step {hits[0] if hits else 'never'}; "
                f"{elapsed:.0f}s")


def test_criterion_08_char_embedding_additivity():
    with tempfile.TemporaryDirectory() as tmp:
        def configs(use_char):
            return [_experiment_config(
                "char-sensitive", "baseline", use_char, seed, steps=1200,
                out_dir=os.path.join(tmp, f"{use_char}_{seed}"),
                hidden=24, dropout=0.0, vocab_size=60, n_train=2000,
                n_dev=500, batch=32)
                for seed in (0, 1, 2)]
        with_char = _mean_best_f1(configs(True))
        word_only = _mean_best_f1(configs(False))
    gap = with_char - word_only
    _report(8, "char embedding additivity", gap >= 5.0,
            f"char+word {with_char:.1f} vs word-only {word_only:.1f} "
            f"(gap {gap:+.1f}, need >= +5)")


def test_criterion_09_depth_direction():
    with tempfile.TemporaryDirectory() as tmp:
        def mean_for(variant, steps=1800):
            return _mean_best_f1([
                _experiment_config("multi-hop", variant, False, seed, steps,
                                   os.path.join(tmp, f"{variant}_{seed}"
                                                .replace(":", "_")))
                for seed in (0, 1, 2)])
        hw8 = mean_for("highway:8")
        hw1 = mean_for("highway:1")
        by3 = mean_for("bypass:3")
        by8 = mean_for("bypass:8")
    print(f"[acceptance] criterion  9 report: bypass:3 {by3:.1f} vs "
          f"bypass:8 {by8:.1f} (shallower-bypass-better analogue "
          f"{'holds' if by3 >= by8 else 'does not hold'} here)")
    _report(9, "depth direction", hw8 >= hw1 + 2.0,
            f"highway:8 {hw8:.1f} vs highway:1 {hw1:.1f} (need +2)")


def test_criterion_10_refinement_additivity():
    with tempfile.TemporaryDirectory() as tmp:
        def mean_for(variant, use_char):
            return _mean_best_f1([
                _experiment_config("char-multi-hop", variant, use_char, seed,
                                   1800, os.path.join(
                                       tmp, f"{variant}_{use_char}_{seed}"
                                       .replace(":", "_")))
                for seed in (0, 1, 2)])
        combined = mean_for("highway:4", True)
        char_only = mean_for("baseline", True)
        deep_only = mean_for("highway:4", False)
    best_single = max(char_only, deep_only)
    _report(10, "refinement additivity", combined >= best_single,
            f"char+highway:4 {combined:.1f} vs max(char-only {char_only:.1f}, "
            f"highway:4-only {deep_only:.1f})")


# -- 11: variant and ensemble plumbing -----------------------------------------------

def test_criterion_11_variant_and_ensemble_plumbing():
    parsed = {
        "bypass:3": parse_variant("bypass:3"),
        "highway:8": parse_variant("highway:8"),
        "densenet:2+2+1": parse_variant("densenet:2+2+1"),
    }
    parse_ok = (
        parsed["bypass:3"] == EncoderVariant("bypass", depth=3)
        and parsed["highway:8"] == EncoderVariant("highway", depth=8)
        and parsed["densenet:2+2+1"] == EncoderVariant("densenet",
                                                       plan=(2, 2, 1)))

    hidden = 6
    plain = _Wrap(out=OutputLayer(hidden, ensemble_k=0)).initialize(
        19, np.float64)
    ens = _Wrap(out=OutputLayer(hidden, ensemble_k=1)).initialize(
        19, np.float64)
    ens.out.ensemble_proj.w.data[...] = np.eye(2 * hidden)
    ens.out.ensemble_proj.b.data[...] = 0
    rng = RngStream(20)
    g = Tensor(rng.normal(0, 1, (2, 5, 8 * hidden)))
    m = Tensor(rng.normal(0, 1, (2, 5, 2 * hidden)))
    mask = np.ones((2, 5), bool)
    ps_a, pe_a = plain.out(g, m, [m], mask)
    ps_b, pe_b = ens.out(g, m, [m], mask)
    ens_dev = max(float(np.abs(ps_a.data - ps_b.data).max()),
                  float(np.abs(pe_a.data - pe_b.data).max()))

    # hand arithmetic for plan [2,2], growth 2h, compression 1/2 at 2h=8:
    # block 1 layer inputs 8, 16; output 24; transition to 12
    # block 2 layer inputs 12, 20; output 28; final transition to 8
    widths = densenet_width_plan((2, 2), 8, 8, 0.5, 8)
    widths_ok = (widths["layer_inputs"] == [[8, 16], [12, 20]]
                 and widths["block_outputs"] == [24, 28]
                 and widths["transitions"] == [(24, 12), (28, 8)])

    _report(11, "variant/ensemble plumbing",
            parse_ok and ens_dev < 1e-6 and widths_ok,
            f"parse ok: {parse_ok}; ensemble k=1 dev {ens_dev:.2e}; "
            f"densenet widths ok: {widths_ok}")


# -- 12: determinism and reproducibility ------------------------------------------

def test_criterion_12_determinism():
    with tempfile.TemporaryDirectory() as tmp:
        def cfg(sub):
            return RunConfig(
                variant="baseline", use_char=False, word_dim=12, hidden=8,
                dropout=0.2, optimizer="adam", lr=2e-3, batch_size=8,
                max_steps=16, eval_every=8, seed=5, eval_train=True,
                synthetic={"task": "copy", "n_train": 24, "n_dev": 12,
                           "vocab_size": 20, "context_len": 8, "seed": 0},
                out_dir=os.path.join(tmp, sub))
        res_a = train(cfg("a"), quiet=True)
        res_b = train(cfg("b"), quiet=True)
        csv_identical = open(res_a.metrics_path, "rb").read() == \
            open(res_b.metrics_path, "rb").read()

        config = cfg("a")
        data = load_corpora(config)
        model = load_model_from_checkpoint(res_a.checkpoint_path, config, data)
        r1, p1 = evaluate_split(model, data.dev_raw, data.dev, data.vocab, 8)
        model2 = load_model_from_checkpoint(res_a.checkpoint_path, config, data)
        r2, p2 = evaluate_split(model2, data.dev_raw, data.dev, data.vocab, 8)
        roundtrip = (r1 == r2) and (p1 == p2)

        serial = predict_split(model, data.dev, data.vocab, 4, workers=0)
        parallel = predict_split(model, data.dev, data.vocab, 4, workers=4)
        par_ok = serial == parallel
    _report(12, "determinism & reproducibility",
            csv_identical and roundtrip and par_ok,
            f"loss CSV bit-identical: {csv_identical}; checkpoint round-trip: "
            f"{roundtrip}; parallel==serial: {par_ok}")


# -- 13: figure reproduction ------------------------------------------

def test_criterion_13_sweep_and_plots():
    with tempfile.TemporaryDirectory() as tmp:
        base = RunConfig(
            variant="baseline", use_char=False, word_dim=12, hidden=8,
            dropout=0.1, optimizer="adam", lr=2e-3, batch_size=8,
            max_steps=30, eval_every=10, seed=2, eval_train=False,
            synthetic={"task": "copy", "n_train": 48, "n_dev": 16,
                       "vocab_size": 20, "context_len": 8, "seed": 0},
            out_dir=os.path.join(tmp, "base"))
        results = sweep(base, ["baseline", "bypass:3", "highway:8"],
                        os.path.join(tmp, "sweep"), quiet=True)
        logs = [(r.config.variant, r.metrics_path) for r in results]
        schema_ok = all(
            open(p).readline().strip() == "step,split,loss,em,f1,avna"
            for _, p in logs)
        table = open(os.path.join(tmp, "sweep", "comparison.csv")).read()
        table_ok = table.splitlines()[0] == \
            "variant,best_f1,best_em,best_avna,step_of_best" and \
            len(table.splitlines()) == 4

        deterministic = True
        emitted = []
        for metric in ("f1", "em", "avna"):
            paths = []
            for attempt in range(2):
                out = os.path.join(tmp, f"{metric}_{attempt}.svg")
                emit_plot(PlotSpec(metric=metric, logs=logs, out_path=out))
                paths.append(out)
            a, b = (open(p, "rb").read() for p in paths)
            deterministic = deterministic and a == b
            emitted.append(os.path.getsize(paths[0]) > 0)
    _report(13, "figure reproduction", schema_ok and table_ok
            and deterministic and all(emitted),
            f"CSV schema ok: {schema_ok}; table ok: {table_ok}; "
            f"SVGs byte-deterministic: {deterministic}")
