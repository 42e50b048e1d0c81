"""Acceptance criteria, one test each. Every test prints a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the lines are also
collected into the terminal summary.
"""

import itertools
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, four_detector_specs
from test_agent import gradient_case, finite_difference
from test_evaluator import check_front, concordance_auc
from test_rewards import check_curve_invariants, random_curve

from cascadeforge.adversary import AttackConfig, run_campaign
from cascadeforge.agent import TrainConfig, loss_and_grad, rollout, rollout_rewards, train
from cascadeforge.baselines import enumerate_baselines, predict_table
from cascadeforge.evaluator import ParetoPoint, baseline_rows, compute_metrics, dominates, pareto_points, roc_auc
from cascadeforge.rewards import MetricGoal, curve_value, make_scheme, two_region_curve
from cascadeforge.scores import SynthSpec, split, synthesize
from cascadeforge.rewards import CostCurve, Linear
from cascadeforge.transfer import TransferProblem, likelihood_ratios, solve_boundaries, sym_kl, transfer

C1 = two_region_curve(1.0, 34.0)


def report(num: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {num} {'PASS' if ok else 'FAIL'} {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def test_criterion_1_transfer_constants():
    t0 = time.perf_counter()
    beta = likelihood_ratios(C1).betas[1]
    h = sym_kl(316.5529, 316.168)
    elapsed = time.perf_counter() - t0
    rel = abs(beta - 316.5529) / 316.5529
    ok = rel < 0.002 and 0 < h < 1e-8 and elapsed < 1.0
    report(1, "transfer constants", ok,
           f"beta {beta:.4f} (rel {rel:.2e} < 2e-3), symKL {h:.3e} in (0, 1e-8), {elapsed:.3f}s < 1s")
    assert ok


def test_criterion_2_transfer_solver():
    t0 = time.perf_counter()
    tol = 1e-4
    toy = solve_boundaries(TransferProblem(C1, 0.0, 18.0, epsilon=1e-8, boundary_tol=tol), [1.0, 316.168])
    toy_rel = abs(likelihood_ratios(toy.curve).betas[1] - 316.168) / 316.168
    ident = solve_boundaries(TransferProblem(C1, 0.0, 34.0), likelihood_ratios(C1).betas)
    ident_err = max(abs(a - b) for a, b in zip(ident.boundaries, C1.boundaries))
    thirds = CostCurve((0.0, 1.0, 2.0, 3.0), (Linear(0.0, 1.0),) * 3)
    k3 = solve_boundaries(TransferProblem(thirds, 0.0, 6.0), [1.0, 1.0, 1.0])
    k3_err = max(abs(a - b) for a, b in zip(k3.boundaries, (0.0, 2.0, 4.0, 6.0)))

    fwd = transfer(TransferProblem(C1, 0.0, 18.0, epsilon=1e-8, boundary_tol=tol))
    back = transfer(TransferProblem(fwd.curve, 0.0, 34.0, epsilon=1e-8, boundary_tol=tol))
    ref_rt = max(abs(a - b) for a, b in zip(back.boundaries, C1.boundaries))
    rng = np.random.default_rng(0)
    random_rt = 0.0
    for seed in range(50):
        d = float(rng.uniform(0.2, 3.0))
        src = two_region_curve(d, d * float(rng.uniform(3.0, 50.0)))
        end = src.end * float(rng.uniform(0.4, 2.5))
        f = transfer(TransferProblem(src, 0.0, end, epsilon=1e-12, boundary_tol=tol, seed=seed))
        b = transfer(TransferProblem(f.curve, 0.0, src.end, epsilon=1e-12, boundary_tol=tol, seed=seed))
        random_rt = max(random_rt, max(abs(x - y) for x, y in zip(b.boundaries, src.boundaries)))
    elapsed = time.perf_counter() - t0
    ok = (toy_rel < 1e-6 and ident_err < 1e-6 and k3_err < 1e-12
          and ref_rt < 10 * tol and random_rt < 10 * tol and elapsed < 10)
    report(2, "transfer solver", ok,
           f"toy d {toy.boundaries[1]:.6f} rel beta err {toy_rel:.1e}; identity err {ident_err:.1e}; "
           f"K=3 err {k3_err:.1e}; round trip {ref_rt:.1e} (reference, eps 1e-8), "
           f"{random_rt:.1e} (50 random curves, eps 1e-12) < {10 * tol:.0e}; {elapsed:.2f}s < 10s")
    assert ok


def test_criterion_3_reward_curves():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        check_curve_invariants(random_curve(rng), rng)
    c2 = two_region_curve(0.531, 18.0)
    checks = [
        (C1(0.5), 0.5), (C1(8.0), 4.0), (C1(100.0), 1 + math.log2(34)),
        (c2(0.531), 1.0), (c2(1.062), 2.0),
        (float(make_scheme(3).terminal_reward(True, 7.0)), 1.0),
        (float(make_scheme(2).terminal_reward(False, 2.5)), -25.0),
        (float(make_scheme(1).terminal_reward(True, 0.0)), 0.0),
    ]
    worst = max(abs(a - b) for a, b in checks)
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and elapsed < 5
    report(3, "reward curves", ok,
           f"1000 random curves continuous/monotone/bounded; example max err {worst:.1e}; {elapsed:.2f}s < 5s")
    assert ok


def test_criterion_4_agent_numerics(small_splits):
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(100):
        params, states, actions, targets, adv = gradient_case(seed)
        _, g = loss_and_grad(params, states, actions, targets, adv)
        num = finite_difference(params, states, actions, targets, adv)
        ana = g.flat()
        worst = max(worst, np.linalg.norm(ana - num) / max(np.linalg.norm(ana), np.linalg.norm(num), 1e-12))
    tr, va, _ = small_splits
    cfg = TrainConfig(epochs=3, seed=11)
    a = train(tr, va, make_scheme(3), None, cfg)
    b = train(tr, va, make_scheme(3), None, cfg)
    same = a.params.flat().tobytes() == b.params.flat().tobytes()
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and same and elapsed < 30
    report(4, "agent numerics", ok,
           f"max relative gradient error {worst:.1e} < 1e-4 over 100 points; "
           f"repeat training bit-identical: {same}; {elapsed:.1f}s < 30s")
    assert ok


def best_static_reward(table, scheme):
    """Brute force over every static policy: a detector subset plus a decision rule."""
    best = -math.inf
    n = table.n_detectors
    for cls in (0, 1):  # classify at once, no detector cost
        best = max(best, float(scheme.terminal_reward(table.labels == cls, np.zeros(len(table))).mean()))
    for k in range(1, n + 1):
        for subset in itertools.combinations(range(n), k):
            cols = list(subset)
            vals = curve_value(scheme.curve, table.costs[:, cols]).sum(axis=1)
            for rule in ("majority", "or"):
                s = table.scores[:, cols]
                conf = s.mean(axis=1) if rule == "majority" else s.max(axis=1)
                correct = (conf > 0.5).astype(int) == table.labels
                best = max(best, float(scheme.terminal_reward(correct, vals).mean()))
    return best


def test_criterion_5_policy_quality(two_detector_table):
    t0 = time.perf_counter()
    tr, va, te = split(two_detector_table, (0.75, 0.10, 0.15), 1)
    scheme = make_scheme(3)
    res = train(tr, va, scheme, None, TrainConfig(epochs=15, seed=0))
    ro = rollout(res.params, te.scores, te.costs)
    only_a = float(((ro.actions[:, 0] == 0) & (ro.steps == 2)).mean())
    agent_reward = float(rollout_rewards(scheme, ro, te.labels).mean())
    optimum = best_static_reward(te, scheme)
    gap = (optimum - agent_reward) / abs(optimum)
    elapsed = time.perf_counter() - t0
    ok = only_a >= 0.95 and gap <= 0.05 and elapsed < 120
    report(5, "policy quality oracle", ok,
           f"invokes only A then classifies on {only_a:.3f} >= 0.95 of test samples; mean reward "
           f"{agent_reward:.4f} vs static optimum {optimum:.4f} (gap {gap:.2%} <= 5%); {elapsed:.1f}s < 120s")
    assert ok


@pytest.mark.slow
def test_criterion_6_pareto():
    t0 = time.perf_counter()
    table = synthesize(SynthSpec(four_detector_specs(3.0), 6000, 0.5, 0))
    tr, va, te = split(table, (0.75, 0.10, 0.15), 0)
    static = pareto_points(baseline_rows(te))
    assert len(static) == 30
    cfg = TrainConfig(epochs=40, seed=0, entropy_start=1.0)
    parts, ok = [], True
    for sid in range(1, 6):
        res = train(tr, va, make_scheme(sid), None, cfg)
        ro = rollout(res.params, te.scores, te.costs)
        m = compute_metrics(ro.confidence, ro.predicted, ro.total_cost, te.labels)
        point = ParetoPoint(f"scheme {sid}", m.f1 or 0.0, m.mean_time)
        beaten = [p.name for p in static if dominates(p, point)]
        # a policy that never runs a detector sits at time 0 and is trivially undominated
        used = float(ro.n_invoked.mean())
        ok &= not beaten and used >= 1.0
        parts.append(f"s{sid} F1 {point.quality:.3f} t {point.mean_time:.2f} inv {used:.2f}"
                     + (f" dominated by {beaten[0]}" if beaten else ""))
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 180
    report(6, "Pareto property", ok, "; ".join(parts)
           + f"; none dominated by the 30 ensembles, all invoke >= 1 detector; {elapsed:.0f}s < 180s")
    assert ok


@pytest.mark.slow
def test_criterion_7_metric_goal():
    t0 = time.perf_counter()
    table = synthesize(SynthSpec(four_detector_specs(30.0), 6000, 0.5, 1))
    tr, va, te = split(table, (0.75, 0.10, 0.15), 1)
    scheme = make_scheme(3)
    plain = train(tr, va, scheme, None, TrainConfig(epochs=40, seed=0, entropy_start=0.5))
    goal = MetricGoal("recall", 0.95, 0.97, 2.0, batch=128, sign_mode="sign_preserving", credit="share")
    wrapped = train(tr, va, scheme, goal, TrainConfig(epochs=60, seed=0, updates_per_batch=8), plain.params)

    def measure(params):
        ro = rollout(params, te.scores, te.costs)
        return compute_metrics(ro.confidence, ro.predicted, ro.total_cost, te.labels), ro.n_invoked.mean()

    m0, inv0 = measure(plain.params)
    m1, inv1 = measure(wrapped.params)
    elapsed = time.perf_counter() - t0
    ok = m1.recall >= 0.95 and m0.recall < 0.95 and inv1 >= 1.0 and elapsed < 180
    report(7, "metric goal", ok,
           f"wrapped recall {m1.recall:.3f} >= 0.95 (precision {m1.precision:.3f}, {inv1:.2f} detectors/sample); "
           f"unwrapped recall {m0.recall:.3f} < 0.95 (precision {m0.precision:.3f}); {elapsed:.0f}s < 180s")
    assert ok


@pytest.mark.slow
def test_criterion_8_attacks():
    t0 = time.perf_counter()
    specs = four_detector_specs(3.0)
    table = synthesize(SynthSpec(specs, 6000, 0.5, 0))
    tr, va, _ = split(table, (0.75, 0.10, 0.15), 0)
    params = train(tr, va, make_scheme(3), None, TrainConfig(epochs=20, seed=0, entropy_start=0.5)).params
    target = synthesize(SynthSpec(specs, 3000, 0.5, 7))

    evade = {eps: run_campaign(params, target, AttackConfig(eps), 1000) for eps in (0.0, 0.1, 0.25, 0.5)}
    sound = all(r.max_budget_used <= eps + 1e-12 for eps, r in evade.items())
    rates = [evade[e].success_rate for e in (0.1, 0.25, 0.5)]
    monotone = all(a <= b for a, b in zip(rates, rates[1:]))
    det = run_campaign(params, target, AttackConfig(0.5, goal="resource"), 1000)
    sto = run_campaign(params, target, AttackConfig(0.5, goal="resource", defense="stochastic"), 1000)
    sound &= det.max_budget_used <= 0.5 + 1e-12 and sto.max_budget_used <= 0.5 + 1e-12

    def val_f1(e):
        conf, pred, cost = predict_table(e, va)
        return compute_metrics(conf, pred, cost, va.labels).f1 or 0.0
    or_best = max((e for e in enumerate_baselines(4) if e.rule == "or"), key=val_f1)
    bb_or = run_campaign(or_best, target, AttackConfig(0.5), 1000, attack="black").success_rate
    bb_agent = run_campaign(params, target, AttackConfig(0.5), 1000, attack="black").success_rate
    elapsed = time.perf_counter() - t0
    ok = (sound and evade[0.0].success_rate == 0.0 and monotone
          and sto.success_rate <= det.success_rate and bb_or >= bb_agent and elapsed < 180)
    report(8, "attack invariants", ok,
           f"budget sound: {sound}; eps 0 rate {evade[0.0].success_rate}; evade rates "
           + "/".join(f"{r:.3f}" for r in rates) + " non-decreasing; "
           f"resource stochastic {sto.success_rate:.3f} <= deterministic {det.success_rate:.3f}; "
           f"black-box or-ensemble {or_best.name(target.detector_ids)} {bb_or:.3f} >= agent {bb_agent:.3f}; "
           f"{elapsed:.0f}s < 180s")
    assert ok


def test_criterion_9_evaluator():
    t0 = time.perf_counter()
    rng = np.random.default_rng(99)
    exact = True
    for _ in range(100):
        n = int(rng.integers(2, 201))
        labels = rng.integers(0, 2, n)
        conf = np.round(rng.random(n), int(rng.integers(1, 4)))
        oracle = concordance_auc(conf, labels)
        got = roc_auc(conf, labels)
        exact &= (got is None) if oracle is None else got == oracle[0] / oracle[1]
    for _ in range(100):
        pts = [ParetoPoint(str(i), float(q), float(t))
               for i, (q, t) in enumerate(np.round(rng.random((int(rng.integers(1, 40)), 2)), 2))]
        check_front(pts)
    elapsed = time.perf_counter() - t0
    ok = exact and elapsed < 5
    report(9, "evaluator oracles", ok,
           f"trapezoid AUC equals pairwise concordance on 100 cases: {exact}; "
           f"Pareto exclusions all dominated on 100 point sets; {elapsed:.2f}s < 5s")
    assert ok
