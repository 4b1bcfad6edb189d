"""Acceptance run: one PASS/FAIL line per criterion.

    pytest tests/test_acceptance.py -s
"""

import glob
import itertools
import os
import time

import numpy as np
import pytest

from mssg.amp import build_schedule, run_full, se_identity_errors
from mssg.einfty import einfty_pure_closed, einfty_scan
from mssg.gs_quadratic import QuadraticSkModel, a_opt, finite_n_estimate, gs_closed_form, recursion_trace, step_maps
from mssg.mixture import MixtureModel
from mssg.solvability import Solvability, classify, find_solvable, perron_velocity
from mssg.trajectory import Kind, first_integral_defect, species_psi, type1_solve, type2_solve
from mssg.variational import Case, alg_value, asb_second_variation, evaluate_A, pure_alg, single_species_alg

from conftest import MODELS_DIR, load


def report(n, checks):
    """checks: list of (label, ok, detail). Prints one line and asserts."""
    ok = all(c[1] for c in checks)
    failed = [f"{lab} ({det})" for lab, good, det in checks if not good]
    detail = "; ".join(f"{lab}: {det}" for lab, _, det in checks)
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} | {detail}"
    print("\n" + line)
    assert ok, "failed: " + "; ".join(failed)


def timed(fn, warm=False):
    if warm:
        fn()  # one-time JIT compilation is not part of the runtime budget
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


# ---------------------------------------------------------------------------


def test_criterion_1_closed_forms():
    checks = []
    sk = load("sk_field")
    closed, t = timed(lambda: single_species_alg(sk).alg, warm=True)
    checks.append(("SK closed", abs(closed - np.sqrt(3)) <= 1e-9 and t < 1, f"{abs(closed - np.sqrt(3)):.1e}, {t:.2f}s"))
    # integrate the functional along the root-finding trajectory rather than
    # reading the endpoint formula, which coincides with the closed form
    def via_ode():
        cand = alg_value(sk).candidates[0]
        return evaluate_A(sk, cand.segments, cand.q0)

    ode, t = timed(via_ode, warm=True)
    checks.append(("SK ODE", abs(ode - np.sqrt(3)) <= 1e-4 and t < 1, f"{abs(ode - np.sqrt(3)):.1e}, {t:.2f}s"))
    for p in (3, 4, 5):
        val, t = timed(lambda: pure_alg([p], [1.0]).alg)
        err = abs(val - 2 * np.sqrt((p - 1) / p))
        checks.append((f"p={p}", err <= 1e-9 and t < 1, f"{err:.1e}"))
    val, t = timed(lambda: pure_alg([1, 1], [0.25, 0.75]).alg)
    err = abs(val - (0.5 + np.sqrt(0.75)))
    checks.append(("x1x2", err <= 1e-9 and t < 1, f"{err:.1e}"))
    report(1, checks)


def _match(energies, targets, tol):
    errs = [min(abs(e - t) for e in energies) for t in targets]
    return max(errs) <= tol, max(errs)


def _spread(cand):
    phi = np.vstack([s.phi for s in cand.segments])
    return float(np.max(np.abs(phi[:, 0] - phi[:, 1])))


def test_criterion_2_golden_values():
    checks = []
    res, t = timed(lambda: alg_value(load("asb_a3_h15"), scan_points=64))
    en = [c.energy for c in res.candidates]
    ok, err = _match(en, [7.1755, 7.1767], 2e-3)
    sym = [c.energy for c in res.candidates if abs(c.phi_q1[0] - c.phi_q1[1]) < 1e-9]
    asym = [c.energy for c in res.candidates if abs(c.phi_q1[0] - c.phi_q1[1]) >= 1e-9]
    ok = ok and bool(asym) and bool(sym) and max(asym) > max(sym) and t < 30
    checks.append(("asb a3 h1.5", ok, f"max err {err:.1e}, {t:.1f}s"))

    res, t = timed(lambda: alg_value(load("asb_a3_h0"), scan_points=64))
    ok, err = _match([c.energy for c in res.candidates], [6.9230, 6.9254], 2e-3)
    checks.append(("asb a3 h0", ok and t < 30, f"max err {err:.1e}, {t:.1f}s"))

    res, t = timed(lambda: alg_value(load("asb_a5_h0"), scan_points=64))
    ok, err = _match([c.energy for c in res.candidates], [17.0286, 17.0642, 17.0292], 5e-3)
    far = max(range(len(res.candidates)), key=lambda i: _spread(res.candidates[i]))
    far_is_max = res.candidates[far].energy == pytest.approx(res.alg, abs=1e-12)
    checks.append(("asb a5 h0", ok and far_is_max and t < 30, f"max err {err:.1e}, far pair maximal {far_is_max}"))

    one = np.ones(2)
    c_sup = classify(load("ode_supersolvable"), one).classification
    c_sub = classify(load("ode_subsolvable"), one).classification
    case0 = alg_value(load("ode_no_field")).case_label
    ok = c_sup is Solvability.SUPER and c_sub is Solvability.SUB and case0 is Case.ZERO_FIELD_TREE
    checks.append(("ode classes", ok, f"{c_sup.value}/{c_sub.value}/{case0.value}"))
    report(2, checks)


def random_pure(rng):
    while True:
        r = int(rng.integers(1, 4))
        a = rng.integers(1, 5, r)
        if a.sum() >= 3:
            break
    lam = rng.uniform(0.2, 1.0, r)
    lam /= lam.sum()
    lam[-1] = 1.0 - lam[:-1].sum()
    return a, lam


def test_criterion_3_alg_equals_einfty():
    rng = np.random.default_rng(2026)
    closed_gap = scan_gap = 0.0
    t0 = time.perf_counter()
    for _ in range(10):
        a, lam = random_pure(rng)
        alg = pure_alg(a, lam).alg
        closed_gap = max(closed_gap, abs(einfty_pure_closed(a, lam).einfty - alg))
        scan_gap = max(scan_gap, abs(einfty_scan(a, lam, tol=1e-6) - alg))
    t = time.perf_counter() - t0
    report(
        3,
        [
            ("closed gap", closed_gap <= 1e-10, f"{closed_gap:.1e}"),
            ("scan gap", scan_gap <= 1e-4, f"{scan_gap:.1e}"),
            ("runtime", t < 10, f"{t:.1f}s"),
        ],
    )


@pytest.mark.slow
def test_criterion_4_amp_desk_scale():
    m = load("quadratic_two_species")
    alg = alg_value(m)
    seeds = range(17, 25)
    t0 = time.perf_counter()
    stats = {}
    for N in (1500, 3000):
        rep = run_full(m, N, 0.05, 30, seeds=seeds, alg=alg)
        lag = np.mean([r.stage1_lag for r in rep.reports], axis=0)
        dev = float(np.max(np.abs(lag[1:] - rep.predicted_stage1[1:])))
        stats[N] = (rep, rep.mean_abs_gap, dev)
    t = time.perf_counter() - t0
    rep, gap, dev = stats[3000]
    checks = [
        ("energy gap", gap <= 0.1, f"{gap:.4f}"),
        ("Stage I overlaps", dev <= 0.05, f"seed-mean max dev {dev:.3f}"),
    ]
    if rep.stage2_ran:
        s2 = max(r.deviations["stage2_overlap"] for r in rep.reports)
        mart = max(r.deviations["martingale"] for r in rep.reports)
        checks += [("Stage II overlaps", s2 <= 0.05, f"{s2:.3f}"), ("martingale", mart <= 0.05, f"{mart:.3f}")]
    else:
        checks.append(("Stage II", True, "no steps since Phi(q1) = 1"))
    shrink_gap = stats[3000][1] < stats[1500][1]
    shrink_dev = stats[3000][2] < stats[1500][2]
    checks.append(
        (
            "shrink 1500->3000",
            shrink_gap and shrink_dev,
            f"gap {stats[1500][1]:.4f}->{stats[3000][1]:.4f}, dev {stats[1500][2]:.3f}->{stats[3000][2]:.3f}",
        )
    )
    checks.append(("runtime", t < 300, f"{t:.0f}s"))
    report(4, checks)


def _schedules():
    out = []
    for name, delta in (("asb_a3_h15", 0.05), ("sk_no_field", 0.05), ("mixed_23_field", 0.02)):
        m = load(name)
        res = alg_value(m)
        c = res.candidates[res.maximizer_index]
        out.append((name, m, lambda m=m, c=c, d=delta: build_schedule(m, c.phi_q1, c.q1, d, 30, c.tree)))
    return out


def test_criterion_5_state_evolution_algebra():
    checks = []
    for name, m, make in _schedules():
        a, b = make(), make()
        errs = se_identity_errors(m, a)
        worst = max(errs.values())
        finite = bool(np.all(np.isfinite(a.onsager)))
        same = np.array_equal(a.onsager, b.onsager) and all(np.array_equal(a.se_cov[k], b.se_cov[k]) for k in a.se_cov)
        ok = worst <= 1e-12 and "u_increment" in errs and finite and same
        checks.append((name, ok, f"{len(errs)} identities, worst {worst:.1e}, finite {finite}, reproducible {same}"))
    report(5, checks)


def _one_step_value(m, a):
    return float(m.lam @ (m.v * np.sqrt(a))) + gs_closed_form(step_maps(m, a))


def zoom_grid_max(m, points=21, rounds=6):
    """Maximise the one-step objective on successively refined grids."""
    lo, hi = np.zeros(m.r), np.ones(m.r)
    best, arg = -np.inf, None
    for _ in range(rounds):
        axes = [np.linspace(l, h, points) for l, h in zip(lo, hi)]
        for a in itertools.product(*axes):
            a = np.array(a)
            val = _one_step_value(m, a)
            if val > best:
                best, arg = val, a
        width = 2 * (hi - lo) / (points - 1)
        lo, hi = np.clip(arg - width, 0, 1), np.clip(arg + width, 0, 1)
    return best, arg


def test_criterion_6_gs_quadratic():
    rng = np.random.default_rng(6)
    tele = 0.0
    grid_gap = 0.0
    never_above = True
    for k in range(10):
        r = 1 + k % 3
        A = rng.uniform(0, 1.5, (r, r))
        lam = rng.uniform(0.2, 1, r)
        lam /= lam.sum()
        lam[-1] = 1.0 - lam[:-1].sum()
        m = QuadraticSkModel(A + A.T, rng.uniform(0.1, 1.5, r), lam)
        tr = recursion_trace(m, 25)
        tele = max(tele, abs(tr.F.sum() + tr.E[-1] - tr.E[0]))
        if r <= 2:
            best, _ = zoom_grid_max(m)
            gs = gs_closed_form(m)
            grid_gap = max(grid_gap, abs(best - gs))
            never_above &= best <= gs + 1e-12
            grid_gap = max(grid_gap, abs(_one_step_value(m, a_opt(m)) - gs))
    est = finite_n_estimate(1.0, 2000, seed=17)
    rel = abs(est - np.sqrt(2)) / np.sqrt(2)
    report(
        6,
        [
            ("telescoping", tele <= 1e-12, f"{tele:.1e}"),
            ("one-step grid", grid_gap <= 1e-6 and never_above, f"{grid_gap:.1e}"),
            ("finite N=2000", rel <= 0.08, f"{est:.4f}, rel {rel:.3f}"),
        ],
    )


def test_criterion_7_second_variation():
    v10 = asb_second_variation(0.1)
    v20 = asb_second_variation(0.05)
    v0 = asb_second_variation(0.1, amplitude=0.0)
    report(
        7,
        [
            ("c=1/10", v10 > 0, f"{v10:.5f}"),
            ("c=1/20", v20 > 0, f"{v20:.5f}"),
            ("zero perturbation", v0 == 0, f"{v0}"),
        ],
    )


def _order(diffs, steps):
    return float(np.polyfit(np.log(steps), np.log(diffs), 1)[0])


def _rk4_orders(m, cand):
    """Observed orders from step halving, re-integrating each segment of a candidate."""
    steps = [8e-3, 4e-3, 2e-3, 1e-3]
    orders = []
    for seg in cand.segments:
        if seg.kind is Kind.ROOT_FINDING:
            runs = [type1_solve(m, seg.phi[-1], dq=dq) for dq in steps]
            ends = [np.r_[s.q_start, s.phi[0]] for s in runs]
        else:
            if np.all(seg.phi[0] == 0):
                # from the origin the path is only Lipschitz (Phi' ~ q^{-1/2} for pure terms),
                # so the classical order does not apply
                continue
            runs = [type2_solve(m, seg.phi[0], seg.dphi[0], dq=dq) for dq in steps]
            ends = [np.r_[s.q_end, s.phi[-1]] for s in runs]
        diffs = [np.max(np.abs(a - b)) for a, b in zip(ends[:-1], ends[1:])]
        if min(diffs) > 1e-13:
            orders.append(_order(diffs, steps[:-1]))
    return orders


def test_criterion_8_trajectory_invariants():
    adm = fi = psi = 0.0
    orders = []
    names = []
    for path in sorted(glob.glob(os.path.join(MODELS_DIR, "*.json"))):
        m = MixtureModel.load(path, warn=False)
        names.append(os.path.basename(path))
        res = alg_value(m)
        for cand in res.candidates:
            for seg in cand.segments:
                adm = max(adm, float(np.max(np.abs(seg.phi @ m.lam - seg.q))))
                adm = max(adm, float(max(0.0, -np.min(np.diff(seg.phi, axis=0)))))
                if seg.kind is Kind.ROOT_FINDING:
                    fi = max(fi, float(np.max(np.abs(first_integral_defect(m, seg)))))
                elif m.r > 1 and len(seg.q) > 5:
                    per = species_psi(m, seg)
                    psi = max(psi, float(np.max(np.abs(per - per[:, :1]))))
        orders += _rk4_orders(m, res.candidates[res.maximizer_index])
    orders_ok = bool(orders) and all(3.5 <= o <= 5.0 for o in orders)
    report(
        8,
        [
            ("admissibility", adm <= 1e-7, f"{adm:.1e}"),
            ("first integral", fi <= 1e-6, f"{fi:.1e}"),
            ("Psi agreement", psi <= 1e-4, f"{psi:.1e}"),
            ("RK4 order", orders_ok, f"{len(orders)} runs in [{min(orders):.2f}, {max(orders):.2f}]"),
            ("zoo", True, f"{len(names)} models"),
        ],
    )
