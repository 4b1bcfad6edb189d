import json

import numpy as np
import pytest

from mssg.amp import (
    algorithm_rng,
    build_schedule,
    grad_energy,
    overlap_recursion,
    overlaps,
    run_full,
    sample_hamiltonian,
    se_identity_errors,
    species_sizes,
    stage1_run,
    stage2_run,
)
from mssg.errors import CostGuard, NumericBlowup, ValidationError
from mssg.mixture import MixtureModel
from mssg.variational import alg_value

from conftest import load


def on_spheres(H, rng):
    x = rng.standard_normal(H.N)
    return (1.0 / np.sqrt(overlaps(H, x, x)))[H.species] * x


@pytest.fixture(scope="module")
def cov_model():
    # two species, degrees 2 and 3, xi(1) = 1
    exps = [[2, 0], [1, 1], [0, 2], [3, 0], [1, 2]]
    return MixtureModel([0.4, 0.6], [0.5, 1.0], exps, [0.2, 0.3, 0.2, 0.15, 0.15], warn=False)


def test_species_sizes():
    assert list(species_sizes([1 / 3, 2 / 3], 10)) == [3, 7]
    assert list(species_sizes([0.25, 0.25, 0.5], 7)) == [1, 2, 4] or sum(species_sizes([0.25, 0.25, 0.5], 7)) == 7


def test_covariance_monte_carlo(cov_model):
    N = 64
    base = sample_hamiltonian(cov_model, N, 0)
    rng = np.random.default_rng(1)
    sigma = on_spheres(base, rng)
    rho = on_spheres(base, rng)
    rho = 0.7 * sigma + 0.3 * rho
    rho = (1.0 / np.sqrt(overlaps(base, rho, rho)))[base.species] * rho
    R = overlaps(base, sigma, rho)
    prods = []
    for seed in range(2000):
        H = sample_hamiltonian(cov_model, N, seed)
        prods.append(grad_energy(H, sigma, field=False).energy * grad_energy(H, rho, field=False).energy / N)
    assert abs(np.mean(prods) - cov_model.xi(R)) <= 0.05


def test_sampling_deterministic(cov_model):
    a = sample_hamiltonian(cov_model, 30, 5)
    b = sample_hamiltonian(cov_model, 30, 5)
    for k in a.tensors:
        assert np.array_equal(a.tensors[k], b.tensors[k])
    c = sample_hamiltonian(cov_model, 30, 6)
    assert not np.array_equal(a.tensors[2], c.tensors[2])


def test_cost_guard():
    m = load("ode_supersolvable")  # degree 4
    with pytest.raises(CostGuard):
        sample_hamiltonian(m, 600, 0)
    with pytest.raises(ValidationError):
        sample_hamiltonian(m, 1, 0)


def test_gradient_at_origin(cov_model):
    H = sample_hamiltonian(cov_model, 40, 2)
    ge = grad_energy(H, np.zeros(40))
    assert np.array_equal(ge.grad, H.h_vec)
    assert ge.energy == 0.0


def test_gradient_finite_differences():
    m = load("ode_supersolvable")
    N = 64
    H = sample_hamiltonian(m, N, 3)
    rng = np.random.default_rng(4)
    sigma = on_spheres(H, rng)
    g = grad_energy(H, sigma).grad
    eps = 1e-4
    for i in rng.choice(N, 20, replace=False):
        e = np.zeros(N)
        e[i] = eps
        fd = (grad_energy(H, sigma + e).energy - grad_energy(H, sigma - e).energy) / (2 * eps)
        assert abs(fd - g[i]) <= 1e-5


def test_quadratic_dense_gradient():
    m = load("quadratic_two_species")
    N = 50
    H = sample_hamiltonian(m, N, 8)
    sigma = on_spheres(H, np.random.default_rng(0))
    M = H.tensors[2]
    expected = H.h_vec + (M + M.T) @ sigma / np.sqrt(N)
    assert np.allclose(grad_energy(H, sigma).grad, expected, atol=1e-12)
    assert grad_energy(H, sigma).energy == pytest.approx(H.h_vec @ sigma + sigma @ M @ sigma / np.sqrt(N), abs=1e-10)


def test_overlap_recursion_sk_field():
    R = overlap_recursion(load("sk_field"), [1.0], 50)
    assert R[0, 0] == 0.0
    assert R[1, 0] == pytest.approx(1 / 3, abs=1e-15)
    assert R[2, 0] == pytest.approx(5 / 9, abs=1e-15)
    assert np.all(np.diff(R[:, 0]) > 0) and R[-1, 0] < 1


def test_overlap_recursion_no_field():
    R = overlap_recursion(load("ode_no_field"), [0.5, 0.5], 20)
    assert np.all(R == 0)


@pytest.fixture(scope="module")
def asb_alg():
    return alg_value(load("asb_a3_h15"))


def test_overlap_recursion_monotone_on_asb(asb_alg):
    phi = asb_alg.phi_q1
    R = overlap_recursion(load("asb_a3_h15"), phi, 200)
    assert np.all(np.diff(R, axis=0) >= 0)
    assert np.all(R <= phi + 1e-15)


@pytest.mark.xfail(
    strict=True,
    reason="at a solvable endpoint the recursion is critical and converges like 1/k; error at k=200 is about 3e-3",
)
def test_overlap_recursion_converges_on_asb(asb_alg):
    phi = asb_alg.phi_q1
    R = overlap_recursion(load("asb_a3_h15"), phi, 200)
    assert np.max(np.abs(R[-1] - phi)) <= 1e-8


@pytest.fixture(scope="module")
def sk_stage1():
    m = load("sk_field")
    N = 2000
    H = sample_hamiltonian(m, N, 17)
    return m, N, stage1_run(H, m, np.ones(1), 30)


def test_stage1_lag_overlaps(sk_stage1):
    m, N, s1 = sk_stage1
    R = overlap_recursion(m, np.ones(1), 30)
    assert np.max(np.abs(s1.lag_overlap[1:] - R[1:])) <= 5 * N ** (-1 / 3)


@pytest.mark.xfail(strict=True, reason="finite-N pull of edge eigenvectors: energy 2.02 against 1.73 at seed 17")
def test_stage1_energy(sk_stage1):
    m, N, s1 = sk_stage1
    target = float(m.lam @ np.sqrt(np.ones(1) * (m.h2 + m.xi_s(np.ones(1)))))
    assert abs(s1.energy[30] - target) <= 0.1


@pytest.mark.xfail(strict=True, reason="finite-N pull of edge eigenvectors: self-overlap off by 0.27 at seed 17")
def test_stage1_self_overlap(sk_stage1):
    _, _, s1 = sk_stage1
    assert np.max(np.abs(s1.self_overlap - 1.0)) <= 0.05


def test_stage1_needs_field():
    m = load("sk_no_field")
    H = sample_hamiltonian(m, 20, 0)
    with pytest.raises(ValidationError):
        stage1_run(H, m, np.ones(1), 5)


@pytest.fixture(scope="module")
def schedules(asb_alg):
    out = {}
    m = load("asb_a3_h15")
    best = asb_alg.candidates[asb_alg.maximizer_index]
    out["asb"] = (m, build_schedule(m, best.phi_q1, best.q1, 0.05, 30, best.tree))
    m0 = load("sk_no_field")
    a0 = alg_value(m0)
    c0 = a0.candidates[0]
    out["sk0"] = (m0, build_schedule(m0, c0.phi_q1, c0.q1, 0.05, 30, c0.tree))
    m1 = load("mixed_23_field")
    a1 = alg_value(m1)
    c1 = a1.candidates[0]
    out["cubic"] = (m1, build_schedule(m1, c1.phi_q1, c1.q1, 0.02, 30, c1.tree))
    return out


@pytest.mark.parametrize("name", ["asb", "sk0", "cubic"])
def test_schedule_identities(schedules, name):
    m, sched = schedules[name]
    errs = se_identity_errors(m, sched)
    for key, val in errs.items():
        assert val <= 1e-12, key
    if name != "sk0":
        assert "m_cross" in errs


@pytest.mark.parametrize("name", ["asb", "sk0", "cubic"])
def test_onsager_table_finite_and_reproducible(schedules, name, asb_alg):
    m, sched = schedules[name]
    assert np.all(np.isfinite(sched.onsager))
    assert np.all(np.isfinite(sched.kick))


def test_schedule_grid(schedules):
    m, sched = schedules["asb"]
    q = sched.q_grid
    assert q[0] == pytest.approx(float(m.lam @ sched.phi_q1), abs=1e-12)
    assert np.allclose(np.diff(q), 0.05)
    assert q[-1] <= 1 - 2 * 0.05 + 1e-12 and q[-1] + 0.05 > 1 - 2 * 0.05 + 1e-12
    _, sched0 = schedules["sk0"]
    assert sched0.q_grid[0] == pytest.approx(0.05)


def test_onsager_table_sk_no_field(schedules):
    _, sched = schedules["sk0"]
    table = sched.onsager[:, :, 0]
    # linear chain with constant u for SK: only the diagonal j = i term survives
    for i in range(1, sched.steps):
        assert abs(table[i, i]) > 0
        for j in range(1, i - 1):
            assert abs(table[i, j]) <= 1e-12 * abs(table[i, i])


def test_schedule_reproducible(asb_alg):
    m = load("asb_a3_h15")
    best = asb_alg.candidates[asb_alg.maximizer_index]
    a = build_schedule(m, best.phi_q1, best.q1, 0.05, 30, best.tree)
    b = build_schedule(m, best.phi_q1, best.q1, 0.05, 30, best.tree)
    assert np.array_equal(a.onsager, b.onsager)
    assert np.array_equal(a.u, b.u)


def test_delta_bounds():
    m = load("sk_field")
    res = alg_value(m)
    c = res.candidates[0]
    with pytest.raises(ValidationError):
        build_schedule(m, c.phi_q1, 0.9, 0.05, 30, c.root)
    m1 = load("mixed_23_field")
    c1 = alg_value(m1).candidates[0]
    # delta at the admissible bound still leaves exactly one step
    bound = (1 - c1.q1) / 3
    assert build_schedule(m1, c1.phi_q1, c1.q1, bound, 30, c1.tree).steps == 1
    with pytest.raises(ValidationError):
        build_schedule(m1, c1.phi_q1, c1.q1, bound * 1.01, 30, c1.tree)


@pytest.fixture(scope="module")
def sk0_runs():
    m = load("sk_no_field")
    return m, run_full(m, 2000, 0.05, 30, seeds=range(17, 25))


def test_stage2_martingale(sk0_runs):
    _, rep = sk0_runs
    for r in rep.reports:
        assert np.nanmax(np.abs(r.stage2_martingale)) <= 5 * 2000 ** (-1 / 3)


@pytest.mark.xfail(
    strict=True,
    reason="edge eigenvectors pick up weight P_i(edge)^2/N = O(1) along the incremental chain at N=2000",
)
def test_stage2_overlap_ladder(sk0_runs):
    _, rep = sk0_runs
    for r in rep.reports:
        ladder = np.diagonal(r.stage2_overlap, 0, 0, 1).T
        assert np.max(np.abs(ladder - rep.predicted_stage2)) <= 0.05


def test_stage2_energy_increments(sk0_runs):
    _, rep = sk0_runs
    inc = np.mean([np.diff(r.stage2_energy) for r in rep.reports], axis=0)
    assert np.max(np.abs(inc - rep.predicted_gain)) <= 0.05


def test_output_on_spheres(sk0_runs):
    _, rep = sk0_runs
    for r in rep.reports:
        assert np.max(np.abs(r.output_norms - 1.0)) <= 1e-9


def test_stage2_root_norm_exact():
    m = load("mixed_23_field")
    alg = alg_value(m)
    c = alg.candidates[0]
    sched = build_schedule(m, c.phi_q1, c.q1, 0.02, 10, c.tree)
    for seed in (1, 2, 3):
        H = sample_hamiltonian(m, 150, seed)
        rng = algorithm_rng(seed)
        try:
            s1 = stage1_run(H, m, c.phi_q1, 10, rng)
            s2 = stage2_run(H, m, s1, sched, rng)
        except NumericBlowup:
            continue
        assert s2.overlap[0, 0, 0] == pytest.approx(c.phi_q1[0], abs=1e-12)
        assert overlaps(H, s2.output, s2.output)[0] == pytest.approx(1.0, abs=1e-12)


def test_report_deterministic():
    m = load("quadratic_two_species")
    a = run_full(m, 300, seeds=[3, 4]).to_dict()
    b = run_full(m, 300, seeds=[4, 3]).to_dict()
    assert json.dumps(a) == json.dumps(b)


def test_threads_do_not_change_result():
    m = load("quadratic_two_species")
    a = run_full(m, 300, seeds=[3, 4, 5]).to_dict()
    b = run_full(m, 300, seeds=[3, 4, 5], threads=3).to_dict()
    assert json.dumps(a) == json.dumps(b)


def test_quadratic_field_skips_stage2():
    rep = run_full(load("quadratic_two_species"), 200, seeds=[1])
    assert not rep.stage2_ran
    assert rep.reports[0].stage2_overlap is None


@pytest.mark.slow
@pytest.mark.xfail(
    strict=True,
    reason="Stage I targets a solvable point where the iteration is critical; at N=400 five of seeds 17-24 diverge",
)
def test_cubic_field_desk_run():
    m = load("mixed_23_field")
    rep = run_full(m, 400, 0.05, 30, seeds=range(17, 25))
    assert rep.mean_abs_gap <= 0.15


@pytest.fixture(scope="module")
def quadratic_ladder():
    m = load("quadratic_two_species")
    alg = alg_value(m)
    out = {}
    for N in (400, 800, 1600):
        rep = run_full(m, N, 0.05, 30, seeds=range(17, 25), alg=alg)
        lag = np.mean([r.stage1_lag for r in rep.reports], axis=0)
        out[N] = (rep.mean_abs_gap, float(np.max(np.abs(lag[1:] - rep.predicted_stage1[1:]))))
    return out


def test_energy_gap_shrinks_with_n(quadratic_ladder):
    gaps = [quadratic_ladder[N][0] for N in (400, 800, 1600)]
    assert gaps[0] > gaps[1] > gaps[2]


def test_overlap_deviation_rate(quadratic_ladder):
    Ns = np.array([400, 800, 1600])
    dev = np.array([quadratic_ladder[N][1] for N in Ns])
    slope = np.polyfit(np.log(Ns), np.log(dev), 1)[0]
    assert -0.7 <= slope <= -0.3
