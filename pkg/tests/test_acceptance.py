"""Acceptance suite: one test per criterion, summarized as PASS/FAIL lines at the end of the run."""

import csv
import json
import math
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from guided_bfn import verify
from guided_bfn.analysis import NonInvariantPredictor, check_equivariance, improvement_metric, random_rotation
from guided_bfn.bfn import unconditional_sample
from guided_bfn.cli import cmd_compare, cmd_run, cmd_verify
from guided_bfn.config import load_config
from guided_bfn.diffusion import DiffusionSchedule, categorical_posterior, targetopt_sample
from guided_bfn.experiment import build_components, run_chain, terminal_score
from guided_bfn.guidance import GuidanceConfig, beta_nll_loss, cbyg_sample, nll_loss, variance_decompose
from guided_bfn.rng import SeededStream
from guided_bfn.state import one_hot
from guided_bfn.toy import FiniteDifferencePredictor, attractor_output_model, make_toy_world, toy_ensemble_predictor

from conftest import PointMassDenoiser, random_molecule, random_simplex, reverse_marginals

THRESHOLDS = json.loads((Path(__file__).parent / "calibration" / "thresholds.json").read_text())
ALPHA = 0.05


@pytest.mark.criterion(1, "gradient-form equivalence")
def test_gradient_form_equivalence(detail):
    start = time.perf_counter()
    cont, disc = verify.check_gradient_form(n_instances=1000)
    elapsed = time.perf_counter() - start
    detail.append(f"continuous {cont:.1e}, discrete {disc:.1e}, {elapsed:.2f}s")
    assert cont < 1e-10 and disc < 1e-12 and elapsed < 5.0


@pytest.mark.criterion(2, "tweedie conjugate mean")
def test_tweedie(detail):
    err = verify.check_tweedie(n_instances=1000)
    detail.append(f"max error {err:.1e}")
    assert err < 1e-10


@pytest.mark.criterion(3, "unguided reduction")
def test_unguided_reduction(detail, world, model, predictor):
    cfg = GuidanceConfig(lambda_coords=0.0, lambda_types=0.0)
    sched = load_config("default").schedule.build()
    assert sched.n_steps == 100
    for seed in range(20):
        g_mol, g_rec = cbyg_sample(model, predictor, world.pocket, sched, cfg, SeededStream(seed), default_target=0.4)
        u_mol, u_rec = unconditional_sample(model, world.pocket, sched, SeededStream(seed))
        assert g_mol.coords.tobytes() == u_mol.coords.tobytes()
        assert g_mol.types.tobytes() == u_mol.types.tobytes()
        for a, b in zip(g_rec, u_rec):
            assert a.theta_x.tobytes() == b.theta_x.tobytes() and a.theta_v.tobytes() == b.theta_v.tobytes()
            assert a.rho == b.rho
    detail.append("20 seeds bitwise equal")


@pytest.mark.criterion(4, "exact-tilt oracles")
def test_exact_tilt(detail):
    lin = verify.check_linear_tilt(n_instances=200)
    quad = verify.check_quadratic_tilt(n_instances=200)
    detail.append(f"discrete {lin:.1e}, continuous {quad:.1e}")
    assert lin < 1e-10 and quad < 1e-10


@pytest.mark.criterion(5, "rotation equivariance")
def test_equivariance(detail, world, predictor):
    rng = np.random.default_rng(50)
    shipped = {"ensemble": predictor, "finite-difference": FiniteDifferencePredictor(predictor)}
    for name, pred in shipped.items():
        worst_v = worst_g = 0.0
        for seed in range(20):
            m = random_molecule(rng, world.n_atoms, world.n_classes)
            rep = check_equivariance(pred, m, world.pocket, random_rotation(500 + seed), 0.3)
            worst_v, worst_g = max(worst_v, rep.value_residual), max(worst_g, rep.grad_residual)
        detail.append(f"{name} value {worst_v:.1e} grad {worst_g:.1e}")
        assert worst_v < 1e-10 and worst_g < 1e-8
    bad = NonInvariantPredictor(predictor)
    fails = 0
    for seed in range(20):
        m = random_molecule(rng, world.n_atoms, world.n_classes)
        rep = check_equivariance(bad, m, world.pocket, random_rotation(500 + seed), 0.3)
        fails += rep.value_residual >= 1e-10 or rep.grad_residual >= 1e-8
    detail.append(f"control fails {fails}/20")
    assert fails >= 19


@pytest.mark.criterion(6, "variance decomposition")
def test_variance_decomposition(detail):
    rng = np.random.default_rng(60)
    for _ in range(1000):
        m = int(rng.integers(1, 20))
        p = variance_decompose(list(zip(rng.normal(0, 3, m), rng.uniform(1e-3, 5.0, m))))
        assert p.total == p.aleatoric + p.epistemic
    # law of total variance: one label per member drawn from that member's Gaussian
    mus = rng.normal(0.5, 1.2, 10_000)
    s2 = rng.uniform(0.2, 1.0, 10_000)
    labels = rng.normal(mus, np.sqrt(s2))
    p = variance_decompose(list(zip(mus, s2)))
    rel = abs(labels.var() / p.total - 1)
    detail.append(f"MC relative gap {rel:.3f}")
    assert rel < 0.04


@pytest.mark.criterion(7, "loss identities")
def test_losses(detail):
    rng = np.random.default_rng(70)
    worst = 0.0
    for _ in range(1000):
        y, mu = rng.normal(0, 3, 2)
        s2 = rng.uniform(1e-3, 10)
        worst = max(worst, abs(nll_loss(y, mu, s2) - beta_nll_loss(y, mu, s2, 0.0)))
    assert worst == 0.0
    hand = [
        (nll_loss(0.4, 0.4, 1.0), 0.0),
        (nll_loss(1.0, 0.0, 1.0), 0.5),
        (nll_loss(2.0, 0.0, 2.0), math.log(2) / 2 + 1),
        (beta_nll_loss(2.0, 0.0, 2.0, 1.0), 2 * (math.log(2) / 2 + 1)),
        (beta_nll_loss(-0.3, 0.9, 1.0, 0.5), nll_loss(-0.3, 0.9, 1.0)),
    ]
    gap = max(abs(a - b) for a, b in hand)
    assert abs(nll_loss(2.0, 0.0, 2.0) - 1.3466) < 1e-4 and abs(beta_nll_loss(2.0, 0.0, 2.0, 1.0) - 2.6931) < 1e-4
    detail.append(f"beta=0 gap {worst:.0e}, hand gap {gap:.0e}")
    assert gap < 1e-12


@pytest.mark.criterion(8, "simplex and precision ledgers")
@pytest.mark.slow
def test_ledgers(detail):
    violations = 0
    base = load_config("default")
    for sampler in ("cbyg", "bfn-unguided", "targetopt-xt", "targetopt-x0"):
        cfg = replace(base, sampler=sampler, n_chains=50, schedule=replace(base.schedule, n_steps=200))
        parts = build_components(cfg)
        alphas = cfg.schedule.build().alpha_coords
        for i in range(cfg.n_chains):
            mol, recs = run_chain(cfg, i, parts)
            arrays = [mol.types] + [r.theta_v for r in recs] + [r.v_hat for r in recs]
            for p in arrays:
                violations += int(np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1) > 1e-9) or not np.all(np.isfinite(p)))
            if sampler.startswith("targetopt"):
                continue
            rho = cfg.schedule.rho_0
            for r, a in zip(recs, alphas):
                violations += int(r.rho != rho + a)
                rho = r.rho
    detail.append(f"{violations} violations over 4 x 50 chains x 200 steps")
    assert violations == 0


@pytest.mark.criterion(9, "guidance effectiveness")
@pytest.mark.slow
def test_guidance_effectiveness(detail):
    start = time.perf_counter()
    guided = replace(load_config("default"), base_seed=0, n_chains=50)
    assert (guided.guidance.lambda_coords, guided.guidance.lambda_types, guided.n_steps) == (40.0, 40.0, 100)
    unguided = replace(guided, sampler="bfn-unguided")
    parts = build_components(guided)
    g = [terminal_score(run_chain(guided, i, parts)[0], parts.world) for i in range(50)]
    u = [terminal_score(run_chain(unguided, i, parts)[0], parts.world) for i in range(50)]
    delta, win = improvement_metric(g, u)
    elapsed = time.perf_counter() - start
    threshold = THRESHOLDS["win_rate_threshold"]
    detail.append(f"win rate {win:.2f} vs frozen {threshold}, mean delta {delta:.4f}, {elapsed:.0f}s")
    assert win >= threshold


def _read_comparison(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return rows


@pytest.mark.criterion(10, "final-quarter score variance, guided BFN vs x0-guided diffusion")
@pytest.mark.slow
def test_score_stability(detail, tmp_path):
    assert load_config("default").n_chains == 20 and load_config("targetopt_x0").n_chains == 20
    assert cmd_run("default", str(tmp_path / "cbyg")) == 0
    assert cmd_run("targetopt_x0", str(tmp_path / "x0")) == 0
    assert cmd_compare([str(tmp_path / "cbyg"), str(tmp_path / "x0")], str(tmp_path / "cmp")) == 0
    rows = _read_comparison(tmp_path / "cmp" / "comparison.csv")
    quarter = rows[-max(1, len(rows) // 4):]
    v_cbyg = np.mean([float(r["var_score[cbyg]"]) for r in quarter])
    v_x0 = np.mean([float(r["var_score[targetopt-x0]"]) for r in quarter])
    summary = json.loads((tmp_path / "cmp" / "summary.json").read_text())
    by_label = {a["label"]: a["final_quarter_score_variance"] for a in summary["arms"]}
    assert math.isclose(by_label["cbyg"], v_cbyg, rel_tol=1e-12) and math.isclose(by_label["targetopt-x0"], v_x0, rel_tol=1e-12)
    detail.append(f"cbyg {v_cbyg:.4f} < targetopt-x0 {v_x0:.4f}")
    assert v_cbyg < v_x0


def _marginal_tests(schedule, reference, n_chains, seed_base, detail, label):
    """Welch t and two-sided F tests of chain marginals against reference draws.

    ``reference(i)`` returns (mean, variance) of the closed-form marginal for record ``i``.
    Entries are standardized by the closed-form mean and pooled; checkpoints are
    Bonferroni-corrected.
    """
    world = make_toy_world(0)
    pred = toy_ensemble_predictor(world)
    x0 = world.library.templates[0].coords
    den = PointMassDenoiser(x0, world.library.templates[0].types)
    cfg = GuidanceConfig(lambda_coords=0.0, lambda_types=0.0, target_label=0.4)
    big_t = schedule.n_steps
    checkpoints = [0, big_t // 4, big_t // 2, 3 * big_t // 4, big_t - 2]
    samples = {i: [] for i in checkpoints}
    finals = []
    for c in range(n_chains):
        mol, recs = targetopt_sample(den, pred, world.pocket, schedule, cfg, "x0", SeededStream(seed_base + c))
        for i in checkpoints:
            samples[i].append(recs[i].theta_x)
        finals.append(mol.coords)
    ref_rng = np.random.default_rng(seed_base + 10_000)
    level = ALPHA / (2 * len(checkpoints))
    worst = 1.0
    for i in checkpoints:
        mean, var = reference(i)
        chain = (np.array(samples[i]) - mean).ravel()
        ref = ref_rng.normal(0.0, math.sqrt(var), chain.size)
        p_mean = stats.ttest_ind(chain, ref, equal_var=False).pvalue
        f = chain.var(ddof=1) / ref.var(ddof=1)
        cdf = stats.f.cdf(f, chain.size - 1, ref.size - 1)
        p_var = 2 * min(cdf, 1 - cdf)
        worst = min(worst, p_mean, p_var)
        assert p_mean > level and p_var > level, f"{label} record {i}: p_mean {p_mean:.3g}, p_var {p_var:.3g}"
    # the last step is noiseless and lands on the clean state
    assert all(np.allclose(f, x0, atol=1e-12) for f in finals)
    detail.append(f"{label} min p {worst:.3f} (level {level:.4f})")


@pytest.mark.criterion(11, "diffusion baseline sanity")
@pytest.mark.slow
def test_diffusion_baseline(detail):
    s = DiffusionSchedule(np.array([1e-300, 1e-300]))
    rng = np.random.default_rng(110)
    v_t = one_hot([0, 1, 2], 3)
    v0 = random_simplex(rng, 3, 3)
    clean_err = np.max(np.abs(categorical_posterior(v_t, v0, 2, s) - v_t * v0 / (v_t * v0).sum(axis=1, keepdims=True)))
    noise_err = np.max(np.abs(categorical_posterior(v_t, v0, 2, DiffusionSchedule(np.array([1 - 1e-16, 1 - 1e-16]))) - 1 / 3))
    detail.append(f"posterior limits {max(clean_err, noise_err):.0e}")
    assert clean_err < 1e-12 and noise_err < 1e-12

    world = make_toy_world(0)
    x0 = world.library.templates[0].coords

    # shipped beta range: compare against the exact marginals of the reverse recursion
    shipped = load_config("targetopt_x0").diffusion.build(100)
    means, variances = reverse_marginals(shipped, x0)
    _marginal_tests(shipped, lambda i: (means[i], variances[i]), 200, 0, detail, "recursion")

    # a schedule that fully noises by T: the reverse chain reproduces the forward marginals
    full = DiffusionSchedule.linear(100, 1e-4, 0.2)
    assert full.alpha_bar(100) < 1e-4

    def forward(i):
        t_prev = 100 - i - 1
        ab = full.alpha_bar(t_prev)
        return math.sqrt(ab) * x0, 1 - ab

    _marginal_tests(full, forward, 200, 1000, detail, "forward")


@pytest.mark.criterion(12, "end-to-end determinism")
@pytest.mark.slow
def test_determinism(detail, tmp_path, capsys):
    cfg = tmp_path / "det.toml"
    cfg.write_text((Path(__file__).parents[1] / "src" / "guided_bfn" / "configs" / "default.toml").read_text().replace("n_chains = 20", "n_chains = 4"))
    assert cmd_run(str(cfg), str(tmp_path / "a")) == 0
    assert cmd_run(str(cfg), str(tmp_path / "b")) == 0
    for name in sorted(p.name for p in (tmp_path / "a").iterdir()):
        if name.endswith((".jsonl", ".mol")):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    start = time.perf_counter()
    code = cmd_verify()
    elapsed = time.perf_counter() - start
    capsys.readouterr()
    detail.append(f"verify exit {code} in {elapsed:.1f}s")
    assert code == 0 and elapsed < 300
