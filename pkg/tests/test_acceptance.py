"""Release acceptance gate: one test per criterion, one PASS/FAIL line each.

These tests duplicate a few unit-test oracles on purpose: the gate has to be
readable top to bottom as the release checklist, independent of the rest of
the suite. Desk-scale numbers (dataset sizes, model widths) are chosen so the
whole file runs on a single CPU core.
"""

import dataclasses
import json
import math

import numpy as np
import pytest
import torch

from filterlab.bayes import FilterConfig, jacobians, run_filter
from filterlab.bench import (
    NeuralRunConfig,
    emit_report,
    evaluate_bayes,
    evaluate_neural,
    evaluation_context,
    run_canonical,
    train_neural,
    tune_inflation,
)
from filterlab.data import apply_mismatch, generate_dataset, save_dataset
from filterlab.neural import (
    HyperParams,
    NeuralFilterModel,
    SaPContext,
    estimate_trajectory,
    make_windows,
    n_segments,
    save_checkpoint,
    segment,
    segment_and_normalize,
    desegment,
    window_loss,
)
from filterlab.neural.sap import BOS_ID
from filterlab.systems import (
    make_system,
    sample_initial,
    simulate,
    step_deterministic,
)

DESK = dict(d_model=64, head_hidden=128, n_layers=2, n_heads=2, stride=4, lr=1e-3)


def report(num, ok, detail):
    print(f"criterion {num:02d}: {'PASS' if ok else 'FAIL'} ({detail})")
    return ok


# ---------------------------------------------------------------------------
# Shared datasets and trained models (expensive; built once per session)


@pytest.fixture(scope="session")
def ds_selkov():
    return generate_dataset(make_system("selkov"), n_traj=50, traj_len=200, master_seed=0)


@pytest.fixture(scope="session")
def ds_oscillator():
    return generate_dataset(
        make_system("oscillator"), n_traj=50, traj_len=200, master_seed=0
    )


@pytest.fixture(scope="session")
def ds_hopf():
    return generate_dataset(make_system("hopf"), n_traj=50, traj_len=200, master_seed=0)


@pytest.fixture(scope="session")
def ds_hopf_transfer():
    return generate_dataset(make_system("hopf"), n_traj=50, traj_len=200, master_seed=1)


@pytest.fixture(scope="session")
def ds_lorenz96():
    return generate_dataset(
        make_system("lorenz96"), n_traj=50, traj_len=200, master_seed=0
    )


@pytest.fixture(scope="session")
def selkov_neural(ds_selkov):
    """Context-free neural filter trained 10 epochs; shared by criteria 6 and 8."""
    cfg = NeuralRunConfig(variant="llm-filter-o", epochs=10, **DESK)
    model, _ = train_neural(ds_selkov, cfg, seed=0)
    base_rmse, _ = evaluate_neural(model, None, ds_selkov)
    return model, base_rmse


# ---------------------------------------------------------------------------
# 1. KF oracle equivalence


def test_criterion_01_kf_oracle():
    sys = make_system("tracking")
    traj = simulate(sys, np.zeros(4), 200, seed=11)

    # Independent textbook recursion, written the slow obvious way.
    f, h = jacobians(sys, sys.init_mean)
    q, r = sys.step_process_cov, sys.obs_cov
    mean, cov = sys.init_mean.copy(), np.eye(4)
    naive = []
    for y in traj.observations:
        mean = f @ mean
        cov = f @ cov @ f.T + q
        s = h @ cov @ h.T + r
        k = cov @ h.T @ np.linalg.inv(s)
        mean = mean + k @ (y - h @ mean)
        cov = (np.eye(4) - k @ h) @ cov
        naive.append(mean.copy())
    naive = np.array(naive)

    kf_est, _ = run_filter("kf", traj, sys)
    ekf_est, _ = run_filter("ekf", traj, sys)
    kf_gap = np.abs(kf_est - naive).max()
    ekf_gap = np.abs(ekf_est - kf_est).max()
    ok = kf_gap < 1e-10 and ekf_gap < 1e-12
    assert report(1, ok, f"kf vs naive {kf_gap:.2e}, ekf vs kf {ekf_gap:.2e}")


# ---------------------------------------------------------------------------
# 2. EnKF -> KF convergence


def test_criterion_02_enkf_convergence():
    sys = make_system("tracking")
    sizes = (100, 1000, 10000)
    gaps = {n: [] for n in sizes}
    kf_rmses = []
    for seed in range(10):
        x0 = sample_initial(sys, np.random.default_rng(seed))
        traj = simulate(sys, x0, 200, seed=seed)
        kf_est, _ = run_filter("kf", traj, sys)
        kf_rmse = float(np.sqrt(np.mean((kf_est - traj.states) ** 2)))
        kf_rmses.append(kf_rmse)
        for n in sizes:
            est, _ = run_filter(
                "enkf", traj, sys, FilterConfig(n_ensemble=n), seed=seed
            )
            rm = float(np.sqrt(np.mean((est - traj.states) ** 2)))
            gaps[n].append(abs(rm - kf_rmse))
    means = [float(np.mean(gaps[n])) for n in sizes]
    rel_final = means[-1] / float(np.mean(kf_rmses))
    ok = means[0] > means[1] > means[2] and rel_final < 0.03
    assert report(
        2,
        ok,
        f"mean gaps {means[0]:.4f} > {means[1]:.4f} > {means[2]:.4f}, "
        f"final rel {rel_final:.3%}",
    )


# ---------------------------------------------------------------------------
# 3. PF vs brute-force grid Bayes filter on a 1-D nonlinear system


def test_criterion_03_pf_grid_oracle():
    base = make_system("tracking")
    sys = dataclasses.replace(
        base,
        name="sin1d",
        state_dim=1,
        obs_dim=1,
        drift=np.sin,
        obs_matrix=np.eye(1),
        process_cov=np.eye(1),
        obs_cov=np.eye(1),
        step_noise_scale=1.0,
        init_mean=np.zeros(1),
        init_mean_jitter_std=0.0,
        burn_in=0,
        dt=0.1,
        discretization="euler",
        drift_matrix=None,
    )
    traj = simulate(sys, np.array([0.3]), n_steps=50, seed=123)

    # Discrete Bayes recursion on a 2001-point grid: predict through the
    # Gaussian transition kernel, multiply by the likelihood, renormalize.
    grid = np.linspace(-30.0, 30.0, 2001)
    fgrid = grid + sys.dt * np.sin(grid)
    trans = np.exp(-0.5 * (grid[:, None] - fgrid[None, :]) ** 2)
    trans /= trans.sum(axis=0, keepdims=True)
    p = np.exp(-0.5 * grid**2)
    p /= p.sum()
    grid_means = []
    for t in range(len(traj)):
        p = trans @ p
        p *= np.exp(-0.5 * (traj.observations[t, 0] - grid) ** 2)
        p /= p.sum()
        grid_means.append(float(grid @ p))
    grid_means = np.array(grid_means)

    # Monte-Carlo standard error from independent PF replicates.
    reps = np.array(
        [
            run_filter("pf", traj, sys, FilterConfig(n_particles=50000), seed=s)[0][:, 0]
            for s in range(8)
        ]
    )
    se = reps.std(axis=0, ddof=1) / math.sqrt(len(reps))
    z = np.abs(reps.mean(axis=0) - grid_means) / se
    ok = bool((z <= 3.0).all())
    assert report(3, ok, f"max |z| {z.max():.2f} over {len(traj)} steps")


# ---------------------------------------------------------------------------
# 4. RK4 observed order


def test_criterion_04_rk4_order():
    errors = []
    for dt in (0.1, 0.05, 0.025, 0.0125):
        exp_sys = dataclasses.replace(
            make_system("selkov", {"dt": dt}), drift=lambda x: x
        )
        x = np.ones(2)
        for _ in range(round(1.0 / dt)):
            x = step_deterministic(exp_sys, x)
        errors.append(abs(x[0] - math.e))
    orders = [math.log2(errors[i] / errors[i + 1]) for i in range(3)]
    ok = min(orders) >= 3.9
    assert report(4, ok, "orders " + ", ".join(f"{o:.3f}" for o in orders))


# ---------------------------------------------------------------------------
# 5. Canonical Bayes reproduction (loose bands)


def test_criterion_05_canonical_bands(ds_selkov, ds_oscillator, ds_hopf, ds_lorenz96):
    targets = {"selkov": 0.5978, "oscillator": 0.5505, "hopf": 0.6322}
    datasets = {"selkov": ds_selkov, "oscillator": ds_oscillator, "hopf": ds_hopf}
    details, ok = [], True
    for name, target in targets.items():
        inflation = tune_inflation(datasets[name], "enkf")
        err, _ = evaluate_bayes(datasets[name], "enkf", FilterConfig(inflation=inflation))
        in_band = 0.75 * target <= err <= 1.25 * target
        ok = ok and in_band
        details.append(f"{name} {err:.4f} (target {target}, infl {inflation:g})")
    inflation = tune_inflation(ds_lorenz96, "enkf")
    l96_enkf, _ = evaluate_bayes(ds_lorenz96, "enkf", FilterConfig(inflation=inflation))
    l96_pf, _ = evaluate_bayes(ds_lorenz96, "pf")
    ok = ok and l96_enkf > 3.0 and l96_pf > 3.0
    details.append(f"lorenz96 enkf {l96_enkf:.2f} pf {l96_pf:.2f}")
    assert report(5, ok, "; ".join(details))


# ---------------------------------------------------------------------------
# 6. Neural filter beats the raw-observation baseline


def test_criterion_06_neural_beats_observations(ds_selkov, selkov_neural):
    _, base_rmse = selkov_neural
    obs_errors = [
        np.sqrt(np.mean((t.states[39:] - t.observations[39:]) ** 2))
        for t in ds_selkov.by_split("test")
    ]
    obs_rmse = float(np.mean(obs_errors))
    ok = base_rmse < 0.9
    assert report(6, ok, f"neural {base_rmse:.4f} vs observations {obs_rmse:.4f}")


# ---------------------------------------------------------------------------
# 7. SaP mechanism check (oscillator -> hopf transfer)


def test_criterion_07_sap_transfer(ds_oscillator, ds_hopf_transfer):
    results = {}
    for variant in ("llm-filter", "llm-filter-o"):
        cfg = NeuralRunConfig(variant=variant, epochs=20, **DESK)
        model, _ = train_neural(ds_oscillator, cfg, seed=0)
        ctx = (
            evaluation_context(ds_hopf_transfer, cfg, seed=0)
            if variant == "llm-filter"
            else None
        )
        results[variant], _ = evaluate_neural(model, ctx, ds_hopf_transfer)
    ok = results["llm-filter"] < results["llm-filter-o"]
    assert report(
        7,
        ok,
        f"SaP {results['llm-filter']:.4f} vs no-context {results['llm-filter-o']:.4f}",
    )


# ---------------------------------------------------------------------------
# 8. Mismatch robustness direction at OCER=100


def test_criterion_08_mismatch_direction(ds_selkov, selkov_neural):
    mismatched = apply_mismatch(ds_selkov, 100.0, seed=0)

    def enkf_rmse(ds):
        # Per-trajectory so a diverged run counts as a failure instead of
        # crashing the measurement; divergence is degradation too.
        sys = make_system(ds.system_name)
        errs, failures = [], 0
        for i, traj in enumerate(ds.by_split("test")):
            try:
                est, _ = run_filter("enkf", traj, sys, seed=i)
                errs.append(np.sqrt(np.mean((traj.states[39:] - est[39:]) ** 2)))
            except RuntimeError:
                failures += 1
        return float(np.mean(errs)), failures

    enkf_base, _ = enkf_rmse(ds_selkov)
    enkf_bad, enkf_failures = enkf_rmse(mismatched)
    enkf_factor = enkf_bad / enkf_base

    model, neural_base = selkov_neural
    neural_bad, _ = evaluate_neural(model, None, mismatched)
    neural_factor = neural_bad / neural_base

    ok = enkf_factor > 3.0 and neural_factor < 2.0
    # The neural half of this bound is not reachable at this noise
    # calibration: matched-noise Bayes filters told the true OCER score
    # ~1.8 RMSE on this data, and the neural filter's degraded error is
    # already at that floor, so factor < 2 would need a base RMSE >= 0.9
    # -- the exact level criterion 6 requires it to beat.
    assert report(
        8,
        ok,
        f"enkf x{enkf_factor:.2f} (+{enkf_failures} diverged; need >3), "
        f"neural x{neural_factor:.2f} (need <2; "
        f"base {neural_base:.3f}, degraded {neural_bad:.3f})",
    )


# ---------------------------------------------------------------------------
# 9. Architecture invariant suite


def test_criterion_09_architecture_invariants():
    rng = np.random.default_rng(0)

    # Segmentation round trip is exact, and N_s * L = T + pad holds.
    win = rng.normal(size=(40, 3))
    segs = segment(win, 20)
    assert np.array_equal(segs.reshape(-1, 3)[:40], win)
    batch = segment_and_normalize(win, 20)
    assert np.allclose(desegment(batch, 40), win, atol=1e-12)
    for _ in range(200):
        t = int(rng.integers(1, 513))
        length = int(rng.integers(1, 513))
        ns, pad = n_segments(t, length)
        assert ns * length == t + pad and 0 <= pad < length

    # Causal masking: a future-step perturbation cannot reach earlier blocks.
    hp = HyperParams(
        obs_dim=2, state_dim=2, window_len=12, segment_len=4,
        d_model=16, head_hidden=16, head_depth=2, n_layers=2, n_heads=2,
    )
    model = NeuralFilterModel(hp, seed=0)
    ctx = SaPContext(
        instruction_text="x", example_text="", token_ids=(BOS_ID, 1, 2)
    )
    x = torch.randn(1, 12, 2)
    y = x.clone()
    y[:, 9, :] += 1.0
    with torch.no_grad():
        a, b = model(x, ctx), model(y, ctx)
    assert torch.allclose(a[:, :8, :], b[:, :8, :], atol=1e-6)
    assert not torch.allclose(a[:, 8:, :], b[:, 8:, :], atol=1e-6)

    # Gradient finite-difference check in float64.
    hp64 = dataclasses.replace(hp, window_len=8, d_model=8, n_layers=1)
    model64 = NeuralFilterModel(hp64, seed=1).double()
    xs = torch.randn(2, 8, 2, dtype=torch.float64)
    tgt = torch.randn(2, 8, 2, dtype=torch.float64)

    def loss_fn():
        return window_loss(model64.forward_standardized(xs, ctx), tgt)

    loss_fn().backward()
    worst = 0.0
    for _, p in model64.named_parameters():
        if p.grad is None:
            continue
        flat, gflat = p.view(-1), p.grad.view(-1)
        idx = int(rng.integers(flat.numel()))
        h = 1e-6 * max(1.0, abs(flat[idx].item()))
        with torch.no_grad():
            orig = flat[idx].item()
            flat[idx] = orig + h
            up = loss_fn().item()
            flat[idx] = orig - h
            down = loss_fn().item()
            flat[idx] = orig
        fd = (up - down) / (2 * h)
        grad = gflat[idx].item()
        worst = max(worst, abs(fd - grad) / max(abs(fd), abs(grad), 1e-8))
    assert worst < 1e-3

    # Loss identity and shape contracts.
    pred = torch.randn(4, 8, 2)
    assert window_loss(pred, pred).item() == 0.0
    out = model(x, None)
    assert out.shape == (1, 12, 2)
    assert report(9, True, f"grad fd worst rel err {worst:.2e}")


# ---------------------------------------------------------------------------
# 10. Runtime scaling shape


def test_criterion_10_runtime_shape():
    def trajectory(name):
        sys = make_system(name)
        x0 = sample_initial(sys, np.random.default_rng(0))
        return sys, simulate(sys, x0, n_steps=200, seed=0)

    def enkf_ms(name):
        sys, traj = trajectory(name)
        cfg = FilterConfig(n_ensemble=1000)
        run_filter("enkf", traj, sys, cfg, seed=0)  # warm pass
        return float(
            np.median(
                [run_filter("enkf", traj, sys, cfg, seed=0)[1] for _ in range(3)]
            )
        )

    def neural_ms(name):
        # A backbone-dominated width, so per-step cost reflects the
        # sequence model rather than the dimension-dependent embed/project
        # layers (the regime the stable-runtime claim is about).
        sys, traj = trajectory(name)
        cfg = NeuralRunConfig(d_model=512, head_hidden=1024, n_layers=8, n_heads=8)
        model = NeuralFilterModel(cfg.hyper(sys.obs_dim, sys.state_dim), seed=0)
        estimate_trajectory(model, None, traj)  # warm pass
        return float(
            np.median([estimate_trajectory(model, None, traj)[1] for _ in range(5)])
        )

    enkf_ratio = enkf_ms("lorenz96") / enkf_ms("selkov")
    neural_growth = neural_ms("lorenz96") / neural_ms("selkov") - 1.0
    ok = enkf_ratio > 2.0 and neural_growth < 0.5
    assert report(
        10, ok, f"enkf x{enkf_ratio:.1f} (need >2), neural +{neural_growth:.1%} (need <50%)"
    )


# ---------------------------------------------------------------------------
# 11. Byte-identical determinism


def test_criterion_11_determinism(tmp_path):
    # Datasets: identical bytes for every file under a fixed master seed.
    sys = make_system("tracking")
    for d in ("a", "b"):
        ds = generate_dataset(sys, n_traj=10, traj_len=50, master_seed=7)
        save_dataset(ds, tmp_path / f"ds_{d}")
    ds_files = sorted(p.name for p in (tmp_path / "ds_a").iterdir())
    assert ds_files == sorted(p.name for p in (tmp_path / "ds_b").iterdir())
    for name in ds_files:
        assert (tmp_path / "ds_a" / name).read_bytes() == (
            tmp_path / "ds_b" / name
        ).read_bytes()

    # Checkpoints: identical parameter blocks after identical training runs.
    data = generate_dataset(make_system("selkov"), n_traj=12, traj_len=60, master_seed=3)
    cfg = NeuralRunConfig(
        variant="llm-filter-o", epochs=2, window_len=8, segment_len=4,
        d_model=16, head_hidden=16, n_layers=1, n_heads=2, stride=4,
    )
    for d in ("a", "b"):
        model, _ = train_neural(data, cfg, seed=5)
        save_checkpoint(model, tmp_path / f"ck_{d}")
    for name in ("header.json", "manifest.json", "params.bin"):
        assert (tmp_path / f"ck_{d}" / name).read_bytes() == (
            tmp_path / "ck_a" / name
        ).read_bytes()

    # Reports: identical modulo wall-clock metadata (timestamp and the
    # measured per-step runtimes, which are clock readings, not outputs).
    reports = []
    for d in ("a", "b"):
        rep = run_canonical({"tracking": generate_dataset(sys, 10, 50, 7)}, ["kf"], seeds=[0])
        emit_report(rep, tmp_path / f"rep_{d}")
        blob = json.loads((tmp_path / f"rep_{d}" / "report.json").read_text())
        blob.pop("created_at", None)
        for record in blob["records"]:
            record.pop("runtime_ms_per_step", None)
        reports.append(blob)
    assert reports[0] == reports[1]
    assert report(11, True, "datasets, checkpoints, reports byte-stable")
