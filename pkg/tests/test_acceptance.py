"""Acceptance criteria 1-9, each reported as a single PASS/FAIL line."""
import time

import numpy as np
from dataclasses import replace

from koopmpc.dictionary import build_monomial_dictionary
from koopmpc.edmd import BilinearKoopmanModel, SnapshotSet, fit_autonomous
from koopmpc.harness import plateau
from koopmpc.harness.closed_loop import fit_model
from koopmpc.observer import observer_init, observer_record, observer_update

import test_properties
from test_mpc import fd_gradient, gradient_instance, qp_instance


def _runtime(run, scenario):
    started = time.perf_counter()
    fit_model(scenario)
    return time.perf_counter() - started + run.traces[run.key(scenario)].wall_time


def _scenario(run, kind, mode, eq="known"):
    return next(s for s in run.scenarios if run.key(s) == (kind, mode, eq))


def test_criterion_1_vdp_standard_plateau(vdp_suite, report):
    err = vdp_suite.traces[("bilinear", "standard", "known")].err_state
    level, ratio = plateau(err)
    runtime = _runtime(vdp_suite, _scenario(vdp_suite, "bilinear", "standard"))
    ok = ratio < 10 and 1e-7 <= level <= 1e-3 and runtime < 120
    report(1, ok, f"plateau {level:.3e} (range ratio {ratio:.3f}), runtime {runtime:.1f}s")
    assert ok


def test_criterion_2_vdp_offset_free_convergence(vdp_suite, report):
    err = vdp_suite.traces[("bilinear", "offset_free", "known")].err_state
    level, _ = plateau(vdp_suite.traces[("bilinear", "standard", "known")].err_state)
    ok = err[-1] < 1e-9 and err[-1] <= 1e-2 * level
    report(2, ok, f"final |x| {err[-1]:.3e} after {len(err)} steps, standard plateau {level:.3e}")
    assert ok


def test_criterion_3_safedmd_standard(vdp_suite, report):
    safe = vdp_suite.traces[("safedmd", "standard", "known")].err_state[-1]
    off = vdp_suite.traces[("bilinear", "offset_free", "known")].err_state[-1]
    ratio = safe / off
    ok = 0.1 <= ratio <= 10 and safe < 1e-8
    report(3, ok, f"SafEDMD final {safe:.3e} vs offset-free {off:.3e} (ratio {ratio:.3f})")
    assert ok


def test_criterion_4_edmdc_comparison(vdp_suite, report):
    bil, _ = plateau(vdp_suite.traces[("bilinear", "standard", "known")].err_state)
    edc, _ = plateau(vdp_suite.traces[("edmdc", "standard", "known")].err_state)
    off = vdp_suite.traces[("edmdc", "offset_free", "known")].err_state[-1]
    ok = edc >= bil and off < 1e-8
    report(4, ok, f"EDMDc plateau {edc:.3e} >= bilinear {bil:.3e}; EDMDc offset-free final {off:.3e}")
    assert ok


def test_criterion_5_four_tanks(four_tanks_suite, report):
    t = four_tanks_suite.traces
    known = t[("bilinear", "offset_free", "known")].err_output[-1]
    unknown = t[("bilinear", "offset_free", "unknown")].err_output[-1]
    std_known = t[("bilinear", "standard", "known")].err_output[-1]
    std_unknown = t[("bilinear", "standard", "unknown")].err_output[-1]
    runtimes = [_runtime(four_tanks_suite, s) for s in four_tanks_suite.scenarios]
    ok = known < 1e-6 and unknown < 1e-6 and std_unknown > std_known and max(runtimes) < 300
    report(5, ok, f"offset-free final output error known {known:.3e}, unknown {unknown:.3e}; "
                  f"standard unknown {std_unknown:.3e} > known {std_known:.3e}; "
                  f"slowest scenario {max(runtimes):.1f}s")
    assert ok


def _safedmd_like(rng):
    d = build_monomial_dictionary(2, 2)
    mats = []
    for _ in range(2):
        K = 0.2 * rng.normal(size=(d.size, d.size))
        K[0] = np.eye(d.size)[0]
        mats.append(K)
    return BilinearKoopmanModel(d, mats[0], (mats[1],), True)


def test_criterion_6_observer_deadbeat(report):
    rng = np.random.default_rng(6)
    model = _safedmd_like(rng)
    w_bar, v = np.array([0.04, -0.03]), np.array([1.0, 0.5])

    # constant mismatch, arbitrary prior estimate
    s = replace(observer_init(2), d_hat=np.array([3.0, -7.0]))
    x, u = np.array([0.3, -0.2]), np.array([0.1])
    s = observer_record(s, model, x, u)
    s = observer_update(s, model, model.predict(x, u) + w_bar)
    one_step = np.linalg.norm(s.d_hat - w_bar)

    s = observer_init(2)
    x = np.array([0.3, -0.2])
    for k in range(200):
        u = np.array([0.2 * np.cos(0.3 * k)])
        s = observer_record(s, model, x, u)
        x = model.predict(x, u) + w_bar + 0.5**k * v
        s = observer_update(s, model, x)
    decayed = np.linalg.norm(s.d_hat - w_bar)
    ok = one_step < 1e-12 and decayed < 1e-10
    report(6, ok, f"one-step |d - w| {one_step:.2e}, after 200 steps {decayed:.2e}")
    assert ok


def test_criterion_7_regression_oracle(report):
    rng = np.random.default_rng(7)
    worst_margin, worst_grad, worst_linear = np.inf, 0.0, 0.0
    for _ in range(100):
        n, degree = [(1, 1), (1, 2), (1, 3), (1, 4), (1, 5), (2, 1), (2, 2)][rng.integers(7)]
        d = build_monomial_dictionary(n, degree)
        count = int(rng.integers(1, 21))
        X = rng.uniform(-1, 1, size=(n, count))
        Y = np.sin(2 * X) + 0.3 * X**3
        K = fit_autonomous(d, SnapshotSet(X, Y, np.zeros(1)))
        PsiX, PsiY = d.lift(X), d.lift(Y)
        best = np.linalg.norm(K @ PsiX - PsiY)
        for j in range(100):
            C = K + rng.normal(size=K.shape) * 10.0 ** rng.uniform(-6, 0) if j % 2 else rng.normal(size=K.shape)
            worst_margin = min(worst_margin, np.linalg.norm(C @ PsiX - PsiY) + 1e-9 - best)
        worst_grad = max(worst_grad, np.linalg.norm(2 * (K @ PsiX - PsiY) @ PsiX.T))

        Lam = rng.normal(size=(n, n))
        Lam *= 0.9 / max(abs(np.linalg.eigvals(Lam)))
        Xl = rng.uniform(-1, 1, size=(n, d.size + 5))
        Kl = fit_autonomous(d, SnapshotSet(Xl, Lam @ Xl, np.zeros(1)))
        worst_linear = max(worst_linear, np.linalg.norm(Kl @ d.lift(Xl) - d.lift(Lam @ Xl)))
    ok = worst_margin >= 0 and worst_grad < 1e-8 and worst_linear < 1e-10
    report(7, ok, f"min competitor margin {worst_margin:.2e}, max gradient {worst_grad:.2e}, "
                  f"max linear residual {worst_linear:.2e}")
    assert ok


def test_criterion_8_ocp_oracles(report):
    rng = np.random.default_rng(8)
    worst_du = max(np.linalg.norm(sol.u_seq - oracle) for sol, oracle in (qp_instance(rng) for _ in range(50)))
    worst_rel = 0.0
    for i in range(50):
        prob, u = gradient_instance(rng, lifted=bool(i % 2))
        fd = fd_gradient(prob, u)
        worst_rel = max(worst_rel, np.linalg.norm(prob.gradient(u) - fd) / np.linalg.norm(fd))
    ok = worst_du < 1e-6 and worst_rel < 1e-5
    report(8, ok, f"max |du| vs condensed QP {worst_du:.2e}, max relative gradient error {worst_rel:.2e}")
    assert ok


def test_criterion_9_property_suites(report):
    suites = {
        "affinity": test_properties.test_koopman_interpolation_is_affine,
        "safedmd": test_properties.test_safedmd_structure,
        "project-lift": test_properties.test_project_lift_identity,
        "seed-determinism": test_properties.test_seed_determinism,
    }
    failed = []
    for name, prop in suites.items():
        try:
            prop()
        except Exception as exc:  # noqa: BLE001 - reported below
            failed.append(f"{name}: {type(exc).__name__}")
    ok = not failed
    report(9, ok, "4 property suites x 1000 cases" + ("" if ok else f"; failed {failed}"))
    assert ok
