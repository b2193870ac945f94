"""Acceptance suite: every criterion at its stated tolerance.

Each test prints one PASS/FAIL line with its wall time.  Statistical
tolerances are three standard errors unless the criterion pins something
tighter; fitted constants must be stable within 10% under grid refinement.
"""

import contextlib
import json
import math
import os
import time

import numpy as np
import pytest

from mheat.cli import load_config, run_config
from mheat.geometry import (
    Euclidean,
    Hyperbolic,
    Point,
    Sphere,
    TangentVector,
    Torus,
    const_field,
    coordinate_field,
    gaussian_bump_field,
    norm_squared_field,
    sin_coordinate_field,
    square_coordinate_field,
)
from mheat.semigroup import (
    HessianEstimatorConfig,
    estimate_grad,
    estimate_green_hess,
    estimate_hess,
    estimate_pt,
)
from mheat.spectral import random_spherical_polynomials, random_trig_polynomials
from mheat.verify import (
    BoundCheckConfig,
    check_gaffney,
    check_kernel_bounds,
    check_semigroup_bounds,
    check_weighted_l2,
    cz_scan,
    kato_functional,
)


@contextlib.contextmanager
def criterion(num: int, name: str):
    start = time.time()
    info = {}
    try:
        yield info
    except BaseException:
        print(f"FAIL criterion-{num:02d} {name} ({time.time() - start:.1f}s)")
        raise
    detail = info.get("detail", "")
    print(f"PASS criterion-{num:02d} {name} ({time.time() - start:.1f}s): {detail}")


def frame_vec(m, x, axis=0):
    F = m.frame(np.asarray(x.coords)[None, :])[0]
    return TangentVector(x, F[axis])


def test_criterion_01_derivative_formula():
    with criterion(1, "derivative-formula") as info:
        m = Torus(2)
        f = sin_coordinate_field(m)
        t, n, h = 0.5, 20000, 0.5 / 200
        worst = 0.0
        for i, x1 in enumerate([0.0, 0.7, 1.5, 3.0, 4.5]):
            x = Point([x1, 1.0])
            est = estimate_grad(m, f, x, frame_vec(m, x), t, n_paths=n, h=h,
                                seed=100 + i)
            exact = math.exp(-t) * math.cos(x1)
            err = abs(est.scalar - exact)
            assert err <= 3.0 * est.scalar_stderr, (x1, err, est.scalar_stderr)
            assert est.scalar_stderr <= 0.02
            worst = max(worst, err)
        info["detail"] = f"5 points, worst |err| = {worst:.2e}"


def test_criterion_02_hessian_estimators_flat():
    with criterion(2, "hessian-estimators-flat") as info:
        m = Euclidean(2)
        f = square_coordinate_field(m)
        x = Point([0.2, -0.4])
        v = frame_vec(m, x)
        t, n = 0.25, 50000
        bis = estimate_hess(m, f, x, v, v, t, mode="bismut", n_paths=n,
                            h=t / 100, seed=201)
        mix = estimate_hess(m, f, x, v, v, t, mode="mixed", n_paths=n,
                            h=t / 100, seed=202)
        assert abs(bis.scalar - 2.0) <= 3.0 * bis.scalar_stderr
        assert abs(mix.scalar - 2.0) <= 3.0 * mix.scalar_stderr + 1e-12
        comb = math.hypot(bis.scalar_stderr, mix.scalar_stderr)
        assert abs(bis.scalar - mix.scalar) <= 3.0 * comb + 1e-12
        info["detail"] = (f"bismut = {bis.scalar:.4f} (se {bis.scalar_stderr:.1e}), "
                          f"mixed = {mix.scalar:.4f} (se {mix.scalar_stderr:.1e})")


def test_criterion_03_sphere_eigenfunction_hessian():
    with criterion(3, "sphere-eigenfunction-hessian") as info:
        m = Sphere(2, 1.0)
        f = coordinate_field(m, axis=2)
        t, n = 0.5, 100000
        worst_rel = 0.0
        for i, z in enumerate([0.95, 0.8, 0.6, 0.3, 0.1]):
            r = math.sqrt(1.0 - z * z)
            x = Point(m.retract(np.array([[r, 0.0, z]]))[0])
            v = frame_vec(m, x)
            est = estimate_hess(m, f, x, v, v, t, mode="bismut", n_paths=n,
                                h=t / 200, seed=300 + i)
            exact = -math.exp(-1.0) * z
            err = abs(est.scalar - exact)
            assert err <= 3.0 * est.scalar_stderr, (z, err, est.scalar_stderr)
            if abs(z) >= 0.5:
                rel = err / abs(exact)
                assert rel <= 0.05, (z, rel)
                worst_rel = max(worst_rel, rel)
        info["detail"] = f"worst relative deviation at |z| >= 0.5: {worst_rel:.2%}"


def test_criterion_04_green_operator_flat():
    with criterion(4, "green-operator-flat") as info:
        m = Euclidean(2)
        f = square_coordinate_field(m)
        x = Point([0.0, 0.0])
        v = frame_vec(m, x)
        cfg = HessianEstimatorConfig(sigma=4.0)
        est = estimate_green_hess(m, f, x, v, v, cfg, n_paths=400, h=0.01,
                                  seed=404)
        err = abs(est.scalar - 0.5)
        assert est.qtol is not None
        assert err <= 3.0 * est.scalar_stderr + est.qtol, (err, est.qtol)
        info["detail"] = (f"value = {est.scalar:.6f}, err = {err:.2e}, "
                          f"qtol = {est.qtol:.2e}")


def test_criterion_05_kernel_bounds_flat():
    with criterion(5, "kernel-bounds-flat") as info:
        m = Euclidean(2)
        cfg = BoundCheckConfig(alpha=0.2, beta=0.2,
                               rho_grid=np.linspace(0.0, 5.0, 20),
                               t_grid=np.linspace(0.01, 4.0, 20))
        rep1, rep2 = check_kernel_bounds(m, cfg)
        assert rep1.passed and rep2.passed
        p_term = rep1.aux_constants["p_term"]
        assert abs(p_term - 0.25) < 1e-6
        info["detail"] = (f"p-term constant = {p_term:.8f}, "
                          f"hessian constant = {rep2.fitted_constant:.4f}")


def test_criterion_06_weighted_l2_torus():
    with criterion(6, "weighted-l2-torus") as info:
        # the config invariant gamma < 2 alpha rejects violating pairs
        with pytest.raises(ValueError, match="gamma"):
            BoundCheckConfig(alpha=0.2, gamma=0.6)
        m = Torus(2)
        cfg = BoundCheckConfig(alpha=0.24, gamma=0.3, beta=0.12,
                               s_grid=np.geomspace(0.05, 2.0, 10),
                               t_grid=np.geomspace(0.05, 2.0, 6),
                               grid_resolution=48)
        r1, r2, r3 = check_weighted_l2(m, cfg)
        for rep in (r1, r2, r3):
            assert rep.passed, rep.inequality_id
        info["detail"] = ("constants: "
                          + ", ".join(f"{r.inequality_id}={r.fitted_constant:.3g}"
                                      for r in (r1, r2, r3)))


def test_criterion_07_gaffney_torus():
    with criterion(7, "gaffney-torus") as info:
        m = Torus(2)
        cfg = BoundCheckConfig(alpha=0.2, t_grid=np.geomspace(0.01, 1.0, 10))
        details = []
        for p in (2.0, 4.0):
            rep = check_gaffney(m, cfg, p=p, cap_radius=0.3)
            assert rep.passed, (p, rep.notes)
            assert math.isfinite(rep.aux_constants["C4_fit"])
            details.append(f"p={p:g}: C4={rep.aux_constants['C4_fit']:.3f}")
        info["detail"] = "; ".join(details)


def test_criterion_08_domination_hyperbolic():
    with criterion(8, "domination-hyperbolic") as info:
        m = Hyperbolic(2, 1.0)
        assert m.ricci_lower_bound == 1.0
        f = gaussian_bump_field(m, lam=1.5)
        cfg = BoundCheckConfig(alpha=0.2, h=0.005)
        rep_a, rep_b, rep_c = check_semigroup_bounds(
            m, f, cfg, n_paths=50000, seed=808, t_list=[0.25, 0.5, 1.0],
            include_lp=False)
        conclusive = [r for r in rep_c.samples if r["reliable"]]
        assert rep_c.passed
        assert len({r["x_index"] for r in rep_c.samples}) == 5
        margin = min(r["rhs"] + 3 * r["stderr"] - r["lhs"] for r in conclusive)
        info["detail"] = (f"{len(conclusive)} conclusive samples, "
                          f"smallest margin = {margin:.3g}")


def test_criterion_09_kato_constant_sphere():
    with criterion(9, "kato-constant-sphere") as info:
        m = Sphere(2, 1.0)
        pot = const_field(m, 0.7)
        t_list = [0.1 * k for k in range(1, 11)]
        res = kato_functional(m, pot, t_list, [Point(m.base_point())],
                              n_paths=1000, seed=909)
        for row in res.rows:
            assert abs(row["functional"] - 0.7 * row["t"]) <= 0.01 * 0.7 * row["t"]
            err = abs(row["expmom"] - math.exp(0.7 * row["t"]))
            assert err <= 3.0 * row["expmom_se"] + 1e-12
        assert abs(res.theta_fit - 0.7) <= 0.05 * 0.7
        info["detail"] = f"theta fit = {res.theta_fit:.6f} (target 0.7)"


def test_criterion_10_cz2_exactness_torus():
    with criterion(10, "cz2-exactness-torus") as info:
        m = Torus(2)
        g = np.random.Generator(np.random.Philox(key=1010))
        fam = random_trig_polynomials(m, 8, 20, g)
        rep = cz_scan(m, fam, p=2.0, sigma=1.0)
        assert rep.passed
        worst = 0.0
        for s in rep.samples:
            dev = abs(s["hess_over_lap"] - 1.0)
            assert dev < 1e-10
            worst = max(worst, dev)
        info["detail"] = f"20 fields, worst |ratio - 1| = {worst:.2e}"


def test_criterion_11_cz_resolvent_scan():
    with criterion(11, "cz-resolvent-scan") as info:
        details = []
        for model, maker in [(Torus(2), random_trig_polynomials),
                             (Sphere(2, 1.0), random_spherical_polynomials)]:
            g = np.random.Generator(np.random.Philox(key=1111))
            fam = maker(model, 8, 200, g)
            for p in (1.5, 4.0):
                rep = cz_scan(model, fam, p=p, sigma=1.0,
                              family_sizes=[50, 200])
                assert rep.passed, (model.kind, p, rep.notes)
                assert math.isfinite(rep.fitted_constant)
                rm = rep.aux_constants["running_max"]
                change = abs(rm[200] - rm[50]) / max(rm[50], 1e-300)
                assert change <= 0.10
                details.append(f"{model.kind} p={p:g}: max={rm[200]:.3f} "
                               f"d={change:.1%}")
        info["detail"] = "; ".join(details)


def test_criterion_12_weak_convergence_order():
    with criterion(12, "weak-convergence-order") as info:
        m = Euclidean(1)
        f = norm_squared_field(m)
        x = Point([0.3])
        t, n = 0.5, 200000
        exact = 0.09 + 2.0 * t
        errs, ses = [], []
        for i, steps in enumerate([50, 100, 200]):
            est = estimate_pt(m, f, x, t, n_paths=n, h=t / steps,
                              seed=1200 + i)
            errs.append(est.scalar - exact)
            ses.append(est.scalar_stderr)
        # the flat walk sums its increments exactly, so the weak error is
        # zero and every level must be statistically indistinguishable from
        # it; a nonzero signal would have to contract at order >= 1
        significant = [abs(e) > 3 * s for e, s in zip(errs, ses)]
        if any(significant):
            ratio = abs(errs[0]) / max(abs(errs[1]), 1e-300)
            assert math.log2(max(ratio, 1e-300)) >= 0.8
        else:
            assert not any(significant)
        # order >= 1 where a genuine bias exists: sphere eigenfunction,
        # comparing h against h/4 so two halvings separate signal from noise
        ms = Sphere(2, 1.0)
        fs = coordinate_field(ms, axis=2)
        xs = Point(ms.base_point())
        e_coarse = estimate_pt(ms, fs, xs, t, n_paths=1600000, h=t / 10,
                               seed=1210)
        e_fine = estimate_pt(ms, fs, xs, t, n_paths=1600000, h=t / 40,
                             seed=1211)
        target = math.exp(-2 * t)
        b_coarse = abs(e_coarse.scalar - target)
        b_fine = abs(e_fine.scalar - target)
        assert b_coarse > 3 * e_coarse.scalar_stderr, "coarse bias resolvable"
        # order >= 0.8 per halving, noise accounted: two halvings shrink the
        # bias by at least 2^{1.6} up to the combined 3-sigma slack
        allowance = 3.0 * (e_coarse.scalar_stderr + e_fine.scalar_stderr)
        assert b_fine <= b_coarse / 2 ** 1.6 + allowance
        order_est = math.log2(b_coarse / max(b_fine, 1e-300)) / 2.0
        info["detail"] = (f"flat errors all within noise "
                          f"(max |err|/se = {max(abs(e)/s for e, s in zip(errs, ses)):.2f}); "
                          f"sphere bias {b_coarse:.1e} -> {b_fine:.1e} under h/4 "
                          f"(order ~ {order_est:.2f})")


def test_criterion_13_reproducibility(tmp_path):
    with criterion(13, "reproducibility") as info:
        out = tmp_path / "out"
        cfg_path = tmp_path / "cfg.toml"
        cfg_path.write_text(f"""
kind = "estimate"
seed = 13
n_paths = 4000
h = 0.005
out_dir = "{out}"

[manifold]
kind = "sphere"
dim = 2
radius = 1.0

[estimate]
op = "hess"
mode = "bismut"
field = "coord-z"
t = 0.4
""", encoding="utf-8")
        run_config(str(cfg_path))
        first = {}
        for name in sorted(os.listdir(out)):
            with open(out / name, "rb") as fh:
                first[name] = fh.read()
        run_config(str(cfg_path))
        identical = 0
        for name, blob in first.items():
            with open(out / name, "rb") as fh:
                again = fh.read()
            if name == "summary.json":
                p1 = json.loads(blob)["payload"]
                p2 = json.loads(again)["payload"]
                assert json.dumps(p1, sort_keys=True) == json.dumps(p2, sort_keys=True)
            else:
                assert again == blob, name
            identical += 1
        info["detail"] = f"{identical} artifacts byte-identical across reruns"
