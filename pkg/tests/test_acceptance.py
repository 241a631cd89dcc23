"""Acceptance criteria at their stated sizes and tolerances.  Each test
prints one PASS/FAIL line."""
import math

import pytest

from arbfun import cli, mechsde
from arbfun.cli import ExperimentConfig
from arbfun.stochastics import RandomStream

pytestmark = pytest.mark.acceptance


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail=""):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} [{number:2d}] {title}  {detail}".rstrip())
        assert ok, f"criterion {number}: {title} {detail}"
    return emit


def _rows(eid, **kw):
    rows, _ = cli.run(ExperimentConfig(eid, **kw))
    return {(r.statistic, r.n): r for r in rows}, rows


def _z(r):
    return abs(r.z_score) if r.z_score is not None else (0.0 if r.estimate == r.target else math.inf)


def test_01_uniform_graduation_error(report):
    rows, _ = _rows("thm4-uniform", n_ladder=(1000,), replicates=10 ** 5)
    ks = rows[("ks_uniform[normal]", 1000)].estimate
    lat = rows[("ks_uniform[lattice10]", 1000)].estimate
    report(1, "uniform graduation error", ks < 0.0061 and lat >= 0.4, f"KS={ks:.5f} lattice KS={lat:.3f}")


def test_02_square_field_constant(report):
    rows, _ = _rows("thm4-gamma", n_ladder=(100, 200, 400), replicates=10 ** 5)
    zi = _z(rows[("gamma[identity]_richardson", 400)])
    s = rows[("gamma[sin]_richardson", 400)]
    sin_target = (1 + math.exp(-2)) / 24
    ok = zi <= 4 and _z(s) <= 4 and abs(s.target - sin_target) < 1e-12
    report(2, "square field constant", ok, f"|z| identity={zi:.2f} sin={_z(s):.2f}")


def test_03_bias_operators(report):
    bias, _ = _rows("thm4-bias", n_ladder=(400,), replicates=10 ** 5)
    default, _ = _rows("thm4-default", replicates=10 ** 5)
    h1 = bias[("H1[x^2]", 400)]
    shift = default[("shift_default", 400)]
    h3 = default[("H3_default[sin,sin]", 400)]
    ok = (h1.target == pytest.approx(1 / 12) and shift.target == -0.5 and h3.target == 0.0
          and max(_z(h1), _z(shift), _z(h3)) <= 4)
    report(3, "bias operators", ok, f"|z| H1={_z(h1):.2f} shift={_z(shift):.2f} H3={_z(h3):.2f}")


def test_04_algebraic_identities(report):
    _, rows = _rows("thm4-identities", n_ladder=(100, 400), replicates=10 ** 5)
    worst = max(r.estimate for r in rows)
    report(4, "algebraic identities per replicate", all(r.passed(4.0) for r in rows), f"max dev={worst:.2e}")


def test_05_oscillating_integral(report):
    rows, _ = _rows("thm5-oscillating", n_ladder=(64,), grid_mult=64, replicates=10 ** 5)
    names = ["var_sawtooth", "var_lag_dB", "cov_lag_dB_B", "var_clt", "cov_clt_B"]
    picked = [rows[(f"{s}@t=1.0", 64)] for s in names]
    targets = [1 / 12, 1 / 3, 1 / 2, 1 / 2, 0.0]
    ok = all(r.target == pytest.approx(t) for r, t in zip(picked, targets))
    zs = [_z(r) for r in picked]
    report(5, "oscillating integral", ok and max(zs) <= 4, "|z| " + " ".join(f"{z:.2f}" for z in zs))


def test_06_complex_form_limits(report):
    rows, _ = _rows("thm6-complex", n_ladder=(32, 64), replicates=2 * 10 ** 5)
    re = rows[("re[eta=zeta=1]_extrapolated", 64)]
    im = rows[("im[eta=zeta=1]_extrapolated", 64)]
    ok = re.target == pytest.approx(-math.exp(-2) / 12) and im.target == 0.0 and max(_z(re), _z(im)) <= 4
    report(6, "complex form limits", ok, f"re={re.estimate:.5f} |z| re={_z(re):.2f} im={_z(im):.2f}")


def test_07_chaos_operator(report):
    _, rows = _rows("thm9-chaos", n_ladder=(8, 16, 32), grid_mult=128, function="constant")
    gaps = [r for r in rows if r.statistic.startswith("rel_gap")]
    mono = [r for r in rows if r.statistic.startswith("monotone")]
    ok = len(gaps) == 2 and all(r.estimate < 0.02 for r in gaps) and all(r.estimate == 1.0 for r in mono)
    report(7, "chaos operator", ok, "rel gap " + " ".join(f"{r.estimate:.2e}" for r in gaps))


def test_08_sharp_gradient(report):
    _, rows = _rows("thm8-sharp", n_ladder=(64,))
    gated = [r for r in rows if r.check == "z"]
    worst = max(_z(r) for r in gated)
    report(8, "sharp gradient moments", len(gated) == 10 and worst <= 4, f"max |z|={worst:.2f}")


def test_09_rotation_isometry(report):
    rows, _ = _rows("thm10-rotation", n_ladder=(64,), replicates=10 ** 5)
    ks = rows[("ks_normal[T_n(B1_1)]", 64)].estimate
    cov = rows[("cov(T_n(B1_1),B1_1)", 64)]
    report(9, "rotation isometry", ks < 0.0061 and _z(cov) <= 4, f"KS={ks:.5f} |cov z|={_z(cov):.2f}")


def test_10_euler_error_law(report):
    rows, all_rows = _rows("thm11-euler", system="linear", n_ladder=(16, 32, 64), grid_mult=64,
                           replicates=10 ** 5)
    top = [r for r in all_rows if r.n == 64 and r.statistic.endswith("[n(Xn-X)1 vs U1]")]
    zs = [_z(r) for r in top]
    dec = rows[("sqrt_n_error_decreasing", 64)].estimate == 1.0
    const = mechsde.error_law_comparison(mechsde.constant_system(), (16, 32, 64), 10 ** 4, RandomStream(1))
    ok = len(top) == 3 and max(zs) <= 3 and dec and const.max_abs_error == 0.0
    report(10, "Euler error law", ok,
           "|z| " + " ".join(f"{z:.2f}" for z in zs) + f" decreasing={dec} const err={const.max_abs_error}")


def test_11_girsanov_invariance(report):
    _, rows = _rows("thm3-girsanov", replicates=10 ** 5)
    zs = [_z(r) for r in rows]
    report(11, "Girsanov invariance", len(rows) == 2 and max(zs) <= 4, "|z| " + " ".join(f"{z:.2f}" for z in zs))


@pytest.mark.parametrize("eid,kw", [
    ("thm4-gamma", dict(replicates=20000)),
    ("thm10-rotation", dict(replicates=5000, n_ladder=(16,))),
    ("thm11-euler", dict(replicates=3000, n_ladder=(8, 16))),
])
def test_12_reproducibility(report, eid, kw):
    texts = [cli.rows_to_csv(cli.run(ExperimentConfig(eid, workers=w, **kw))[0]) for w in (1, 2, 1)]
    report(12, f"reproducibility [{eid}]", texts[0] == texts[1] == texts[2], f"{len(texts[0])} bytes")
