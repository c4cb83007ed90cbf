"""Acceptance criteria, one test per criterion.

Each test appends a PASS/FAIL line to the terminal summary. The full suite
takes roughly 15 minutes on one core; deselect with ``-m "not slow"``.
"""
import json
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from qperc import cli
from qperc.ensemble import aspect_ratio_scan, sweep, EnsembleConfig
from qperc.lattice import LatticeSpec, build_connectivity, clusters, sample_realization
from qperc.spectral import decompose_biorthogonal, decompose_symmetric, trapped_operators
from qperc.transport import (
    adaptive_window,
    ltb_classical,
    ltb_classical_oracle,
    ltb_quantum,
    propagator_classical,
    propagator_quantum,
    time_averaged_survival,
)

pytestmark = pytest.mark.slow

SEED = 42


def report(number, name, ok, detail):
    line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


@pytest.fixture(scope="module")
def portrait_runs(tmp_path_factory):
    """Two CLI runs of the full 2x24 sweep with different worker counts."""
    base = tmp_path_factory.mktemp("portrait")
    runs = []
    for threads in ("1", "2"):
        out = base / f"portrait_t{threads}.csv"
        argv = ["sweep", "--nx", "2", "--ny", "24", "--R", "1000", "--seed", str(SEED), "--threads", threads]
        t0 = time.monotonic()
        code = cli.main(argv + ["-o", str(out)])
        runs.append((code, out, time.monotonic() - t0))
    return runs


def test_criterion_1_portrait(portrait_runs):
    code, out, elapsed = portrait_runs[0]
    assert code == 0
    meta = json.loads(out.with_name(out.name + ".meta.json").read_text())
    rw, qw = meta["crossings"]["rw"], meta["crossings"]["qw"]
    b_rw = rw["B05"] if rw else None
    b_qw = qw["B05"] if qw else None
    ok_rw = b_rw is not None and abs(b_rw - 22) <= 2 and abs(rw["p05"] - 0.314) <= 0.03
    ok_qw = b_qw is not None and abs(b_qw - 56) <= 3 and abs(qw["p05"] - 0.80) <= 0.04
    report(
        1,
        "portrait 2x24 crossings",
        ok_rw and ok_qw,
        f"B05_rw={b_rw} (22+-2) p05_rw={rw and round(rw['p05'], 4)}; "
        f"B05_qw={b_qw} (56+-3) p05_qw={qw and round(qw['p05'], 4)}; {elapsed:.0f}s",
    )
    assert ok_rw, f"classical crossing B05_rw={b_rw}"
    assert ok_qw, f"quantum crossing B05_qw={b_qw}, expected 56+-3"


def test_criterion_2_landscape():
    res = sweep(EnsembleConfig(LatticeSpec(24, 2), R=1000, seed=SEED))
    rw, qw = res.crossings["rw"], res.crossings["qw"]
    p_rw = rw["p05"] if rw else None
    p_qw = qw["p05"] if qw else None
    ok_rw = p_rw is not None and abs(p_rw - 0.757) <= 0.03
    ok_qw = p_rw is not None and p_qw is not None and p_rw < p_qw <= p_rw + 0.06
    report(
        2,
        "landscape 24x2 crossings",
        ok_rw and ok_qw,
        f"p05_rw={p_rw and round(p_rw, 4)} (0.757+-0.03); p05_qw={p_qw and round(p_qw, 4)} "
        f"(needs ({p_rw and round(p_rw, 4)}, +0.06])",
    )
    assert ok_rw, f"p05_rw={p_rw}, expected 0.757+-0.03"
    assert ok_qw, f"p05_qw={p_qw} not within (p05_rw, p05_rw+0.06]"


def test_criterion_3_aspect_ratio_ordering():
    specs = [LatticeSpec(*d) for d in ((24, 2), (12, 4), (7, 7), (4, 12), (2, 24))]
    rows = {(r.nx, r.ny): r for r in aspect_ratio_scan(specs, R=250, seed=SEED)}
    ordered = all(r.p05_qw is not None and r.p05_rw is not None and r.p05_qw >= r.p05_rw for r in rows.values())
    rw_min = min(r.p05_rw for r in rows.values())
    square_min = rows[(7, 7)].p05_rw <= rw_min + 0.05
    portrait_rise = rows[(2, 24)].p05_qw > rows[(7, 7)].p05_qw
    table = " ".join(f"{k[0]}x{k[1]}:rw={v.p05_rw:.3f}/qw={v.p05_qw:.3f}" for k, v in rows.items())
    report(
        3,
        "aspect-ratio scan",
        ordered and square_min and portrait_rise,
        f"qw>=rw everywhere={ordered}; rw minimum at 7x7 (+0.05)={square_min}; "
        f"qw(2x24)>qw(7x7)={portrait_rise}; {table}",
    )
    assert ordered, "p05_qw < p05_rw for some aspect ratio"
    assert square_min, f"classical minimum not at AR=1: {table}"
    assert portrait_rise, f"quantum p05 at 2x24 does not exceed 7x7: {table}"


def test_criterion_4_chain_limit():
    found = {}
    for nx in (5, 10, 20):
        res = sweep(EnsembleConfig(LatticeSpec(nx, 1), R=200, seed=SEED))
        found[nx] = (res.crossings["rw"]["p05"], res.crossings["qw"]["p05"])
    ok = all(v == (1.0, 1.0) for v in found.values())
    report(4, "chain limit", ok, f"(p05_rw, p05_qw) by nx: {found}")
    assert ok


def test_criterion_5_oracle_equivalence():
    t0 = time.monotonic()
    worst, count = 0.0, 0
    for dims in ((24, 2), (7, 7), (2, 24)):
        spec = LatticeSpec(*dims)
        for frac in (0.25, 0.5, 0.75):
            B = int(round(frac * spec.b_max))
            for r in range(1112):
                real = sample_realization(spec, B, SEED, r)
                T = trapped_operators(build_connectivity(real), spec, 1.0).classical
                diff = abs(ltb_classical(decompose_symmetric(T), spec) - ltb_classical_oracle(clusters(real), spec))
                worst = max(worst, diff)
                count += 1
    elapsed = time.monotonic() - t0
    ok = worst < 1e-9 and count >= 10_000 and elapsed <= 120
    report(5, "classical LTB vs cluster oracle", ok, f"{count} realizations, max diff {worst:.2e}, {elapsed:.1f}s")
    assert worst < 1e-9
    assert count >= 10_000
    assert elapsed <= 120


def test_criterion_6_spectral_vs_time_domain():
    spec = LatticeSpec(4, 4)
    rng = np.random.default_rng(SEED)
    diffs, fixed_diffs, skipped, r = [], [], 0, 0
    while len(diffs) < 50:
        real = sample_realization(spec, int(rng.integers(0, spec.b_max + 1)), SEED, r)
        r += 1
        op = trapped_operators(build_connectivity(real), spec, 1.0)
        q = decompose_biorthogonal(op.quantum)
        if q.defective:
            skipped += 1
            continue
        spectral = ltb_quantum(q, spec)
        diffs.append(abs(spectral - time_averaged_survival(op, spec, adaptive_window(q))))
        fixed_diffs.append(abs(spectral - time_averaged_survival(op, spec)))
    worst = max(diffs)
    fixed_bad = sum(d >= 1e-3 for d in fixed_diffs)
    ok = worst < 1e-3
    report(
        6,
        "quantum LTB vs windowed time average",
        ok,
        f"max diff {worst:.2e} over 50 realizations (window [200,400] extended to 5/gamma_min); "
        f"unextended window misses on {fixed_bad}/50 (max {max(fixed_diffs):.2e}); {skipped} defective skipped",
    )
    assert ok


def test_criterion_7_conservation_and_residuals():
    rng = np.random.default_rng(SEED)
    shapes = ((24, 2), (7, 7), (2, 24), (4, 4))
    worst_cons, worst_res, defective, total = 0.0, 0.0, 0, 0
    for r in range(100):
        spec = LatticeSpec(*shapes[r % len(shapes)])
        real = sample_realization(spec, int(rng.integers(0, spec.b_max + 1)), SEED, r)
        A = build_connectivity(real)
        free = trapped_operators(A, spec, 0.0)
        s = decompose_symmetric(free.classical)
        q0 = decompose_biorthogonal(free.quantum)
        for t in (0.0, 1.0, 10.0, 100.0):
            worst_cons = max(
                worst_cons,
                np.abs(propagator_classical(s, t).sum(axis=0) - 1).max(),
                np.abs((np.abs(propagator_quantum(q0, t)) ** 2).sum(axis=0) - 1).max(),
            )
        for spectrum in (q0, decompose_biorthogonal(trapped_operators(A, spec, 1.0).quantum)):
            total += 1
            if spectrum.defective:
                defective += 1
            else:
                worst_res = max(worst_res, spectrum.completeness_residual, spectrum.biorthogonality_residual)
    rate = defective / total
    ok = worst_cons < 1e-10 and worst_res < 1e-8 and rate < 0.01
    report(
        7,
        "conservation and biorthogonality",
        ok,
        f"max |sum-1|={worst_cons:.2e}; max residual={worst_res:.2e}; defective rate {defective}/{total}={rate:.3%}",
    )
    assert worst_cons < 1e-10
    assert worst_res < 1e-8
    assert rate < 0.01


def test_criterion_8_determinism(portrait_runs):
    (c1, out1, _), (c2, out2, _) = portrait_runs
    same = c1 == c2 == 0 and out1.read_bytes() == out2.read_bytes()
    report(8, "byte-identical sweeps across --threads 1/2", same, f"{out1.name} vs {out2.name}")
    assert same
