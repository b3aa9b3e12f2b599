"""Acceptance criteria, one test per criterion.

Each test records a one-line ``detail`` that the conftest hook prints as a
PASS/FAIL table at the end of the run (also visible with ``-s``).
"""
import json
import math
import subprocess
import sys
import time

import numpy as np
import pytest

import oracles
from conftest import FIXTURE_DIR
from guidedig import attribution as at
from guidedig import diffmodel as dm
from guidedig import evaluation as ev
from guidedig import fixtures
from guidedig.seeding import substream


@pytest.fixture
def report(record_property, request):
    def emit(ok, detail):
        record_property("detail", detail)
        print(f"\n{'PASS' if ok else 'FAIL'} {request.node.name}: {detail}")
        return ok
    return emit


def _gig(model, x, b, steps, anchors, fraction=0.1, **kw):
    return at.guided_ig_anchored(model, x, b, steps, fraction, anchors, **kw)


# 1 -----------------------------------------------------------------------------

def test_linear_exactness(report):
    # compile the kernels before the clock starts
    _gig(dm.linear([1.0, 2.0]), [1.0, 1.0], [0.0, 0.0], 4, 1)
    worst = 0.0
    start = time.perf_counter()
    for k in range(50):
        rng = substream(k, "fixtures", 20)
        n = int(rng.integers(1, 257))
        w, b, x = rng.normal(0, 1, n), rng.uniform(0, 1, n), rng.uniform(0, 1, n)
        m = dm.linear(w)
        want = w * (x - b)
        for a in (at.integrated_gradients(m, x, b, 200), _gig(m, x, b, 200, 0),
                  _gig(m, x, b, 200, 20)):
            worst = max(worst, float(np.abs(a.attributions - want).max()))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-9 and elapsed < 5.0
    report(ok, f"max |a - w(x-b)| = {worst:.2e} (< 1e-9), {elapsed:.2f} s (< 5 s)")
    assert ok


# 2 -----------------------------------------------------------------------------

def _completeness_models():
    yield "softplus-mlp", fixtures.bumpy(0)
    for s in range(3):
        yield f"bump{s}", fixtures.bump_family(s)


@pytest.mark.parametrize("method", ["ig", "gig0", "gig20"])
def test_completeness(report, method):
    worst, worst_ratio, failures = 0.0, math.inf, []
    for name, m in _completeness_models():
        for i in range(5):
            x = substream(0, "inputs", i).uniform(0, 1, m.n_features)
            b = np.zeros(m.n_features)
            res = {}
            for T in (200, 800):
                if method == "ig":
                    a = at.integrated_gradients(m, x, b, T)
                else:
                    a = _gig(m, x, b, T, int(method[3:]))
                res[T] = a.completeness_residual
            ratio = res[200] / res[800] if res[800] > 0 else math.inf
            worst = max(worst, res[200])
            worst_ratio = min(worst_ratio, ratio)
            if not (res[200] < 1e-3 and ratio >= 2.0):
                failures.append(f"{name}/{i}")
    ok = not failures
    report(ok, f"{method}: max residual@200 {worst:.2e} (< 1e-3), min shrink 200->800 "
               f"{worst_ratio:.2f}x (>= 2x), {len(failures)}/20 cases fail")
    assert ok, failures


# 3 -----------------------------------------------------------------------------

def test_symmetry(report):
    worst = 0.0
    for seed in range(20):
        m, pairs = fixtures.symmetric_fixture(seed)
        x, b = fixtures.symmetric_endpoints(seed, pairs, m.n_features)
        for anchors in (0, 5, 20):
            a = _gig(m, x, b, 200, anchors).attributions
            worst = max(worst, max(abs(a[i] - a[j]) for i, j in pairs))
    ok = worst < 1e-9
    report(ok, f"max |a_i - a_j| over 20 fixtures x K in {{0,5,20}} = {worst:.2e} (< 1e-9)")
    assert ok


# 4 -----------------------------------------------------------------------------

def _path_case(k):
    rng = substream(k, "fixtures", 21)
    kind = k % 4
    if kind == 0:
        m = fixtures.bumpy(k)
    elif kind == 1:
        m = fixtures.bump_family(k)
    elif kind == 2:
        m = fixtures.symmetric_fixture(k)[0]
    else:
        m = fixtures.mlp(k, (6, 6, 1), 12, 2, "relu")
    x = rng.uniform(0, 1, m.n_features)
    b = np.where(rng.uniform(size=m.n_features) < 0.1, x, rng.uniform(0, 1, m.n_features))
    return m, x, b, int(rng.integers(1, 300)), float(rng.choice([0.05, 0.1, 0.3, 1.0])), \
        int(rng.choice([0, 5, 20]))


def test_path_norm_laws(report):
    l1_err, l2_slack = 0.0, math.inf
    for k in range(100):
        m, x, b, steps, fraction, anchors = _path_case(k)
        tr = _gig(m, x, b, steps, anchors, fraction, trace=True).trace
        d = tr.deltas
        l1_err = max(l1_err, abs(np.abs(d).sum() - np.abs(x - b).sum()))
        bound = math.sqrt(x.size) * np.linalg.norm(x - b)
        l2_slack = min(l2_slack, bound + 1e-9 - np.linalg.norm(d, axis=1).sum())
    ok = l1_err < 1e-9 and l2_slack >= 0
    report(ok, f"100 traces: max L1 error {l1_err:.2e} (< 1e-9), min sqrt(N) L2 slack "
               f"{l2_slack:.3g} (>= 0)")
    assert ok


# 5 -----------------------------------------------------------------------------

@pytest.mark.slow
def test_closed_path_superiority(report):
    start = time.perf_counter()
    rows = []
    for seed in range(3):
        m = fixtures.bump_family(seed)
        xs = [substream(seed, "inputs", i).uniform(0, 1, m.n_features) for i in range(20)]
        ig = ev.closed_path_experiment(m, "ig", xs, trials=50, steps=500, seed=seed).mse
        gig = ev.closed_path_experiment(m, "gig", xs, trials=50, steps=500, seed=seed).mse
        rows.append((seed, ig, gig))
    elapsed = time.perf_counter() - start
    ok = all(g < i for _, i, g in rows) and elapsed < 300
    detail = ", ".join(f"bump{s}: GIG {g:.2e} vs IG {i:.2e}" for s, i, g in rows)
    report(ok, f"{detail}; {elapsed:.0f} s (< 300 s)")
    assert ok


# 6 -----------------------------------------------------------------------------

def test_guided_trace_conformance(report):
    ref = json.loads((FIXTURE_DIR / "guided_bilinear_T2.json").read_text())
    a = at.guided_ig_unbounded(dm.bilinear_product(), ref["input"], ref["baseline"],
                               ref["steps"], ref["fraction"], trace=True)
    tr = a.trace
    checks = {
        "points": tr.points.tolist() == ref["points"],
        "gradients": tr.gradients.tolist() == ref["gradients"],
        "increments": tr.increments.tolist() == ref["increments"],
        "rounds": tr.inner_iterations.tolist() == [len(r) for r in ref["rounds"]],
        "attributions": a.attributions.tolist() == ref["attributions"],
    }
    clamps = sum(r["clamped"] for step in ref["rounds"] for r in step)
    ok = all(checks.values())
    report(ok, f"bilinear T=2 p=0.5: {sum(checks.values())}/{len(checks)} trace fields "
               f"bit-identical ({clamps} clamped rounds)")
    assert ok, checks


# 7 -----------------------------------------------------------------------------

def test_auc_oracle(report):
    mismatches, ties = 0, 0
    for k in range(1000):
        rng = substream(k, "fixtures", 22)
        n = int(rng.integers(2, 13))
        mask = rng.integers(0, 2, n)
        mask[rng.choice(n, 2, replace=False)] = [0, 1]
        if k % 2:
            scores = rng.integers(0, 4, n).astype(float)
        else:
            scores = rng.normal(size=n)
        ties += len(set(scores.tolist())) < n
        want = float(oracles.auc_by_enumeration(scores.tolist(), mask.tolist()))
        mismatches += ev.auc_roc(scores, mask).auc != want
    ok = mismatches == 0
    report(ok, f"{mismatches}/1000 instances differ from threshold enumeration "
               f"({ties} with tied scores)")
    assert ok


# 8 -----------------------------------------------------------------------------

def _fd_points(name, m):
    pts, i = [], 0
    while len(pts) < 100:
        x = substream(0, "check_gradients", i).uniform(0, 1, m.n_features)
        i += 1
        if name == "relu_mlp":
            w1, b1, _ = m.layers[0]
            if np.min(np.abs(w1 @ x + b1) / np.linalg.norm(w1, axis=1)) < 0.01:
                continue  # finite differences straddle a kink
        pts.append(x)
    return pts


def test_gradient_correctness(report):
    names = ("linear", "bilinear", "symmetric", "bump", "bumpy", "relu_mlp", "off_path")
    worst = {}
    for name in names:
        m = fixtures.load_bundled(name)
        modes = dm.MODES if m.n_outputs > 1 else ("logit",)
        worst[name] = max(dm.check_gradient(m, x, c, mode, 1e-4)
                          for x in _fd_points(name, m)
                          for c in range(m.n_outputs) for mode in modes)
    ok = max(worst.values()) < 1e-4
    report(ok, "max relative error " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
           + " (< 1e-4)")
    assert ok


# 9 -----------------------------------------------------------------------------

def _cli_commands(work):
    data = fixtures.bundled_dir()
    return [
        ["gen-fixtures", "--out-dir", work / "fx"],
        ["attribute", "--model", "bumpy", "--input", data / "ramp.pgm", "--method", "gig",
         "--baseline", "random:2", "--seed", "7", "--anchors", "3", "--out", work / "a.csv",
         "--heatmap", work / "a.pgm", "--trace", work / "a.jsonl"],
        ["attribute", "--model", "bump", "--input", data / "bump_input.pgm", "--method",
         "smoothgrad-ig", "--samples", "4", "--seed", "3", "--out", work / "s.csv",
         "--heatmap", work / "s.pgm", "--heatmap-norm", "percentile"],
        ["eval-closed-path", "--model", "bumpy", "--method", "gig", "--trials", "4",
         "--n-inputs", "3", "--steps", "50", "--workers", "4", "--out", work / "cp.json"],
        ["eval-auc", "--attribution", work / "s.csv", "--mask", data / "bump_mask.pgm",
         "--out", work / "auc.json", "--roc-out", work / "roc.csv"],
        ["diagnostics", "--trace", work / "a.jsonl", "--out", work / "d.json",
         "--model", "bumpy", "--input", data / "ramp.pgm", "--profile-out", work / "p.csv"],
        ["check-gradients", "--model", "relu_mlp", "--points", "10", "--out", work / "g.json"],
    ]


def test_cli_determinism(report, tmp_path):
    outputs = []
    for run in ("first", "second"):
        work = tmp_path / run
        work.mkdir()
        for argv in _cli_commands(work):
            proc = subprocess.run([sys.executable, "-m", "guidedig", *map(str, argv)],
                                  capture_output=True, text=True, cwd=work)
            assert proc.returncode in (0, 4), (argv[0], proc.stderr)
        outputs.append({str(p.relative_to(work)): p.read_bytes()
                        for p in sorted(work.rglob("*")) if p.is_file()})
    same = outputs[0] == outputs[1]
    report(same, f"{len(_cli_commands(tmp_path))} commands, {len(outputs[0])} output files, "
                 f"byte-identical across two runs: {same}")
    assert same and len(outputs[0]) >= 20
