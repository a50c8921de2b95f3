"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The training criteria share one NL01 run and one warm-started NL02 run,
built lazily the first time a test needs them.
"""

import re
import time
from collections import Counter
from pathlib import Path

import numpy as np
import pytest

import glyphsmith
from glyphsmith import gradsuite
from glyphsmith.car import CarModel, apply_switcher, forward_compose, iterative_compose
from glyphsmith.decomp import (
    CompositionPlan,
    PlanStep,
    StepRef,
    component_frequency,
    coverage_curve,
    layout_stats,
    parse_layout,
    read_table,
)
from glyphsmith.diffops import LossWeights, loss_centroid, loss_inertia, loss_overlap, loss_pixel, loss_total, warp_forward
from glyphsmith.metrics import evaluate, mae
from glyphsmith.raster import centroid, inertia, iou, rasterize, raw_moment
from glyphsmith.trainer import TrainConfig, generate_synthetic, save_checkpoint, split, train
from glyphsmith.vector import (
    RenderFrame,
    apply_affine,
    content_to_editor_params,
    content_to_grid_affine,
    editor_params_to_content,
    grid_to_content_affine,
    translate,
)

SEED = 30
TABLE = Path(glyphsmith.__file__).parent / "data" / "sample_table.tsv"


# -- shared training runs ------------------------------------------------------------


class Runs:
    def __init__(self):
        self._cache = {}

    def nl01(self):
        if "nl01" not in self._cache:
            data = generate_synthetic(SEED, 600, "NL01")
            tr, va = split(data, 5 / 6, SEED)
            start = time.perf_counter()
            result = train(TrainConfig(layout="NL01"), tr, va)
            self._cache["nl01"] = (result, va, time.perf_counter() - start)
        return self._cache["nl01"]

    def nl02(self, tmp_path_factory):
        if "nl02" not in self._cache:
            warm = tmp_path_factory.mktemp("warm") / "nl01.ckpt"
            save_checkpoint(self.nl01()[0].checkpoint, warm)
            data = generate_synthetic(SEED, 600, "NL02")
            tr, va = split(data, 5 / 6, SEED)
            start = time.perf_counter()
            config = TrainConfig(layout="NL02", epochs=24, init_checkpoint=str(warm), switcher=True)
            result = train(config, tr, va)
            self._cache["nl02"] = (result, va, time.perf_counter() - start)
        return self._cache["nl02"]


@pytest.fixture(scope="session")
def runs():
    return Runs()


# -- 1 gradients ------------------------------------------------------------------------


def test_c01_gradient_suite(criterion):
    result = gradsuite.run_suite(seeds=20)
    for line in result.lines():
        print(line)
    names = {r.label.split("[")[0] for r in result.reports}
    expected = set(gradsuite.PRIMITIVE_CHECKS) | {"model"}
    worst = max(r.max_rel_error for r in result.reports)
    criterion(
        1,
        result.passed and expected <= names and result.seconds <= 120,
        f"{len(result.reports)} finite-difference checks, worst rel err {worst:.2e}, {result.seconds:.1f}s",
    )


# -- 2 moments ---------------------------------------------------------------------------


def loop_raw(img, i, j):
    total = 0.0
    for y in range(img.shape[0]):
        for x in range(img.shape[1]):
            total += img[y, x] * x**i * y**j
    return total


def loop_centroid_inertia(img, eps=1e-6):
    m00 = loop_raw(img, 0, 0) + eps
    cx, cy = loop_raw(img, 1, 0) / m00, loop_raw(img, 0, 1) / m00
    psi = 0.0
    for y in range(img.shape[0]):
        for x in range(img.shape[1]):
            psi += img[y, x] * (x * x + y * y)
    psi -= (cx * cx + cy * cy) * m00
    return (cx, cy), psi


def test_c02_moment_oracles(criterion):
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for _ in range(1000):
        img = rng.random((8, 8))
        for i, j in [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]:
            worst = max(worst, abs(raw_moment(img, i, j) - loop_raw(img, i, j)))
        (cx, cy), psi = loop_centroid_inertia(img)
        got = centroid(img)
        worst = max(worst, abs(got[0] - cx), abs(got[1] - cy), abs(inertia(img) - psi))
    # two unit masses d apart on the top row; the mass guard shifts the value by
    # m10^2 * eps / (m00 * (m00 + eps)), below 1e-6 for d <= 2
    img = np.zeros((8, 8))
    img[0, 0] = img[0, 2] = 1.0
    analytic = abs(inertia(img) - 2.0)
    guarded = 0.0
    for d in range(1, 8):
        img = np.zeros((8, 8))
        img[0, 0] = img[0, d] = 1.0
        guarded = max(guarded, abs(inertia(img) - (d * d / 2 + d * d * (1 - 2 / (2 + 1e-6)) / 2)))
    criterion(
        2,
        worst <= 1e-9 and analytic <= 1e-6 and guarded <= 1e-9,
        f"1000 images, worst deviation from double loops {worst:.1e}; two-point d=2 error {analytic:.1e}",
    )


# -- 3 losses ---------------------------------------------------------------------------


def test_c03_loss_anchors(criterion):
    a = np.zeros((16, 16))
    a[:, :8] = 1
    b = np.zeros((16, 16))
    b[:, 8:] = 1
    disjoint = loss_overlap(a + b)[0]
    coincident = loss_overlap(a + a)[0]
    rng = np.random.default_rng(SEED)
    c = rng.random((16, 16))
    at_target = [fn(c, c)[0] for fn in (loss_pixel, loss_centroid, loss_inertia)]
    at_target.append(loss_total(c, c, LossWeights(1, 1, 5e-2, 1e-8))[0])
    s = c + rng.random((16, 16))
    terms = [loss_pixel(s, c)[0], loss_overlap(s)[0], loss_centroid(s, c)[0], loss_inertia(s, c)[0]]
    nl03 = TrainConfig(layout="NL03-1").weights.as_tuple()
    linear = loss_total(s, c, LossWeights(*nl03))[0]
    expected = sum(w * t for w, t in zip(nl03, terms))
    ok = disjoint == 0 and coincident == 0.5 and all(v == 0 for v in at_target)
    ok = ok and nl03 == (1.0, 1.0, 5e-2, 1e-8) and abs(linear - expected) <= 1e-12 * abs(expected)
    criterion(
        3,
        ok,
        f"disjoint {disjoint}, coincident {coincident}, at S=C {max(at_target)}, weighted sum off by {abs(linear - expected):.1e}",
    )


# -- 4 identity init ---------------------------------------------------------------------


def test_c04_identity_init(criterion):
    rng = np.random.default_rng(SEED)
    identity = np.array([[1.0, 0, 0], [0, 1.0, 0]])
    ok = True
    for fusion in ("stack", "adain", "attention"):
        for k in (2, 3):
            imgs = [rng.random((64, 64)) for _ in range(k)]
            thetas, s = forward_compose(CarModel(fusion=fusion, n_components=k), imgs)
            ok &= all(np.array_equal(t, identity) for t in thetas)
            ok &= all(np.array_equal(warp_forward(i, identity), i) for i in imgs)
            ok &= np.array_equal(s, sum(imgs))
    criterion(4, ok, "three fusions, two and three components: exact identity affines and S equal to the sum")


# -- 5 switcher -------------------------------------------------------------------------


def test_c05_switcher(criterion):
    got = apply_switcher([2, 0.1, 3, 0.2, 5, 7])
    moved = apply_switcher([1, 0, 0.4, 0, 1, 0])
    ok = np.array_equal(got, [5, 0, 7, 0, 2, 3]) and np.array_equal(moved, [1, 0, 0, 0, 1, 0.4])
    criterion(5, ok, f"{got.tolist()}; x-translation becomes {moved.tolist()}")


# -- 6 vector/raster ----------------------------------------------------------------------


def test_c06_vector_raster_consistency(criterion):
    rng = np.random.default_rng(SEED)
    frame = RenderFrame(256, 1000)
    glyphs = [g for s in generate_synthetic(SEED, 50, "NL01") for g in s.glyphs]
    scores, soft = [], []
    for g in glyphs:
        x0, y0, x1, y1 = g.bbox()
        g = apply_affine(g, translate(500 - (x0 + x1) / 2, 500 - (y0 + y1) / 2))
        theta = np.array(
            [[rng.uniform(0.5, 1.5), 0, rng.uniform(-0.5, 0.5)], [0, rng.uniform(0.5, 1.5), rng.uniform(-0.5, 0.5)]]
        )
        vector = rasterize(apply_affine(g, grid_to_content_affine(theta, frame)), frame)
        warped = np.clip(warp_forward(rasterize(g, frame), theta), 0, 1)
        scores.append(iou(vector, warped))
        soft.append(np.minimum(vector, warped).sum() / np.maximum(vector, warped).sum())
    criterion(
        6,
        min(scores) >= 0.95,
        f"{len(scores)} affines at 256 px: IoU min {min(scores):.4f}, mean {np.mean(scores):.4f}; "
        f"coverage-weighted IoU min {min(soft):.4f}",
    )


# -- 7 coordinate bridge -----------------------------------------------------------------


def push_point(theta, frame, p):
    """Move one font-unit point the way the sampler moves content."""
    u = frame.units_per_em
    nx = 2 * (p[0] + frame.dx) / u - 1
    ny = 1 - 2 * (p[1] + frame.dy) / u
    a = np.vstack([np.reshape(theta, (2, 3)), [0, 0, 1]])
    qx, qy, _ = np.linalg.solve(a, [nx, ny, 1])
    return np.array([(qx + 1) * u / 2 - frame.dx, (1 - qy) * u / 2 - frame.dy])


def test_c07_coordinate_bridge(criterion):
    rng = np.random.default_rng(SEED)
    point_err, edit_err = 0.0, 0.0
    for _ in range(200):
        theta = np.array([[1, 0, 0], [0, 1, 0]]) + rng.uniform(-0.4, 0.4, (2, 3))
        frame = RenderFrame(int(rng.integers(16, 300)), 1000, *rng.uniform(-200, 200, 2))
        m = grid_to_content_affine(theta, frame)
        again = grid_to_content_affine(content_to_grid_affine(m, frame), frame)
        for p in rng.uniform(-500, 1500, (5, 2)):
            q = m @ [p[0], p[1], 1]
            back = np.linalg.solve(again, q)
            point_err = max(point_err, np.abs(back[:2] - p).max(), np.abs(q[:2] - push_point(theta, frame, p)).max())
        origin = tuple(rng.uniform(0, 1000, 2))
        params = content_to_editor_params(m, origin)
        edit_err = max(edit_err, np.abs(editor_params_to_content(params, origin) - m).max())
    tx = grid_to_content_affine([1, 0, 1, 0, 1, 0], RenderFrame(256, 1000))[0, 2]
    ok = point_err <= 1e-6 and tx == -500 and edit_err <= 1e-12
    criterion(7, ok, f"point round trip {point_err:.1e} units, unit shift -> {tx} units, editor params {edit_err:.1e}")


# -- 8 training -------------------------------------------------------------------------


def test_c08_left_right_training(runs, criterion):
    result, va, seconds = runs.nl01()
    report = evaluate(result.model, va)
    bar = 0.6 * report.mean_baseline_mae
    for e in result.log:
        print(e.to_json())
    print(report.to_text())
    criterion(
        8,
        report.mean_mae <= bar and report.mean_corner_px <= 3 and seconds <= 1800 and len(result.log) - 1 <= 42,
        f"NL01 val MAE {report.mean_mae:.4f} (bar {bar:.4f}), corners {report.mean_corner_px:.2f} px, "
        f"{len(result.log) - 1} epochs in {seconds / 60:.1f} min",
    )


def test_c08_top_bottom_warm_start(runs, criterion, tmp_path_factory):
    result, va, seconds = runs.nl02(tmp_path_factory)
    report = evaluate(result.model, va)
    bar = 0.6 * report.mean_baseline_mae
    reached = next((e.epoch for e in result.log if e.val_mae is not None and e.val_mae <= bar), None)
    for e in result.log:
        print(e.to_json())
    print(report.to_text())
    ok = reached is not None and reached <= 24 and report.mean_mae <= bar and report.mean_corner_px <= 3
    criterion(
        8,
        ok,
        f"NL02 warm start reaches MAE bar {bar:.4f} at epoch {reached}; final {report.mean_mae:.4f}, "
        f"corners {report.mean_corner_px:.2f} px, {seconds / 60:.1f} min",
    )


# -- 9 iterative invocation ---------------------------------------------------------------


def test_c09_two_step_composition(runs, criterion):
    model = runs.nl01()[0].model
    data = generate_synthetic(SEED, 120, "NL04")
    _, va = split(data, 5 / 6, SEED)
    baseline = evaluate(CarModel(n_components=3), va).mean_baseline_mae
    left_right = parse_layout("NL01")
    plan = CompositionPlan("x", (PlanStep(left_right, ("a", "b")), PlanStep(left_right, (StepRef(0), "c"))))
    errors, scores, soft = [], [], []
    for s in va:
        comp = iterative_compose(model, plan, dict(zip("abc", s.glyphs)))
        errors.append(mae(comp.raster, s.target))
        vector, raster = rasterize(comp.glyph, s.size), np.clip(comp.raster, 0, 1)
        scores.append(iou(vector, raster))
        soft.append(np.minimum(vector, raster).sum() / np.maximum(vector, raster).sum())
    two_step = float(np.mean(errors))
    criterion(
        9,
        two_step < baseline and min(scores) >= 0.90,
        f"NL04 two-step MAE {two_step:.4f} vs untrained baseline {baseline:.4f}; vector IoU min {min(scores):.3f}, "
        f"mean {np.mean(scores):.3f}, coverage-weighted min {min(soft):.3f}",
    )


# -- 10 determinism and recounts -------------------------------------------------------------


def test_c10_training_is_reproducible(criterion, tmp_path):
    data = generate_synthetic(SEED, 48, "NL01")
    runs = []
    for tag in "ab":
        tr_idx, va_idx = split(list(range(len(data))), 0.8, SEED)
        result = train(TrainConfig(epochs=2), [data[i] for i in tr_idx], [data[i] for i in va_idx])
        save_checkpoint(result.checkpoint, tmp_path / f"{tag}.ckpt")
        runs.append((va_idx, [e.train_loss for e in result.log], (tmp_path / f"{tag}.ckpt").read_bytes()))
    (va_a, loss_a, ck_a), (va_b, loss_b, ck_b) = runs
    drift = max(abs(x - y) / max(abs(x), 1e-30) for x, y in zip(loss_a, loss_b))
    ok = va_a == va_b and drift <= 1e-6 and ck_a == ck_b
    criterion(10, ok, f"same split, loss drift {drift:.1e}, checkpoints identical: {ck_a == ck_b}")


LAYOUT_TOKEN = re.compile(r"NL0\d(?:-\d)?")


def raw_rows():
    rows = []
    for line in TABLE.read_text(encoding="utf-8").splitlines():
        cells = line.split("\t")
        rows.append((cells[1], cells[4], [c for c in cells[5:8] if c]))
    return rows


def cell_leaves(cell):
    return [ch for ch in LAYOUT_TOKEN.sub("", cell) if ch not in "() "]


def recount(rows):
    """Statistics recomputed straight from the table text."""
    annotated = [r for r in rows if r[1] != "TBD"]
    layouts = Counter(r[1].split("-")[0] for r in annotated)
    variations = Counter(int(r[1].split("-")[1]) for r in annotated if "-" in r[1])
    nested = Counter(r[1].split("-")[0] for r in annotated if any("(" in c for c in r[2]))
    users = {}
    for hanzi, _, cells in annotated:
        for leaf in {ch for c in cells for ch in cell_leaves(c)}:
            users[leaf] = users.get(leaf, 0) + 1
    ranked = sorted(users, key=lambda c: (-users[c], ord(c)))
    targets = [r for r in annotated if r[1] != "NL00"]
    flat, rec = [(0, 0)], [(0, 0)]
    for n in range(1, len(ranked) + 1):
        top = set(ranked[:n])
        flat.append((n, sum(all("(" not in c and c in top for c in r[2]) for r in targets)))
        pool, done = set(top), set()
        while True:
            fresh = {
                i
                for i, r in enumerate(targets)
                if i not in done and all(all(ch in pool for ch in cell_leaves(c)) for c in r[2])
            }
            if not fresh:
                break
            done |= fresh
            pool |= {targets[i][0] for i in fresh}
        rec.append((n, len(done)))
    return {
        "layouts": dict(layouts),
        "variations": dict(variations),
        "nested": dict(nested),
        "unannotated": len(rows) - len(annotated),
        "frequency": [(c, users[c]) for c in ranked],
        "coverage": flat,
        "coverage_recursive": rec,
    }


def test_c10_stats_match_recount(criterion):
    entries = read_table(TABLE)
    stats = layout_stats(entries)
    got = {
        "layouts": dict(stats.layouts),
        "variations": dict(stats.variations),
        "nested": dict(stats.nested),
        "unannotated": stats.unannotated,
        "frequency": component_frequency(entries),
        "coverage": coverage_curve(entries),
        "coverage_recursive": coverage_curve(entries, recursive=True),
    }
    want = recount(raw_rows())
    differ = [k for k in want if got[k] != want[k]]
    criterion(
        10,
        len(entries) == 50 and not differ,
        f"{len(entries)} rows; stats and coverage curves match the recount"
        + (f" except {differ}" if differ else f" (flat {want['coverage'][-1]}, recursive {want['coverage_recursive'][-1]})"),
    )
