"""Acceptance suite: one test per criterion, each printing a PASS line.

The training-heavy criteria share two pipeline working directories (a
57-subject cohort for the diagnostic checks and a 30-subject cohort for
the generalization/timing checks) built through the CLI. Set
PARKVOL_ACCEPT_DIR to a stable path to reuse finished training jobs
across runs (the CLI's resume logic skips completed jobs); leave it unset
for a fresh end-to-end run.

Run with `pytest tests/test_acceptance.py -v -s` to see the PASS lines.
"""

import concurrent.futures
import gzip
import time
import json
import multiprocessing
import os
from pathlib import Path

import numpy as np
import pytest
import torch

from nifti_reference import reference_nifti_bytes
from parkvol.cli import main as cli_main
from parkvol.evaluation.classifiers import fit_gbt
from parkvol.evaluation.delong import compare_auc
from parkvol.evaluation.metrics import dice_score, roc_auc
from parkvol.io import STRUCTURES, load_nifti
from parkvol.models import (
    build_unetr,
    build_vnet,
    desk_unetr_config,
    desk_vnet_config,
    load_checkpoint,
    segment_structure,
)
from parkvol.models.config import UNETRConfig, VNetConfig
from parkvol.phantom import Condition, generate_subject
from parkvol.training import TrainSpec, dice_loss, train

DESK = (64, 64, 32)


def _ok(criterion: str, detail: str) -> None:
    print(f"\n[acceptance] {criterion}: PASS — {detail}")


@pytest.fixture(scope="session")
def accept_root(tmp_path_factory):
    env = os.environ.get("PARKVOL_ACCEPT_DIR")
    if env:
        root = Path(env)
        root.mkdir(parents=True, exist_ok=True)
        return root
    return tmp_path_factory.mktemp("acceptance")


def _build_pipeline(workdir: Path, sizes: str, seed: int, backbone: str) -> None:
    workdir.mkdir(parents=True, exist_ok=True)
    if not (workdir / "cohort" / "manifest.json").exists():
        assert cli_main(["phantom-gen", "--workdir", str(workdir), "--sizes", sizes,
                         "--seed", str(seed)]) == 0
    assert cli_main(["train", "--workdir", str(workdir), "--backbone", backbone,
                     "--folds", "3", "--seed", str(seed), "--workers", "2"]) == 0
    if not (workdir / "reports" / "report.json").exists():
        assert cli_main(["evaluate", "--workdir", str(workdir)]) == 0


@pytest.fixture(scope="session")
def run57(accept_root):
    """57-subject desk cohort, CNN models, out-of-fold evaluation."""
    workdir = accept_root / "run57"
    _build_pipeline(workdir, "normal=15,pd=15,psp=9,msac=9,msap=9", 7, "cnn")
    return workdir


@pytest.fixture(scope="session")
def run30(accept_root):
    """30-subject desk cohort, both backbones, evaluation + bench."""
    workdir = accept_root / "run30"
    _build_pipeline(workdir, "normal=6,pd=6,psp=6,msac=6,msap=6", 11, "both")
    if not (workdir / "bench" / "bench.json").exists():
        assert cli_main(["bench", "--workdir", str(workdir), "--repeats", "3",
                         "--n-volumes", "2"]) == 0
    return workdir


def _report(workdir: Path) -> dict:
    return json.loads((workdir / "reports" / "report.json").read_text())


# --- criterion 3a: overfit jobs (direct training, no folds) -----------------

OVERFIT_SEEDS = {
    Condition.NORMAL: 101,
    Condition.PD: 102,
    Condition.PSP: 103,
    Condition.MSA_C: 104,
    Condition.MSA_P: 105,
}


def _overfit_job(payload: dict) -> dict:
    torch.set_num_threads(int(os.environ.get("PARKVOL_TORCH_THREADS", "1")))
    backbone = payload["backbone"]
    structure = payload["structure"]
    ckpt = Path(payload["ckpt"])
    subjects = [generate_subject(seed, cond, DESK) for cond, seed in OVERFIT_SEEDS.items()]
    if ckpt.exists():
        model = load_checkpoint(ckpt)
    else:
        if backbone == "cnn":
            model = build_vnet(desk_vnet_config(DESK), seed=payload["seed"])
            spec = TrainSpec(learning_rate=1e-3, epochs=200, seed=payload["seed"],
                             patience=20, stop_loss=0.004)
        else:
            model = build_unetr(desk_unetr_config(DESK), seed=payload["seed"])
            spec = TrainSpec(learning_rate=3e-3, iterations=2000, seed=payload["seed"],
                             patience=20, stop_loss=0.004)
        train(model, subjects, structure, spec, checkpoint_path=ckpt)
    dices = [
        dice_score(segment_structure(model, s.volume), s.reference_masks[structure])
        for s in subjects
    ]
    return {"backbone": backbone, "structure": structure, "train_dice": float(np.mean(dices))}


@pytest.fixture(scope="session")
def overfit_results(accept_root):
    out_dir = accept_root / "overfit"
    out_dir.mkdir(exist_ok=True)
    payloads = []
    for backbone in ("cnn", "vit"):
        for structure in STRUCTURES:
            payloads.append({
                "backbone": backbone,
                "structure": structure,
                "seed": 500,
                "ckpt": str(out_dir / f"{backbone}_{structure}.ckpt.npz"),
            })
    ctx = multiprocessing.get_context("spawn")
    results = {}
    with concurrent.futures.ProcessPoolExecutor(max_workers=2, mp_context=ctx) as pool:
        for res in pool.map(_overfit_job, payloads):
            results[(res["backbone"], res["structure"])] = res["train_dice"]
    return results


# ---------------------------------------------------------------- criterion 1

class TestCriterion1MetricOracles:
    def test_dice_matches_brute_force_on_1000_pairs(self):
        t0 = time.perf_counter()
        rng = np.random.default_rng(1001)
        for _ in range(1000):
            a = (rng.random((8, 8, 8)) < rng.uniform(0.05, 0.6)).astype(np.uint8)
            b = (rng.random((8, 8, 8)) < rng.uniform(0.05, 0.6)).astype(np.uint8)
            overlap = int(np.logical_and(a, b).sum())
            total = int(a.sum()) + int(b.sum())
            expected = 1.0 if total == 0 else 2.0 * overlap / total
            from parkvol.io import StructureMask

            got = dice_score(
                StructureMask(a, (1, 1, 1), "pons"), StructureMask(b, (1, 1, 1), "pons")
            )
            assert got == expected
        assert time.perf_counter() - t0 < 60.0
        _ok("criterion 1a", "dice_score == brute-force voxel counting on 1000 random 8x8x8 pairs")

    def test_roc_auc_matches_enumeration_on_500_instances(self):
        t0 = time.perf_counter()
        rng = np.random.default_rng(1002)
        worst = 0.0
        for _ in range(500):
            n = int(rng.integers(2, 201))
            n_pos = int(rng.integers(1, n))
            labels = np.zeros(n, dtype=int)
            labels[:n_pos] = 1
            rng.shuffle(labels)
            if rng.random() < 0.5:
                scores = rng.integers(0, max(2, n // 4), size=n).astype(float)  # ties
            else:
                scores = rng.normal(size=n)
            pos = scores[labels == 1][:, None]
            neg = scores[labels == 0][None, :]
            enumerated = ((pos > neg).sum() + 0.5 * (pos == neg).sum()) / (pos.size * neg.size)
            worst = max(worst, abs(roc_auc(scores, labels) - enumerated))
        assert worst <= 1e-12
        assert time.perf_counter() - t0 < 60.0
        _ok("criterion 1b", f"roc_auc == pair enumeration on 500 instances (max |diff| = {worst:.2e})")


# ---------------------------------------------------------------- criterion 2

def _gradient_check(model, seed: int, n_samples: int = 150):
    torch.manual_seed(seed)
    net = model.net.double().eval()
    rng = np.random.default_rng(seed)
    x = torch.from_numpy(rng.random((1, 1, 16, 16, 8))).double()
    target = torch.from_numpy((rng.random((1, 1, 16, 16, 8)) < 0.2).astype(np.float64))

    loss = dice_loss(net(x), target)
    params = [p for p in net.parameters() if p.requires_grad]
    grads = torch.autograd.grad(loss, params)

    flat_grad = torch.cat([g.reshape(-1) for g in grads]).numpy()
    sizes = [p.numel() for p in params]
    offsets = np.cumsum([0] + sizes)
    picks = rng.choice(offsets[-1], size=n_samples, replace=False)

    def loss_value() -> float:
        with torch.no_grad():
            return float(dice_loss(net(x), target))

    rel_errors, checked = [], 0
    for flat_idx in picks:
        p_idx = int(np.searchsorted(offsets, flat_idx, side="right") - 1)
        local = int(flat_idx - offsets[p_idx])
        param = params[p_idx]
        with torch.no_grad():
            orig = param.reshape(-1)[local].item()
            h = 1e-6 * max(1.0, abs(orig))
            param.reshape(-1)[local] = orig + h
            f_plus = loss_value()
            param.reshape(-1)[local] = orig - h
            f_minus = loss_value()
            param.reshape(-1)[local] = orig
        numeric = (f_plus - f_minus) / (2.0 * h)
        analytic = float(flat_grad[flat_idx])
        denom = abs(analytic) + abs(numeric)
        if denom < 1e-9:
            continue  # both effectively zero: agreement at machine level
        checked += 1
        rel_errors.append(abs(analytic - numeric) / denom)
    return checked, float(np.max(rel_errors))


class TestCriterion2GradientChecks:
    def test_cnn_gradients(self):
        t0 = time.perf_counter()
        model = build_vnet(VNetConfig((16, 16, 8), 2, 4, (1, 1)), seed=21)
        checked, worst = _gradient_check(model, seed=21)
        assert checked >= 100
        assert worst < 1e-3
        assert time.perf_counter() - t0 < 300.0
        _ok("criterion 2 (cnn)", f"{checked} parameters checked, max rel err {worst:.2e}")

    def test_vit_gradients(self):
        cfg = UNETRConfig((16, 16, 8), patch_size=4, embed_dim=16, n_transformer_layers=3,
                          n_heads=2, mlp_dim=32, skip_tap_layers=(1, 2, 3),
                          decoder_base_channels=4)
        t0 = time.perf_counter()
        model = build_unetr(cfg, seed=22)
        checked, worst = _gradient_check(model, seed=22)
        assert checked >= 100
        assert worst < 1e-3
        assert time.perf_counter() - t0 < 300.0
        _ok("criterion 2 (vit)", f"{checked} parameters checked, max rel err {worst:.2e}")


# ---------------------------------------------------------------- criterion 3

class TestCriterion3SegmentationQuality:
    def test_overfit_five_phantoms(self, overfit_results):
        for (backbone, structure), dice in sorted(overfit_results.items()):
            assert dice >= 0.95, f"{backbone}/{structure} training-set dice {dice:.4f} < 0.95"
        worst = min(overfit_results.values())
        _ok("criterion 3a", f"training-set dice >= 0.95 for 2 backbones x 6 structures "
                            f"(worst {worst:.4f})")

    def test_held_out_dice_on_30_phantoms(self, run30):
        # --backbone both over 6 structures x 3 folds leaves 36 checkpoints
        assert len(list((run30 / "models").glob("*_fold*.ckpt.npz"))) == 36
        dice_header = (run30 / "reports" / "dice_table.csv").read_text().splitlines()[0]
        assert dice_header == "structure,cnn,vit"
        report = _report(run30)
        worst = 1.0
        for structure in STRUCTURES:
            for backbone in ("cnn", "vit"):
                cell = report["dice"][structure][backbone]
                assert len(cell["fold_values"]) == 3
                low = min(cell["fold_values"])
                worst = min(worst, low)
                assert low >= 0.85, f"{backbone}/{structure} fold dice {low:.4f} < 0.85"
        _ok("criterion 3b", f"held-out dice >= 0.85 for every structure/backbone/fold "
                            f"(worst fold mean {worst:.4f})")


# ---------------------------------------------------------------- criterion 4

class TestCriterion4DiagnosticOrdering:
    def test_single_feature_thresholds(self, run57):
        # desk preset, cnn backbone, 6 structures, 3 folds -> 18 checkpoints
        assert len(list((run57 / "models").glob("cnn_*_fold*.ckpt.npz"))) == 18
        report = _report(run57)
        assert len(report["tasks"]) == 7
        cnn = {task: report["single_feature"][task]["cnn"] for task in report["tasks"]}

        ratio_auc = cnn["Normal vs. MSA-C"]["midbrain_pons_ratio"]["auc"]
        assert ratio_auc >= 0.85

        v3_auc = cnn["Normal vs. PSP"]["third_ventricle"]["auc"]
        assert v3_auc >= 0.80

        pd_best = max(cell["auc"] for cell in cnn["Normal vs. PD"].values())
        assert pd_best <= 0.70
        _ok("criterion 4", f"MSA-C ratio AUC {ratio_auc:.3f} >= 0.85; PSP V3 AUC {v3_auc:.3f} "
                           f">= 0.80; PD best single-feature AUC {pd_best:.3f} <= 0.70")


# ---------------------------------------------------------------- criterion 5

class TestCriterion5CombinedGain:
    @staticmethod
    def _features(workdir: Path, method: str):
        rows = (workdir / "reports" / "features.csv").read_text().strip().splitlines()
        header = rows[0].split(",")
        out = {}
        for line in rows[1:]:
            cells = line.split(",")
            rec = dict(zip(header, cells))
            if rec["method"] == method:
                out[rec["subject_id"]] = (
                    rec["condition"],
                    np.array([float(rec[s]) for s in STRUCTURES]),
                )
        return out

    def test_logistic_beats_best_single_structure(self, run57):
        report = _report(run57)
        for task in ("Normal vs. PSP", "Normal vs. MSA-P"):
            combined = report["combined"][task]["cnn"]["logistic"]["auc"]
            best_single = max(
                report["single_feature"][task]["cnn"][s]["auc"] for s in STRUCTURES
            )
            assert combined >= best_single - 0.05, (
                f"{task}: logistic {combined:.3f} < best single {best_single:.3f} - 0.05"
            )
            _ok("criterion 5a", f"{task}: logistic 6-volume AUC {combined:.3f} vs best "
                                f"single-structure {best_single:.3f}")

    def test_boosted_tree_loss_monotone_on_cohort(self, run57):
        feats = self._features(run57, "cnn")
        for positive, negative in (("PSP", "Normal"), ("MSA-P", "Normal")):
            x, y = [], []
            for condition, vec in feats.values():
                if condition in (positive, negative):
                    x.append(vec)
                    y.append(1 if condition == positive else 0)
            clf = fit_gbt(np.stack(x), np.array(y), n_trees=100, max_depth=3, learning_rate=0.1)
            losses = np.array(clf.train_loss_history)
            assert (np.diff(losses) <= 1e-12).all()
            assert losses[-1] < losses[0]
        _ok("criterion 5b", "boosted-tree training loss non-increasing each of 100 rounds "
                            "on both tasks")


# ---------------------------------------------------------------- criterion 6

class TestCriterion6TimingDirection:
    def test_cnn_faster_than_vit(self, run30):
        bench = json.loads((run30 / "bench" / "bench.json").read_text())
        cnn_total = bench["timings"]["cnn"]["total"]["mean"]
        vit_total = bench["timings"]["vit"]["total"]["mean"]
        assert cnn_total < vit_total
        assert cnn_total < 60.0 and vit_total < 60.0
        _ok("criterion 6", f"six-structure inference: cnn {cnn_total:.2f}s < vit "
                           f"{vit_total:.2f}s (ratio {vit_total / cnn_total:.1f}x), both < 60s")


# ---------------------------------------------------------------- criterion 7

def _permutation_p(scores_a, scores_b, labels, n_resamples=10000, seed=0):
    rng = np.random.default_rng(seed)
    observed = abs(roc_auc(scores_a, labels) - roc_auc(scores_b, labels))
    hits = 0
    for _ in range(n_resamples):
        flip = rng.random(len(labels)) < 0.5
        pa = np.where(flip, scores_b, scores_a)
        pb = np.where(flip, scores_a, scores_b)
        if abs(roc_auc(pa, labels) - roc_auc(pb, labels)) >= observed - 1e-12:
            hits += 1
    return hits / n_resamples


def _constructed_cases():
    """20 paired-score scenarios: varying size, signal gap, correlation, ties."""
    cases = []
    rng = np.random.default_rng(777)
    sizes = [30, 40, 50, 60, 80, 100, 40, 60, 80, 100]
    for i in range(20):
        n = sizes[i % len(sizes)]
        labels = np.array([0, 1] * (n // 2))
        shared = rng.normal(size=n)
        signal_a = 0.4 + 0.12 * (i % 5)
        signal_b = signal_a + (-0.35 + 0.07 * (i % 7))
        noise = 0.5 + 0.1 * (i % 3)
        a = shared + signal_a * labels + noise * rng.normal(size=n)
        b = shared + signal_b * labels + noise * rng.normal(size=n)
        if i % 4 == 0:
            a = np.round(a, 1)  # induce ties
            b = np.round(b, 1)
        cases.append((a, b, labels))
    return cases


class TestCriterion7StatisticalTest:
    def test_identical_inputs_p_one(self):
        labels = np.array([0, 1] * 10)
        scores = np.arange(20, dtype=float)
        assert compare_auc(scores, scores, labels).p_value == 1.0
        _ok("criterion 7a", "identical score vectors give p = 1.0")

    def test_against_permutation_oracle(self):
        worst = 0.0
        for idx, (a, b, labels) in enumerate(_constructed_cases()):
            delong_p = compare_auc(a, b, labels).p_value
            perm_p = _permutation_p(a, b, labels, n_resamples=10000, seed=idx)
            worst = max(worst, abs(delong_p - perm_p))
            assert abs(delong_p - perm_p) <= 0.03, (
                f"case {idx}: DeLong {delong_p:.4f} vs permutation {perm_p:.4f}"
            )
        _ok("criterion 7b", f"DeLong vs 10,000-resample permutation oracle on 20 cases "
                            f"(max |diff| = {worst:.3f})")


# ---------------------------------------------------------------- criterion 8

class TestCriterion8DeterminismAndIO:
    def test_nifti_round_trip_all_fixtures(self, tmp_path):
        from parkvol.io import save_nifti

        rng = np.random.default_rng(88)
        fixtures = [
            ("u8", (rng.random((5, 4, 3)) < 0.5).astype("<u1"), 2, (1.0, 1.0, 1.0)),
            ("i16", rng.integers(-300, 300, size=(4, 4, 4)).astype("<i2"), 4, (0.5, 0.5, 2.0)),
            ("f32", rng.normal(size=(6, 3, 5)).astype("<f4"), 16, (0.7, 1.1, 1.3)),
        ]
        for name, data, code, spacing in fixtures:
            for suffix in (".nii", ".nii.gz"):
                path = tmp_path / f"{name}{suffix}"
                blob = reference_nifti_bytes(data, spacing, code)
                path.write_bytes(gzip.compress(blob) if suffix.endswith("gz") else blob)
                vol = load_nifti(path)
                expected = data if code != 4 else data.astype(np.float32)
                np.testing.assert_array_equal(vol.data, expected)
                out = tmp_path / f"rt_{name}{suffix}"
                save_nifti(vol, out)
                again = load_nifti(out)
                np.testing.assert_array_equal(again.data, vol.data)
        _ok("criterion 8a", "NIfTI round trip voxel-exact on uint8/int16/float32, plain and gzip")

    def test_end_to_end_determinism(self, tmp_path):
        reports = []
        for run in ("a", "b"):
            workdir = tmp_path / run
            workdir.mkdir()
            assert cli_main(["phantom-gen", "--workdir", str(workdir),
                             "--sizes", "normal=3,msac=3", "--seed", "19"]) == 0
            assert cli_main(["train", "--workdir", str(workdir), "--backbone", "cnn",
                             "--folds", "3", "--epochs", "2", "--seed", "19",
                             "--workers", "1"]) == 0
            assert cli_main(["evaluate", "--workdir", str(workdir), "--seed", "19"]) == 0
            reports.append((workdir / "reports" / "report.json").read_bytes())
        assert reports[0] == reports[1]
        _ok("criterion 8b", "fixed-seed phantom-gen -> train -> evaluate twice gives "
                            "byte-identical report JSON")
