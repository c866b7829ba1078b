"""End-to-end acceptance checks, one test per criterion.

Each test prints a one-line verdict with the measured quantities; the
session summary lists PASS/FAIL per criterion.
"""

import filecmp
import math
import subprocess
import sys
import time

import numpy as np
import pytest
import torch

from conftest import ACCEPTANCE_DETAIL, TINY_MODEL
from pestalk import losses as L
from pestalk import mesh, metrics, signal
from pestalk.blendshapes import DEFAULT_PARTITION, LOWER_INDICES, UPPER_INDICES
from pestalk.decoder import DecoderInputs, PartitionedDecoder
from pestalk.esmm import StyleLibrary, retrieve_style
from pestalk.synthdata import CorpusSpec, generate_corpus
from pestalk.training import TrainConfig, classification_accuracy, infer, load_clips, train


def report(number, text):
    ACCEPTANCE_DETAIL[number] = text
    print(f"[criterion {number}] {text}")


# -- 1 -------------------------------------------------------------------------

def test_criterion_1_retrieval_matches_brute_force_scan():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    queries = mismatches = 0
    emotions = [f"e{c}" for c in range(8)]
    for _ in range(100):
        K = int(rng.integers(1, 21))
        base = {f"spk{k:02d}": rng.normal(size=512) for k in range(K)}
        lib = StyleLibrary(base, emotions)
        for s in base:
            for e in emotions:
                for _ in range(int(rng.integers(1, 3))):
                    lib.add(s, e, rng.normal(size=256))
        keys = lib.keys
        for _ in range(5):
            speaker = keys[int(rng.integers(len(keys)))][0]
            E, R = rng.normal(size=256), lib.base_styles[speaker] + 0.1 * rng.normal(size=512)
            q = np.concatenate([R, E])
            best, best_d = -1, math.inf
            for i, key in enumerate(keys):
                P = lib.entry(*key)
                d = 1.0 - float(q @ P) / (np.linalg.norm(q) * np.linalg.norm(P))
                if d < best_d:
                    best, best_d = i, d
            got = retrieve_style(E, R, lib)
            queries += 1
            mismatches += keys.index(got.key) != best
    elapsed = time.perf_counter() - start
    report(1, f"{queries} queries over 100 libraries, {mismatches} mismatches, {elapsed:.2f} s")
    assert mismatches == 0
    assert elapsed < 10.0


# -- 2 -------------------------------------------------------------------------

def _rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-12)


def _fd_check(fn, x, eps=1e-6):
    """Largest relative error between autograd and central differences, per coordinate."""
    x = x.detach().clone().requires_grad_(True)
    (g,) = torch.autograd.grad(fn(x), x)
    worst = 0.0
    flat = x.detach().reshape(-1)
    for i in range(flat.numel()):
        xp, xm = flat.clone(), flat.clone()
        xp[i] += eps
        xm[i] -= eps
        num = (fn(xp.reshape(x.shape)) - fn(xm.reshape(x.shape))).item() / (2 * eps)
        ana = g.reshape(-1)[i].item()
        if abs(num) > 1e-7 or abs(ana) > 1e-7:
            worst = max(worst, _rel_err(ana, num))
    return worst


def test_criterion_2_gradients_match_finite_differences():
    torch.manual_seed(0)
    g = torch.Generator().manual_seed(0)
    T = 8
    gt = torch.rand(T, 52, generator=g, dtype=torch.float64)
    pred = torch.rand(T, 52, generator=g, dtype=torch.float64)
    errs = {
        "L_pos": _fd_check(lambda p: L.position_loss(p, gt), pred),
        "L_mot": _fd_check(lambda p: L.motion_loss(p, gt), pred),
        "L_cls": _fd_check(lambda z: L.classification_loss(z, [2, 0, 5]), torch.randn(3, 8, generator=g, dtype=torch.float64)),
    }
    pooled = torch.randn(4, 2, 6, generator=g, dtype=torch.float64)  # E, E_hat, C, C_hat for two pairs
    for orientation in ("corrected", "literal"):
        errs[f"L_dis[{orientation}]"] = _fd_check(
            lambda z: L.disentanglement_loss(z[0], z[1], z[2], z[3], orientation), pooled)

    dec = PartitionedDecoder(width=16, heads=2, blocks=1).double()
    C, E, S = (torch.randn(T, 256, generator=g, dtype=torch.float64) for _ in range(3))
    params = [p for p in dec.parameters()]

    def end_to_end():
        out = dec(DecoderInputs(C, E, S))
        comps = {"L_pos": L.position_loss(out, gt), "L_mot": L.motion_loss(out, gt)}
        return L.total_loss(comps)[0]

    grads = torch.autograd.grad(end_to_end(), params)
    worst = 0.0
    eps = 1e-6
    with torch.no_grad():
        for p, gp in zip(params, grads):
            flat, gflat = p.view(-1), gp.reshape(-1)
            for i in torch.randperm(flat.numel(), generator=g)[:6].tolist():
                orig = flat[i].item()
                flat[i] = orig + eps
                fp = end_to_end().item()
                flat[i] = orig - eps
                fm = end_to_end().item()
                flat[i] = orig
                num = (fp - fm) / (2 * eps)
                if abs(num) > 1e-7 or abs(gflat[i].item()) > 1e-7:
                    worst = max(worst, _rel_err(gflat[i].item(), num))
    errs["decoder end-to-end"] = worst
    report(2, ", ".join(f"{k} {v:.2e}" for k, v in errs.items()))
    assert all(v < 1e-3 for v in errs.values())


# -- 3 -------------------------------------------------------------------------

def test_criterion_3_analytic_loss_values():
    uniform = torch.zeros(4, 8, dtype=torch.float64)
    cls = L.classification_loss(uniform, [0, 3, 5, 7]).item()
    g = torch.Generator().manual_seed(1)
    b = torch.rand(12, 52, generator=g, dtype=torch.float64)
    offset = torch.rand(1, 52, generator=g, dtype=torch.float64)
    mot = L.motion_loss(b + offset, b).item()
    ones = {k: torch.tensor(1.0, dtype=torch.float64) for k in ("L_pos", "L_mot", "L_cls", "L_dis")}
    total = L.total_loss(ones, L.LossWeights())[0].item()
    report(3, f"cls {cls!r} (ln 8 = {math.log(8)!r}), motion offset {mot!r}, total {total!r}")
    assert abs(cls - math.log(8)) < 1e-9
    assert abs(mot) < 1e-12
    assert abs(total - 1.61) < 1e-12


# -- 4 -------------------------------------------------------------------------

def test_criterion_4_partition_invariant():
    torch.manual_seed(4)
    dec = PartitionedDecoder().eval()
    g = torch.Generator().manual_seed(4)
    C, E, S = (torch.randn(20, 256, generator=g) for _ in range(3))
    with torch.no_grad():
        base = dec(DecoderInputs(C, E, S))
        c_moved = dec(DecoderInputs(C + torch.randn(20, 256, generator=g), E, S))
        e_moved = dec(DecoderInputs(C, E + torch.randn(20, 256, generator=g), S))
    up, lo = list(UPPER_INDICES), list(LOWER_INDICES)
    upper_bits_equal = torch.equal(base[:, up], c_moved[:, up])
    lower_bits_equal = torch.equal(base[:, lo], e_moved[:, lo])
    report(4, f"channels {base.shape[1]} ({len(DEFAULT_PARTITION.lower)}/{len(DEFAULT_PARTITION.upper)}), "
              f"upper untouched by content: {upper_bits_equal}, lower untouched by emotion: {lower_bits_equal}")
    assert base.shape == (20, 52)
    assert len(DEFAULT_PARTITION.lower) == 32 and len(DEFAULT_PARTITION.upper) == 20
    assert upper_bits_equal and lower_bits_equal
    # and each half does react to its own driver
    assert not torch.equal(base[:, lo], c_moved[:, lo])
    assert not torch.equal(base[:, up], e_moved[:, up])


# -- 5 -------------------------------------------------------------------------

def test_criterion_5_deformation_transfer_fixtures():
    face = mesh.synthetic_face_basis()
    target = face.neutral.with_vertices(face.neutral.vertices * [1.1, 0.95, 1.2] + [0.2, -0.1, 0.0])
    ident = mesh.deformation_transfer(face.neutral, face.neutral, target)
    identity_err = np.abs(ident.vertices - target.vertices).max()

    solver = mesh.DeformationTransfer(face.neutral, np.arange(len(face.neutral.triangles)))
    self_err = max(np.abs(solver.transfer(face.neutral, t).vertices - t.vertices).max() for t in face.templates)

    src = mesh.cube_mesh(1.0)
    scaled = src.with_vertices(src.vertices * 2.5)
    tgt = mesh.cube_mesh(2.0, origin=(1.0, -3.0, 0.5))
    out = mesh.deformation_transfer(src, scaled, tgt)
    v0 = tgt.vertices[0]
    cube_err = np.abs(out.vertices - (v0 + 2.5 * (tgt.vertices - v0))).max()
    report(5, f"identity {identity_err:.2e}, self-transfer {self_err:.2e}, scaled cube {cube_err:.2e}")
    assert identity_err < 1e-8
    assert self_err < 1e-6
    assert cube_err < 1e-6


# -- 6 -------------------------------------------------------------------------

def test_criterion_6_metric_oracles():
    rng = np.random.default_rng(6)
    basis = mesh.synthetic_face_basis(9, 9)
    regions = metrics.RegionConfig().with_mesh_masks(basis.neutral.region_masks)
    pred, gt = rng.random((10, 52)), rng.random((10, 52))

    lbe = pbe = mbe = 0.0
    for t in range(10):
        lbe += math.sqrt(sum((pred[t, k] - gt[t, k]) ** 2 for k in regions.lip_channels))
        pbe += math.sqrt(sum((pred[t, k] - gt[t, k]) ** 2 for k in regions.pronunciation_channels))
        mbe += max(abs(pred[t, k] - gt[t, k]) for k in range(52))
    got_b = metrics.blendshape_metrics(pred, gt, regions)
    bs_err = max(abs(a - b / 10) for a, b in zip(got_b, (lbe, pbe, mbe)))

    Vp, Vg = rng.normal(size=(10, 30, 3)), rng.normal(size=(10, 30, 3))
    regions_v = metrics.RegionConfig(lip_vertices=range(0, 8), eye_forehead_vertices=range(8, 20),
                                     upper_face_vertices=range(5, 30))

    def dist(a, b):
        return math.sqrt(sum((a[i] - b[i]) ** 2 for i in range(3)))

    lve = sum(max(dist(Vp[t, v], Vg[t, v]) for v in regions_v.lip_vertices) for t in range(10)) / 10
    eve = sum(max(dist(Vp[t, v], Vg[t, v]) for v in regions_v.eye_forehead_vertices) for t in range(10)) / 10

    def dyn(V, v):
        mean = [sum(V[t, v, i] for t in range(10)) / 10 for i in range(3)]
        d = [dist(V[t, v], mean) for t in range(10)]
        mu = sum(d) / 10
        return math.sqrt(sum((x - mu) ** 2 for x in d) / 10)

    ups = list(regions_v.upper_face_vertices)
    fdd = sum(dyn(Vp, v) - dyn(Vg, v) for v in ups) / len(ups)
    got_v = metrics.vertex_metrics(Vp, Vg, regions_v)
    v_err = max(abs(a - b) for a, b in zip(got_v, (lve, eve, fdd)))

    zeros = metrics.evaluate_clip(gt, gt, basis=basis)
    all_zero = all(getattr(zeros, k) == 0.0 for k in ("lbe", "pbe", "mbe", "lve", "eve", "fdd"))

    sr = 16000
    audio = np.zeros(2 * sr)
    beat_times = (0.25, 0.75, 1.25, 1.75)
    for bt in beat_times:
        i = int(round(bt * sr))
        audio[i : i + 160] = np.sin(2 * np.pi * 2000 * np.arange(160) / sr)
    frames = np.arange(60) / 30
    motion = np.zeros((60, 52))
    motion[:, regions.lip_channels[0]] = 0.5 + 0.4 * np.sin(2 * np.pi * frames)  # lip speed minima at the beats
    ba = metrics.beat_alignment(signal.AudioClip(audio, sr), motion, regions)
    report(6, f"blendshape oracle {bs_err:.1e}, vertex oracle {v_err:.1e}, pred==gt zeros {all_zero}, BA {ba!r}")
    assert bs_err < 1e-7 and v_err < 1e-7
    assert all_zero
    assert abs(ba - 1.0) < 1e-9


# -- 7 -------------------------------------------------------------------------

def test_criterion_7_signal_fixtures():
    t = np.arange(50, dtype=float)
    quad = np.stack([0.02 * t**2 - 0.3 * t + 1.0, -0.5 * t**2 + 7.0], axis=1)
    sg_err = np.abs(signal.savgol_smooth(quad, 5, 2)[2:-2] - quad[2:-2]).max()
    silence = signal.mel_spectrogram(signal.AudioClip(np.zeros(8000))).frames
    rng = np.random.default_rng(7)
    exact = True
    for F, T in [(100, 30), (3, 77), (49, 50), (1, 4)]:
        x = rng.normal(size=(F, 5))
        y = signal.align_frames(x, T)
        exact &= bool(np.array_equal(y[0], x[0]) and np.array_equal(y[-1], x[-1]))
    report(7, f"SG quadratic error {sg_err:.1e}, silent mel max {float(np.abs(silence).max())!r}, endpoints exact {exact}")
    assert sg_err < 1e-9
    assert np.all(silence == 0.0)
    assert exact


# -- 8 -------------------------------------------------------------------------

# Width 64 keeps the 2000-step run inside the time budget on one CPU core.
LEARNING_MODEL = {"width": 64}


def test_criterion_8_toy_learning(tmp_path):
    start = time.perf_counter()
    spec = CorpusSpec(speakers=4, emotions=4, clips_per_key=6, heldout_per_key=2, seed=0)
    corpus = generate_corpus(spec, tmp_path / "corpus")
    clips = load_clips(corpus, corpus.emotion_names)
    config = TrainConfig(batch_size=2, learning_rate=1e-4, max_steps=2000, seed=0, model=LEARNING_MODEL)
    result = train(corpus, config, clips=clips)

    totals = np.array([h["L_total"] for h in result.history])
    early = totals[:10].mean()
    late = totals[-10:].mean()
    reduction = 1.0 - late / early

    held_out = [c for c in clips.values() if c.record.split == "test"]
    accuracy = classification_accuracy(result.model, held_out)

    groups = {}
    for c in held_out:
        groups.setdefault((c.record.emotion_id, c.record.sentence), []).append(c)
    candidates = [(a, b) for g in groups.values() for i, a in enumerate(g) for b in g[i + 1 :]
                  if a.record.speaker_id != b.record.speaker_id]
    rng = np.random.default_rng(8)
    trials = [candidates[i] for i in rng.choice(len(candidates), size=20, replace=False)]
    distinct = 0
    for a, b in trials:
        _, sa = infer(a.inputs, result.model, result.library, return_style=True)
        _, sb = infer(b.inputs, result.model, result.library, return_style=True)
        distinct += sa.key != sb.key
    elapsed = time.perf_counter() - start
    report(8, f"L_total {early:.3f} -> {late:.4f} ({100 * reduction:.1f}% lower), held-out accuracy "
              f"{accuracy:.3f} over {len(held_out)} clips, distinct keys {distinct}/20, {elapsed / 60:.1f} min")
    assert reduction >= 0.5
    assert accuracy >= 0.8
    assert distinct >= 16
    assert elapsed < 20 * 60


# -- 9 -------------------------------------------------------------------------

def _pipeline(root, seed):
    import json

    root.mkdir()
    (root / "spec.json").write_text(json.dumps({"speakers": 2, "emotions": 2, "clips_per_key": 1,
                                               "heldout_per_key": 1, "frame_range": [20, 30]}))
    (root / "train.json").write_text(json.dumps({"max_steps": 10, "voiceprint_steps": 5, "model": TINY_MODEL}))
    steps = [
        ["synth-data", "spec.json", "--out", "corpus", "--seed", seed],
        ["train", "corpus/manifest.jsonl", "--config", "train.json", "--out", "ckpt", "--seed", seed],
        ["infer", "ckpt", "ckpt/library.json", "corpus/wav", "pred"],
        ["eval", "pred", "corpus/blendshapes", "--out", "report"],
    ]
    for argv in steps:
        subprocess.run([sys.executable, "-m", "pestalk", *argv], cwd=root, check=True, capture_output=True)


def test_criterion_9_cli_reproducibility(tmp_path):
    _pipeline(tmp_path / "a", "11")
    _pipeline(tmp_path / "b", "11")
    csvs = sorted(p.name for p in (tmp_path / "a" / "pred").glob("*.csv"))
    same_csv = all(filecmp.cmp(tmp_path / "a" / "pred" / n, tmp_path / "b" / "pred" / n, shallow=False) for n in csvs)
    same_report = all(filecmp.cmp(tmp_path / "a" / "report" / n, tmp_path / "b" / "report" / n, shallow=False)
                      for n in ("report.json", "report.csv"))
    report(9, f"{len(csvs)} CSVs byte-identical: {same_csv}, reports byte-identical: {same_report}")
    assert csvs and same_csv and same_report
