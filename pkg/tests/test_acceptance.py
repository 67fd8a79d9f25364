"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line in the summary.

The training criteria (6 to 9) share one cache of runs, so the whole module
trains about twenty desk-scale models; expect roughly half an hour on one core.
"""

import time
from dataclasses import replace

import numpy as np
import pytest
import torch

from cowseg.container import FormatError, VersionError
from cowseg.core import BinaryMask, Episode, Image, validate_partition
from cowseg.data import episode_rng, generate_episode, load_episode, save_episode
from cowseg.harness import TrainConfig, evaluate_net, train
from cowseg.harness.checkpoint import load_checkpoint, save_checkpoint
from cowseg.harness.pipeline import run_heads
from cowseg.hpg import assemble_banks, build_banks
from cowseg.losses import TERM_NAMES, LossWeights, inter_loss, intra_loss
from cowseg.msmf import predict_query
from cowseg.nets import FULL_COUNTS, CoWHeads, CoWNet, PrototypeCounts, support_decode
from cowseg.ssp import build_sp_feature, masked_average_pool, partition_masks

from conftest import FD_REL_TOL, central_differences, disc_mask, toy_heads
from test_losses import brute_inter, brute_intra

pytestmark = pytest.mark.acceptance

# -- 1 ----------------------------------------------------------------------


def test_partition_exactness(acceptance):
    rng = np.random.default_rng(0)
    failures = 0
    t0 = time.perf_counter()
    for _ in range(10_000):
        h, w = rng.integers(1, 33, 2)
        gt = (rng.random((h, w)) < rng.random()).astype(np.uint8)
        pred = (rng.random((h, w)) < rng.random()).astype(np.uint8)
        failures += not validate_partition(partition_masks(gt, pred))
    dt = time.perf_counter() - t0
    ok = failures == 0 and dt < 10
    acceptance("1 partition exactness", ok, f"{failures} failures / 10000 pairs in {dt:.1f}s")
    assert ok


# -- 2 ----------------------------------------------------------------------


def test_bank_loss_oracle(acceptance):
    rng = np.random.default_rng(1)
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(1000):
        rows = rng.integers(1, 9, 4)
        dim = int(rng.integers(1, 9))
        banks = [torch.from_numpy(rng.normal(size=(r, dim))) for r in rows]
        lists = [b.tolist() for b in banks]
        s, q = (banks[0], banks[1]), (banks[2], banks[3])
        ls, lq = (lists[0], lists[1]), (lists[2], lists[3])
        worst = max(worst, abs(float(intra_loss(s, q)) - brute_intra(ls, lq)),
                    abs(float(inter_loss(s, q)) - brute_inter(ls, lq)))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-10 and dt < 10
    acceptance("2 intra/inter oracle", ok, f"max abs error {worst:.2e} over 1000 trials in {dt:.1f}s")
    assert ok


# -- 3 ----------------------------------------------------------------------

TOY_SEED = 3
MIN_MARGIN = 1e-3


def _split_at_widest_gap(z):
    z = z.flatten().sort().values
    lo, hi = len(z) // 4, 3 * len(z) // 4
    i = int((z[lo + 1:hi] - z[lo:hi - 1]).argmax()) + lo
    return (z[i] + z[i + 1]) / 2


def toy_instance(seed=TOY_SEED):
    """Heads plus 4 x 8 x 8 feature leaves with every thresholded decision well clear of its cut.

    The final 1x1 layers are rescaled and re-biased so the support
    self-prediction and the query prediction both split the image at a wide
    gap, which keeps every hard/normal region and the query mask non-empty.
    """
    heads = toy_heads(seed)
    g = torch.Generator().manual_seed(seed)
    f_s = torch.randn(4, 8, 8, generator=g, dtype=torch.float64)
    f_q = torch.randn(4, 8, 8, generator=g, dtype=torch.float64)
    m_s = torch.from_numpy(disc_mask(8, 8, 4, 3, 2.5).astype(np.float64))
    m_q = torch.from_numpy(disc_mask(8, 8, 3, 4, 2.5).astype(np.float64))
    with torch.no_grad():
        heads.support_decoder.head.weight.mul_(20)
        s = support_decode(build_sp_feature(f_s, masked_average_pool(f_s, m_s)), heads)
        heads.support_decoder.head.bias.sub_(_split_at_widest_gap(torch.logit(s)))
        out = run_heads(heads, f_s, m_s, f_q, m_q, np.random.default_rng(seed))
        heads.fg_decoder.out.bias.sub_(_split_at_widest_gap(out.probs[1].log() - out.probs[0].log()))
    return heads, f_s.requires_grad_(), m_s, f_q.requires_grad_(), m_q


def decision_margin(heads, f_s, m_s, f_q, m_q, seed=TOY_SEED):
    with torch.no_grad():
        s = support_decode(build_sp_feature(f_s, masked_average_pool(f_s, m_s)), heads)
        out = run_heads(heads, f_s, m_s, f_q, m_q, np.random.default_rng(seed))
        if out.align_skipped:
            return 0.0, out
        q = out.mask.to(f_q.dtype)
        s_q = support_decode(build_sp_feature(f_q, masked_average_pool(f_q, q)), heads)
    margins = ((s - 0.5).abs().min(), (out.probs[1] - out.probs[0]).abs().min(), (s_q - 0.5).abs().min())
    return float(min(margins)), out


def test_loss_gradients(acceptance):
    heads, f_s, m_s, f_q, m_q = toy_instance()
    margin, out = decision_margin(heads, f_s, m_s, f_q, m_q)
    assert margin >= MIN_MARGIN, f"toy instance too close to a decision boundary ({margin:.1e})"
    assert all("hard" in b.tags and "normal" in b.tags for b in (*out.banks_s, *out.banks_q))
    params = [f_s, f_q, *heads.parameters()]
    t0 = time.perf_counter()
    details, ok = [], True
    for name in TERM_NAMES:
        def loss_fn(name=name):
            return run_heads(heads, f_s, m_s, f_q, m_q, np.random.default_rng(TOY_SEED)).terms[name]
        checks = central_differences(loss_fn, params, 30, seed=7)
        worst = max(c[2] for c in checks)
        ok &= len(checks) >= 20 and worst <= FD_REL_TOL
        details.append(f"{name} {worst:.1e}")
    dt = time.perf_counter() - t0
    ok &= dt < 60
    acceptance("3 gradient checks", ok, f"max rel error per term (30 samples): {', '.join(details)}; {dt:.1f}s")
    assert ok


# -- 4 ----------------------------------------------------------------------


def test_normalization_invariants(acceptance):
    rng = np.random.default_rng(4)
    worst_sum, mismatches = 0.0, 0
    t0 = time.perf_counter()
    for i in range(1000):
        h, w = rng.integers(1, 17, 2)
        lf = torch.from_numpy(rng.normal(scale=rng.uniform(0.1, 30), size=(1, h, w)))
        lb = torch.from_numpy(rng.normal(scale=rng.uniform(0.1, 30), size=(1, h, w)))
        if i % 10 == 0:
            lb = lf.clone()
        size = None if i % 2 else (int(h * rng.integers(1, 5)), int(w * rng.integers(1, 5)))
        probs, mask = predict_query(lf, lb, size)
        worst_sum = max(worst_sum, float((probs.sum(0) - 1).abs().max()))
        mismatches += int((mask.long() != probs.argmax(0)).sum())
    dt = time.perf_counter() - t0
    ok = worst_sum <= 1e-6 and mismatches == 0 and dt < 5
    acceptance("4 normalization invariants", ok,
               f"max |sum-1| {worst_sum:.1e}, {mismatches} argmax mismatches, {dt:.1f}s")
    assert ok


# -- 5 ----------------------------------------------------------------------


def test_bank_arithmetic(acceptance):
    t0 = time.perf_counter()
    c = FULL_COUNTS
    torch.manual_seed(0)
    heads = CoWHeads(8, (16, 16), c, decoder_channels=(8, 4)).double()
    f = torch.randn(8, 16, 16, dtype=torch.float64)
    gt = disc_mask(16, 16, 8, 8, 5)
    pred = disc_mask(16, 16, 7, 9, 5)
    parts = partition_masks(gt, pred)
    assert all(r.sum() > 0 for r in parts.as_dict().values())
    p_fg = masked_average_pool(f, torch.from_numpy(gt))
    p_bg = masked_average_pool(f, torch.from_numpy(1 - gt))
    with torch.no_grad():
        fg, bg = build_banks(f, parts, p_fg, p_bg, heads, np.random.default_rng(0))
    want_fg = ("hard",) * 50 + ("normal",) * 50 + ("global",)
    want_bg = ("hard",) * 100 + ("normal",) * 500 + ("global",)
    rows = lambda n: torch.randn(n, 8, dtype=torch.float64)  # noqa: E731
    afg, abg = assemble_banks(rows(50), rows(50), rows(1)[0], rows(100), rows(500), rows(1)[0])
    dt = time.perf_counter() - t0
    ok = (len(fg) == len(afg) == 101 and len(bg) == len(abg) == 601
          and fg.tags == afg.tags == want_fg and bg.tags == abg.tags == want_bg and dt < 1)
    acceptance("5 bank arithmetic", ok, f"fg {len(fg)} rows, bg {len(bg)} rows, tags match, {dt:.2f}s")
    assert ok


# -- 6 to 9: desk-scale training ----------------------------------------------

SEEDS = (0, 1, 2, 3, 4)
EVAL_EPISODES = 100
EVAL_SEED = 1000
BASE = TrainConfig()
VARIANTS = {
    "mixed": BASE,
    "hard-only": replace(BASE, counts=PrototypeCounts(16, 0, 16, 48)),
    "normal-only": replace(BASE, counts=PrototypeCounts(0, 16, 16, 48)),
    "no-boundary": replace(BASE, weights=LossWeights(lambda0=0.0, lambda1=BASE.weights.lambda1)),
}


class RunCache:
    """Trains each (variant, seed) once per session and keeps its report and log."""

    def __init__(self, root):
        self.root = root
        self.runs = {}

    def get(self, variant, seed):
        key = (variant, seed)
        if key not in self.runs:
            cfg = VARIANTS[variant].with_seed(seed)
            out = self.root / f"{variant}-{seed}"
            t0 = time.perf_counter()
            ckpt = train(cfg, out)
            train_s = time.perf_counter() - t0
            net, _, iteration, _ = load_checkpoint(ckpt)
            report = evaluate_net(net, cfg, cfg.fold, EVAL_EPISODES, EVAL_SEED, iteration)
            self.runs[key] = (report, train_s, out / "metrics.log")
        return self.runs[key]


@pytest.fixture(scope="session")
def runs(tmp_path_factory):
    return RunCache(tmp_path_factory.mktemp("acceptance-runs"))


@pytest.mark.slow
def test_desk_scale_training(runs, acceptance):
    results = [runs.get("mixed", s) for s in SEEDS[:3]]
    ok = all(r.mean_dice >= 0.80 and t <= 20 * 60 for r, t, _ in results)
    detail = ", ".join(f"seed {s}: dice {r.mean_dice:.3f} in {t / 60:.1f} min"
                       for s, (r, t, _) in zip(SEEDS, results))
    acceptance("6 desk-scale training", ok, detail)
    assert ok


def _mean_bf1(runs, variant):
    return float(np.mean([runs.get(variant, s)[0].mean_boundary_f1 for s in SEEDS]))


@pytest.mark.slow
def test_prototype_mix_ablation(runs, acceptance):
    mixed, hard, normal = (_mean_bf1(runs, v) for v in ("mixed", "hard-only", "normal-only"))
    ok = mixed >= hard and mixed >= normal
    acceptance("7 hard+normal ablation", ok,
               f"mean BF1 over {len(SEEDS)} seeds: mixed {mixed:.4f}, hard-only {hard:.4f}, normal-only {normal:.4f}")
    assert ok


@pytest.mark.slow
def test_boundary_loss_ablation(runs, acceptance):
    with_b, without = _mean_bf1(runs, "mixed"), _mean_bf1(runs, "no-boundary")
    ok = with_b > without
    acceptance("8 boundary-loss ablation", ok,
               f"mean BF1 over {len(SEEDS)} seeds: lambda0=0.5 {with_b:.4f}, lambda0=0 {without:.4f}")
    assert ok


@pytest.mark.slow
def test_determinism(runs, acceptance, tmp_path):
    _, _, log = runs.get("mixed", 0)
    train(VARIANTS["mixed"].with_seed(0), tmp_path / "again")
    a, b = log.read_bytes(), (tmp_path / "again" / "metrics.log").read_bytes()
    ok = a == b
    acceptance("9 determinism", ok, f"two {BASE.iterations}-iteration runs, logs identical: {ok} ({len(a)} bytes)")
    assert ok


# -- 10 ---------------------------------------------------------------------


def _random_episode(rng):
    h, w = (int(x) for x in rng.integers(16, 49, 2))
    m_s = (rng.random((h, w)) < rng.uniform(0.05, 0.95)).astype(np.uint8)
    m_s[0, 0], m_s[-1, -1] = 1, 0
    m_q = (rng.random((h, w)) < rng.random()).astype(np.uint8)
    return Episode(Image(rng.random((h, w))), BinaryMask(m_s), Image(rng.random((h, w))), BinaryMask(m_q),
                   int(rng.integers(0, 1000)))


def _same_episode(a, b):
    return all(np.array_equal(getattr(a, k).pixels if "image" in k else getattr(a, k).bits,
                              getattr(b, k).pixels if "image" in k else getattr(b, k).bits)
               for k in ("support_image", "query_image", "support_mask", "query_mask")) and a.class_id == b.class_id


def test_serialization(acceptance, tmp_path):
    rng = np.random.default_rng(10)
    p = tmp_path / "e.cowt"
    bad_episodes = 0
    for i in range(1000):
        e = _random_episode(rng) if i % 2 else generate_episode(BASE.data, i % 6, episode_rng(i, 10))
        save_episode(e, p)
        bad_episodes += not _same_episode(e, load_episode(p))

    cfg = BASE.with_seed(3)
    net = CoWNet(cfg.net, cfg.counts, cfg.data.image_size)
    ck = tmp_path / "c.cowt"
    save_checkpoint(ck, net, cfg, 42)
    loaded, cfg2, it, _ = load_checkpoint(ck)
    a, b = net.state_dict(), loaded.state_dict()
    ckpt_ok = cfg2 == cfg and it == 42 and a.keys() == b.keys() and all(torch.equal(a[k], b[k]) for k in a)

    data = ck.read_bytes()
    diagnostics = []
    corruptions = {
        "truncated": data[:len(data) - 17],
        "bad magic": b"XOWT" + data[4:],
        "bad version": data[:4] + bytes([7]) + data[5:],
        "garbled header": data[:5] + b"\x00\xff garbage\n" + data[5:],
    }
    for label, blob in corruptions.items():
        ck.write_bytes(blob)
        try:
            load_checkpoint(ck)
        except FormatError as exc:
            diagnostics.append(label)
            assert str(exc)
            if label == "bad version":
                assert isinstance(exc, VersionError)
    ok = bad_episodes == 0 and ckpt_ok and len(diagnostics) == len(corruptions)
    acceptance("10 serialization", ok,
               f"{1000 - bad_episodes}/1000 episodes bit-exact, checkpoint exact: {ckpt_ok}, "
               f"corruptions rejected: {len(diagnostics)}/{len(corruptions)}")
    assert ok
