import numpy as np
import pytest
import torch

from cowseg.core import BinaryMask, Episode, Image
from cowseg.nets import CoWHeads, PrototypeCounts

FD_STEP = 1e-5
FD_REL_TOL = 1e-4
# denominators below this are treated as this value, so exact zeros compare absolutely
FD_REL_FLOOR = 1e-6

_acceptance_lines: list[str] = []


def record_acceptance(criterion: str, passed: bool, detail: str) -> None:
    _acceptance_lines.append(f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}")


@pytest.fixture
def acceptance():
    return record_acceptance


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)


def central_differences(loss_fn, params, n_samples, seed=0, step=FD_STEP):
    """Compare autograd against central differences on randomly sampled entries.

    ``loss_fn`` must be a pure function of the current parameter values. Returns
    a list of (analytic, numeric, relative error) triples.
    """
    params = list(params)
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    live = [(p, g) for p, g in zip(params, grads) if g is not None]
    sizes = np.array([p.numel() for p, _ in live])
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_samples):
        k = rng.choice(len(live), p=sizes / sizes.sum())
        p, g = live[k]
        j = int(rng.integers(p.numel()))
        flat = p.data.view(-1)
        orig = flat[j].item()
        with torch.no_grad():
            flat[j] = orig + step
            fp = float(loss_fn())
            flat[j] = orig - step
            fm = float(loss_fn())
            flat[j] = orig
        num = (fp - fm) / (2 * step)
        ana = float(g.reshape(-1)[j])
        rel = abs(ana - num) / max(abs(ana), abs(num), FD_REL_FLOOR)
        out.append((ana, num, rel))
    return out


def disc_mask(h, w, cy, cx, r):
    yy, xx = np.mgrid[0:h, 0:w]
    return ((yy - cy) ** 2 + (xx - cx) ** 2 <= r * r).astype(np.uint8)


@pytest.fixture
def small_episode():
    rng = np.random.default_rng(3)
    m_s = disc_mask(32, 32, 14, 15, 6)
    m_q = disc_mask(32, 32, 18, 12, 7)
    img = lambda m: np.clip(0.3 + 0.4 * m + rng.normal(0, 0.03, m.shape), 0, 1)  # noqa: E731
    return Episode(Image(img(m_s)), BinaryMask(m_s), Image(img(m_q)), BinaryMask(m_q), 0)


TOY_COUNTS = PrototypeCounts(2, 2, 2, 3)


def toy_heads(seed=0, counts=TOY_COUNTS, dim=4, hw=(8, 8)):
    torch.manual_seed(seed)
    return CoWHeads(dim, hw, counts, aspp_rates=(1, 2), mlp_hidden=6, decoder_channels=(4, 3)).double()
