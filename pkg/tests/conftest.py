import numpy as np
import pytest

from tarq.lattice import QuantConfig


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def random_spd(rng, n, cond=None):
    """Random SPD matrix; with ``cond`` the eigenvalues span exactly that ratio."""
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    if cond is None:
        ev = rng.uniform(0.1, 2.0, n)
    else:
        ev = np.geomspace(1.0, 1.0 / cond, n)
    H = (Q * ev) @ Q.T
    return 0.5 * (H + H.T)


def lattice_exact(rng, rows, cols, cfg: QuantConfig, scale=0.25):
    """Weights equal to ``scale * code`` where every group holds both extreme codes,
    so the group scale recomputes to ``scale``."""
    codes = rng.integers(cfg.qmin, cfg.qmax + 1, size=(rows, cols))
    for start in range(0, cols, cfg.group_size):
        stop = min(start + cfg.group_size, cols)
        if stop - start < 2:
            codes[:, start] = cfg.qmin
            continue
        for r in range(rows):
            i, j = rng.choice(np.arange(start, stop), 2, replace=False)
            codes[r, i], codes[r, j] = cfg.qmin, cfg.qmax
    return scale * codes.astype(np.float64), codes


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[num])
