import logging

import numpy as np
import pytest

from delayline.core import HistoryBuffer

# compatibility-overwrite warnings are expected on runs with blank lines
logging.getLogger("delayline.sim").setLevel(logging.ERROR)


def history_from_log(log, t_probe: float, tau: float) -> HistoryBuffer:
    """Rebuild the state history covering [t_probe - tau, t_probe] from a run log."""
    ts = np.asarray(log.t)
    lo = max(int(np.searchsorted(ts, t_probe - tau - 1e-12)) - 1, 0)
    hi = int(np.searchsorted(ts, t_probe + 1e-12, side="right"))
    buf = HistoryBuffer(tau)
    for tk, xk in zip(ts[lo:hi], np.asarray(log.state)[lo:hi]):
        buf.append(float(tk), float(xk))
    return buf


@pytest.fixture
def rng():
    return np.random.default_rng(20250810)
