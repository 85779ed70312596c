"""Episode-loop engine with a compiled fast path.

The TD-learning episode loop dominates composition runtime, so it lives in a
Cython kernel (`_qcore`) with a pure-Python twin (`qcore_py`) selected at
import when the extension is unavailable.  Both lanes implement the same
algorithm with the same deterministic RNG, so results are bit-identical; only
speed differs.  Set TEMPCOMPOSE_ENGINE=native|python to force a lane.
"""

from __future__ import annotations

import os

Q2D = 0
SARSA = 1
Q3D_OFF = 2
Q3D_ON = 3


def _load(lane: str):
    if lane == "native":
        from . import _qcore

        return _qcore
    from . import qcore_py

    return qcore_py


_forced = os.environ.get("TEMPCOMPOSE_ENGINE", "auto").strip().lower()
if _forced not in ("", "auto", "native", "python"):
    raise RuntimeError(
        f"TEMPCOMPOSE_ENGINE must be 'auto', 'native' or 'python', got '{_forced}'"
    )

if _forced in ("", "auto"):
    try:
        _impl = _load("native")
        ENGINE = "native"
    except ImportError:
        _impl = _load("python")
        ENGINE = "python"
else:
    _impl = _load(_forced)
    ENGINE = _forced

run_episodes = _impl.run_episodes


def available_lanes() -> list[str]:
    lanes = []
    try:
        _load("native")
        lanes.append("native")
    except ImportError:
        pass
    lanes.append("python")
    return lanes


def lane(name: str):
    """Load a specific lane module (for parity tests and benchmarks)."""
    return _load(name)
