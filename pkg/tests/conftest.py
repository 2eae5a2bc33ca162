"""Shared fixtures: scenario builders and loopback session pairs."""

from __future__ import annotations

import threading

import pytest

from coneloop.bridge import EndpointConfig, Session, SyncPolicy, establish, loopback_pair
from coneloop.config import deep_merge, DEFAULTS, materialize
from coneloop.harness import autonomy_handshake, sim_handshake


def make_scenario(**overrides):
    """Materialize defaults merged with keyword overrides (a nested dict)."""
    return materialize(deep_merge(DEFAULTS, overrides))


@pytest.fixture
def scenario_factory():
    return make_scenario


def loopback_sessions(
    step_dt: float,
    step_timeout: float = 5.0,
    autonomy_step_dt: float | None = None,
) -> tuple[Session, Session]:
    """(sim session, autonomy session) over an in-memory pipe."""
    ta, tb = loopback_pair()
    config = EndpointConfig(
        "listener", port=7001, handshake_timeout=5.0, step_timeout=step_timeout
    )
    results: dict[str, object] = {}

    def runner(name, handshake, sync, transport):
        try:
            results[name] = establish(config, handshake, sync=sync, transport=transport)
        except Exception as exc:
            results[name] = exc

    threads = [
        threading.Thread(
            target=runner,
            args=("sim", sim_handshake(), SyncPolicy("lock_step", step_dt), ta),
        ),
        threading.Thread(
            target=runner,
            args=(
                "autonomy",
                autonomy_handshake(),
                SyncPolicy("lock_step", autonomy_step_dt or step_dt),
                tb,
            ),
        ),
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join(timeout=5.0)
    for name in ("sim", "autonomy"):
        if isinstance(results[name], Exception):
            raise results[name]
    return results["sim"], results["autonomy"]
