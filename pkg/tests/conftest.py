import sys
from datetime import datetime

import numpy as np
import pytest

from actrec.domain import Gender, UserProfile, to_seconds
from actrec.features import StopArrays
from actrec.synth import SynthConfig, generate

MONDAY = to_seconds(datetime(2013, 3, 11))


def random_stops(rng: np.random.Generator, n: int, n_users: int = 4, n_sites: int = 12, span: float = 3000.0,
                 n_days: int = 9, labels: int = 16) -> StopArrays:
    """Labelled stops at a handful of shared sites, so cells hold several points (and duplicates)."""
    sites = rng.uniform(-span, span, size=(n_sites, 2))
    users = np.array([f"u{rng.integers(n_users)}" for _ in range(n)], dtype=object)
    x, y, t0, t1 = [], [], [], []
    used = set()
    for u in users:
        s = sites[rng.integers(n_sites)]
        jitter = rng.normal(0, 30, 2) if rng.random() < 0.7 else np.zeros(2)
        x.append(s[0] + jitter[0])
        y.append(s[1] + jitter[1])
        while True:
            start = MONDAY + int(rng.integers(0, n_days * 86400))
            if (u, start) not in used:
                used.add((u, start))
                break
        t0.append(start)
        t1.append(start + int(rng.integers(60, 10 * 3600)))
    lab = rng.integers(0, labels, size=n)
    return StopArrays(users, np.array(x), np.array(y), np.array(t0, dtype=np.int64), np.array(t1, dtype=np.int64),
                      lab.astype(np.int64))


def random_pois(rng: np.random.Generator, n: int, span: float = 3000.0):
    xy = rng.uniform(-span, span, size=(n, 2))
    return [(float(a), float(b), int(c)) for (a, b), c in zip(xy, rng.integers(0, 16, size=n))]


def profiles_for(users, rng=None, with_work: bool = True) -> dict:
    rng = rng or np.random.default_rng(0)
    out = {}
    for k, u in enumerate(sorted(set(users))):
        work = tuple(rng.uniform(-2000, 2000, 2)) if (with_work and k % 2 == 0) else None
        out[u] = UserProfile(u, Gender.female if k % 2 else Gender.male, int(20 + 11 * k % 60),
                             tuple(rng.uniform(-2000, 2000, 2)), work)
    return out


@pytest.fixture(scope="session")
def small_city():
    """A small synthetic city: 12 users over 6 days."""
    stops, profiles, pois, truth = generate(SynthConfig(n_users=12, days_per_user=6, stagger_days=2, seed=7))
    return stops, {p.user_id: p for p in profiles}, pois, truth


@pytest.fixture(scope="session")
def small_arrays(small_city):
    stops, profiles, pois, truth = small_city
    return StopArrays.from_stops(stops), profiles, pois


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    results = getattr(acceptance, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
