import numpy as np
import pytest

from evocf.evaldata import Interaction, leave_one_out_split
from evocf.genome import BlockGene, Genome, InitScheme


class ScriptedRng:
    """Replays fixed draws for ``random()``; ``integers()`` falls back to a seeded stream."""

    def __init__(self, draws, seed=0):
        self.draws = list(draws)
        self.fallback = np.random.default_rng(seed)

    def random(self, size=None):
        assert size is None
        if self.draws:
            return self.draws.pop(0)
        return self.fallback.random()

    def integers(self, *args, **kwargs):
        return self.fallback.integers(*args, **kwargs)


@pytest.fixture
def scripted():
    return ScriptedRng


def make_genome(neurons=(64, 32), dropout=0.1, init=InitScheme.Kn, embedding_dim=8, pred=InitScheme.Xu):
    blocks = tuple(BlockGene(n, dropout, init) for n in neurons)
    return Genome(embedding_dim, blocks, pred)


@pytest.fixture
def genome_factory():
    return make_genome


def tiny_interactions():
    """4 users x 4 items, three interactions each; one unobserved item per user."""
    rows = []
    for u in range(4):
        items = [(u + k) % 4 for k in range(3)]
        for t, i in enumerate(items):
            rows.append(Interaction(u, i, 100 * (t + 1)))
    return rows


@pytest.fixture
def tiny_ds():
    return leave_one_out_split(tiny_interactions(), negatives=1, rng=np.random.default_rng(0),
                               num_users=4, num_items=4)


_CRITERIA_KEY = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record a one-line verdict for an acceptance criterion."""
    lines = request.config.stash.setdefault(_CRITERIA_KEY, [])

    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
        lines.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_CRITERIA_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
