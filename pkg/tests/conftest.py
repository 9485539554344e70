import pytest

from lacnet.chain import PERMISSIONED, PERMISSIONLESS, Ledger, to_micro
from lacnet.engine import Simulator
from lacnet.simulation import ChainDriver


@pytest.fixture
def chains():
    """Permissioned registry + permissionless token chain with two funded keys."""
    reg = Ledger(PERMISSIONED)
    tok = Ledger(PERMISSIONLESS, registry_source=reg)
    for key in ("pk:alice", "pk:bob", "pk:contract", "pk:anchor"):
        reg.submit_tx(reg.new_tx(key, 0.0, "RegisterNode", pubkey=key), 0.0)
    reg.seal_blocks(2.0)
    tok.genesis({"pk:alice": to_micro(100), "pk:bob": to_micro(5)})
    return reg, tok


def drive(ledger):
    sim = Simulator()
    return sim, ChainDriver(sim, ledger)


def rolling_max(blocks, window=1.0):
    """Largest tx count sealed inside any half-open window (t - 1, t]."""
    best = 0
    for b in blocks:
        # s > t - 1 written as s + 1 > t: subtracting first rounds 1.3 - 1.0 above 0.3
        n = sum(len(o.txs) for o in blocks if b.sealed_at < o.sealed_at + window and o.sealed_at <= b.sealed_at)
        best = max(best, n)
    return best


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
