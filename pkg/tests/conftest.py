import pytest

from wavemem import hds, lbc
from wavemem.rnn import DESK, ElmanRnn, TrainConfig, bptt_train


def exact_model(spec, basis=None, gain=1.0):
    """Elman network whose recurrence is the wave operator of ``spec`` in ``basis``.

    Inputs are injected into subspace ``s`` and read back from it, so with
    a saturating ``gain`` the sign pattern follows the task exactly.
    """
    basis = lbc.standard_basis(spec.s, spec.d) if basis is None else basis
    phi = lbc.build_phi(spec, basis)
    return ElmanRnn(gain * phi.matrix, gain * basis.block(spec.s), basis.dual_block(spec.s).copy(),
                    None), basis, phi


@pytest.fixture(scope="session")
def desk_task():
    return hds.repeat_copy(4, 4)


@pytest.fixture(scope="session")
def short_run(desk_task):
    """Desk-scale repeat copy trained briefly; enough to reach the wave regime."""
    cfg = TrainConfig(**dict(DESK, iterations=3000), seed=0)
    model, record = bptt_train(desk_task, cfg)
    return model, record, cfg


@pytest.fixture
def criterion(request):
    """Record a one-line verdict for an acceptance criterion."""
    log = request.config.__dict__.setdefault("_acceptance_lines", {})

    def report(number: int, title: str, ok: bool, detail: str = ""):
        line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}" + (f": {detail}" if detail else "")
        log[number] = line
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.__dict__.get("_acceptance_lines")
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
