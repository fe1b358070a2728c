"""Shared fixtures.

Every call to ``riswpt.cone.solve`` made anywhere in the test session is
audited: an ``Optimal`` status must survive an independent substitution
check at 10x the tolerance the solver was given. Expensive optimizer runs
are cached per session so that several test modules can share them.
"""

from __future__ import annotations

import functools

import pytest

from riswpt import cone
from riswpt.orchestrate import SolverOptions, run_noris, run_protocol, run_quantized
from riswpt.scenario import default_scenario, reduced_profile

_AUDIT = {"optimal": 0, "failures": [], "max_ratio": 0.0}
_original_solve = cone.solve


@functools.wraps(_original_solve)
def _audited_solve(program, tol=1e-8, max_iter=200):
    sol = _original_solve(program, tol=tol, max_iter=max_iter)
    if sol.status is cone.Status.OPTIMAL:
        pres, viol = cone.residuals(program, sol.x)
        worst = max(pres, viol)
        _AUDIT["optimal"] += 1
        _AUDIT["max_ratio"] = max(_AUDIT["max_ratio"], worst / tol)
        if worst > 10 * tol:
            _AUDIT["failures"].append((tol, pres, viol))
            raise AssertionError(f"Optimal solution fails substitution check: residual {pres:.3e}, "
                                 f"cone violation {viol:.3e}, tol {tol:.1e}")
    return sol


cone.solve = _audited_solve


@pytest.fixture(scope="session")
def cone_audit():
    return _AUDIT


@pytest.fixture(scope="session")
def default_cfg():
    return default_scenario()


@pytest.fixture(scope="session")
def reduced_cfg():
    return reduced_profile(default_scenario())


class RunCache:
    """Lazily computed optimizer runs keyed by (protocol, M)."""

    def __init__(self):
        self.opts = SolverOptions()
        self._runs = {}
        self._quant = {}

    def cfg(self, protocol: str, M: int):
        base = default_scenario()
        if protocol == "pd":
            base = reduced_profile(base)
        return base.with_updates(ris_elements=M)

    def run(self, protocol: str, M: int = 8):
        key = (protocol, M)
        if key not in self._runs:
            cfg = self.cfg(protocol, M)
            if M == 0:
                self._runs[key] = run_noris(cfg, self.opts, protocol)
            else:
                self._runs[key] = run_protocol(cfg, self.opts, protocol)
        return self._runs[key]

    def quantized(self, protocol: str, bits: int = 2):
        key = (protocol, bits)
        if key not in self._quant:
            self._quant[key] = run_quantized(self.cfg(protocol, 8), self.opts, bits, protocol,
                                             continuous=self.run(protocol, 8))
        return self._quant[key]


@pytest.fixture(scope="session")
def runs():
    return RunCache()


# ---------------------------------------------------------------------------
# acceptance verdicts, one line per criterion in the terminal summary

_VERDICTS: dict[int, tuple[str, bool, str]] = {}


class Criterion:
    def __init__(self, number: int, title: str):
        self.number, self.title, self.details = number, title, []

    def note(self, text: str) -> None:
        self.details.append(text)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        ok = exc_type is None
        # a criterion split across several tests fails if any part fails
        prev = _VERDICTS.get(self.number)
        if prev is not None:
            ok = ok and prev[1]
            self.details = [prev[2]] + self.details if prev[2] else self.details
        if not ok and exc is not None:
            self.details.append(f"{exc_type.__name__}: {str(exc).splitlines()[0] if str(exc) else ''}")
        _VERDICTS[self.number] = (self.title, ok, "; ".join(d for d in self.details if d))
        line = f"criterion {self.number:2d} {'PASS' if ok else 'FAIL'}: {self.title}"
        print(line + (f" ({_VERDICTS[self.number][2]})" if _VERDICTS[self.number][2] else ""))
        return False


@pytest.fixture
def criterion():
    return Criterion


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        title, ok, detail = _VERDICTS[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}: {title}"
                                    + (f" ({detail})" if detail else ""))
