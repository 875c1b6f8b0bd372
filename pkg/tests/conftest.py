import pytest

from commute_access.synth import CitySpec, generate_city


@pytest.fixture(scope="session")
def small_city(tmp_path_factory):
    root = tmp_path_factory.mktemp("city")
    spec = CitySpec(seed=3, n_bts=20, n_users=300, extent_m=4000.0, n_routes=4, noise=0.1)
    generate_city(spec, root)
    return root, spec


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def acceptance():
    """``record(n, ok, detail)`` stores one verdict per acceptance criterion."""
    def record(n, ok, detail=""):
        prev = ACCEPTANCE.get(n)
        ok = bool(ok) and (prev is None or prev[0])
        ACCEPTANCE[n] = (ok, "; ".join(d for d in (prev[1] if prev else "", detail) if d))
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
