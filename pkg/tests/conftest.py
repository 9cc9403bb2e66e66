import numpy as np
import pytest

from qfmaplet import _backend

KERNELS = [pytest.param(_backend.PURE_KERNEL, id="python")]
if _backend.COMPILED_KERNEL is not None:
    KERNELS.insert(0, pytest.param(_backend.COMPILED_KERNEL, id="compiled"))


@pytest.fixture(params=KERNELS)
def kernel_cls(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def kernel_state(k):
    """Every array of a kernel as bytes, for bit-exact comparisons."""
    return (bytes(k.occupieds), bytes(k.runends), bytes(k.offsets), bytes(k.slots), k.count)


# -- acceptance reporting ----------------------------------------------------------------

_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line for the criterion named by the test."""
    n = int(request.node.name.split("_")[2])
    state = {"detail": ""}

    def note(detail: str):
        state["detail"] = detail

    yield note
    rep = getattr(request.node, "rep_call", None)
    ok = rep is not None and rep.passed
    line = f"ACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} {state['detail']}".rstrip()
    _ACCEPTANCE[n] = line
    print(line)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
