import os

# allow multi-thread determinism checks even on single-core machines
os.environ.setdefault("NUMBA_NUM_THREADS", "8")

import numpy as np
import pytest

ACCEPTANCE_LINES = []


def natural_crop(h, w, top=100, left=200, name="astronaut"):
    import skimage.data
    img = getattr(skimage.data, name)()[..., :3] / 255.0
    return np.ascontiguousarray(img[top:top + h, left:left + w])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def record_acceptance():
    def record(label, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] {label}" + (f" :: {detail}" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
