import numpy as np
import pytest
from PIL import Image

from concatnet.backbone import BackboneSpec
from concatnet.data import generate_synthetic_dataset, stratified_split

SIDE = 32


@pytest.fixture
def tiny_specs():
    return BackboneSpec("tiny_test", "w8", input_side=SIDE), BackboneSpec("tiny_test", "w16", input_side=SIDE)


@pytest.fixture(scope="session")
def small_synth():
    return generate_synthetic_dataset(12, side=SIDE, seed=3, noise_level=0.1)


@pytest.fixture(scope="session")
def small_split(small_synth):
    return stratified_split(small_synth, 0.8, seed=0)


def write_png(path, arr=None, size=(8, 8)):
    if arr is None:
        arr = np.full((*size, 3), 128, dtype=np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)
    return path


@pytest.fixture
def image_tree(tmp_path):
    """root/{Aspergillosis,Liver,Normal}/ with two small PNGs each."""
    root = tmp_path / "tree"
    rng = np.random.default_rng(0)
    for cls in ("Normal", "Liver", "Aspergillosis"):
        for i in range(2):
            write_png(root / cls / f"{cls.lower()}_{i}.png", rng.integers(0, 256, (10, 12, 3), dtype=np.uint8))
    return root


ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for crit, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{crit}: {'PASS' if ok else 'FAIL'}  {detail}")
