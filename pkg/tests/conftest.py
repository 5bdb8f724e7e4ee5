import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from PIL import Image

from zsvl.backends import Backends
from zsvl.core import DetectedObject, Sample, TaskKind

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
settings.load_profile("default")

# (status, criterion) lines collected from tests marked with @pytest.mark.criterion
ACCEPTANCE: list[tuple[str, str]] = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = "SKIP" if rep.skipped else "PASS" if rep.passed else "FAIL"
        ACCEPTANCE.append((status, marker.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for status, name in ACCEPTANCE:
        terminalreporter.write_line(f"{status}  {name}")


def write_png(path, width=10, height=10, seed=0):
    rng = np.random.default_rng(seed)
    Image.fromarray(rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8), "RGB").save(path)
    return str(path)


@pytest.fixture
def png(tmp_path):
    """Factory for small random PNG files."""
    counter = iter(range(10_000))

    def make(width=10, height=10, seed=None):
        i = next(counter)
        return write_png(tmp_path / f"im{i}.png", width, height, i if seed is None else seed)

    return make


@pytest.fixture
def stub_backends():
    return Backends.stub()


@pytest.fixture
def vqa_sample(png):
    img = png(24, 20)
    return Sample("q1", TaskKind.VQA_OTHER, img, "What color is the car?",
                  candidates=("red", "blue", "green"),
                  provided_caption="a red car parked on a street",
                  provided_boxes=(DetectedObject((1, 1, 8, 8), "car", "red"),
                                  DetectedObject((10, 5, 6, 6), "street")),
                  reference=("red",) * 10)


@pytest.fixture
def vcr_pair(png):
    img = png(30, 30)
    answers = ("Riley is cooking.", "Riley is sleeping.", "Jackie is driving.", "They are dancing.")
    rationales = ("There is a stove.", "The lights are off.", "A car is visible.", "Music is playing.")
    boxes = (DetectedObject((0, 0, 10, 10), "person"), DetectedObject((12, 12, 10, 10), "stove"))
    q2a = Sample("v1-q2a", TaskKind.VCR_Q2A, img, "What is Riley doing?", answers, provided_boxes=boxes,
                 reference=0, metadata={"question": "What is Riley doing?"})
    qa2r = Sample("v1-qa2r", TaskKind.VCR_QA2R, img, answers[0], rationales, provided_boxes=boxes,
                  reference=0, metadata={"question": "What is Riley doing?"})
    return q2a, qa2r
