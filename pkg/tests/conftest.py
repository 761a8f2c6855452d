import numpy as np
import pytest
from hypothesis import settings

from patchex import scene

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def disocclusion_frames():
    return scene.render_sequence(scene.disocclusion_scene())


@pytest.fixture(scope="session")
def shadowless_frames():
    return scene.render_sequence(scene.disocclusion_scene(shadows=False))


@pytest.fixture(scope="session")
def random_frames():
    return scene.render_sequence(scene.random_scene(11, frames=5))


def static_spec(seed=5, frames=4):
    spec = scene.random_scene(seed, frames=frames)
    for s in spec.sprites:
        s.trajectory_x = s.trajectory_x[:1]
        s.trajectory_y = s.trajectory_y[:1]
    return spec


ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def criterion():
    from contextlib import contextmanager

    @contextmanager
    def check(number, title):
        info = {"detail": ""}
        try:
            yield info
        except BaseException:
            ACCEPTANCE[number] = (title, False, info["detail"])
            raise
        ACCEPTANCE[number] = (title, True, info["detail"])

    return check


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} [{n}] {title}  {detail}".rstrip())
