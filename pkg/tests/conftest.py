import numpy as np
import pytest

from scmc.bundle import CodecBundle
from scmc.codec import CodecArch


@pytest.fixture(scope="session")
def arch():
    return CodecArch.default(12)


@pytest.fixture(scope="session")
def bundle2(arch):
    return CodecBundle.random(arch, 2, 0.004, seed=1)


@pytest.fixture(scope="session")
def bundle4(arch):
    return CodecBundle.random(arch, 4, 0.001, seed=2)


def smooth_image(h, w, seed=0):
    """Low-frequency colour field in [0, 1], shape (3, h, w)."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    out = np.empty((3, h, w))
    for c in range(3):
        fx, fy, ph = rng.uniform(0.5, 3, size=3)
        out[c] = 0.5 + 0.4 * np.sin(2 * np.pi * (fx * xx + fy * yy) + ph)
    return out.astype(np.float32)


@pytest.fixture(scope="session")
def test_image_dir(tmp_path_factory):
    from scmc.sample_data import write_images

    d = tmp_path_factory.mktemp("natural")
    write_images(d)
    return d


@pytest.fixture(scope="session")
def train_image_dir(tmp_path_factory):
    from scmc.sample_data import TRAIN_IMAGES, write_images

    d = tmp_path_factory.mktemp("train")
    write_images(d, TRAIN_IMAGES)
    return d


@pytest.fixture(scope="session")
def trained_m2(train_image_dir):
    """Small M=2 bundle trained for two short phases on natural crops."""
    from scmc.trainer import TrainConfig, train

    cfg = TrainConfig(M=2, lam=0.004, patch_size=16, batch_size=16, iters_per_update=300, base_lr=3e-3,
                      max_phases=2, num_patches=512, seed=0)
    return train(cfg, train_image_dir)


# ----------------------------------------------------------------------
# one PASS/FAIL line per acceptance criterion in the terminal summary

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if not item.name.startswith("test_criterion_"):
        return
    number = int(item.name.split("_")[2])
    props = dict(report.user_properties)
    if report.when == "call" or (report.when == "setup" and report.failed):
        ok = report.passed
        detail = props.get("detail", "") if ok else str(call.excinfo.value).splitlines()[0][:160]
        _CRITERIA[number] = (ok, item.name[len("test_criterion_") + 2 :], detail, props.get("seconds", "-"))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        ok, name, detail, seconds = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number} {'PASS' if ok else 'FAIL'}  {name} ({seconds} s)  {detail}")
