import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from strattack import admm, baselines, refine  # noqa: E402
from strattack.data import Dataset, write_idx_images, write_idx_labels  # noqa: E402
from strattack.grouping import Dims  # noqa: E402
from strattack.model import Layer, ReferenceNet, save_weights, train_reference  # noqa: E402

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
MNIST_DIR = os.path.join(ROOT, "data", "mnist5k")

# every AttackResult built during the session, with any feasibility violation
RESULT_LOG: list = []


def feasibility_violation(result):
    if not np.all((result.x_adv >= 0.0) & (result.x_adv <= 1.0)):
        return "x_adv leaves [0, 1]"
    eps = result.meta.get("epsilon")
    if eps is not None and result.lp.linf > eps + 1e-3:
        return f"linf {result.lp.linf} exceeds epsilon {eps}"
    return None


@pytest.fixture(scope="session", autouse=True)
def _log_every_result():
    """Wrap result construction for the whole session, before any other fixture runs."""
    original = admm.make_result

    def checked(*args, **kwargs):
        result = original(*args, **kwargs)
        RESULT_LOG.append(feasibility_violation(result))
        return result

    with pytest.MonkeyPatch.context() as mp:
        for module in (admm, baselines, refine):
            mp.setattr(module, "make_result", checked)
        yield


@pytest.fixture(autouse=True)
def _check_every_result():
    """Fail any test that produces an infeasible AttackResult."""
    start = len(RESULT_LOG)
    yield
    problems = [issue for issue in RESULT_LOG[start:] if issue]
    assert not problems, problems


def identity_net(n: int) -> ReferenceNet:
    """Logits equal the input pixels."""
    return ReferenceNet([Layer(np.eye(n), np.zeros(n), "identity")], Dims(n, 1, 1))


def random_net(dims: Dims, hidden: int = 8, classes: int = 4, seed: int = 0) -> ReferenceNet:
    rng = np.random.default_rng(seed)
    n = dims.n
    return ReferenceNet(
        [
            Layer(rng.standard_normal((hidden, n)), rng.standard_normal(hidden), "relu"),
            Layer(rng.standard_normal((classes, hidden)), rng.standard_normal(classes), "identity"),
        ],
        dims,
    )


@pytest.fixture
def small_net():
    return random_net(Dims(4, 4, 1), hidden=10, classes=3, seed=1)


def bands(num, seed):
    """Three classes of 8x8 images, each brightening one horizontal band."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 3, num)
    img = rng.uniform(0.0, 0.3, (num, 8, 8))
    for i, k in enumerate(labels):
        img[i, 1 + 2 * k : 3 + 2 * k + 1, :] += 0.6
    return np.clip(img, 0, 1), labels


@pytest.fixture(scope="session")
def toy(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    for prefix, n, seed in [("train", 300, 0), ("t10k", 40, 1)]:
        img, lab = bands(n, seed)
        write_idx_images(root / f"{prefix}-images-idx3-ubyte", np.rint(img * 255).astype(np.uint8))
        write_idx_labels(root / f"{prefix}-labels-idx1-ubyte", lab.astype(np.uint8))
    img, lab = bands(300, 0)
    data = Dataset((np.rint(img * 255) / 255)[..., None], lab)
    net, report = train_reference(data, [64, 16, 3], epochs=10, learning_rate=0.1, seed=0,
                                  logit_scale=4.0)
    assert report.train_accuracy > 0.95
    save_weights(net, root / "net.saw")
    return root


# one "CRITERION n: PASS/FAIL ..." line per acceptance criterion, echoed at the end
ACCEPTANCE_LINES: dict = {}


def pytest_collection_modifyitems(config, items):
    # the acceptance module audits results produced by every other test, so it runs last
    items.sort(key=lambda item: os.path.basename(str(item.fspath)) == "test_acceptance.py")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
