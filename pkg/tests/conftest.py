from pathlib import Path

import pytest

from shrinkbox.dataset_io import save_image, write_labels
from shrinkbox.distance_model import InverseHeightModel
from shrinkbox.synthetic import synthetic_frames, synthetic_images


def write_dataset(root: Path, frames, images=None) -> Path:
    write_labels(frames, root / "labels")
    if images is not None:
        (root / "images").mkdir(parents=True, exist_ok=True)
        for image_id, img in images.items():
            save_image(img, root / "images" / f"{image_id}.png")
    return root


@pytest.fixture
def model():
    return InverseHeightModel(k=1200.0, c=2.0)


@pytest.fixture
def small_synth(model):
    frames, shape = synthetic_frames(40, model, seed=3, per_frame=4)
    return frames, synthetic_images(frames, shape, seed=3)


@pytest.fixture
def synth_root(tmp_path, small_synth):
    frames, images = small_synth
    return write_dataset(tmp_path / "clean", frames, images)


ACCEPTANCE_RESULTS: list[tuple[str, str, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for status, name, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"[{status}] {name}" + (f"  ({detail})" if detail else ""))
