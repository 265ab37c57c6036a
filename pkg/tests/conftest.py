import numpy as np
import pytest

from splatstream import io, synth
from splatstream.stream import StreamConfig


TINY = dict(seed=0, n_static=60, n_dynamic=6, n_cameras=4, frames=4,
            resolution=32)


def tiny_stream_config(**overrides):
    base = dict(seed=0, sh_degree=2, first_frame_iters=240, densify_until=120,
                densify_interval=40, sequential_iters_deform=30,
                sequential_iters_new=20, spawn_cap=60)
    base.update(overrides)
    return StreamConfig(**base)


@pytest.fixture(scope="session")
def tiny_scene():
    return synth.make_scene(**TINY)


@pytest.fixture(scope="session")
def tiny_dataset(tiny_scene, tmp_path_factory):
    """Exported clean+noisy tiny dataset shared across stream/cli tests."""
    root = tmp_path_factory.mktemp("tiny_dataset")
    init = synth.jitter_points(tiny_scene, 0.02, 1.0, seed=0)
    synth.export_dataset(tiny_scene, None, root / "clean", init)
    spec = synth.NoiseSpec(0.02, 500.0, seed=0)
    synth.export_dataset(tiny_scene, spec, root / "noisy", init)
    return root


@pytest.fixture(scope="session")
def tiny_observations(tiny_scene):
    """Quantized noiseless frame-0 observations for all rig cameras."""
    return [io.quantize_image(synth.render_clean(tiny_scene, 0, c))
            for c in range(len(tiny_scene.cameras))]
