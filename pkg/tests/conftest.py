"""
Shared fixtures: a tiny experiment config, a small procedural dataset and
freshly initialized models sized for CPU test runs
"""

import pytest
import torch

from portrait_lab.config import ExperimentConfig, save_config
from portrait_lab.dataset import read_dataset, write_dataset
from portrait_lab.editing import EditingSession
from portrait_lab.encoder import EncoderBundle, PortraitEncoder
from portrait_lab.flows import DualBranchFlow
from portrait_lab.generator import NeRFGenerator
from portrait_lab.scene import attribute_oracle, make_oracle_lookup, render_scenes, sample_scene_coeffs


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow smoke benchmarks")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def tiny_experiment() -> ExperimentConfig:
    experiment = ExperimentConfig()
    experiment.seed = 3

    experiment.scene.render_samples = 16

    gen = experiment.generator
    gen.z_dim = 16
    gen.w_dim = 16
    gen.mapping_layers = 2
    gen.nerf_resolution = 8
    gen.output_resolution = 32
    gen.samples_per_ray = 8
    gen.hidden = 16
    gen.feature_channels = 8
    gen.upsample_channels = 8
    gen.positional_freqs = 2
    gen.steps = 2
    gen.batch_size = 4
    gen.eval_every = 2
    gen.log_every = 1
    gen.corpus_size = 8
    gen.render_chunk = 4

    enc = experiment.encoder
    enc.hidden = 16
    enc.mapping_layers = 2
    enc.camera_layers = 2
    enc.detail_base_channels = 4
    enc.detail_blocks = 2
    enc.regressor_steps = 3
    enc.regressor_batch_size = 4

    inv = experiment.inversion
    inv.batch_size = 4
    inv.steps = 2
    inv.discriminator_hidden = 16
    inv.prior_samples = 32
    inv.perceptual_channels = [4, 8]
    inv.log_every = 1

    flow = experiment.flow
    flow.hidden = 16
    flow.steps = 4
    flow.train_solver_steps = 2
    flow.batch_size = 4
    flow.train_steps = 2
    flow.log_every = 1

    video = experiment.video
    video.frames = 4
    video.finetune_steps = 2
    video.log_every = 1

    ev = experiment.eval
    ev.predictor_steps = 3
    ev.predictor_batch_size = 4
    ev.grid_yaws = [-0.3, 0.0, 0.3]
    ev.sweep_values = [0.0, 1.0]
    return experiment


@pytest.fixture
def experiment() -> ExperimentConfig:
    return tiny_experiment()


@pytest.fixture(scope="session")
def dataset_dir(tmp_path_factory):
    """Twelve 32px scenes of four identities, written once per session"""
    scene_cfg = tiny_experiment().scene
    specs = sample_scene_coeffs(11, 12, 4, scene_cfg)
    images = render_scenes(specs, 32, scene_cfg)
    attributes = [attribute_oracle(spec, scene_cfg) for spec in specs]
    path = tmp_path_factory.mktemp("data") / "scenes"
    write_dataset(specs, images, attributes, path, metadata={"kind": "scenes", "seed": 11})
    return path


@pytest.fixture
def dataset(dataset_dir):
    return read_dataset(dataset_dir)


@pytest.fixture
def generator(experiment) -> NeRFGenerator:
    torch.manual_seed(0)
    model = NeRFGenerator.from_config(experiment.generator)
    model.eval()
    model.requires_grad_(False)
    return model


@pytest.fixture
def encoder(experiment) -> PortraitEncoder:
    torch.manual_seed(1)
    model = PortraitEncoder.from_config(experiment.encoder, experiment.generator, experiment.scene)
    model.eval()
    return model


@pytest.fixture
def flow(experiment) -> DualBranchFlow:
    torch.manual_seed(2)
    model = DualBranchFlow.from_config(experiment.flow, experiment.generator.w_dim)
    model.eval()
    model.requires_grad_(False)
    return model


@pytest.fixture
def session(generator, encoder, flow, dataset, experiment) -> EditingSession:
    bundle = EncoderBundle(encoder, None, make_oracle_lookup(dataset), experiment.scene)
    return EditingSession(generator, bundle, flow, mode="oracle")


@pytest.fixture
def config_file(experiment, tmp_path):
    path = tmp_path / "experiment.json"
    save_config(experiment, path)
    return path
