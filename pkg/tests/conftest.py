import numpy as np
import pytest

from airfoilgen.dataset import build_dataset
from naca_oracle import naca_selig_text

CORPUS_CODES = (
    "0009", "0012", "0015", "0018", "0021",
    "1408", "1410", "2408", "2410", "2412", "2415", "2418",
    "4412", "4415", "4418", "4421", "6409", "6412",
    "3414", "5415",
)


def write_naca_corpus(directory, codes=CORPUS_CODES):
    for code in codes:
        (directory / f"naca{code}.dat").write_text(naca_selig_text(code))
    return directory


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    return write_naca_corpus(tmp_path_factory.mktemp("corpus"))


@pytest.fixture(scope="session")
def small_dataset(corpus_dir):
    return build_dataset(corpus_dir)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def untrained_checkpoint(small_dataset):
    """A checkpoint with fresh weights: feasibility guarantees hold for any
    weight values, so plenty of machinery is testable without training."""
    from airfoilgen.vae import AirfoilGenerator, Checkpoint, update_latent_box

    model = AirfoilGenerator(normalizer=small_dataset.normalizer, init_seed=99)
    means = model.encode_means(small_dataset.thickness, small_dataset.camber)
    box = update_latent_box(means, min_samples=2)
    return Checkpoint(model=model, latent_box=box,
                      latent_center=means.mean(axis=0),
                      metadata={"epochs_run": 0, "seed": 99})
