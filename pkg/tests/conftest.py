import numpy as np
import pytest

from kakurenbo.data import SampleStore
from kakurenbo.harness import DatasetConfig, ModelConfig, RunConfig
from kakurenbo.hiding import HidingConfig
from kakurenbo.optim import OptimConfig


def make_store(losses, pa=None, pc=None, epoch: int = 0) -> SampleStore:
    """Build a fully populated store from parallel value lists."""
    losses = np.asarray(losses, dtype=np.float64)
    n = losses.size
    store = SampleStore(n)
    pa = np.ones(n, dtype=bool) if pa is None else np.asarray(pa, dtype=bool)
    pc = np.full(n, 0.9) if pc is None else np.asarray(pc, dtype=np.float64)
    store.record_batch(np.arange(n), losses, pa, pc, epoch)
    return store


@pytest.fixture
def store10() -> SampleStore:
    # index i carries loss 0.1*(i+1), all confidently correct
    return make_store([0.1 * (i + 1) for i in range(10)])


def tiny_run_config(**over) -> RunConfig:
    """Small blobs run that finishes in well under a second."""
    fields = dict(
        dataset=DatasetConfig(source="synthetic", kind="blobs", n=120,
                              d=4, k=3, seed=7, test_n=60),
        model=ModelConfig(arch="softmax_reg", hidden=0),
        optim=OptimConfig(base_lr=0.1, momentum=0.0, weight_decay=0.0,
                          scheduler="constant", milestones=(), decay=0.1,
                          total_epochs=0, warmup_epochs=0),
        hiding=HidingConfig(max_fraction=0.3, tau=0.7,
                            decay_factors=(1.0,), decay_milestones=(0,),
                            drop_top_rate=0.0),
        strategy="baseline",
        batch_size=32,
        epochs=3,
        seed=42,
        jobs=1,
    )
    fields.update(over)
    return RunConfig(**fields)
