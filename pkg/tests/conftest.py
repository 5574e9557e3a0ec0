import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def toy_hyperparams(**overrides):
    """Small, fast settings shared by pipeline-level tests."""
    from transfir.model import Hyperparams

    defaults = dict(codebook_size=2, chain_len=3, window=4, dim=8, layers=1, heads=2,
                    conv_channels=4, kernel_width=3, lr=1e-3, epochs=2, seed=7)
    defaults.update(overrides)
    return Hyperparams(**defaults)


def toy_graph():
    """5 entities, 2 relations, 4 timestamps; mixes repeats and an isolated entity."""
    from transfir.data import Quadruple, TemporalKG, Vocab

    vocab = Vocab(entity_names={i: f"e{i}" for i in range(5)},
                  relation_names={0: "r0", 1: "r1"})
    snaps = [
        [Quadruple(0, 0, 1, 0), Quadruple(1, 1, 2, 0)],
        [Quadruple(0, 0, 2, 1), Quadruple(2, 1, 3, 1)],
        [Quadruple(1, 0, 3, 2), Quadruple(0, 1, 1, 2), Quadruple(0, 1, 1, 2)],
        [Quadruple(3, 0, 4, 3), Quadruple(2, 0, 0, 3)],
    ]
    return TemporalKG(snapshots=snaps, vocab=vocab)
