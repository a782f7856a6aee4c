from random import Random

import pytest

from sbfsearch import crypto, index
from sbfsearch.params import derive_params


@pytest.fixture
def small_params():
    return derive_params(l=20, r=4, gamma_count=2, q=6, beta=12, tau_bits=4096, n_bits=64)


class SystemFixture:
    """A full client-side system: params, vocabulary, secrets, tokens."""

    def __init__(self, params, seed=0):
        self.params = params
        self.rng = Random(seed)
        self.vocab = [crypto.token_from_text(f"kw{i}", params.n_bits) for i in range(params.l)]
        self.secrets = index.generate_master_secrets(params, self.vocab, self.rng)
        self.zone = crypto.token_from_text("zone-a", params.n_bits)
        self.locations = [
            crypto.token_from_text(f"loc-{i}", params.n_bits) for i in range(params.gamma_count)
        ]

    def user(self, keyword_indexes, location=None, seed=None):
        """Register and build one user; returns (keyring, index)."""
        rng = self.rng if seed is None else Random(seed)
        kr = index.register_user(
            self.secrets, [self.vocab[i] for i in keyword_indexes], self.zone, self.params
        )
        idx = index.build_user_index(kr, location or self.locations[0], self.params, rng)
        return kr, idx

    def meta(self, name="user"):
        n = self.params.n_bits
        return crypto.MetaInfo(
            user_pseudonym=crypto.token_from_text(name, n),
            health_attrs=(crypto.token_from_text(name + "-attr", n),),
            server_id=crypto.token_from_text("cs-1", n),
            memory_index=crypto.token_from_text(name + "-slot", n),
            emergency_info=(),
        )


@pytest.fixture
def system(small_params):
    return SystemFixture(small_params, seed=1)
