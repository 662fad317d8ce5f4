from __future__ import annotations

import threading

import pytest
from hypothesis import HealthCheck, settings

import noisesearch as ns

settings.register_profile(
    "suite",
    deadline=None,
    max_examples=50,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


@pytest.fixture(scope="session")
def mixture():
    return ns.default_mixture()


@pytest.fixture(scope="session")
def toy_backend(mixture):
    return ns.ToyEmbeddingBackend(mixture, target=0, distractor=3)


@pytest.fixture(scope="session")
def prompts():
    return ns.PromptPair.from_caption("a city street at dusk")


@pytest.fixture(scope="session")
def weights():
    return ns.ScoreWeights()


@pytest.fixture(scope="session")
def verifier(toy_backend, prompts, weights):
    return ns.ContrastVerifier(toy_backend, prompts, weights)


@pytest.fixture(scope="session")
def sampler(mixture):
    return ns.ToySampler(mixture)


@pytest.fixture(scope="session")
def toy_server(mixture, toy_backend):
    """A live protocol server on a loopback port, shared by network tests."""
    host = ns.toy_backend_host(mixture, toy_backend)
    server = ns.ProtocolServer(host, "127.0.0.1:0")
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield server.address
    server.shutdown()
