from __future__ import annotations

import contextlib
import io
import json
import math
import socket
import struct
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import noisesearch as ns
from noisesearch import protocol as proto

CAPTION = "a city street at dusk"


@contextlib.contextmanager
def _serve(host, address="127.0.0.1:0"):
    server = ns.ProtocolServer(host, address)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield server.address
    finally:
        server.shutdown()
        thread.join(timeout=5)


def _connect(address):
    conn = ns.BackendConnection(address, timeout=10.0)
    conn.handshake()
    return conn


_json_values = st.recursive(
    st.none()
    | st.booleans()
    | st.integers(-(2**53), 2**53)
    | st.floats(allow_nan=False, allow_infinity=False)
    | st.text(max_size=20),
    lambda children: st.lists(children, max_size=4)
    | st.dictionaries(st.text(max_size=10), children, max_size=4),
    max_leaves=10,
)


class TestFraming:
    @settings(max_examples=50)
    @given(st.dictionaries(st.text(min_size=1, max_size=10), _json_values, max_size=5))
    def test_round_trip(self, extra):
        message = {"type": "x", **extra}
        frame = proto.encode_frame(message)
        (length,) = struct.unpack(">I", frame[:4])
        assert length == len(frame) - 4
        assert proto.parse_payload(frame[4:]) == message

    def test_floats_survive_exactly(self):
        awkward = [0.1, 1.0 / 3.0, 5e-324, 1e308, -0.0, math.pi, 2.0**-1074]
        frame = proto.encode_frame({"type": "x", "values": awkward})
        back = proto.parse_payload(frame[4:])["values"]
        for sent, got in zip(awkward, back):
            assert got == sent
            assert math.copysign(1.0, got) == math.copysign(1.0, sent)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            proto.encode_frame({"type": "x", "v": float("nan")})
        with pytest.raises(ValueError):
            proto.encode_frame({"type": "x", "v": float("inf")})

    def test_oversized_frame_rejected(self, monkeypatch):
        monkeypatch.setattr(proto, "MAX_FRAME_BYTES", 32)
        with pytest.raises(ns.ProtocolError, match="exceeds cap"):
            proto.encode_frame({"type": "x", "pad": "y" * 100})

    def test_oversized_header_rejected_before_body(self):
        stream = io.BytesIO(struct.pack(">I", proto.MAX_FRAME_BYTES + 1))
        with pytest.raises(ns.ProtocolError, match="exceeds cap"):
            proto.read_frame(stream)

    def test_stream_round_trip(self):
        stream = io.BytesIO()
        proto.write_frame(stream, {"type": "x", "n": 3})
        stream.seek(0)
        assert proto.read_frame(stream) == {"type": "x", "n": 3}

    def test_truncated_stream(self):
        frame = proto.encode_frame({"type": "x"})
        with pytest.raises(ns.TransportError, match="closed mid-message"):
            proto.read_frame(io.BytesIO(frame[:-1]))
        with pytest.raises(ns.TransportError):
            proto.read_frame(io.BytesIO(b""))

    def test_malformed_json_reports_byte_offset(self):
        # the accented key is two UTF-8 bytes, so char 6 is byte 7
        with pytest.raises(ns.ProtocolError, match="byte 7"):
            proto.parse_payload('{"á": }'.encode("utf-8"))

    def test_invalid_utf8(self):
        with pytest.raises(ns.ProtocolError, match="invalid UTF-8"):
            proto.parse_payload(b"\xff\xfe{}")

    def test_non_object_payloads_rejected(self):
        with pytest.raises(ns.ProtocolError, match="JSON object"):
            proto.parse_payload(b"[1,2]")
        with pytest.raises(ns.ProtocolError, match="'type'"):
            proto.parse_payload(b'{"version":1}')


class TestImageCodec:
    def test_round_trip_is_float32_exact(self):
        rng = np.random.default_rng(0)
        img = rng.random((5, 7))
        back = proto.decode_image(proto.encode_image(img))
        assert back.shape == (5, 7)
        assert np.array_equal(back, img.astype(np.float32).astype(np.float64))

    def test_requires_two_dims(self):
        with pytest.raises(ns.InvalidParameterError):
            proto.encode_image(np.zeros(4))

    def test_decode_validates(self):
        good = proto.encode_image(np.zeros((2, 2)))
        with pytest.raises(ns.ProtocolError, match="bytes"):
            proto.decode_image({**good, "height": 3})
        with pytest.raises(ns.ProtocolError):
            proto.decode_image({"height": 2, "width": 2})
        with pytest.raises(ns.ProtocolError):
            proto.decode_image({**good, "image": "!!not-base64!!"})


class TestAddresses:
    def test_tcp(self):
        assert proto.parse_address("10.0.0.5:8100") == ("tcp", ("10.0.0.5", 8100))
        assert proto.parse_address(":9") == ("tcp", ("127.0.0.1", 9))

    def test_unix(self):
        assert proto.parse_address("unix:/tmp/b.sock") == ("unix", "/tmp/b.sock")

    def test_rejects_garbage(self):
        for bad in ("nonsense", "host:port", "host:", "8100"):
            with pytest.raises(ns.InvalidParameterError):
                proto.parse_address(bad)


class TestDescriptor:
    def test_round_trip(self):
        desc = ns.BackendDescriptor(name="b", modality="vector", latent_dim=2,
                                    embed_dim=3, max_steps=64,
                                    extensions={"max_concurrency": 1})
        assert ns.BackendDescriptor.from_dict(desc.to_dict()) == desc

    def test_validation(self):
        with pytest.raises(ns.ProtocolError, match="modality"):
            ns.BackendDescriptor(name="b", modality="audio", latent_dim=2,
                                 embed_dim=3, max_steps=64)
        with pytest.raises(ns.ProtocolError, match="positive"):
            ns.BackendDescriptor(name="b", modality="vector", latent_dim=0,
                                 embed_dim=3, max_steps=64)
        with pytest.raises(ns.ProtocolError, match="malformed descriptor"):
            ns.BackendDescriptor.from_dict({"name": "b"})


class TestHostHandling:
    """Request dispatch exercised directly, without sockets."""

    @pytest.fixture()
    def host(self, mixture, toy_backend):
        return ns.toy_backend_host(mixture, toy_backend, max_steps=32)

    def test_hello_welcome(self, host):
        reply = host.handle({"type": "hello", "version": 1})
        assert reply["type"] == "welcome"
        assert reply["version"] == 1
        assert reply["descriptor"]["latent_dim"] == 2
        assert reply["descriptor"]["modality"] == "vector"

    def test_hello_version_mismatch(self, host):
        reply = host.handle({"type": "hello", "version": 99})
        assert reply["type"] == "error"
        assert "version mismatch" in reply["message"]

    def test_unknown_type(self, host):
        reply = host.handle({"type": "reticulate"})
        assert reply["type"] == "error"
        assert "unknown message type" in reply["message"]

    def test_denoise_shape_checked(self, host):
        reply = host.handle({"type": "denoise", "latent": [0.0, 0.0, 0.0],
                             "steps": 4, "prompt": CAPTION})
        assert reply["type"] == "error"
        assert "shape" in reply["message"]

    def test_denoise_steps_checked(self, host):
        for steps in (0, 33):
            reply = host.handle({"type": "denoise", "latent": [0.0, 0.0],
                                 "steps": steps, "prompt": CAPTION})
            assert reply["type"] == "error"
            assert "steps" in reply["message"]

    def test_denoise_matches_local_sampler(self, host, sampler):
        latent = ns.sample_prior(5, 2)
        reply = host.handle({"type": "denoise", "seed": 5,
                             "latent": latent.values.tolist(),
                             "steps": 8, "prompt": CAPTION})
        assert reply["type"] == "sample"
        local = sampler.denoise(latent, 8, ns.NfeLedger(8))
        assert reply["values"] == local.values.tolist()

    def test_internal_failure_becomes_error_frame(self, host):
        reply = host.handle({"type": "denoise", "latent": [1e200, 1e200],
                             "steps": 4, "prompt": CAPTION})
        assert reply["type"] == "error"

    def test_embed_unknown_kind(self, host):
        reply = host.handle({"type": "embed", "kind": "audio", "data": ""})
        assert reply["type"] == "error"

    def test_embed_bad_payload(self, host):
        reply = host.handle({"type": "embed", "kind": "image", "data": {"nope": 1}})
        assert reply["type"] == "error"


class TestLiveConnection:
    def test_handshake_descriptor(self, toy_server):
        with _connect(toy_server) as conn:
            desc = conn.descriptor
        assert desc.name == "toy-gmm"
        assert desc.modality == "vector"
        assert desc.latent_dim == 2
        assert desc.embed_dim == 3
        assert desc.max_steps == 4096

    def test_denoise_before_handshake_rejected(self, toy_server):
        with ns.BackendConnection(toy_server, timeout=10.0) as conn:
            with pytest.raises(ns.ProtocolError, match="handshake"):
                conn.denoise(ns.sample_prior(0, 2), 4, CAPTION)

    def test_remote_denoise_bitwise_matches_local(self, toy_server, sampler):
        latent = ns.sample_prior(11, 2)
        local = sampler.denoise(latent, 12, ns.NfeLedger(12))
        ledger = ns.NfeLedger(12)
        with _connect(toy_server) as conn:
            remote = conn.denoise(latent, 12, CAPTION, ledger=ledger)
        assert np.array_equal(remote.values, local.values)
        assert ledger.spent == 12
        assert ledger.per_call == (("denoise", 12),)

    def test_steps_cap_enforced_client_side(self, toy_server):
        ledger = ns.NfeLedger(10_000)
        with _connect(toy_server) as conn:
            with pytest.raises(ns.InvalidParameterError, match="max_steps"):
                conn.denoise(ns.sample_prior(0, 2), 4097, CAPTION, ledger=ledger)
        assert ledger.spent == 0

    def test_latent_dim_enforced_client_side(self, toy_server):
        with _connect(toy_server) as conn:
            with pytest.raises(ns.InvalidParameterError, match="dimension"):
                conn.denoise(ns.sample_prior(0, 5), 4, CAPTION)

    def test_budget_refusal_precedes_transmission(self, toy_server):
        ledger = ns.NfeLedger(3)
        with _connect(toy_server) as conn:
            with pytest.raises(ns.BudgetExhaustedError):
                conn.denoise(ns.sample_prior(0, 2), 4, CAPTION, ledger=ledger)
        assert ledger.spent == 0
        assert ledger.per_call == ()

    def test_server_failure_leaves_ledger_unspent(self, toy_server):
        bad = ns.Latent(values=np.full(2, 1e200), seed=0, origin=ns.PriorOrigin())
        ledger = ns.NfeLedger(8)
        with _connect(toy_server) as conn:
            with pytest.raises(ns.RemoteBackendError):
                conn.denoise(bad, 8, CAPTION, ledger=ledger)
            assert ledger.spent == 0
            # the connection stays usable after an application error
            good = conn.denoise(ns.sample_prior(1, 2), 8, CAPTION, ledger=ledger)
        assert ledger.spent == 8
        assert np.all(np.isfinite(good.values))

    def test_remote_embeddings_match_local(self, toy_server, toy_backend, prompts):
        sample = ns.Sample.vector(np.array([3.0, 2.9]), producer="t")
        with _connect(toy_server) as conn:
            remote = ns.RemoteEmbeddingBackend(conn)
            assert remote.embed_dim == 3
            assert remote.reentrant is False
            assert "toy-gmm" in remote.name
            for text in (prompts.ir_prompt, prompts.gray_prompt):
                assert np.array_equal(remote.embed_text(text),
                                      toy_backend.embed_text(text))
            assert np.array_equal(remote.embed_sample(sample),
                                  toy_backend.embed_sample(sample))

    def test_batch_budget_refused_upfront(self, toy_server):
        with _connect(toy_server) as conn:
            remote = ns.RemoteSampler(conn, CAPTION)
            latents = ns.prior_batch(range(3), 2)
            ledger = ns.NfeLedger(11)
            with pytest.raises(ns.BudgetExhaustedError):
                remote.denoise_batch(latents, 4, ledger)
            assert ledger.spent == 0

    def test_remote_search_reproduces_in_process_report(self, toy_server, sampler,
                                                        verifier, prompts, weights):
        cfg = ns.SearchConfig(strategy=ns.Strategy.RANDOM, steps=6,
                              n_candidates=3, base_seed=41)
        local = ns.run_search(sampler, verifier, cfg, ns.NfeLedger(cfg.required_nfes))
        with _connect(toy_server) as conn:
            remote_verifier = ns.ContrastVerifier(
                ns.RemoteEmbeddingBackend(conn), prompts, weights)
            remote = ns.run_search(ns.RemoteSampler(conn, CAPTION), remote_verifier,
                                   cfg, ns.NfeLedger(cfg.required_nfes))
        assert json.dumps(remote.to_dict(), sort_keys=True) == \
            json.dumps(local.to_dict(), sort_keys=True)


class _FutureHost(ns.BackendHost):
    def handle(self, message):
        if message.get("type") == "hello":
            return {"type": "welcome", "version": 2,
                    "descriptor": self.descriptor.to_dict()}
        return super().handle(message)


class _ZeroEmbedding:
    name = "zero"
    embed_dim = 3
    reentrant = True

    def embed_sample(self, sample):
        return np.zeros(3)

    def embed_text(self, text):
        return np.zeros(3)


class _WrongLengthEmbedding:
    name = "wrong-len"
    embed_dim = 3
    reentrant = True

    def embed_sample(self, sample):
        return np.ones(5)

    def embed_text(self, text):
        return np.ones(5)


class TestDefectiveServers:
    def test_future_version_rejected_by_client(self, mixture, toy_backend):
        host = ns.toy_backend_host(mixture, toy_backend)
        future = _FutureHost(host.descriptor, host.sampler, host.backend)
        with _serve(future) as address:
            with ns.BackendConnection(address, timeout=10.0) as conn:
                with pytest.raises(ns.VersionMismatchError, match="version 2"):
                    conn.handshake()

    def test_zero_embedding_flagged(self, mixture):
        with _serve(ns.toy_backend_host(mixture, _ZeroEmbedding())) as address:
            with _connect(address) as conn:
                with pytest.raises(ns.DegenerateEmbeddingError):
                    conn.embed_text("x")

    def test_wrong_length_embedding_flagged(self, mixture):
        with _serve(ns.toy_backend_host(mixture, _WrongLengthEmbedding())) as address:
            with _connect(address) as conn:
                with pytest.raises(ns.ProtocolError, match="shape"):
                    conn.embed_text("x")

    def test_malformed_frame_gets_error_reply(self, toy_server):
        kind, target = proto.parse_address(toy_server)
        payload = b'{"type": }'
        with socket.create_connection(target, timeout=10.0) as sock:
            sock.sendall(struct.pack(">I", len(payload)) + payload)
            stream = sock.makefile("rb")
            reply = proto.read_frame(stream)
        assert reply["type"] == "error"
        assert "byte" in reply["message"]

    def test_dead_port_is_transport_error(self):
        probe = socket.socket()
        probe.bind(("127.0.0.1", 0))
        port = probe.getsockname()[1]
        probe.close()
        with pytest.raises(ns.TransportError, match="cannot connect"):
            ns.BackendConnection(f"127.0.0.1:{port}", timeout=2.0)


class TestUnixSocket:
    def test_round_trip(self, mixture, toy_backend, sampler, tmp_path):
        host = ns.toy_backend_host(mixture, toy_backend)
        with _serve(host, f"unix:{tmp_path}/backend.sock") as address:
            assert address.startswith("unix:")
            with _connect(address) as conn:
                latent = ns.sample_prior(3, 2)
                remote = conn.denoise(latent, 8, CAPTION)
        local = sampler.denoise(latent, 8, ns.NfeLedger(8))
        assert np.array_equal(remote.values, local.values)
