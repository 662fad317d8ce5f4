"""Black-box conformance checks for protocol v1 backends.

Any server claiming to implement the wire protocol (regardless of language
or model behind it) must pass these checks. They exercise the handshake,
determinism of denoising, embedding shape and determinism, and the error
frames required for malformed or out-of-range requests.
"""

from __future__ import annotations

import socket
from dataclasses import dataclass

import numpy as np

from .core import Latent, PriorOrigin, _rng
from .protocol import (
    PROTOCOL_VERSION,
    BackendConnection,
    ProtocolError,
    parse_address,
    read_frame,
    write_frame,
)
from .verifier import GRAY_TEMPLATE, IR_TEMPLATE


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: {self.detail}"


def _connect(address: str, timeout: float) -> socket.socket:
    kind, target = parse_address(address)
    if kind == "unix":
        sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        sock.settimeout(timeout)
        sock.connect(target)
    else:
        sock = socket.create_connection(target, timeout=timeout)
        sock.settimeout(timeout)
    return sock


def _raw_roundtrip(address: str, *messages: dict, timeout: float = 10.0) -> dict:
    """Send frames without client-side validation; return the last reply."""
    sock = _connect(address, timeout)
    try:
        stream = sock.makefile("rwb")
        reply: dict = {}
        for message in messages:
            write_frame(stream, message)
            reply = read_frame(stream)
        return reply
    finally:
        sock.close()


def _raw_send_bytes(address: str, payload: bytes, timeout: float = 10.0) -> dict:
    """Send a pre-framed byte string (possibly invalid JSON) and read the reply."""
    import struct

    sock = _connect(address, timeout)
    try:
        stream = sock.makefile("rwb")
        stream.write(struct.pack(">I", len(payload)) + payload)
        stream.flush()
        return read_frame(stream)
    finally:
        sock.close()


def _probe_latent(dim: int, seed: int) -> Latent:
    values = _rng(seed, domain=0).standard_normal(dim)
    return Latent(values=values, seed=seed, origin=PriorOrigin())


def _denoise_values(address: str, latent: Latent, steps: int, caption: str) -> np.ndarray:
    with BackendConnection(address) as conn:
        desc = conn.handshake()
        sample = conn.denoise(latent, steps, caption)
        if desc.modality == "image_gray" and not sample.is_image:
            raise ProtocolError("image_gray backend returned a vector sample")
        return sample.values


def run_conformance(address: str, seed: int = 0,
                    caption: str = "a city street at dusk") -> list[CheckResult]:
    results: list[CheckResult] = []

    def record(name: str, passed: bool, detail: str) -> None:
        results.append(CheckResult(name=name, passed=passed, detail=detail))

    # handshake
    try:
        with BackendConnection(address) as conn:
            desc = conn.handshake()
        record("handshake", True,
               f"{desc.name} modality={desc.modality} latent_dim={desc.latent_dim} "
               f"embed_dim={desc.embed_dim} max_steps={desc.max_steps}")
    except Exception as exc:
        record("handshake", False, f"{type(exc).__name__}: {exc}")
        return results

    steps = min(8, desc.max_steps)
    ir_prompt = IR_TEMPLATE.format(caption=caption)
    gray_prompt = GRAY_TEMPLATE.format(caption=caption)

    # version negotiation rejects a future version
    try:
        reply = _raw_roundtrip(address, {"type": "hello", "version": PROTOCOL_VERSION + 99})
        ok = reply.get("type") == "error"
        record("version-rejected", ok,
               "error frame returned" if ok else f"got {reply.get('type')!r} instead of error")
    except Exception as exc:
        record("version-rejected", False, f"{type(exc).__name__}: {exc}")

    # denoise determinism across fresh connections
    try:
        latent = _probe_latent(desc.latent_dim, seed)
        first = _denoise_values(address, latent, steps, ir_prompt)
        second = _denoise_values(address, latent, steps, ir_prompt)
        ok = first.shape == second.shape and bool(np.all(first == second))
        detail = (f"{first.size} values identical across connections" if ok
                  else "repeated denoise of one latent differed")
        ok = ok and bool(np.all(np.isfinite(first)))
        record("denoise-deterministic", ok, detail if ok else detail + " or non-finite")
    except Exception as exc:
        record("denoise-deterministic", False, f"{type(exc).__name__}: {exc}")

    # out-of-range steps must produce an error frame, not a crash
    try:
        raw_latent = _probe_latent(desc.latent_dim, seed + 1)
        reply = _raw_roundtrip(
            address,
            {"type": "hello", "version": PROTOCOL_VERSION},
            {"type": "denoise", "seed": raw_latent.seed,
             "latent": raw_latent.values.tolist(),
             "steps": desc.max_steps + 1, "prompt": ir_prompt},
        )
        ok = reply.get("type") == "error"
        record("steps-rejected", ok,
               "error frame returned" if ok else f"got {reply.get('type')!r} instead of error")
    except Exception as exc:
        record("steps-rejected", False, f"{type(exc).__name__}: {exc}")

    # text embeddings for both prompt templates
    try:
        with BackendConnection(address) as conn:
            conn.handshake()
            ir_vec = conn.embed_text(ir_prompt)
            gray_vec = conn.embed_text(gray_prompt)
            ir_again = conn.embed_text(ir_prompt)
        ok = (ir_vec.shape == (desc.embed_dim,) and gray_vec.shape == (desc.embed_dim,)
              and np.all(np.isfinite(ir_vec)) and np.all(np.isfinite(gray_vec))
              and np.all(ir_vec == ir_again))
        record("embed-text", bool(ok),
               "both prompt embeddings finite, correctly shaped, deterministic" if ok
               else "text embedding failed shape, finiteness, or determinism")
    except Exception as exc:
        record("embed-text", False, f"{type(exc).__name__}: {exc}")

    # sample embedding round trip
    try:
        with BackendConnection(address) as conn:
            conn.handshake()
            latent = _probe_latent(desc.latent_dim, seed + 2)
            sample = conn.denoise(latent, steps, ir_prompt)
            vec = conn.embed_sample(sample)
        ok = vec.shape == (desc.embed_dim,) and bool(np.all(np.isfinite(vec)))
        record("embed-sample", ok,
               f"embedding of denoised sample has dim {vec.shape[0]}" if ok
               else "sample embedding failed shape or finiteness")
    except Exception as exc:
        record("embed-sample", False, f"{type(exc).__name__}: {exc}")

    # malformed JSON draws an error frame that names a byte offset
    try:
        reply = _raw_send_bytes(address, b'{"type": "hello", "version": }')
        ok = reply.get("type") == "error" and "byte" in str(reply.get("message", "")).lower()
        record("malformed-json", ok,
               "error frame names byte offset" if ok
               else f"reply {reply!r} lacks byte offset")
    except Exception as exc:
        record("malformed-json", False, f"{type(exc).__name__}: {exc}")

    # unknown message types draw an error frame
    try:
        reply = _raw_roundtrip(address, {"type": "no-such-message"})
        ok = reply.get("type") == "error"
        record("unknown-type", ok,
               "error frame returned" if ok else f"got {reply.get('type')!r} instead of error")
    except Exception as exc:
        record("unknown-type", False, f"{type(exc).__name__}: {exc}")

    return results
