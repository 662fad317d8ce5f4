"""Wire protocol v1: length-prefixed JSON over a byte stream.

Decouples the search engine from generative/verifier backends so real
models can serve denoise/embed requests from any ecosystem. Frames are a
4-byte big-endian length followed by a UTF-8 JSON object; one request is
in flight per connection. Latents travel explicitly (not as seeds), floats
round-trip exactly through JSON (shortest-repr doubles), and image payloads
are base64-encoded row-major float32 with height/width in the envelope.
"""

from __future__ import annotations

import base64
import json
import socket
import socketserver
import struct
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .core import BudgetExhaustedError, InvalidParameterError, Latent, NfeLedger, Sample
from .toydiff import GaussianMixture, ToySampler
from .verifier import DegenerateEmbeddingError, EmbeddingBackend

PROTOCOL_VERSION = 1
DEFAULT_TIMEOUT = 30.0
MAX_FRAME_BYTES = 64 * 1024 * 1024

_HEADER = struct.Struct(">I")


class ProtocolError(RuntimeError):
    """The peer violated the message schema; not retriable."""


class VersionMismatchError(ProtocolError):
    """Peer speaks a different protocol version."""


class TransportError(ConnectionError):
    """The byte stream dropped or timed out; retriable, never charged."""


class RemoteBackendError(RuntimeError):
    """The backend reported an application-level error; surfaced verbatim."""


@dataclass(frozen=True)
class BackendDescriptor:
    """What a backend serves: modality, dimensions, step ceiling."""

    name: str
    modality: str
    latent_dim: int
    embed_dim: int
    max_steps: int
    extensions: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.modality not in ("vector", "image_gray"):
            raise ProtocolError(f"unknown modality {self.modality!r}")
        if self.latent_dim < 1 or self.embed_dim < 1 or self.max_steps < 1:
            raise ProtocolError("descriptor dimensions must be positive")

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "modality": self.modality,
            "latent_dim": self.latent_dim,
            "embed_dim": self.embed_dim,
            "max_steps": self.max_steps,
            "extensions": dict(self.extensions),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "BackendDescriptor":
        try:
            return cls(
                name=str(d["name"]),
                modality=str(d["modality"]),
                latent_dim=int(d["latent_dim"]),
                embed_dim=int(d["embed_dim"]),
                max_steps=int(d["max_steps"]),
                extensions=dict(d.get("extensions", {})),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed descriptor: {exc}") from exc


# -- framing -----------------------------------------------------------------


def encode_frame(message: dict[str, Any]) -> bytes:
    payload = json.dumps(message, allow_nan=False, separators=(",", ":")).encode("utf-8")
    if len(payload) > MAX_FRAME_BYTES:
        raise ProtocolError(f"frame of {len(payload)} bytes exceeds cap {MAX_FRAME_BYTES}")
    return _HEADER.pack(len(payload)) + payload


def parse_payload(payload: bytes) -> dict[str, Any]:
    try:
        text = payload.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ProtocolError(f"malformed JSON at byte {exc.start}: invalid UTF-8") from exc
    try:
        message = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise ProtocolError(f"malformed JSON at byte {offset}: {exc.msg}") from exc
    if not isinstance(message, dict) or "type" not in message:
        raise ProtocolError("message must be a JSON object with a 'type' field")
    return message


def _read_exact(stream, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining > 0:
        try:
            chunk = stream.read(remaining)
        except (socket.timeout, TimeoutError) as exc:
            raise TransportError("read timed out") from exc
        except OSError as exc:
            raise TransportError(f"read failed: {exc}") from exc
        if not chunk:
            raise TransportError("connection closed mid-message")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(stream) -> dict[str, Any]:
    header = _read_exact(stream, _HEADER.size)
    (length,) = _HEADER.unpack(header)
    if length > MAX_FRAME_BYTES:
        raise ProtocolError(f"frame of {length} bytes exceeds cap {MAX_FRAME_BYTES}")
    return parse_payload(_read_exact(stream, length))


def write_frame(stream, message: dict[str, Any]) -> None:
    try:
        stream.write(encode_frame(message))
        stream.flush()
    except (socket.timeout, TimeoutError) as exc:
        raise TransportError("write timed out") from exc
    except OSError as exc:
        raise TransportError(f"write failed: {exc}") from exc


# -- image payloads ----------------------------------------------------------


def encode_image(values: np.ndarray) -> dict[str, Any]:
    arr = np.ascontiguousarray(values, dtype=np.float32)
    if arr.ndim != 2:
        raise InvalidParameterError(f"image payload must be 2-d, got shape {arr.shape}")
    return {
        "image": base64.b64encode(arr.tobytes()).decode("ascii"),
        "height": arr.shape[0],
        "width": arr.shape[1],
    }


def decode_image(message: dict[str, Any]) -> np.ndarray:
    try:
        h = int(message["height"])
        w = int(message["width"])
        raw = base64.b64decode(message["image"], validate=True)
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"malformed image payload: {exc}") from exc
    if len(raw) != h * w * 4:
        raise ProtocolError(f"image body has {len(raw)} bytes, expected {h * w * 4}")
    return np.frombuffer(raw, dtype=np.float32).reshape(h, w).astype(np.float64)


# -- addresses ---------------------------------------------------------------


def parse_address(address: str) -> tuple[str, Any]:
    """'host:port' for TCP or 'unix:/path' for a local socket."""
    if address.startswith("unix:"):
        return ("unix", address[len("unix:"):])
    host, sep, port = address.rpartition(":")
    if not sep or not port.isdigit():
        raise InvalidParameterError(f"address must be host:port or unix:/path, got {address!r}")
    return ("tcp", (host or "127.0.0.1", int(port)))


# -- client ------------------------------------------------------------------


class BackendConnection:
    """Client side of protocol v1; strict request/response, one in flight."""

    def __init__(self, address: str, timeout: float = DEFAULT_TIMEOUT) -> None:
        self.address = address
        kind, target = parse_address(address)
        try:
            if kind == "unix":
                self._sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
                self._sock.settimeout(timeout)
                self._sock.connect(target)
            else:
                self._sock = socket.create_connection(target, timeout=timeout)
                self._sock.settimeout(timeout)
        except OSError as exc:
            raise TransportError(f"cannot connect to {address}: {exc}") from exc
        self._stream = self._sock.makefile("rwb")
        self.descriptor: BackendDescriptor | None = None

    def close(self) -> None:
        try:
            self._stream.close()
        finally:
            self._sock.close()

    def __enter__(self) -> "BackendConnection":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    def _roundtrip(self, request: dict[str, Any]) -> dict[str, Any]:
        write_frame(self._stream, request)
        response = read_frame(self._stream)
        if response.get("type") == "error":
            raise RemoteBackendError(str(response.get("message", "unspecified backend error")))
        return response

    def handshake(self) -> BackendDescriptor:
        response = self._roundtrip({"type": "hello", "version": PROTOCOL_VERSION})
        if response.get("type") != "welcome":
            raise ProtocolError(f"expected welcome, got {response.get('type')!r}")
        version = response.get("version")
        if version != PROTOCOL_VERSION:
            raise VersionMismatchError(
                f"server speaks protocol version {version}, client speaks {PROTOCOL_VERSION}"
            )
        self.descriptor = BackendDescriptor.from_dict(response.get("descriptor", {}))
        return self.descriptor

    def _require_descriptor(self) -> BackendDescriptor:
        if self.descriptor is None:
            raise ProtocolError("handshake has not completed")
        return self.descriptor

    def denoise(self, latent: Latent, steps: int, prompt: str,
                ledger: NfeLedger | None = None) -> Sample:
        """Remote denoise; charges `steps` NFEs on success only."""
        desc = self._require_descriptor()
        if steps > desc.max_steps:
            raise InvalidParameterError(
                f"steps {steps} exceeds backend max_steps {desc.max_steps}"
            )
        if latent.dim != desc.latent_dim:
            raise InvalidParameterError(
                f"latent dimension {latent.dim} does not match backend latent_dim {desc.latent_dim}"
            )
        if ledger is not None and ledger.remaining() < steps:
            raise BudgetExhaustedError(
                f"remote denoise needs {steps} NFEs but only {ledger.remaining()} remain"
            )
        response = self._roundtrip({
            "type": "denoise",
            "seed": latent.seed,
            "latent": latent.values.tolist(),
            "steps": steps,
            "prompt": prompt,
        })
        if response.get("type") != "sample":
            raise ProtocolError(f"expected sample, got {response.get('type')!r}")
        if "values" in response:
            sample = Sample.vector(np.asarray(response["values"], dtype=np.float64),
                                   producer=desc.name)
        elif "image" in response:
            sample = Sample.image(decode_image(response), producer=desc.name)
        else:
            raise ProtocolError("sample message carries neither values nor image")
        if ledger is not None:
            ledger.charge("denoise", steps)
        return sample

    def _embed(self, kind: str, data: Any) -> np.ndarray:
        desc = self._require_descriptor()
        response = self._roundtrip({"type": "embed", "kind": kind, "data": data})
        if response.get("type") != "embedding":
            raise ProtocolError(f"expected embedding, got {response.get('type')!r}")
        values = np.asarray(response.get("values", []), dtype=np.float64)
        if values.shape != (desc.embed_dim,):
            raise ProtocolError(
                f"embedding has shape {values.shape}, descriptor says ({desc.embed_dim},)"
            )
        if float(np.linalg.norm(values)) == 0.0:
            raise DegenerateEmbeddingError("backend returned an all-zero embedding")
        return values

    def embed_sample(self, sample: Sample) -> np.ndarray:
        if sample.is_image:
            return self._embed("image", encode_image(sample.values))
        return self._embed("image", {"values": sample.values.tolist()})

    def embed_text(self, text: str) -> np.ndarray:
        return self._embed("text", text)


class RemoteSampler:
    """Search-facing sampler over a live connection."""

    def __init__(self, conn: BackendConnection, prompt: str) -> None:
        self.conn = conn
        self.prompt = prompt
        self.latent_dim = conn._require_descriptor().latent_dim

    def denoise(self, latent: Latent, steps: int, ledger: NfeLedger) -> Sample:
        return self.conn.denoise(latent, steps, self.prompt, ledger=ledger)

    def denoise_batch(self, latents, steps: int, ledger: NfeLedger) -> list[Sample]:
        total = steps * len(latents)
        if ledger.remaining() < total:
            raise BudgetExhaustedError(
                f"denoise needs {total} NFEs but only {ledger.remaining()} of {ledger.budget} remain"
            )
        return [self.denoise(latent, steps, ledger) for latent in latents]


class RemoteEmbeddingBackend:
    """Verifier-facing embedding backend over a live connection."""

    reentrant = False  # one request in flight per connection

    def __init__(self, conn: BackendConnection) -> None:
        self.conn = conn
        desc = conn._require_descriptor()
        self.embed_dim = desc.embed_dim
        self.name = f"remote[{desc.name}@{conn.address}]"

    def embed_sample(self, sample: Sample) -> np.ndarray:
        return self.conn.embed_sample(sample)

    def embed_text(self, text: str) -> np.ndarray:
        return self.conn.embed_text(text)


# -- server ------------------------------------------------------------------


class BackendHost:
    """Server-side request handling around a sampler and embedding backend."""

    def __init__(self, descriptor: BackendDescriptor, sampler: ToySampler | Any,
                 backend: EmbeddingBackend) -> None:
        self.descriptor = descriptor
        self.sampler = sampler
        self.backend = backend

    def handle(self, message: dict[str, Any]) -> dict[str, Any]:
        try:
            mtype = message.get("type")
            if mtype == "hello":
                if message.get("version") != PROTOCOL_VERSION:
                    return {"type": "error",
                            "message": f"version mismatch: server speaks {PROTOCOL_VERSION}, "
                                       f"client sent {message.get('version')!r}"}
                return {"type": "welcome", "version": PROTOCOL_VERSION,
                        "descriptor": self.descriptor.to_dict()}
            if mtype == "denoise":
                return self._handle_denoise(message)
            if mtype == "embed":
                return self._handle_embed(message)
            return {"type": "error", "message": f"unknown message type {mtype!r}"}
        except Exception as exc:  # application errors go back as error frames
            return {"type": "error", "message": f"{type(exc).__name__}: {exc}"}

    def _handle_denoise(self, message: dict[str, Any]) -> dict[str, Any]:
        latent_values = np.asarray(message["latent"], dtype=np.float64)
        steps = int(message["steps"])
        if latent_values.ndim != 1 or latent_values.shape[0] != self.descriptor.latent_dim:
            return {"type": "error",
                    "message": f"latent has shape {latent_values.shape}, "
                               f"backend expects ({self.descriptor.latent_dim},)"}
        if not (1 <= steps <= self.descriptor.max_steps):
            return {"type": "error",
                    "message": f"steps {steps} outside [1, {self.descriptor.max_steps}]"}
        latent = Latent(values=latent_values, seed=int(message.get("seed", 0)),
                        origin=_wire_origin())
        ledger = NfeLedger(budget=steps)  # server-side accounting is per-request
        sample = self.sampler.denoise(latent, steps, ledger)
        if sample.is_image:
            return {"type": "sample", **encode_image(sample.values)}
        return {"type": "sample", "values": sample.values.tolist()}

    def _handle_embed(self, message: dict[str, Any]) -> dict[str, Any]:
        kind = message.get("kind")
        data = message.get("data")
        if kind == "text":
            values = self.backend.embed_text(str(data))
        elif kind == "image":
            if isinstance(data, dict) and "values" in data:
                sample = Sample.vector(np.asarray(data["values"], dtype=np.float64),
                                       producer="wire")
            elif isinstance(data, dict) and "image" in data:
                sample = Sample.image(decode_image(data), producer="wire")
            else:
                return {"type": "error", "message": "embed image payload needs values or image"}
            values = self.backend.embed_sample(sample)
        else:
            return {"type": "error", "message": f"unknown embed kind {kind!r}"}
        return {"type": "embedding", "values": np.asarray(values, dtype=np.float64).tolist()}


def _wire_origin():
    from .core import PriorOrigin

    return PriorOrigin()


class _Handler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        host: BackendHost = self.server.backend_host  # type: ignore[attr-defined]
        while True:
            try:
                message = read_frame(self.rfile)
            except TransportError:
                return  # peer closed
            except ProtocolError as exc:
                try:
                    write_frame(self.wfile, {"type": "error", "message": str(exc)})
                except TransportError:
                    pass
                return
            try:
                write_frame(self.wfile, host.handle(message))
            except TransportError:
                return


class _TcpServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class _UnixServer(socketserver.ThreadingUnixStreamServer):
    daemon_threads = True


class ProtocolServer:
    """Serves a BackendHost on TCP (host:port) or a Unix socket (unix:/path)."""

    def __init__(self, host: BackendHost, address: str) -> None:
        kind, target = parse_address(address)
        server_cls = _UnixServer if kind == "unix" else _TcpServer
        self._server = server_cls(target, _Handler)
        self._server.backend_host = host  # type: ignore[attr-defined]
        self._kind = kind

    @property
    def address(self) -> str:
        if self._kind == "unix":
            return f"unix:{self._server.server_address}"
        host, port = self._server.server_address[:2]
        return f"{host}:{port}"

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def shutdown(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self) -> "ProtocolServer":
        return self

    def __exit__(self, *exc_info) -> None:
        self.shutdown()


def toy_backend_host(mixture: GaussianMixture, backend: EmbeddingBackend,
                     beta_min: float = 0.1, beta_max: float = 20.0, t_min: float = 1e-3,
                     max_steps: int = 4096, name: str = "toy-gmm") -> BackendHost:
    descriptor = BackendDescriptor(
        name=name, modality="vector", latent_dim=mixture.dim,
        embed_dim=backend.embed_dim, max_steps=max_steps,
        extensions={"max_concurrency": 1},
    )
    sampler = ToySampler(mixture, beta_min=beta_min, beta_max=beta_max, t_min=t_min)
    return BackendHost(descriptor=descriptor, sampler=sampler, backend=backend)
