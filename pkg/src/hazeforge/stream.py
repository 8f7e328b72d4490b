"""Per-sample augmentation service for training loops.

Wire protocol (bit-exact):

* Every frame is a 4-byte little-endian unsigned payload length, then the
  payload.
* Request payload: UTF-8 JSON, e.g. ``{"sample_id": "a.png", "epoch": 3,
  "force_mode": "hazy"}`` (``force_mode`` optional: clean | hazy | baseline).
* Response payload: UTF-8 JSON metadata object (status, mode_applied,
  params_applied, error_detail), then a 4-byte little-endian image byte
  length, then the PNG bytes.

Responses are pure functions of (dataset, global seed, config, request):
the hazy image for (sample, epoch) is the same no matter when, how often, or
on which connection it is requested, and epoch 0 reproduces the offline
pipeline byte for byte.
"""

import json
import os
import socket
import socketserver
import struct
import threading
from dataclasses import dataclass, replace

from .dataset import MODE_BASELINE, MODE_CLEAN, MODE_DEPTH, SampleRecord, synthesize_one
from .depth_io import NormalizationPolicy
from .errors import ParameterError, ProtocolError
from .image_io import clean_png_bytes, encode_png
from .sampling import SamplerConfig
from .seeding import derive_image_seed, unit_uniform

MAX_FRAME = 1 << 26  # 64 MiB; far above any sane request or encoded image

_FORCE_MODES = (None, "clean", "hazy", "baseline")


@dataclass(frozen=True)
class StreamSettings:
    """Server-side knobs for the online mode."""

    mix_probability: float = 0.5
    resample_per_epoch: bool = True
    disparity: bool = False
    workers: int = 0  # 0 means one synthesis slot per logical CPU

    def __post_init__(self) -> None:
        if not 0.0 <= self.mix_probability <= 1.0:
            raise ParameterError(
                f"mix probability must lie in [0, 1], got {self.mix_probability!r}"
            )
        if self.workers < 0:
            raise ParameterError(f"workers must be >= 0, got {self.workers!r}")


# --- framing -----------------------------------------------------------


def write_frame(stream, payload: bytes) -> None:
    stream.write(struct.pack("<I", len(payload)) + payload)
    stream.flush()


def read_frame(stream) -> bytes | None:
    """Read one frame; returns None on a clean EOF at a frame boundary."""
    header = stream.read(4)
    if not header:
        return None
    if len(header) < 4:
        raise ProtocolError("truncated frame header")
    (length,) = struct.unpack("<I", header)
    if length > MAX_FRAME:
        raise ProtocolError(f"frame of {length} bytes exceeds the {MAX_FRAME} byte limit")
    payload = b""
    while len(payload) < length:
        chunk = stream.read(length - len(payload))
        if not chunk:
            raise ProtocolError(f"truncated frame: expected {length} bytes, got {len(payload)}")
        payload += chunk
    return payload


def split_json_prefix(payload: bytes) -> tuple[dict, int]:
    """Parse the UTF-8 JSON object at the head of a payload.

    Returns (object, end offset). Scans byte-wise for the closing brace;
    UTF-8 continuation bytes never collide with the ASCII structural
    characters, so the scan is exact for well-formed JSON.
    """
    if not payload or payload[0:1] != b"{":
        raise ProtocolError("payload does not start with a JSON object")
    depth = 0
    in_string = False
    escaped = False
    for i, byte in enumerate(payload):
        ch = chr(byte)
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
        elif ch == '"':
            in_string = True
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                end = i + 1
                return json.loads(payload[:end].decode("utf-8")), end
    raise ProtocolError("unterminated JSON object at payload head")


def encode_response(meta: dict, image: bytes) -> bytes:
    header = json.dumps(meta).encode("utf-8")
    return header + struct.pack("<I", len(image)) + image


def decode_response(payload: bytes) -> tuple[dict, bytes]:
    meta, offset = split_json_prefix(payload)
    if len(payload) < offset + 4:
        raise ProtocolError("response payload too short for the image length field")
    (length,) = struct.unpack_from("<I", payload, offset)
    image = payload[offset + 4 : offset + 4 + length]
    if len(image) != length:
        raise ProtocolError(f"response image truncated: expected {length} bytes, got {len(image)}")
    return meta, image


# --- request handling ---------------------------------------------------


def _error_meta(detail: str) -> dict:
    return {"status": "error", "mode_applied": None, "params_applied": None, "error_detail": detail}


def handle_request(
    request: dict,
    index: dict[str, SampleRecord],
    config: SamplerConfig,
    policy: NormalizationPolicy,
    settings: StreamSettings,
    gate: threading.Semaphore | None = None,
) -> tuple[dict, bytes]:
    """Serve one request; returns (metadata, png bytes).

    Pure given (request, loaded config, file contents). Per-request faults
    come back as an error response rather than an exception.
    """
    sample_id = request.get("sample_id")
    epoch = request.get("epoch", 0)
    force_mode = request.get("force_mode")
    if not isinstance(sample_id, str) or not sample_id:
        return _error_meta("sample_id must be a non-empty string"), b""
    if isinstance(epoch, bool) or not isinstance(epoch, int) or epoch < 0:
        return _error_meta("epoch must be a non-negative integer"), b""
    if force_mode not in _FORCE_MODES:
        return _error_meta(f"unknown force_mode {force_mode!r}"), b""

    record = index.get(sample_id)
    if record is None:
        return _error_meta(f"unknown sample_id {sample_id!r}"), b""

    effective_epoch = epoch if settings.resample_per_epoch else 0
    seed = derive_image_seed(config.global_seed, sample_id, effective_epoch)
    if force_mode is not None:
        mode = force_mode
    else:
        mode = "hazy" if unit_uniform(seed, "mode") < settings.mix_probability else "clean"

    try:
        if mode == "clean":
            return (
                {"status": "ok", "mode_applied": "clean", "params_applied": None, "error_detail": None},
                clean_png_bytes(record.image_path),
            )
        record_mode = MODE_DEPTH if mode == "hazy" else MODE_BASELINE
        job = replace(record, image_seed=seed, mode=record_mode)
        if gate is not None:
            with gate:
                image, applied = synthesize_one(job, config, policy, settings.disparity)
        else:
            image, applied = synthesize_one(job, config, policy, settings.disparity)
        meta = {
            "status": "ok",
            "mode_applied": mode,
            "params_applied": applied.to_dict(),
            "error_detail": None,
        }
        return meta, encode_png(image)
    except Exception as exc:
        return _error_meta(str(exc)), b""


# --- server -------------------------------------------------------------


class _StreamHandler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        while True:
            try:
                payload = read_frame(self.rfile)
            except ProtocolError as exc:
                write_frame(self.wfile, encode_response(_error_meta(str(exc)), b""))
                return
            if payload is None:
                return
            try:
                request = json.loads(payload.decode("utf-8"))
                if not isinstance(request, dict):
                    raise ValueError("request must be a JSON object")
            except (UnicodeDecodeError, ValueError) as exc:
                # malformed frame: answer with an error frame, then close
                write_frame(self.wfile, encode_response(_error_meta(f"malformed request: {exc}"), b""))
                return
            meta, image = handle_request(
                request,
                self.server.index,
                self.server.config,
                self.server.policy,
                self.server.settings,
                self.server.gate,
            )
            write_frame(self.wfile, encode_response(meta, image))


class HazeStreamServer(socketserver.ThreadingTCPServer):
    """Serves samples to any number of concurrent training-loop clients.

    The dataset index and configuration are immutable after startup; no
    request mutates shared state, so requests are handled independently. A
    semaphore bounds how many syntheses run at once.
    """

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, records, config, policy, settings=StreamSettings(), endpoint=("127.0.0.1", 0)):
        super().__init__(endpoint, _StreamHandler)
        self.index = {rec.sample_id: rec for rec in records}
        self.config = config
        self.policy = policy
        self.settings = settings
        slots = settings.workers or os.cpu_count() or 1
        self.gate = threading.BoundedSemaphore(slots)

    @property
    def endpoint(self) -> tuple[str, int]:
        return self.server_address[0], self.server_address[1]

    def start_background(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return thread


def serve(records, config, policy, settings=StreamSettings(), endpoint=("127.0.0.1", 0)) -> None:
    """Run the service until interrupted. Prints the bound endpoint."""
    with HazeStreamServer(records, config, policy, settings, endpoint) as server:
        host, port = server.endpoint
        print(f"hazeforge serve: listening on {host}:{port} "
              f"({len(server.index)} samples)", flush=True)
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            pass


# --- client -------------------------------------------------------------


@dataclass(frozen=True)
class StreamResponse:
    """Decoded response: metadata fields plus the PNG payload."""

    status: str
    mode_applied: str | None
    params_applied: dict | None
    error_detail: str | None
    image: bytes


class StreamClient:
    """Minimal blocking client; one request/response at a time per connection."""

    def __init__(self, host: str, port: int, timeout: float = 60.0):
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self._stream = self._sock.makefile("rwb")

    def fetch(self, sample_id: str, epoch: int = 0, force_mode: str | None = None) -> StreamResponse:
        request = {"sample_id": sample_id, "epoch": epoch}
        if force_mode is not None:
            request["force_mode"] = force_mode
        write_frame(self._stream, json.dumps(request).encode("utf-8"))
        payload = read_frame(self._stream)
        if payload is None:
            raise ProtocolError("server closed the connection")
        meta, image = decode_response(payload)
        return StreamResponse(
            status=meta.get("status", "error"),
            mode_applied=meta.get("mode_applied"),
            params_applied=meta.get("params_applied"),
            error_detail=meta.get("error_detail"),
            image=image,
        )

    def send_raw(self, payload: bytes) -> StreamResponse | None:
        """Send an arbitrary frame (testing hook for protocol errors)."""
        write_frame(self._stream, payload)
        frame = read_frame(self._stream)
        if frame is None:
            return None
        meta, image = decode_response(frame)
        return StreamResponse(
            status=meta.get("status", "error"),
            mode_applied=meta.get("mode_applied"),
            params_applied=meta.get("params_applied"),
            error_detail=meta.get("error_detail"),
            image=image,
        )

    def close(self) -> None:
        self._stream.close()
        self._sock.close()

    def __enter__(self) -> "StreamClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
