"""Single-file network checkpoints.

The file starts with a UTF-8 text manifest, one record per line::

    VRCK 1
    arch generator:64:32,64,128,256,256,256
    meta rng <text>
    param enc1.w float32 32,4,4,3
    buffer enc2.bn.mean float32 64
    state ms/enc1.w float32 32,4,4,3
    end

followed by one VRT1 blob per ``param``/``buffer``/``state`` record, in
manifest order.  ``meta`` values are free text to the end of the line.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import vrt1
from .nets import Net, build

HEADER = "VRCK 1"
KINDS = ("param", "buffer", "state")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    arch: str
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    state: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict[str, str] = field(default_factory=dict)


def _shape_text(shape) -> str:
    return ",".join(map(str, shape)) if shape else "-"


def _parse_shape(text: str) -> tuple[int, ...]:
    return () if text == "-" else tuple(int(d) for d in text.split(","))


def dumps(ckpt: Checkpoint) -> bytes:
    lines = [HEADER, f"arch {ckpt.arch}"]
    for k, v in ckpt.meta.items():
        if "\n" in v or " " in k:
            raise CheckpointError(f"meta entry {k!r} must be a single line with a space-free key")
        lines.append(f"meta {k} {v}")
    blobs = []
    for kind, store in zip(KINDS, (ckpt.params, ckpt.buffers, ckpt.state)):
        for name, arr in store.items():
            if " " in name:
                raise CheckpointError(f"tensor name {name!r} contains a space")
            arr = np.asarray(arr)
            lines.append(f"{kind} {name} {arr.dtype.name} {_shape_text(arr.shape)}")
            blobs.append(vrt1.encode(arr))
    lines.append("end")
    return ("\n".join(lines) + "\n").encode("utf-8") + b"".join(blobs)


def loads(buf: bytes, source: str = "<bytes>") -> Checkpoint:
    fh = io.BytesIO(buf)
    first = fh.readline().decode("utf-8", "replace").rstrip("\n")
    if first != HEADER:
        raise CheckpointError(f"{source}: not a checkpoint (header {first[:16]!r})")
    arch = None
    meta: dict[str, str] = {}
    entries: list[tuple[str, str, str, tuple[int, ...]]] = []
    while True:
        raw = fh.readline()
        if not raw:
            raise CheckpointError(f"{source}: manifest has no 'end' line")
        line = raw.decode("utf-8").rstrip("\n")
        if line == "end":
            break
        key, _, rest = line.partition(" ")
        if key == "arch":
            arch = rest
        elif key == "meta":
            k, _, v = rest.partition(" ")
            meta[k] = v
        elif key in KINDS:
            parts = rest.split(" ")
            if len(parts) != 3:
                raise CheckpointError(f"{source}: malformed manifest line {line!r}")
            entries.append((key, parts[0], parts[1], _parse_shape(parts[2])))
        else:
            raise CheckpointError(f"{source}: unknown manifest record {key!r}")
    if arch is None:
        raise CheckpointError(f"{source}: manifest lacks an arch line")
    ckpt = Checkpoint(arch, {}, {}, {}, meta)
    stores = dict(zip(KINDS, (ckpt.params, ckpt.buffers, ckpt.state)))
    for kind, name, dtype, shape in entries:
        try:
            arr = vrt1.read_from(fh, f"{source}:{name}")
        except vrt1.FormatError as exc:
            raise CheckpointError(str(exc)) from None
        if arr.shape != shape or arr.dtype.name != dtype:
            raise CheckpointError(f"{source}: tensor {name!r} is {arr.dtype.name}{list(arr.shape)}, "
                                  f"manifest says {dtype}{list(shape)}")
        stores[kind][name] = arr
    if fh.read(1):
        raise CheckpointError(f"{source}: {len(entries)} tensors declared but trailing data follows")
    return ckpt


def save(path: str | Path, net: Net, state: dict[str, np.ndarray] | None = None,
         meta: dict[str, str] | None = None) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(Checkpoint(net.arch, net.params, net.buffers, state or {}, meta or {})))
    tmp.replace(path)


def read(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint ({exc.strerror})") from None
    return loads(buf, str(path))


def load(path: str | Path, expect_arch: str | None = None) -> tuple[Net, Checkpoint]:
    """Rebuild the network recorded in ``path`` and fill in its weights.

    Any disagreement between the stored tensors and the architecture
    (names, counts or shapes) raises :class:`CheckpointError` naming the file.
    """
    ckpt = read(path)
    if expect_arch is not None and ckpt.arch != expect_arch:
        raise CheckpointError(f"{path}: architecture {ckpt.arch!r} does not match expected {expect_arch!r}")
    try:
        net = build(ckpt.arch)
        net.load_arrays(ckpt.params, ckpt.buffers)
    except ValueError as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    for k, v in ckpt.params.items():  # keep stored precision
        net.params[k] = v.copy()
    for k, v in ckpt.buffers.items():
        net.buffers[k] = v.copy()
    return net, ckpt


def rng_to_text(rng: np.random.Generator) -> str:
    st = rng.bit_generator.state
    if st["bit_generator"] != "PCG64":
        raise CheckpointError(f"unsupported bit generator {st['bit_generator']}")
    return f"PCG64 {st['state']['state']} {st['state']['inc']} {st['has_uint32']} {st['uinteger']}"


def rng_from_text(text: str) -> np.random.Generator:
    name, state, inc, has32, uint = text.split()
    if name != "PCG64":
        raise CheckpointError(f"unsupported bit generator {name}")
    bg = np.random.PCG64()
    bg.state = {"bit_generator": "PCG64", "state": {"state": int(state), "inc": int(inc)},
                "has_uint32": int(has32), "uinteger": int(uint)}
    return np.random.Generator(bg)
