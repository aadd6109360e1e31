"""File formats: frame datasets, posterior streams, keyword labels, model
files with an optional CSR mask section, flat key-value configs and run
manifests.

Numbers are serialized as decimal with 17 significant digits, so every
write/read round trip is bit-exact for float64. Parsers report the line
number and byte offset of the first offending input.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .kws import PosteriorStream
from .nn import ACTIVATIONS, DenseNet, FrameDataset, Layer
from .pruning import PruneMask

MODEL_MAGIC = "PRUNEKIT-MODEL v1"
ARTIFACT_VERSION = "prunekit 0.1.0"


class ParseError(ValueError):
    def __init__(self, path, line_no, byte_offset, message):
        self.path = path
        self.line_no = line_no
        self.byte_offset = byte_offset
        super().__init__(f"{path}:{line_no} (byte {byte_offset}): {message}")


def fmt(x: float) -> str:
    return f"{float(x):.17g}"


class _LineReader:
    """Reads decoded lines from a bytes blob while tracking the byte offset
    of the line currently being parsed."""

    def __init__(self, path):
        self.path = str(path)
        with open(path, "rb") as fh:
            self.raw = fh.read()
        self.lines = self.raw.split(b"\n")
        # a trailing newline yields one empty trailing chunk, not a line
        if self.lines and self.lines[-1] == b"":
            self.lines.pop()
        self.index = 0
        self.offset = 0

    def error(self, message):
        raise ParseError(self.path, self.index + 1, self.offset, message)

    def next_line(self, what):
        if self.index >= len(self.lines):
            self.offset = len(self.raw)
            self.index = len(self.lines)
            raise ParseError(
                self.path, self.index + 1, self.offset, f"truncated file: expected {what}"
            )
        raw = self.lines[self.index]
        line = raw.decode("utf-8", errors="replace")
        self.index += 1
        self.offset += len(raw) + 1
        return line

    @property
    def exhausted(self):
        return self.index >= len(self.lines)


def _parse_floats(reader, line, count, what):
    parts = line.split(",") if "," in line else line.split()
    if count is not None and len(parts) != count:
        reader.error(f"expected {count} values for {what}, found {len(parts)}")
    try:
        return np.array([float(p) for p in parts], dtype=np.float64)
    except ValueError:
        reader.error(f"non-numeric value in {what}")


def _parse_kv_int(reader, line, key):
    parts = line.split(",")
    if len(parts) != 2 or parts[0] != key:
        reader.error(f"expected header '{key},<value>'")
    try:
        return int(parts[1])
    except ValueError:
        reader.error(f"non-integer value for {key}")


# ---------------------------------------------------------------------------
# frame datasets


def write_frame_dataset(data: FrameDataset, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(f"feature_dim,{data.feature_dim}\n")
        fh.write(f"num_classes,{data.num_classes}\n")
        for label, row in zip(data.labels, data.features):
            fh.write(str(int(label)) + "," + ",".join(fmt(v) for v in row) + "\n")


def read_frame_dataset(path) -> FrameDataset:
    reader = _LineReader(path)
    dim = _parse_kv_int(reader, reader.next_line("feature_dim header"), "feature_dim")
    classes = _parse_kv_int(reader, reader.next_line("num_classes header"), "num_classes")
    feats, labels = [], []
    while not reader.exhausted:
        line = reader.next_line("frame row")
        vals = _parse_floats(reader, line, dim + 1, "frame row")
        label = int(vals[0])
        if vals[0] != label or not 0 <= label < classes:
            reader.error(f"label {vals[0]} out of range [0, {classes})")
        labels.append(label)
        feats.append(vals[1:])
    if not feats:
        reader.error("dataset has no frames")
    return FrameDataset(np.vstack(feats), np.array(labels), classes)


# ---------------------------------------------------------------------------
# posterior streams and keyword labels


def write_posterior_stream(stream: PosteriorStream, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(f"frame_period,{fmt(stream.frame_period)}\n")
        fh.write(f"num_classes,{stream.num_classes}\n")
        for row in stream.probs:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def read_posterior_stream(path) -> PosteriorStream:
    reader = _LineReader(path)
    line = reader.next_line("frame_period header")
    parts = line.split(",")
    if len(parts) != 2 or parts[0] != "frame_period":
        reader.error("expected header 'frame_period,<value>'")
    try:
        period = float(parts[1])
    except ValueError:
        reader.error("non-numeric frame_period")
    classes = _parse_kv_int(reader, reader.next_line("num_classes header"), "num_classes")
    rows = []
    while not reader.exhausted:
        rows.append(_parse_floats(reader, reader.next_line("posterior row"), classes, "posterior row"))
    probs = np.vstack(rows) if rows else np.zeros((0, classes))
    try:
        return PosteriorStream(probs, period)
    except ValueError as exc:
        reader.error(str(exc))


def write_labels(labels, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("stream_id,end_frame\n")
        for sid, end in labels:
            fh.write(f"{sid},{int(end)}\n")


def read_labels(path) -> list[tuple[str, int]]:
    reader = _LineReader(path)
    header = reader.next_line("label header")
    if header != "stream_id,end_frame":
        reader.error("expected header 'stream_id,end_frame'")
    out = []
    while not reader.exhausted:
        line = reader.next_line("label row")
        parts = line.split(",")
        if len(parts) != 2:
            reader.error("expected 'stream_id,end_frame'")
        try:
            out.append((parts[0], int(parts[1])))
        except ValueError:
            reader.error("non-integer end_frame")
    return out


# ---------------------------------------------------------------------------
# model files


def write_model(net: DenseNet, path, mask: PruneMask | None = None) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(MODEL_MAGIC + "\n")
        fh.write(f"input_dim {net.input_dim}\n")
        fh.write(f"layers {len(net.layers)}\n")
        for k, layer in enumerate(net.layers):
            fh.write(f"layer {k} {layer.out_dim} {layer.in_dim} {layer.activation}\n")
            for row in layer.weights:
                fh.write(" ".join(fmt(v) for v in row) + "\n")
            fh.write("bias " + " ".join(fmt(v) for v in layer.bias) + "\n")
        if mask is not None:
            fh.write(f"mask {len(mask.layers)} generation {mask.generation}\n")
            for k, m in enumerate(mask.layers):
                rows, cols = np.nonzero(m)
                row_ptr = np.zeros(m.shape[0] + 1, dtype=np.int64)
                np.add.at(row_ptr, rows + 1, 1)
                row_ptr = np.cumsum(row_ptr)
                fh.write(f"mask_layer {k} rows {m.shape[0]} cols {m.shape[1]} nnz {len(cols)}\n")
                fh.write("rowptr " + " ".join(str(v) for v in row_ptr) + "\n")
                fh.write("colidx" + "".join(f" {v}" for v in cols) + "\n")


def _expect_tokens(reader, line, n_tokens, what):
    parts = line.split()
    if len(parts) != n_tokens:
        reader.error(f"malformed {what} line")
    return parts


def read_model(path) -> tuple[DenseNet, PruneMask | None]:
    reader = _LineReader(path)
    if reader.next_line("magic header") != MODEL_MAGIC:
        reader.error(f"not a model file (expected '{MODEL_MAGIC}')")
    parts = _expect_tokens(reader, reader.next_line("input_dim"), 2, "input_dim")
    if parts[0] != "input_dim":
        reader.error("expected 'input_dim <n>'")
    input_dim = int(parts[1])
    parts = _expect_tokens(reader, reader.next_line("layer count"), 2, "layer count")
    if parts[0] != "layers":
        reader.error("expected 'layers <n>'")
    n_layers = int(parts[1])

    layers = []
    for k in range(n_layers):
        parts = _expect_tokens(reader, reader.next_line(f"layer {k} header"), 5, "layer header")
        if parts[0] != "layer" or int(parts[1]) != k:
            reader.error(f"expected 'layer {k} ...'")
        out_dim, in_dim, act = int(parts[2]), int(parts[3]), parts[4]
        if act not in ACTIVATIONS:
            reader.error(f"unknown activation {act!r}")
        rows = [
            _parse_floats(reader, reader.next_line(f"layer {k} weights"), in_dim, "weight row")
            for _ in range(out_dim)
        ]
        bias_line = reader.next_line(f"layer {k} bias")
        if not bias_line.startswith("bias "):
            reader.error("expected 'bias <values>'")
        bias = _parse_floats(reader, bias_line[5:], out_dim, "bias")
        layers.append(Layer(np.vstack(rows), bias, act))
    net = DenseNet(layers, input_dim)

    mask = None
    if not reader.exhausted:
        parts = _expect_tokens(reader, reader.next_line("mask header"), 4, "mask header")
        if parts[0] != "mask" or parts[2] != "generation":
            reader.error("expected 'mask <n> generation <g>'")
        n_mask, generation = int(parts[1]), int(parts[3])
        if n_mask != n_layers:
            reader.error("mask layer count does not match model")
        mats = []
        for k in range(n_mask):
            parts = _expect_tokens(
                reader, reader.next_line(f"mask layer {k} header"), 8, "mask layer header"
            )
            if parts[0] != "mask_layer" or int(parts[1]) != k:
                reader.error(f"expected 'mask_layer {k} ...'")
            rows_n, cols_n, nnz = int(parts[3]), int(parts[5]), int(parts[7])
            if (rows_n, cols_n) != net.layers[k].weights.shape:
                reader.error("mask shape does not match layer")
            ptr_line = reader.next_line("rowptr")
            if not ptr_line.startswith("rowptr"):
                reader.error("expected 'rowptr <values>'")
            row_ptr = np.array([int(v) for v in ptr_line.split()[1:]], dtype=np.int64)
            if len(row_ptr) != rows_n + 1 or row_ptr[-1] != nnz:
                reader.error("rowptr inconsistent with nnz")
            idx_line = reader.next_line("colidx")
            if not idx_line.startswith("colidx"):
                reader.error("expected 'colidx <values>'")
            col_idx = np.array([int(v) for v in idx_line.split()[1:]], dtype=np.int64)
            if len(col_idx) != nnz:
                reader.error("colidx length does not match nnz")
            m = np.zeros((rows_n, cols_n), dtype=np.uint8)
            for r in range(rows_n):
                m[r, col_idx[row_ptr[r] : row_ptr[r + 1]]] = 1
            mats.append(m)
        mask = PruneMask(mats, generation)
    if not reader.exhausted:
        reader.next_line("")
        reader.error("unexpected trailing content")
    return net, mask


# ---------------------------------------------------------------------------
# flat key-value configs and run manifests


def read_config(path) -> dict[str, str]:
    """`key = value` per line; '#' starts a comment; blank lines ignored."""
    reader = _LineReader(path)
    out: dict[str, str] = {}
    while not reader.exhausted:
        line = reader.next_line("config line")
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            reader.error("expected 'key = value'")
        key, value = stripped.split("=", 1)
        key = key.strip()
        if not key:
            reader.error("empty config key")
        out[key] = value.strip()
    return out


def write_config(values: dict[str, str], path) -> None:
    with open(path, "w", newline="\n") as fh:
        for key in sorted(values):
            fh.write(f"{key} = {values[key]}\n")


@dataclass
class RunManifest:
    """Everything needed to replay a CLI run: the command, the resolved
    option snapshot, seed and paths. Written before any computation starts."""

    command: str
    seed: int
    out_dir: str
    options: dict[str, str] = field(default_factory=dict)
    version: str = ARTIFACT_VERSION

    def write(self, path) -> None:
        values = dict(self.options)
        values["command"] = self.command
        values["seed"] = str(self.seed)
        values["out_dir"] = self.out_dir
        values["artifact_version"] = self.version
        write_config(values, path)

    @classmethod
    def read(cls, path) -> "RunManifest":
        values = read_config(path)
        for required in ("command", "seed", "out_dir", "artifact_version"):
            if required not in values:
                raise ParseError(str(path), 0, 0, f"manifest missing '{required}'")
        command = values.pop("command")
        seed = int(values.pop("seed"))
        out_dir = values.pop("out_dir")
        version = values.pop("artifact_version")
        return cls(command, seed, out_dir, values, version)


def ensure_dir(path) -> str:
    os.makedirs(path, exist_ok=True)
    return str(path)
