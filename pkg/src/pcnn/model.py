"""Full model: configuration, parameter set, forward pass, losses, training.

The forward pipeline is segment -> encoder -> conformer blocks -> mask ->
decoder -> overlap-add; output length always equals input length. The
combined loss is alpha * spectral MSE + (1 - alpha) * sample MSE, with the
spectral term computed through the tape so toy training can descend on it.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from pcnn import blocks, ops
from pcnn.framing import FrameSpec, segment
from pcnn.runtime import single_threaded_blas
from pcnn.spectral import hann_window
from pcnn.tensor import GradTape, Tensor, as_tensor, backward

CHECKPOINT_MAGIC = b"PCNN"
CHECKPOINT_VERSION = 1

_CONFIG_FIELD_TYPES = {
    "frame_len": int, "overlap": int, "channels": int, "num_pcb": int,
    "attn_dim": int, "gru_hidden": int, "ca_reduction": int,
    "stft_frame": int, "stft_hop": int, "alpha": float, "seed": int,
}


class TrainingDiverged(ValueError):
    def __init__(self, step: int):
        super().__init__(f"loss became non-finite at step {step}")
        self.step = step


@dataclass
class ModelConfig:
    """Every architectural knob in one place; 0 means derive from channels."""

    frame_len: int = 512
    overlap: int = 256
    channels: int = 64
    num_pcb: int = 4
    attn_dim: int = 0
    gru_hidden: int = 0
    ca_reduction: int = 4
    stft_frame: int = 512
    stft_hop: int = 256
    alpha: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.attn_dim == 0:
            self.attn_dim = max(4, self.channels // 4)
        if self.gru_hidden == 0:
            self.gru_hidden = self.channels
        self.validate()

    def validate(self) -> None:
        checks = [
            (self.frame_len >= 2 and self.frame_len % 2 == 0,
             f"frame_len must be even and >= 2, got {self.frame_len}"),
            (0 <= self.overlap < self.frame_len,
             f"overlap must satisfy 0 <= S < L, got {self.overlap}"),
            (self.channels >= 1, f"channels must be >= 1, got {self.channels}"),
            (self.num_pcb >= 1, f"num_pcb must be >= 1, got {self.num_pcb}"),
            (self.attn_dim >= 1, f"attn_dim must be >= 1, got {self.attn_dim}"),
            (self.gru_hidden >= 1, f"gru_hidden must be >= 1, got {self.gru_hidden}"),
            (self.ca_reduction >= 1,
             f"ca_reduction must be >= 1, got {self.ca_reduction}"),
            (self.stft_frame >= 2 and (self.stft_frame & (self.stft_frame - 1)) == 0,
             f"stft_frame must be a power of two, got {self.stft_frame}"),
            (1 <= self.stft_hop <= self.stft_frame,
             f"stft_hop must be in [1, stft_frame], got {self.stft_hop}"),
            (0.0 <= self.alpha <= 1.0, f"alpha must be in [0, 1], got {self.alpha}"),
            (self.seed >= 0, f"seed must be >= 0, got {self.seed}"),
        ]
        for ok, message in checks:
            if not ok:
                raise ValueError(message)

    @property
    def frame_spec(self) -> FrameSpec:
        return FrameSpec(self.frame_len, self.overlap)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True, separators=(",", ":"))

    @staticmethod
    def from_json(text: str) -> "ModelConfig":
        return ModelConfig(**json.loads(text))

    @staticmethod
    def from_file(path) -> "ModelConfig":
        """Parse the plain-text ``key = value`` schema; unknown keys are errors."""
        values = {}
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
                key, _, val = (part.strip() for part in line.partition("="))
                if key not in _CONFIG_FIELD_TYPES:
                    raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
                if key in values:
                    raise ValueError(f"{path}:{lineno}: duplicate config key {key!r}")
                try:
                    values[key] = _CONFIG_FIELD_TYPES[key](val)
                except ValueError:
                    raise ValueError(
                        f"{path}:{lineno}: cannot parse {val!r} as "
                        f"{_CONFIG_FIELD_TYPES[key].__name__} for {key!r}"
                    ) from None
        return ModelConfig(**values)

    def to_file(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for key in _CONFIG_FIELD_TYPES:
                fh.write(f"{key} = {getattr(self, key)}\n")


def toy_config(seed: int = 0) -> ModelConfig:
    """Small configuration used by gradient checks and the overfit demo."""
    return ModelConfig(frame_len=64, overlap=32, channels=8, num_pcb=1, seed=seed)


@dataclass
class PCNNParams:
    """Complete named parameter set of one model instance."""

    config: ModelConfig
    encoder: blocks.EncoderParams
    pcbs: list = field(default_factory=list)
    masking: blocks.MaskingParams = None
    decoder: blocks.DecoderParams = None

    def named_tensors(self):
        yield from blocks.named_tensors(self.encoder, "encoder")
        for i, pcb in enumerate(self.pcbs):
            yield from blocks.named_tensors(pcb, f"pcb.{i}")
        yield from blocks.named_tensors(self.masking, "masking")
        yield from blocks.named_tensors(self.decoder, "decoder")

    def param_count(self) -> int:
        return sum(t.size for _, t in self.named_tensors())

    def tensor(self, name: str) -> Tensor:
        for n, t in self.named_tensors():
            if n == name:
                return t
        raise KeyError(name)


def build(config: ModelConfig) -> PCNNParams:
    """Deterministic seeded initialization of every parameter tensor."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    c = config.channels
    return PCNNParams(
        config=config,
        encoder=blocks.init_encoder(rng, c),
        pcbs=[
            blocks.init_pcb(rng, c, config.attn_dim, config.gru_hidden, config.ca_reduction)
            for _ in range(config.num_pcb)
        ],
        masking=blocks.init_masking(rng, c),
        decoder=blocks.init_decoder(rng, c),
    )


# ---------------------------------------------------------------------------
# forward


def forward_graph(params: PCNNParams, x: np.ndarray) -> Tensor:
    """End-to-end enhancement as a taped tensor graph; returns the waveform."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size < 1:
        raise ValueError(f"input must be a non-empty 1-D waveform, got shape {x.shape}")
    spec = params.config.frame_spec
    framed = Tensor(segment(x, spec))
    enc = blocks.encoder_forward(params.encoder, framed)
    h = enc
    for pcb in params.pcbs:
        h = blocks.pcb_forward(pcb, h)
    masked = blocks.masking_forward(params.masking, h, enc)
    frames_out = blocks.decoder_forward(params.decoder, masked)
    flat = ops.reshape(frames_out, (frames_out.shape[1], frames_out.shape[2]))
    return ops.overlap_add_frames(flat, spec.hop, x.shape[0])


def forward(params: PCNNParams, x: np.ndarray) -> np.ndarray:
    return forward_graph(params, x).data.copy()


# ---------------------------------------------------------------------------
# losses


_DFT_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _dft_matrices(n: int) -> tuple[np.ndarray, np.ndarray]:
    if n not in _DFT_CACHE:
        grid = np.outer(np.arange(n), np.arange(n // 2 + 1)) * (2.0 * np.pi / n)
        _DFT_CACHE[n] = (np.cos(grid), -np.sin(grid))
    return _DFT_CACHE[n]


def magnitude_spectrogram(x, frame: int = 512, hop: int = 256) -> Tensor:
    """Taped magnitude spectrogram matching :func:`pcnn.spectral.stft`."""
    x = as_tensor(x)
    frames = ops.frame_signal(x, frame, hop, pad_each_side=frame // 2)
    windowed = ops.mul(frames, Tensor(hann_window(frame)))
    cos_mat, sin_mat = _dft_matrices(frame)
    re = ops.matmul(windowed, Tensor(cos_mat))
    im = ops.matmul(windowed, Tensor(sin_mat))
    return ops.sqrt(ops.add(ops.mul(re, re), ops.mul(im, im)))


def _check_lengths(clean, est) -> tuple[Tensor, Tensor]:
    clean, est = as_tensor(clean), as_tensor(est)
    if clean.shape != est.shape or clean.data.ndim != 1:
        raise ValueError(
            f"waveforms must be equal-length 1-D, got {clean.shape} and {est.shape}"
        )
    return clean, est


def loss_time(clean, est) -> Tensor:
    clean, est = _check_lengths(clean, est)
    diff = ops.sub(est, clean)
    return ops.mean_all(ops.mul(diff, diff))


def loss_frequency(clean, est, frame: int = 512, hop: int = 256) -> Tensor:
    clean, est = _check_lengths(clean, est)
    diff = ops.sub(magnitude_spectrogram(est, frame, hop),
                   magnitude_spectrogram(clean, frame, hop))
    return ops.mean_all(ops.mul(diff, diff))


def loss_total(clean, est, alpha: float = 0.2, frame: int = 512, hop: int = 256) -> Tensor:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    lf = loss_frequency(clean, est, frame, hop)
    lt = loss_time(clean, est)
    return ops.add(ops.mul(alpha, lf), ops.mul(1.0 - alpha, lt))


# ---------------------------------------------------------------------------
# toy training (adaptive-moment gradient descent)


def train_toy(params: PCNNParams, clean: np.ndarray, noisy: np.ndarray,
              steps: int = 500, lr: float = 0.001,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> list[float]:
    """Overfit one clip; returns the per-step combined loss trajectory."""
    clean = np.asarray(clean, dtype=np.float64)
    noisy = np.asarray(noisy, dtype=np.float64)
    cfg = params.config
    named = list(params.named_tensors())
    m_state = {name: np.zeros_like(t.data) for name, t in named}
    v_state = {name: np.zeros_like(t.data) for name, t in named}

    losses: list[float] = []
    with single_threaded_blas():
        for step in range(1, steps + 1):
            with GradTape() as tape:
                est = forward_graph(params, noisy)
                loss = loss_total(clean, est, cfg.alpha, cfg.stft_frame, cfg.stft_hop)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(step)
            losses.append(value)
            grads = backward(tape, loss)
            for name, t in named:
                g = grads.get(t)
                if g is None:
                    continue
                m = m_state[name]
                v = v_state[name]
                m += (1.0 - beta1) * (g - m)
                v += (1.0 - beta2) * (g * g - v)
                m_hat = m / (1.0 - beta1 ** step)
                v_hat = v / (1.0 - beta2 ** step)
                t.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return losses


# ---------------------------------------------------------------------------
# checkpoint serialization


def save(params: PCNNParams, path) -> None:
    """Binary checkpoint: magic, version, config JSON, then named tensors."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        cfg = params.config.to_json().encode("utf-8")
        fh.write(struct.pack("<I", len(cfg)))
        fh.write(cfg)
        named = list(params.named_tensors())
        fh.write(struct.pack("<I", len(named)))
        for name, t in named:
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", t.data.ndim))
            fh.write(struct.pack(f"<{t.data.ndim}I", *t.data.shape))
            fh.write(t.data.astype("<f8").tobytes())


def load(path) -> PCNNParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    view = memoryview(blob)
    if bytes(view[:4]) != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a model checkpoint (bad magic)")
    offset = 4

    def take(fmt):
        nonlocal offset
        size = struct.calcsize(fmt)
        vals = struct.unpack_from(fmt, view, offset)
        offset += size
        return vals

    (version,) = take("<I")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (cfg_len,) = take("<I")
    config = ModelConfig.from_json(bytes(view[offset:offset + cfg_len]).decode("utf-8"))
    offset += cfg_len

    loaded: dict[str, np.ndarray] = {}
    (count,) = take("<I")
    for _ in range(count):
        (name_len,) = take("<I")
        name = bytes(view[offset:offset + name_len]).decode("utf-8")
        offset += name_len
        (rank,) = take("<I")
        shape = take(f"<{rank}I")
        n = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(view, dtype="<f8", count=n, offset=offset).reshape(shape)
        offset += 8 * n
        loaded[name] = np.ascontiguousarray(data, dtype=np.float64)

    params = build(config)
    expected = dict(params.named_tensors())
    if set(loaded) != set(expected):
        missing = sorted(set(expected) - set(loaded))
        extra = sorted(set(loaded) - set(expected))
        raise ValueError(f"{path}: tensor names do not match (missing {missing}, extra {extra})")
    for name, t in expected.items():
        if loaded[name].shape != t.data.shape:
            raise ValueError(
                f"{path}: shape mismatch for {name}: "
                f"{loaded[name].shape} vs expected {t.data.shape}"
            )
        t.data[...] = loaded[name]
    return params
