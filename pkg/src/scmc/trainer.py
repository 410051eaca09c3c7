"""Specialization of M codecs by alternating assignment and update steps.

Assignment: every training patch goes to the codec with the lowest inference
RD loss. Update: each codec runs Adam on minibatches drawn only from its own
cluster, with a per-phase cosine schedule whose base rate decays by alpha per
phase. The loop stops once fewer than ``convergence_threshold`` of the
assignments change, or after ``max_phases``.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass

import numpy as np

from .bundle import CodecBundle
from .codec import Codec, CodecArch
from .competition import evaluate_all
from .errors import ConfigurationError, ImageFormatError
from .imageio import list_images, read_image
from .nn import OptimizerState, adam_step, cosine_lr

log = logging.getLogger(__name__)

LAMBDA_GRID = (0.01, 0.004, 0.001, 0.0004, 0.0002, 0.0001)


@dataclass
class TrainConfig:
    M: int = 1
    lam: float = 0.001
    patch_size: int = 32
    batch_size: int = 64
    iters_per_update: int = 2000
    base_lr: float = 1e-3
    phase_decay: float = 0.98
    max_phases: int = 10
    convergence_threshold: float = 0.01
    num_patches: int = 4000
    seed: int = 0
    latent_channels: int = 12

    def validate(self) -> None:
        for name in ("M", "patch_size", "batch_size", "max_phases", "latent_channels"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.lam <= 0 or self.base_lr <= 0:
            raise ConfigurationError("lambda and base_lr must be positive")
        if self.iters_per_update < 0 or self.num_patches < 0:
            raise ConfigurationError("iters_per_update and num_patches must be non-negative")
        if not 0 < self.phase_decay <= 1:
            raise ConfigurationError("phase_decay must be in (0, 1]")
        if self.patch_size % 4:
            raise ConfigurationError("patch_size must be a multiple of 4")

    def phase_lr(self, phase: int) -> float:
        return self.base_lr * self.phase_decay**phase


def _rngs(seed: int):
    """Independent generators for data, init, assignment init and minibatch / noise draws."""
    data, init, assign, update = np.random.SeedSequence(seed).spawn(4)
    return data, init, assign, update


# --------------------------------------------------------------------------
# data


def random_crops(images: list[np.ndarray], patch_size: int, count: int, rng) -> np.ndarray:
    """``count`` crops: uniform image, then uniform top-left corner within bounds."""
    out = np.empty((count, 3, patch_size, patch_size), dtype=np.float32)
    for i in range(count):
        img = images[int(rng.integers(len(images)))]
        _, h, w = img.shape
        if h < patch_size or w < patch_size:
            img = np.pad(img, ((0, 0), (0, max(0, patch_size - h)), (0, max(0, patch_size - w))), mode="edge")
            _, h, w = img.shape
        r = int(rng.integers(h - patch_size + 1))
        c = int(rng.integers(w - patch_size + 1))
        out[i] = img[:, r : r + patch_size, c : c + patch_size]
    return out


def ingest_patches(image_dir, patch_size: int, count: int, seed: int = 0) -> np.ndarray:
    paths = list_images(image_dir)
    if not paths:
        raise ImageFormatError(image_dir, "no PPM/PGM/PNG images found")
    images = [read_image(p) for p in paths]
    return random_crops(images, patch_size, count, np.random.default_rng(seed))


def dataset_checksum(dataset: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(dataset).tobytes()).hexdigest()


# --------------------------------------------------------------------------
# assignment


@dataclass
class AssignmentState:
    z: np.ndarray
    M: int
    phase: int = 0
    changed_fraction: float = 1.0
    total_loss: float = float("nan")
    previous_total_loss: float = float("nan")  # old assignment, current parameters

    @property
    def counts(self) -> np.ndarray:
        return np.bincount(self.z, minlength=self.M)

    def clusters(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.z == m) for m in range(self.M)]


def init_assignments(N: int, M: int, seed: int = 0) -> AssignmentState:
    """Random balanced assignment: cluster sizes differ by at most one."""
    if N < M:
        raise ConfigurationError(f"need at least as many samples as clusters (N={N}, M={M})")
    rng = np.random.default_rng(seed)
    z = np.empty(N, dtype=np.int64)
    z[rng.permutation(N)] = np.arange(N) % M
    return AssignmentState(z, M)


def assignment_step(dataset: np.ndarray, bundle: CodecBundle, previous: AssignmentState | None = None,
                    losses: np.ndarray | None = None) -> AssignmentState:
    """Reassign every sample to its argmin-loss codec (round quantization, lowest index on ties)."""
    if losses is None:
        losses = evaluate_all(dataset, bundle)[0]
    z = np.argmin(losses, axis=1)
    n = np.arange(len(z))
    total = float(losses[n, z].sum())
    if previous is None:
        return AssignmentState(z, bundle.M, 0, 1.0, total)
    changed = float(np.mean(z != previous.z)) if len(z) else 0.0
    before = float(losses[n, previous.z].sum())
    return AssignmentState(z, bundle.M, previous.phase, changed, total, before)


# --------------------------------------------------------------------------
# update


def train_codec(codec: Codec, data: np.ndarray, iters: int, base_lr: float, batch_size: int, lam: float, rng,
                quant_mode: str = "noise") -> list[float]:
    """Adam on uniform-with-replacement minibatches; cosine lr from base_lr at step 0 to 0 at the last step."""
    if iters == 0 or len(data) == 0:
        return []
    params = codec.parameters()
    state = OptimizerState.for_params(params, base_lr=base_lr)
    history = []
    for it in range(iters):
        batch = data[rng.integers(len(data), size=batch_size)]
        stats, grads = codec.loss_and_grads(batch, lam, quant_mode, rng=rng)
        lr = cosine_lr(it, iters - 1, base_lr) if iters > 1 else base_lr
        adam_step(params, grads, state, lr)
        history.append(stats.loss)
    return history


def update_step(dataset: np.ndarray, state: AssignmentState, bundle: CodecBundle, phase: int, config: TrainConfig,
                rng=None) -> CodecBundle:
    """Train each codec on its own cluster; empty clusters stay frozen."""
    rng = np.random.default_rng(config.seed) if rng is None else rng
    new = bundle.copy()
    lr = config.phase_lr(phase)
    # one child stream per cluster keeps results independent of training order
    streams = np.random.SeedSequence(int(rng.integers(2**63))).spawn(bundle.M)
    for m, idx in enumerate(state.clusters()):
        if idx.size == 0:
            log.warning("phase %d: cluster %d is empty, parameters frozen", phase, m)
            continue
        train_codec(new.codecs[m], dataset[idx], config.iters_per_update, lr, config.batch_size, bundle.lam,
                    np.random.default_rng(streams[m]))
    return new


# --------------------------------------------------------------------------
# outer loop


@dataclass
class PhaseRecord:
    phase: int
    cluster_sizes: tuple[int, ...]
    total_loss: float
    changed_fraction: float
    lr_base: float
    loss_before_assignment: float

    def tsv(self) -> str:
        sizes = ",".join(map(str, self.cluster_sizes))
        return f"{self.phase}\t{sizes}\t{self.total_loss:.9g}\t{self.changed_fraction:.6f}\t{self.lr_base:.9g}"


LOG_COLUMNS = ("phase", "cluster_sizes", "total_loss", "changed_fraction", "lr_base")


def log_tsv(records: list[PhaseRecord]) -> str:
    return "\n".join(["\t".join(LOG_COLUMNS)] + [r.tsv() for r in records]) + "\n"


@dataclass
class TrainResult:
    bundle: CodecBundle
    log: list[PhaseRecord]
    assignment: AssignmentState


def train_on_patches(config: TrainConfig, dataset: np.ndarray, arch: CodecArch | None = None) -> TrainResult:
    config.validate()
    if len(dataset) == 0:
        raise ConfigurationError("empty training set")
    arch = arch or CodecArch.default(config.latent_channels)
    _, init_seq, assign_seq, update_seq = _rngs(config.seed)
    bundle = CodecBundle.random(arch, config.M, config.lam, seed=int(init_seq.generate_state(1)[0]))
    state = init_assignments(len(dataset), config.M, seed=int(assign_seq.generate_state(1)[0]))
    rng = np.random.default_rng(update_seq)
    records = []
    for phase in range(config.max_phases):
        bundle = update_step(dataset, state, bundle, phase, config, rng)
        new_state = assignment_step(dataset, bundle, state)
        new_state.phase = phase + 1
        rec = PhaseRecord(phase, tuple(int(c) for c in new_state.counts), new_state.total_loss,
                          new_state.changed_fraction, config.phase_lr(phase), new_state.previous_total_loss)
        records.append(rec)
        log.info("phase %d: sizes=%s loss=%.6g changed=%.4f lr=%.3g", phase, rec.cluster_sizes, rec.total_loss,
                 rec.changed_fraction, rec.lr_base)
        state = new_state
        if state.changed_fraction < config.convergence_threshold:
            break
    return TrainResult(bundle, records, state)


def train(config: TrainConfig, image_dir) -> TrainResult:
    config.validate()
    if config.num_patches == 0:
        raise ConfigurationError("num_patches is 0: nothing to train on")
    data_seq = _rngs(config.seed)[0]
    dataset = ingest_patches(image_dir, config.patch_size, config.num_patches,
                             seed=int(data_seq.generate_state(1)[0]))
    return train_on_patches(config, dataset)


# --------------------------------------------------------------------------
# synthetic data with known structure


def two_population_patches(n_per_population: int, patch_size: int, seed: int = 0,
                           noise_amplitude: float = 0.2) -> tuple[np.ndarray, np.ndarray]:
    """Smooth colour ramps (label 0) and high-pass noise around mid-gray (label 1), shuffled.

    Ramps have a per-channel contrast of at least 0.3, so none of them is well
    served by a flat output.

    The noise has every 4x4 block mean removed, so it carries nothing a codec
    could represent at latent resolution: the best a codec can do there is a
    flat mid-gray output at near-zero rate.
    """
    rng = np.random.default_rng(seed)
    P = patch_size
    t = np.linspace(0.0, 1.0, P, dtype=np.float32)
    smooth = np.empty((n_per_population, 3, P, P), dtype=np.float32)
    for i in range(n_per_population):
        angle = rng.uniform(0, 2 * np.pi)
        ramp = np.cos(angle) * t[None, :] + np.sin(angle) * t[:, None]
        lo = rng.uniform(0.05, 0.2, size=3)
        amp = rng.uniform(0.3, 0.6, size=3)
        smooth[i] = lo[:, None, None] + amp[:, None, None] * (ramp - ramp.min()) / np.ptp(ramp)
    u = rng.uniform(-1.0, 1.0, size=(n_per_population, 3, P // 4, 4, P // 4, 4))
    u -= u.mean(axis=(3, 5), keepdims=True)
    noise = (0.5 + noise_amplitude * u.reshape(n_per_population, 3, P, P)).astype(np.float32)
    data = np.concatenate([smooth, noise])
    labels = np.repeat([0, 1], n_per_population)
    order = rng.permutation(len(data))
    return np.ascontiguousarray(data[order]), labels[order]
