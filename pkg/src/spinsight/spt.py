"""The spin-and-trajectory sequence model and its training loop.

Per frame, the 2D ball position and the 13 table keypoints are embedded
into a location token (three interchangeable embedding methods). An
encoder-only transformer with rotary positional encoding maps the token
sequence, with a learnable spin token, to per-frame 3D world positions
(position head) and one initial-spin vector (spin head). Three variants:

  single_stage   spin token prepended before the first layer; both heads
                 read the jointly transformed sequence.
  two_stage      L-4 layers predict positions only; the predicted
                 3-vectors are linearly re-embedded, the spin token is
                 prepended, and 4 more layers feed the spin head.
  connect_stage  like two_stage, but the second stage consumes the
                 d-dimensional transformed tokens before the position head.

Inputs are normalized as (pixel - image_center) / image_diagonal. The spin
head's raw output is scaled by 100 Hz so both loss terms and both heads'
raw ranges stay order-one; the trajectory loss is the per-frame mean
squared 3D error and the spin loss the squared error of spin/100 Hz.

Training follows a fixed protocol: shuffled batches, per-sample train-time
camera resampling plus the three augmentations applied on load, Adam with
a fixed learning rate, parameter EMA (decay 0.999), and checkpoint
selection by the EMA weights' validation spin error after each epoch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import datagen as dg
from .autograd import Adam, Ema, Tensor
from .camera import sample_camera
from .datagen import SampleRecord
from .errors import NumericalError, SpinsightError
from .geometry import DegenerateDirection, ball_frame, world_to_ball

OMEGA_SCALE_HZ = 100.0
MAX_FRAMES = 40
N_POINTS = 14           # ball + 13 table keypoints
ROPE_BASE = 10000.0
MASK_BIAS = -1e30


class SequenceTooLong(SpinsightError):
    pass


class NonFiniteLoss(NumericalError):
    pass


SIZE_PRESETS: dict[str, tuple[int, int, int]] = {
    "small": (8, 4, 32),
    "base": (12, 4, 64),
    "large": (16, 4, 128),
    "huge": (16, 8, 192),
}

VARIANTS = ("single_stage", "two_stage", "connect_stage")
EMBEDDINGS = ("context_free", "concatenation", "dynamic")
SPIN_FRAMES = ("world", "ball")
INNER_LAYERS = 4        # dynamic-embedding encoder and second-stage depth


@dataclass(frozen=True)
class SptConfig:
    variant: str = "connect_stage"
    embedding: str = "concatenation"
    size: str = "large"
    spin_target_frame: str = "world"
    max_frames: int = MAX_FRAMES

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.embedding not in EMBEDDINGS:
            raise ValueError(f"unknown embedding {self.embedding!r}")
        if self.size not in SIZE_PRESETS:
            raise ValueError(f"unknown size preset {self.size!r}")
        if self.spin_target_frame not in SPIN_FRAMES:
            raise ValueError(f"unknown spin frame {self.spin_target_frame!r}")
        if self.d_model % (2 * self.n_heads) != 0:
            raise ValueError("embedding dim must split into even-sized heads")
        if self.variant != "single_stage" and self.n_layers <= INNER_LAYERS:
            raise ValueError("staged variants need more than 4 layers")

    @property
    def n_layers(self) -> int:
        return SIZE_PRESETS[self.size][0]

    @property
    def n_heads(self) -> int:
        return SIZE_PRESETS[self.size][1]

    @property
    def d_model(self) -> int:
        return SIZE_PRESETS[self.size][2]

    def to_dict(self) -> dict[str, str]:
        return {"variant": self.variant, "embedding": self.embedding,
                "size": self.size, "spin_target_frame": self.spin_target_frame,
                "max_frames": str(self.max_frames)}

    @staticmethod
    def from_dict(raw: dict[str, str]) -> "SptConfig":
        return SptConfig(variant=raw["variant"], embedding=raw["embedding"],
                         size=raw["size"],
                         spin_target_frame=raw["spin_target_frame"],
                         max_frames=int(raw.get("max_frames", MAX_FRAMES)))


# ------------------------------------------------------------ initialization

def _init_linear(rng, params, prefix, fan_in, fan_out):
    params[f"{prefix}.w"] = ag.parameter(rng.normal(0.0, 0.02, (fan_in, fan_out)))
    params[f"{prefix}.b"] = ag.parameter(np.zeros(fan_out))


def _init_block(rng, params, prefix, d):
    params[f"{prefix}.ln1.g"] = ag.parameter(np.ones(d))
    params[f"{prefix}.ln1.b"] = ag.parameter(np.zeros(d))
    for name in ("wq", "wk", "wv", "wo"):
        params[f"{prefix}.attn.{name}"] = ag.parameter(rng.normal(0.0, 0.02, (d, d)))
    for name in ("bq", "bk", "bv", "bo"):
        params[f"{prefix}.attn.{name}"] = ag.parameter(np.zeros(d))
    params[f"{prefix}.ln2.g"] = ag.parameter(np.ones(d))
    params[f"{prefix}.ln2.b"] = ag.parameter(np.zeros(d))
    _init_linear(rng, params, f"{prefix}.mlp.fc1", d, 4 * d)
    _init_linear(rng, params, f"{prefix}.mlp.fc2", 4 * d, d)


def init_params(cfg: SptConfig, seed: int) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    d = cfg.d_model
    params: dict[str, Tensor] = {}

    if cfg.embedding == "context_free":
        _init_linear(rng, params, "emb.fc1", 2, d)
        _init_linear(rng, params, "emb.fc2", d, d)
    elif cfg.embedding == "concatenation":
        _init_linear(rng, params, "emb.fc1", 2 * N_POINTS, d)
        _init_linear(rng, params, "emb.fc2", d, d)
    else:
        _init_linear(rng, params, "emb.point.fc1", 2, d)
        _init_linear(rng, params, "emb.point.fc2", d, d)
        params["emb.type"] = ag.parameter(rng.normal(0.0, 0.02, (N_POINTS, d)))
        for i in range(INNER_LAYERS):
            _init_block(rng, params, f"emb.enc{i}", d)
        params["emb.final_ln.g"] = ag.parameter(np.ones(d))
        params["emb.final_ln.b"] = ag.parameter(np.zeros(d))

    n_stage1 = cfg.n_layers if cfg.variant == "single_stage" \
        else cfg.n_layers - INNER_LAYERS
    for i in range(n_stage1):
        _init_block(rng, params, f"stage1.l{i}", d)
    params["stage1.final_ln.g"] = ag.parameter(np.ones(d))
    params["stage1.final_ln.b"] = ag.parameter(np.zeros(d))

    if cfg.variant != "single_stage":
        if cfg.variant == "two_stage":
            params["stage2.in.w"] = ag.parameter(rng.normal(0.0, 0.02, (3, d)))
        for i in range(INNER_LAYERS):
            _init_block(rng, params, f"stage2.l{i}", d)
        params["stage2.final_ln.g"] = ag.parameter(np.ones(d))
        params["stage2.final_ln.b"] = ag.parameter(np.zeros(d))

    params["spin_token"] = ag.parameter(rng.normal(0.0, 0.02, (d,)))
    _init_linear(rng, params, "pos_head.fc1", d, d)
    _init_linear(rng, params, "pos_head.fc2", d, 3)
    _init_linear(rng, params, "spin_head.fc1", d, d)
    _init_linear(rng, params, "spin_head.fc2", d, 3)
    return params


def parameter_count(params: dict[str, Tensor]) -> int:
    return sum(p.data.size for p in params.values())


# ----------------------------------------------------------------- forward

def _linear(params, prefix, x: Tensor) -> Tensor:
    return ag.add(ag.matmul(x, params[f"{prefix}.w"]), params[f"{prefix}.b"])


def _mlp_head(params, prefix, x: Tensor) -> Tensor:
    return _linear(params, f"{prefix}.fc2",
                   ag.gelu(_linear(params, f"{prefix}.fc1", x)))


def _layer_norm(params, prefix, x: Tensor) -> Tensor:
    return ag.layer_norm(x, params[f"{prefix}.g"], params[f"{prefix}.b"])


def _attention(params, prefix, x: Tensor, n_heads: int,
               mask_bias: np.ndarray | None,
               positions: np.ndarray | None) -> Tensor:
    B, S, d = x.shape
    dh = d // n_heads

    def split_heads(t):
        return ag.transpose(ag.reshape(t, (B, S, n_heads, dh)), (0, 2, 1, 3))

    q = split_heads(ag.add(ag.matmul(x, params[f"{prefix}.attn.wq"]),
                           params[f"{prefix}.attn.bq"]))
    k = split_heads(ag.add(ag.matmul(x, params[f"{prefix}.attn.wk"]),
                           params[f"{prefix}.attn.bk"]))
    v = split_heads(ag.add(ag.matmul(x, params[f"{prefix}.attn.wv"]),
                           params[f"{prefix}.attn.bv"]))
    if positions is not None:
        q = ag.rope(q, positions, ROPE_BASE)
        k = ag.rope(k, positions, ROPE_BASE)
    q = ag.mul(q, Tensor(np.float64(1.0 / math.sqrt(dh))))
    scores = ag.matmul(q, ag.transpose(k, (0, 1, 3, 2)))
    if mask_bias is not None:
        scores = ag.add(scores, Tensor(mask_bias))
    out = ag.matmul(ag.softmax(scores), v)
    out = ag.reshape(ag.transpose(out, (0, 2, 1, 3)), (B, S, d))
    return ag.add(ag.matmul(out, params[f"{prefix}.attn.wo"]),
                  params[f"{prefix}.attn.bo"])


def _block(params, prefix, x: Tensor, n_heads: int,
           mask_bias: np.ndarray | None,
           positions: np.ndarray | None) -> Tensor:
    x = ag.add(x, _attention(params, prefix, _layer_norm(params, f"{prefix}.ln1", x),
                             n_heads, mask_bias, positions))
    h = ag.gelu(_linear(params, f"{prefix}.mlp.fc1",
                        _layer_norm(params, f"{prefix}.ln2", x)))
    return ag.add(x, _linear(params, f"{prefix}.mlp.fc2", h))


def _stack(params, prefix, n_layers, x, n_heads, mask_bias, positions):
    for i in range(n_layers):
        x = _block(params, f"{prefix}.l{i}", x, n_heads, mask_bias, positions)
    return _layer_norm(params, f"{prefix}.final_ln", x)


@dataclass
class ModelBatch:
    """Padded model inputs plus ground truth for a batch of records."""

    points: np.ndarray        # (B, T, 14, 2) normalized, ball at index 0
    mask: np.ndarray          # (B, T) True for real frames
    lengths: np.ndarray       # (B,)
    traj_gt: np.ndarray       # (B, T, 3)
    spin_world: np.ndarray    # (B, 3)
    spin_ball: np.ndarray     # (B, 3)


def normalize_points(uv: np.ndarray, image_size) -> np.ndarray:
    W, H = image_size
    diag = math.sqrt(W * W + H * H)
    return (uv - np.array([W / 2.0, H / 2.0])) / diag


def batch_from_records(records: list[SampleRecord]) -> ModelBatch:
    B = len(records)
    T = max(r.n_frames for r in records)
    points = np.zeros((B, T, N_POINTS, 2))
    mask = np.zeros((B, T), dtype=bool)
    lengths = np.zeros(B, dtype=np.int64)
    traj_gt = np.zeros((B, T, 3))
    spin_world = np.zeros((B, 3))
    spin_ball = np.zeros((B, 3))
    for b, rec in enumerate(records):
        n = rec.n_frames
        points[b, :n, 0, :] = normalize_points(rec.ball_2d, rec.image_size)
        points[b, :n, 1:, :] = normalize_points(rec.table_2d, rec.image_size)[None, :, :]
        mask[b, :n] = True
        lengths[b] = n
        traj_gt[b, :n] = rec.gt_traj_3d
        spin_world[b] = rec.gt_spin_world
        spin_ball[b] = rec.gt_spin_ball
    return ModelBatch(points, mask, lengths, traj_gt, spin_world, spin_ball)


def _embed(cfg: SptConfig, params, batch: ModelBatch) -> Tensor:
    B, T = batch.points.shape[:2]
    d = cfg.d_model
    if cfg.embedding == "context_free":
        x = Tensor(batch.points[:, :, 0, :])
        return _linear(params, "emb.fc2", ag.gelu(_linear(params, "emb.fc1", x)))
    if cfg.embedding == "concatenation":
        x = Tensor(batch.points.reshape(B, T, 2 * N_POINTS))
        return _linear(params, "emb.fc2", ag.gelu(_linear(params, "emb.fc1", x)))
    # dynamic: every point is a token through a small permutation encoder
    x = Tensor(batch.points.reshape(B * T, N_POINTS, 2))
    tok = _linear(params, "emb.point.fc2",
                  ag.gelu(_linear(params, "emb.point.fc1", x)))
    tok = ag.add(tok, ag.reshape(params["emb.type"], (1, N_POINTS, d)))
    for i in range(INNER_LAYERS):
        tok = _block(params, f"emb.enc{i}", tok, cfg.n_heads, None, None)
    tok = _layer_norm(params, "emb.final_ln", tok)
    ball = ag.slice_axis(tok, 1, 0, 1)
    return ag.reshape(ball, (B, T, d))


def _mask_bias(mask: np.ndarray, with_token: bool) -> np.ndarray:
    B, T = mask.shape
    S = T + 1 if with_token else T
    bias = np.zeros((B, 1, 1, S))
    offset = 1 if with_token else 0
    bias[:, 0, 0, offset:][~mask] = MASK_BIAS
    return bias


def _prepend_token(params, tokens: Tensor) -> Tensor:
    B, _, d = tokens.shape
    s = ag.add(Tensor(np.zeros((B, 1, d))),
               ag.reshape(params["spin_token"], (1, 1, d)))
    return ag.concat([s, tokens], axis=1)


@dataclass
class ModelOutput:
    traj: Tensor          # (B, T, 3) world meters
    spin: Tensor          # (B, 3) Hz in cfg.spin_target_frame


def spt_forward(cfg: SptConfig, params: dict[str, Tensor],
                batch: ModelBatch) -> ModelOutput:
    B, T = batch.points.shape[:2]
    if T > cfg.max_frames:
        raise SequenceTooLong(f"{T} frames exceed the limit {cfg.max_frames}")
    tokens = _embed(cfg, params, batch)
    omega = Tensor(np.float64(OMEGA_SCALE_HZ))

    if cfg.variant == "single_stage":
        seq = _prepend_token(params, tokens)
        x = _stack(params, "stage1", cfg.n_layers, seq, cfg.n_heads,
                   _mask_bias(batch.mask, True), np.arange(T + 1, dtype=np.float64))
        loc = ag.slice_axis(x, 1, 1, T + 1)
        spin_feat = ag.reshape(ag.slice_axis(x, 1, 0, 1), (B, cfg.d_model))
        traj = _mlp_head(params, "pos_head", loc)
        spin = ag.mul(_mlp_head(params, "spin_head", spin_feat), omega)
        return ModelOutput(traj, spin)

    positions = np.arange(1, T + 1, dtype=np.float64)
    x1 = _stack(params, "stage1", cfg.n_layers - INNER_LAYERS, tokens,
                cfg.n_heads, _mask_bias(batch.mask, False), positions)
    traj = _mlp_head(params, "pos_head", x1)

    stage2_in = ag.matmul(traj, params["stage2.in.w"]) \
        if cfg.variant == "two_stage" else x1
    seq2 = _prepend_token(params, stage2_in)
    y = _stack(params, "stage2", INNER_LAYERS, seq2, cfg.n_heads,
               _mask_bias(batch.mask, True), np.arange(T + 1, dtype=np.float64))
    spin_feat = ag.reshape(ag.slice_axis(y, 1, 0, 1), (B, cfg.d_model))
    spin = ag.mul(_mlp_head(params, "spin_head", spin_feat), omega)
    return ModelOutput(traj, spin)


def spt_loss(cfg: SptConfig, out: ModelOutput, batch: ModelBatch) -> Tensor:
    """Per-frame mean squared 3D error plus squared spin/100 Hz error,
    averaged over the batch; padded frames carry zero weight."""
    B, T = batch.mask.shape
    w_traj = (batch.mask[:, :, None] / batch.lengths[:, None, None]) / B
    traj_term = ag.squared_error(out.traj, Tensor(batch.traj_gt),
                                 np.broadcast_to(w_traj, (B, T, 3)))
    gt_spin = batch.spin_world if cfg.spin_target_frame == "world" \
        else batch.spin_ball
    w_spin = np.full((B, 3), 1.0 / (B * OMEGA_SCALE_HZ ** 2))
    spin_term = ag.squared_error(out.spin, Tensor(gt_spin), w_spin)
    return ag.add(traj_term, spin_term)


# ---------------------------------------------------------------- inference

def predict(cfg: SptConfig, weights: dict[str, np.ndarray],
            records: list[SampleRecord],
            batch_size: int = 64) -> tuple[list[np.ndarray], np.ndarray]:
    """Run the model over records (stored cameras, no augmentation).

    Returns per-record 3D trajectories (trimmed to true length) and an
    (N, 3) array of spin predictions in cfg.spin_target_frame.
    """
    params = {k: Tensor(v) for k, v in weights.items()}
    trajs: list[np.ndarray] = []
    spins: list[np.ndarray] = []
    for start in range(0, len(records), batch_size):
        chunk = records[start:start + batch_size]
        batch = batch_from_records(chunk)
        out = spt_forward(cfg, params, batch)
        for i, rec in enumerate(chunk):
            trajs.append(out.traj.data[i, :rec.n_frames].copy())
        spins.append(out.spin.data.copy())
    return trajs, np.concatenate(spins, axis=0)


def spin_to_ball_frame(cfg: SptConfig, spin_pred: np.ndarray,
                       traj_pred: np.ndarray,
                       traj_fallback: np.ndarray | None = None) -> np.ndarray:
    """Express one spin prediction in the ball frame.

    Models trained in the world frame are converted with the frame built
    from the predicted trajectory's first two positions (the ground truth
    is unavailable at inference); ball-frame models pass through. Falls
    back to a frame from traj_fallback when the prediction is degenerate.
    """
    if cfg.spin_target_frame == "ball":
        return np.asarray(spin_pred, dtype=np.float64)
    try:
        frame = ball_frame(traj_pred[0], traj_pred[1])
    except DegenerateDirection:
        if traj_fallback is None:
            raise
        frame = ball_frame(traj_fallback[0], traj_fallback[1])
    return world_to_ball(spin_pred, frame)


def predict_ball_spins(cfg: SptConfig, weights: dict[str, np.ndarray],
                       records: list[SampleRecord],
                       batch_size: int = 64) -> tuple[list[np.ndarray], np.ndarray]:
    """predict() plus conversion of every spin estimate to the ball frame."""
    trajs, spins = predict(cfg, weights, records, batch_size)
    ball = np.stack([
        spin_to_ball_frame(cfg, spins[i], trajs[i], rec.gt_traj_3d)
        for i, rec in enumerate(records)])
    return trajs, ball


def validation_spin_error(cfg: SptConfig, weights: dict[str, np.ndarray],
                          records: list[SampleRecord],
                          batch_size: int = 64) -> float:
    """Mean ball-frame spin error (Hz) of the given weights over records."""
    _, ball = predict_ball_spins(cfg, weights, records, batch_size)
    gt = np.stack([r.gt_spin_ball for r in records])
    return float(np.mean(np.linalg.norm(ball - gt, axis=1)))


# ----------------------------------------------------------------- training

@dataclass(frozen=True)
class AugmentOptions:
    motion_blur: bool = True
    sudden_end: bool = True
    gaussian: bool = True

    def to_dict(self) -> dict[str, str]:
        return {"aug_motion_blur": str(int(self.motion_blur)),
                "aug_sudden_end": str(int(self.sudden_end)),
                "aug_gaussian": str(int(self.gaussian))}


@dataclass
class TrainResult:
    best_val_spin_error: float
    best_epoch: int
    weights: dict[str, np.ndarray]      # EMA weights of the best epoch
    log: list[dict]
    final_step: int


def _load_pipeline(rec: SampleRecord, rng: np.random.Generator,
                   augment: AugmentOptions,
                   resample_cameras: bool) -> SampleRecord:
    if rec.camera == dg.RESAMPLE:
        cam = sample_camera(rng, rec.image_size) if resample_cameras \
            else dg.record_camera(rec)
        rec = dg.resolve_camera(rec, cam)
    if augment.motion_blur:
        rec = dg.augment_motion_blur(rec, rng)
    if augment.sudden_end:
        rec = dg.augment_sudden_end(rec, rng)
    if augment.gaussian:
        rec = dg.augment_gaussian(rec, rng)
    return rec


def train(cfg: SptConfig, train_records: list[SampleRecord],
          val_records: list[SampleRecord], epochs: int,
          batch_size: int = 64, lr: float = 1e-4, seed: int = 0,
          augment: AugmentOptions = AugmentOptions(),
          resample_cameras: bool = True,
          checkpoint_path=None, resume=None,
          progress=None) -> TrainResult:
    """Train and return the checkpoint with the best validation spin error.

    Deterministic in (cfg, records, hyperparameters, seed): one rng stream
    drives shuffling, camera resampling, and augmentations in order.
    """
    if not train_records:
        raise SpinsightError("empty training split")
    rng = np.random.default_rng(seed)
    params = init_params(cfg, seed)
    adam = Adam(params, lr=lr)
    ema = Ema(params)
    steps_per_epoch = max(1, math.ceil(len(train_records) / batch_size))
    start_epoch = 0

    if resume is not None:
        tensors, _, step = ag.load_checkpoint(resume)
        for k, p in params.items():
            p.data = tensors[k].copy()
        adam.load_state(tensors, step)
        for k in ema.shadow:
            ema.shadow[k] = tensors[f"ema.{k}"].copy()
        start_epoch = step // steps_per_epoch

    config_echo = dict(cfg.to_dict(), epochs=str(epochs), batch=str(batch_size),
                       lr=repr(lr), seed=str(seed),
                       resample_cameras=str(int(resample_cameras)),
                       **augment.to_dict())

    best_err = math.inf
    best_epoch = -1
    best_weights = {k: v.copy() for k, v in ema.shadow.items()}
    log: list[dict] = []

    for epoch in range(start_epoch, epochs):
        order = rng.permutation(len(train_records))
        losses = []
        for start in range(0, len(order), batch_size):
            chunk = [_load_pipeline(train_records[i], rng, augment,
                                    resample_cameras)
                     for i in order[start:start + batch_size]]
            batch = batch_from_records(chunk)
            out = spt_forward(cfg, params, batch)
            loss = spt_loss(cfg, out, batch)
            value = float(loss.data)
            if not math.isfinite(value):
                raise NonFiniteLoss(
                    f"loss became non-finite at epoch {epoch}, "
                    f"step {adam.step_count}")
            ag.backward(loss)
            adam.step()
            adam.zero_grad()
            ema.update(params)
            losses.append(value)

        val_err = validation_spin_error(cfg, ema.shadow, val_records,
                                        batch_size) if val_records else math.inf
        if val_err < best_err:
            best_err, best_epoch = val_err, epoch
            best_weights = {k: v.copy() for k, v in ema.shadow.items()}
            if checkpoint_path is not None:
                save_model(checkpoint_path, cfg, params, adam, ema,
                           config_echo)
        row = {"epoch": epoch, "train_loss": float(np.mean(losses)),
               "val_spin_error_hz": val_err, "best_val_spin_error_hz": best_err,
               "step": adam.step_count}
        log.append(row)
        if progress is not None:
            progress(row)

    return TrainResult(best_val_spin_error=best_err, best_epoch=best_epoch,
                       weights=best_weights, log=log,
                       final_step=adam.step_count)


def save_model(path, cfg: SptConfig, params: dict[str, Tensor],
               adam: Adam, ema: Ema, config_echo: dict[str, str]) -> None:
    tensors: dict[str, np.ndarray] = {k: p.data for k, p in params.items()}
    tensors.update({f"ema.{k}": v for k, v in ema.shadow.items()})
    tensors.update(adam.state_tensors())
    ag.save_checkpoint(path, tensors, config_echo, adam.step_count)


def load_model(path) -> tuple[SptConfig, dict[str, np.ndarray], dict[str, str], int]:
    """Read a checkpoint; returns (config, EMA eval weights, config echo,
    step)."""
    tensors, config, step = ag.load_checkpoint(path)
    cfg = SptConfig.from_dict(config)
    weights = {k[len("ema."):]: v for k, v in tensors.items()
               if k.startswith("ema.")}
    return cfg, weights, config, step
