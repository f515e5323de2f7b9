"""Global-local attention and the motion-estimation network.

The network consumes two aligned B-mode sequences (frames i and i+1 of
a scan), refines them through a shared first encoder stage, correlates
the stage-1 feature maps patch-wise, pushes the concatenated features
through three more residual stages, recalibrates mid/deep features with
a global-local attention block, and regresses per-step 6-DoF motion
with two LSTM estimators (one on the global summary, one on the local
one) whose outputs are fused by averaging.

Shape ladder (toy scale, 64px frames / paper shape, 256px frames):

    stage1   16 x 32 x 32      64 x 128 x 128
    corr     (8 x 8 RoIs) x 5 x 5 displacements -> 25 channels on 8 x 8
    stage2   32 x 16 x 16     128 x 64 x 64
    stage3   48 x  8 x  8     256 x  8 x  8
    stage4   64 x  4 x  4     512 x  4 x  4

The paper-shape config exists for shape checking only; the toy config is
what trains on simulated scans.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .correlation import CorrConfig, correlate_batch
from .nn import Conv2d, Linear, LSTMCell, Module, Parameter, kaiming_uniform
from .nn import load_checkpoint, save_checkpoint
from .pgm import write_pgm16
from .pose import PoseVector
from .tensor import Tensor

__all__ = [
    "GlaConfig",
    "ModelConfig",
    "MotionEstimate",
    "GlobalLocalAttention",
    "MotionNetwork",
    "export_attention_scores",
    "save_model",
    "load_model",
]


@dataclass(frozen=True)
class GlaConfig:
    """Shapes of the attention block: local features (channels, extent),
    global features (channels, extent), local block tiling and the MLP
    bottleneck ratio."""

    local_channels: int
    local_extent: int
    global_channels: int
    global_extent: int
    block_extent: int = 4
    mlp_reduction: int = 16

    def __post_init__(self) -> None:
        if self.local_extent % self.block_extent != 0:
            raise ValueError(
                f"block extent {self.block_extent} does not tile a "
                f"{self.local_extent}px local map"
            )
        if self.global_channels % self.local_channels != 0:
            raise ValueError(
                "global channel count must be a multiple of the local one"
            )
        if self.n_blocks * self.block_extent**2 != self.local_extent**2:
            raise ValueError("block tiling does not cover the local area")
        if self.block_extent != self.global_extent:
            raise ValueError(
                "cosine weighting compares local blocks against the projected "
                f"global map, so block extent {self.block_extent} must equal "
                f"the global extent {self.global_extent}"
            )

    @property
    def n_blocks(self) -> int:
        return (self.local_extent // self.block_extent) ** 2

    @property
    def grid_extent(self) -> int:
        return self.local_extent // self.block_extent


@dataclass(frozen=True)
class ModelConfig:
    """Network hyperparameters; ``toy`` is the trainable desk-scale setup,
    ``paper_shape`` reproduces the published tensor shapes untrained."""

    scale: str = "toy"
    frame_extent: int = 64
    encoder_channels: tuple = (8, 16, 32, 64)
    downsample: tuple = (2, 2, 2, 2)
    seq_len: int = 8  # s: windows hold s+1 frame pairs
    lstm_hidden: int = 32
    fusion: str = "mean"
    use_gla: bool = True
    corr_roi: int = 9
    corr_patch: int = 5
    corr_grid: int = 8
    block_extent: int = 4
    mlp_reduction: int = 16

    def __post_init__(self) -> None:
        if self.fusion != "mean":
            raise ValueError(f"unknown fusion mode {self.fusion!r}")
        if len(self.encoder_channels) != 4 or len(self.downsample) != 4:
            raise ValueError("encoder needs 4 stages")
        extent = self.frame_extent
        for ds in self.downsample:
            if extent % ds != 0:
                raise ValueError(f"downsample chain does not divide {self.frame_extent}")
            extent //= ds
        if self.stage_extent(2) != self.corr_grid:
            raise ValueError(
                f"stage-3 extent {self.stage_extent(3)} must match the "
                f"{self.corr_grid}px correlation grid"
            )

    @classmethod
    def toy(cls, **overrides) -> "ModelConfig":
        return cls(**overrides)

    @classmethod
    def paper_shape(cls, **overrides) -> "ModelConfig":
        base = dict(
            scale="paper",
            frame_extent=256,
            encoder_channels=(64, 128, 256, 512),
            downsample=(2, 2, 8, 2),
            lstm_hidden=128,
        )
        base.update(overrides)
        return cls(**base)

    # -- derived shapes -------------------------------------------------
    def stage_extent(self, stage: int) -> int:
        extent = self.frame_extent
        for ds in self.downsample[: stage + 1]:
            extent //= ds
        return extent

    @property
    def corr_config(self) -> CorrConfig:
        return CorrConfig.for_map_extent(
            self.stage_extent(0), grid=self.corr_grid,
            roi_extent=self.corr_roi, patch_extent=self.corr_patch,
        )

    @property
    def gla_config(self) -> GlaConfig:
        return GlaConfig(
            local_channels=self.encoder_channels[1],
            local_extent=self.stage_extent(1),
            global_channels=self.encoder_channels[3],
            global_extent=self.stage_extent(3),
            block_extent=self.block_extent,
            mlp_reduction=self.mlp_reduction,
        )

    @property
    def embedding_size(self) -> int:
        return 2 * self.encoder_channels[3]

    # -- flat key=value serialization ------------------------------------
    def to_text_dict(self) -> dict:
        return {
            "scale": self.scale,
            "frame_extent": str(self.frame_extent),
            "encoder_channels": ",".join(str(c) for c in self.encoder_channels),
            "downsample": ",".join(str(d) for d in self.downsample),
            "seq_len": str(self.seq_len),
            "lstm_hidden": str(self.lstm_hidden),
            "fusion": self.fusion,
            "use_gla": str(int(self.use_gla)),
            "corr_roi": str(self.corr_roi),
            "corr_patch": str(self.corr_patch),
            "corr_grid": str(self.corr_grid),
            "block_extent": str(self.block_extent),
            "mlp_reduction": str(self.mlp_reduction),
        }

    @classmethod
    def from_text_dict(cls, text: dict) -> "ModelConfig":
        return cls(
            scale=text["scale"],
            frame_extent=int(text["frame_extent"]),
            encoder_channels=tuple(int(c) for c in text["encoder_channels"].split(",")),
            downsample=tuple(int(d) for d in text["downsample"].split(",")),
            seq_len=int(text["seq_len"]),
            lstm_hidden=int(text["lstm_hidden"]),
            fusion=text["fusion"],
            use_gla=bool(int(text["use_gla"])),
            corr_roi=int(text["corr_roi"]),
            corr_patch=int(text["corr_patch"]),
            corr_grid=int(text["corr_grid"]),
            block_extent=int(text["block_extent"]),
            mlp_reduction=int(text["mlp_reduction"]),
        )


@dataclass(frozen=True)
class MotionEstimate:
    """Per-step outputs: the two estimator branches and their fusion."""

    global_motion: PoseVector
    local_motion: PoseVector
    fused: PoseVector


class ResidualStage(Module):
    """Stride-2 downsampling conv(s) followed by a two-conv residual block."""

    def __init__(self, in_channels: int, out_channels: int, downsample: int,
                 rng: np.random.Generator):
        if downsample & (downsample - 1):
            raise ValueError("downsample must be a power of two")
        steps = max(1, downsample.bit_length() - 1)
        convs = []
        ch = in_channels
        for i in range(steps):
            stride = 2 if downsample > 1 else 1
            convs.append(Conv2d(ch, out_channels, 3, rng, stride=stride, padding=1))
            ch = out_channels
        self.down = convs
        self.res1 = Conv2d(out_channels, out_channels, 3, rng, padding=1)
        self.res2 = Conv2d(out_channels, out_channels, 3, rng, padding=1)

    def __call__(self, x: Tensor) -> Tensor:
        h = x
        for conv in self.down:
            h = T.relu(conv(h))
        r = self.res2(T.relu(self.res1(h)))
        return T.relu(T.add(h, r))


def _tile_blocks(x: Tensor, block_extent: int) -> Tensor:
    """(n, c, h, w) -> (n, n_blocks, c, e, e), row-major non-overlapping."""
    n, c, h, w = x.shape
    gy, gx = h // block_extent, w // block_extent
    t = T.reshape(x, (n, c, gy, block_extent, gx, block_extent))
    t = T.transpose(t, (0, 2, 4, 1, 3, 5))
    return T.reshape(t, (n, gy * gx, c, block_extent, block_extent))


def untile_blocks(blocks: Tensor, map_extent: int) -> Tensor:
    """Inverse of the block tiling (used by tests and diagnostics)."""
    n, nb, c, e, _ = blocks.shape
    g = map_extent // e
    t = T.reshape(blocks, (n, g, g, c, e, e))
    t = T.transpose(t, (0, 3, 1, 4, 2, 5))
    return T.reshape(t, (n, c, map_extent, map_extent))


class GlobalLocalAttention(Module):
    """Channel attention on local blocks, channel+spatial attention on the
    global map, then cosine-similarity reweighting of each local block
    against the projected global feature."""

    def __init__(self, cfg: GlaConfig, rng: np.random.Generator):
        self.cfg = cfg
        hidden_l = max(1, cfg.local_channels // cfg.mlp_reduction)
        hidden_g = max(1, cfg.global_channels // cfg.mlp_reduction)
        self.local_mlp1 = Linear(cfg.local_channels, hidden_l, rng, bias=False)
        self.local_mlp2 = Linear(hidden_l, cfg.local_channels, rng, bias=False)
        self.global_mlp1 = Linear(cfg.global_channels, hidden_g, rng, bias=False)
        self.global_mlp2 = Linear(hidden_g, cfg.global_channels, rng, bias=False)
        self.spatial_conv = Conv2d(2, 1, 1, rng, bias=False)
        self.global_proj = Conv2d(cfg.global_channels, cfg.local_channels, 1,
                                  rng, bias=False)
        proj_out = cfg.global_channels // cfg.local_channels
        self.block_proj = Parameter(
            kaiming_uniform(rng, (proj_out, cfg.n_blocks), cfg.n_blocks)
        )

    def local_channel_scores(self, e2: Tensor) -> Tensor:
        """Sigmoid-bounded per-channel score vector of the local map."""
        if e2.ndim == 3:
            e2 = T.reshape(e2, (1,) + e2.shape)
        if e2.shape[1] != self.cfg.local_channels:
            raise ValueError(
                f"expected {self.cfg.local_channels} local channels, "
                f"got shape {e2.shape}"
            )
        pooled = T.reshape(T.adaptive_avg_pool2d(e2, 1), (e2.shape[0], e2.shape[1]))
        return T.sigmoid(self.local_mlp2(self.local_mlp1(pooled)))

    def recalibrate_local(self, e2: Tensor, scores: Tensor) -> Tensor:
        """Channel-weighted local blocks, (n, n_blocks, c, e, e)."""
        if e2.ndim == 3:
            e2 = T.reshape(e2, (1,) + e2.shape)
        if scores.shape[-1] != e2.shape[1]:
            raise ValueError(
                f"{scores.shape[-1]} scores cannot weight {e2.shape[1]} channels"
            )
        blocks = _tile_blocks(e2, self.cfg.block_extent)
        w = T.reshape(scores, (e2.shape[0], 1, e2.shape[1], 1, 1))
        return T.mul(blocks, w)

    def global_attention(self, e4: Tensor) -> Tensor:
        """Parallel channel and spatial recalibration of the global map."""
        if e4.ndim == 3:
            e4 = T.reshape(e4, (1,) + e4.shape)
        n, c, h, w = e4.shape
        if c != self.cfg.global_channels:
            raise ValueError(
                f"expected {self.cfg.global_channels} global channels, "
                f"got shape {e4.shape}"
            )
        pooled = T.reshape(T.adaptive_avg_pool2d(e4, 1), (n, c))
        channel = T.sigmoid(self.global_mlp2(self.global_mlp1(pooled)))
        spatial_in = T.concat(
            [T.reduce_max(e4, axis=1, keepdims=True),
             T.tensor_mean(e4, axis=1, keepdims=True)],
            axis=1,
        )
        spatial = T.sigmoid(self.spatial_conv(spatial_in))  # (n, 1, h, w)
        return T.mul(T.mul(e4, T.reshape(channel, (n, c, 1, 1))), spatial)

    def _weight_blocks(self, blocks: Tensor, g_tilde: Tensor):
        """Cosine-weight each block against the projected global feature."""
        n, nb = blocks.shape[0], blocks.shape[1]
        expanded = T.broadcast_to(
            T.reshape(g_tilde, (n, 1) + g_tilde.shape[1:]), blocks.shape
        )
        scores = T.cosine_similarity(blocks, expanded, axis=(2, 3, 4))
        weighted = T.mul(blocks, T.reshape(scores, (n, nb, 1, 1, 1)))
        return weighted, scores

    def __call__(self, e2: Tensor, e4: Tensor):
        """Returns (local summary L, global summary G, block scores)."""
        if e2.ndim == 3:
            e2 = T.reshape(e2, (1,) + e2.shape)
        if e4.ndim == 3:
            e4 = T.reshape(e4, (1,) + e4.shape)
        cfg = self.cfg
        n = e2.shape[0]
        local_scores = self.local_channel_scores(e2)
        blocks = self.recalibrate_local(e2, local_scores)
        g = self.global_attention(e4)
        g_tilde = self.global_proj(g)
        weighted, block_scores = self._weight_blocks(blocks, g_tilde)
        # aggregate: project the block axis down, then fold into channels
        flat = T.reshape(weighted, (n, cfg.n_blocks, -1))
        projected = T.matmul(self.block_proj.tensor, flat)  # (n, proj, c*e*e)
        proj_out = projected.shape[1]
        e = cfg.block_extent
        l_tilde = T.reshape(projected, (n, proj_out, cfg.local_channels, e, e))
        local = T.reshape(
            T.transpose(l_tilde, (0, 2, 1, 3, 4)),
            (n, cfg.local_channels * proj_out, e, e),
        )
        return local, g, block_scores


class PlainPoolingHead(Module):
    """Ablation stand-in for the attention block: unattended global map and
    a pooled, linearly projected local map."""

    def __init__(self, cfg: GlaConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.local_proj = Conv2d(cfg.local_channels, cfg.global_channels, 1, rng)

    def __call__(self, e2: Tensor, e4: Tensor):
        pooled = T.adaptive_avg_pool2d(e2, self.cfg.global_extent)
        return self.local_proj(pooled), e4, None


class MotionNetwork(Module):
    """Full assembly: shared stage-1 encoder on both sequences, patch
    correlation, stages 2-4, attention, dual LSTM estimators, fusion."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        c1, c2, c3, c4 = config.encoder_channels
        ds = config.downsample
        corr_cfg = config.corr_config
        d2 = corr_cfg.displacement_extent**2
        self.config = config
        self.stage1 = ResidualStage(1, c1, ds[0], rng)
        self.stage2 = ResidualStage(2 * c1, c2, ds[1], rng)
        self.stage3 = ResidualStage(c2, c3, ds[2], rng)
        self.stage4 = ResidualStage(c3 + d2, c4, ds[3], rng)
        if config.use_gla:
            self.attention = GlobalLocalAttention(config.gla_config, rng)
        else:
            self.attention = PlainPoolingHead(config.gla_config, rng)
        feature_size = c4 * config.stage_extent(3) ** 2
        self.lstm_global = LSTMCell(feature_size, config.lstm_hidden, rng)
        self.head_global = Linear(config.lstm_hidden, 6, rng)
        self.lstm_local = LSTMCell(feature_size, config.lstm_hidden, rng)
        self.head_local = Linear(config.lstm_hidden, 6, rng)

    def forward_window(self, frames, diagnostics: bool = False,
                       state=None, return_state: bool = False):
        """Run consecutive-frame windows, encoding each frame once.

        ``frames`` is (batch, steps+1, h, w); pair t is (frame t, frame
        t+1). Numerically identical to forward(frames[:, :-1],
        frames[:, 1:]) but the stage-1 encoder runs once per distinct
        frame instead of twice.
        """
        frames = frames if isinstance(frames, Tensor) else Tensor(np.asarray(frames))
        if frames.ndim != 4 or frames.shape[1] < 2:
            raise ValueError(
                f"expected (batch, steps+1, h, w) with >= 2 frames, got {frames.shape}"
            )
        self._check_frames(frames)
        b, total, h, w = frames.shape
        steps = total - 1
        e1 = self.stage1(T.reshape(frames, (b * total, 1, h, w)))
        c1, eh, ew = e1.shape[1:]
        e1 = T.reshape(e1, (b, total, c1, eh, ew))
        e1a = T.reshape(e1[:, :-1], (b * steps, c1, eh, ew))
        e1b = T.reshape(e1[:, 1:], (b * steps, c1, eh, ew))
        return self._head(e1a, e1b, b, steps, diagnostics, state, return_state)

    # -- encoder ---------------------------------------------------------
    def _check_frames(self, seq: Tensor) -> None:
        if seq.shape[-1] != seq.shape[-2]:
            raise ValueError(f"frames must be square, got {seq.shape}")
        if seq.shape[-1] != self.config.frame_extent:
            raise ValueError(
                f"model expects {self.config.frame_extent}px frames, "
                f"got {seq.shape[-1]}px"
            )

    def encode_pairs(self, seq_a: Tensor, seq_b: Tensor):
        """Per-pair features: (local map, deep map, attention outputs)."""
        e1a = self.stage1(seq_a)
        e1b = self.stage1(seq_b)
        return self._attend(e1a, e1b)

    def _attend(self, e1a: Tensor, e1b: Tensor):
        corr = correlate_batch(e1a, e1b, self.config.corr_config)
        n, gy, gx, d, _ = corr.shape
        corr_maps = T.transpose(
            T.reshape(corr, (n, gy * gx, d * d)), (0, 2, 1)
        )
        corr_maps = T.reshape(corr_maps, (n, d * d, gy, gx))
        e2 = self.stage2(T.concat([e1a, e1b], axis=1))
        e3 = self.stage3(e2)
        e4 = self.stage4(T.concat([corr_maps, e3], axis=1))
        return self.attention(e2, e4)

    # -- sequence forward --------------------------------------------------
    def forward(self, seq_a, seq_b, diagnostics: bool = False,
                state=None, return_state: bool = False):
        """Run a batch of aligned windows.

        ``seq_a``/``seq_b`` are (batch, steps, h, w): frame i and frame
        i+1 of each pair. Returns a dict with fused / per-branch motion
        tensors (batch, steps, 6), triplet embeddings and, when
        ``diagnostics`` is set, per-step attention scores. ``state``
        carries LSTM context across chunks of one long sequence.
        """
        seq_a = seq_a if isinstance(seq_a, Tensor) else Tensor(np.asarray(seq_a))
        seq_b = seq_b if isinstance(seq_b, Tensor) else Tensor(np.asarray(seq_b))
        if seq_a.shape != seq_b.shape:
            raise ValueError(
                f"sequence shapes differ: {seq_a.shape} vs {seq_b.shape}"
            )
        if seq_a.ndim != 4:
            raise ValueError(f"expected (batch, steps, h, w), got {seq_a.shape}")
        self._check_frames(seq_a)
        b, steps, h, w = seq_a.shape
        e1a = self.stage1(T.reshape(seq_a, (b * steps, 1, h, w)))
        e1b = self.stage1(T.reshape(seq_b, (b * steps, 1, h, w)))
        return self._head(e1a, e1b, b, steps, diagnostics, state, return_state)

    def _head(self, e1a: Tensor, e1b: Tensor, b: int, steps: int,
              diagnostics: bool, state, return_state: bool):
        local, global_, scores = self._attend(e1a, e1b)
        feat = self.config.encoder_channels[3] * self.config.stage_extent(3) ** 2
        gf = T.reshape(global_, (b, steps, feat))
        lf = T.reshape(local, (b, steps, feat))

        if state is None:
            hg, cg = self.lstm_global.initial_state(b)
            hl, cl = self.lstm_local.initial_state(b)
        else:
            hg, cg, hl, cl = state
        out_g, out_l = [], []
        for t in range(steps):
            hg, cg = self.lstm_global(gf[:, t], hg, cg)
            hl, cl = self.lstm_local(lf[:, t], hl, cl)
            out_g.append(self.head_global(hg))
            out_l.append(self.head_local(hl))
        global6 = T.stack(out_g, axis=1)
        local6 = T.stack(out_l, axis=1)
        fused = T.mul(T.add(global6, local6), 0.5)

        pool_g = T.reshape(T.adaptive_avg_pool2d(global_, 1), (b, steps, -1))
        pool_l = T.reshape(T.adaptive_avg_pool2d(local, 1), (b, steps, -1))
        embeddings = T.concat([pool_g, pool_l], axis=2)

        out = {
            "fused": fused,
            "global6": global6,
            "local6": local6,
            "embeddings": embeddings,
        }
        if diagnostics:
            if scores is None:
                raise ValueError(
                    "attention diagnostics are unavailable for the plain-"
                    "pooling variant"
                )
            out["attention_scores"] = T.reshape(scores, (b, steps, -1))
        if return_state:
            out["state"] = (hg, cg, hl, cl)
        return out

    def estimate(self, seq_a, seq_b) -> list:
        """Single-window convenience wrapper returning MotionEstimate
        objects, one per step."""
        seq_a = np.asarray(seq_a, dtype=float)
        seq_b = np.asarray(seq_b, dtype=float)
        if seq_a.ndim != 3 or seq_b.ndim != 3:
            raise ValueError("estimate() takes (steps, h, w) sequences")
        if seq_a.shape[0] != seq_b.shape[0]:
            raise ValueError(
                f"mismatched sequence lengths: {seq_a.shape[0]} vs {seq_b.shape[0]}"
            )
        with T.no_grad():
            out = self.forward(seq_a[None], seq_b[None])
        estimates = []
        for t in range(seq_a.shape[0]):
            estimates.append(
                MotionEstimate(
                    global_motion=PoseVector.from_array(out["global6"].data[0, t]),
                    local_motion=PoseVector.from_array(out["local6"].data[0, t]),
                    fused=PoseVector.from_array(out["fused"].data[0, t]),
                )
            )
        return estimates

    def infer_scan(self, frames: np.ndarray, chunk: int = 16,
                   diagnostics: bool = False):
        """Relative motions for a whole scan (n frames -> n-1 steps).

        LSTM state is carried across chunks, so the result equals one
        long forward pass. Returns (list of PoseVector, score array or
        None)."""
        frames = np.asarray(frames, dtype=float)
        if frames.ndim != 3 or frames.shape[0] < 2:
            raise ValueError("inference needs at least two frames")
        poses: list = []
        score_rows = []
        state = None
        with T.no_grad():
            for start in range(0, frames.shape[0] - 1, chunk):
                stop = min(start + chunk, frames.shape[0] - 1)
                out = self.forward_window(frames[start : stop + 1][None],
                                          diagnostics=diagnostics,
                                          state=state, return_state=True)
                state = out["state"]
                for t in range(stop - start):
                    poses.append(PoseVector.from_array(out["fused"].data[0, t]))
                if diagnostics:
                    score_rows.append(out["attention_scores"].data[0])
        scores = np.concatenate(score_rows, axis=0) if score_rows else None
        return poses, scores


def export_attention_scores(scores: np.ndarray, directory,
                            prefix: str = "attention") -> list:
    """Write per-step block-score grids as 16-bit PGM images.

    ``scores`` is (steps, n_blocks); each row becomes a sqrt(n_blocks)
    square grid mapped from [-1, 1]."""
    if scores is None:
        raise ValueError("no attention scores recorded; run with diagnostics")
    from pathlib import Path

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    steps, nb = scores.shape
    grid = int(round(np.sqrt(nb)))
    if grid * grid != nb:
        raise ValueError(f"{nb} block scores do not form a square grid")
    paths = []
    for t in range(steps):
        path = directory / f"{prefix}_{t:04d}.pgm"
        write_pgm16(path, scores[t].reshape(grid, grid), lo=-1.0, hi=1.0)
        paths.append(path)
    return paths


# -- model checkpoints ----------------------------------------------------------

def save_model(path, model: MotionNetwork, extra_arrays: dict | None = None,
               extra_config: dict | None = None) -> None:
    arrays = model.state_arrays()
    if extra_arrays:
        arrays.update(extra_arrays)
    config = model.config.to_text_dict()
    if extra_config:
        config.update(extra_config)
    save_checkpoint(path, arrays, config)


def load_model(path, seed: int = 0):
    """Rebuild a MotionNetwork from a checkpoint.

    Returns (model, extra_arrays, config) where extra_arrays holds any
    non-parameter records (optimizer state, counters)."""
    arrays, config = load_checkpoint(path)
    model_cfg = ModelConfig.from_text_dict(config)
    model = MotionNetwork(model_cfg, seed=seed)
    params = {name for name, _ in model.named_parameters()}
    model.load_state_arrays({k: v for k, v in arrays.items() if k in params})
    extra = {k: v for k, v in arrays.items() if k not in params}
    return model, extra, config
