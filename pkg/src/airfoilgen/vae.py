"""Two-branch physics-aware VAE: convolutional encoders over thickness and
camber distributions, latents split into physical and free parts, dense
decoders emitting regulated B-spline free variables, and the loss terms."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .curve_layers import CurveEngine, TorchNormalizer, thickness_camber_features
from .curves import CAMBER_FREE, THICKNESS_FREE
from .errors import CorruptFile, ShapeMismatch, TooFewSamples, VersionMismatch
from .geometry import FeatureNormalizer, cosine_grid

CKPT_MAGIC = "AGCK"
CKPT_VERSION = 1

LOGVAR_MIN, LOGVAR_MAX = -20.0, 20.0

_ACTIVATIONS = {"gelu": nn.GELU, "relu": nn.ReLU, "leakyrelu": nn.LeakyReLU}

# feature order per branch: camber drives (m_max, gamma_te), thickness
# drives (t_max, r_le); concatenated this is the canonical feature order
BRANCH_FEATURES = {"camber": ("m_max", "gamma_te"), "thickness": ("t_max", "r_le")}


@dataclass(frozen=True)
class BranchConfig:
    n_filter: int = 32
    n_kernel: int = 7
    n_latent_total: int = 6
    n_latent_physical: int = 2
    activation: str = "gelu"
    conv_layers: int = 3
    decoder_hidden: tuple = (64, 128)

    def __post_init__(self):
        if self.n_kernel % 2 == 0:
            raise ValueError("kernel size must be odd")
        if not self.n_latent_physical < self.n_latent_total:
            raise ValueError("need at least one free latent dimension")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def n_latent_free(self) -> int:
        return self.n_latent_total - self.n_latent_physical


@dataclass(frozen=True)
class BranchLatent:
    mu_p: torch.Tensor
    mu_f: torch.Tensor
    logvar_f: torch.Tensor

    def means(self) -> torch.Tensor:
        return torch.cat([self.mu_p, self.mu_f], dim=1)


@dataclass(frozen=True)
class LatentCode:
    camber: BranchLatent
    thickness: BranchLatent

    def means(self) -> torch.Tensor:
        return torch.cat([self.camber.means(), self.thickness.means()], dim=1)


@dataclass(frozen=True)
class LatentBox:
    lo: np.ndarray
    hi: np.ndarray

    def sample(self, n: int, generator: torch.Generator) -> torch.Tensor:
        lo = torch.as_tensor(self.lo, dtype=torch.float64)
        hi = torch.as_tensor(self.hi, dtype=torch.float64)
        u = torch.rand((n, lo.numel()), generator=generator, dtype=torch.float64)
        return lo + u * (hi - lo)

    def sweep(self, dim: int, n_steps: int) -> np.ndarray:
        return np.linspace(self.lo[dim], self.hi[dim], n_steps)

    def to_dict(self):
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(lo=np.array(d["lo"]), hi=np.array(d["hi"]))


def update_latent_box(training_latents: np.ndarray, min_samples: int = 100) -> LatentBox:
    """Per-dimension 0.3/99.7 empirical percentiles of the training latents."""
    latents = np.asarray(training_latents)
    if latents.shape[0] < min_samples:
        raise TooFewSamples(f"need at least {min_samples} latent vectors, got {latents.shape[0]}")
    lo = np.percentile(latents, 0.3, axis=0)
    hi = np.percentile(latents, 99.7, axis=0)
    return LatentBox(lo=lo, hi=hi)


class _Branch(nn.Module):
    """Conv encoder + dense decoder for one distribution."""

    def __init__(self, cfg: BranchConfig, n_grid: int, n_free_vars: int):
        super().__init__()
        self.cfg = cfg
        self.n_free_vars = n_free_vars
        act = _ACTIVATIONS[cfg.activation]
        convs = []
        channels = 1
        for _ in range(cfg.conv_layers):
            convs.append(nn.Conv1d(channels, cfg.n_filter, cfg.n_kernel,
                                   stride=2, padding=cfg.n_kernel // 2))
            convs.append(act())
            channels = cfg.n_filter
        self.encoder = nn.Sequential(*convs)
        with torch.no_grad():
            flat = self.encoder(torch.zeros(1, 1, n_grid)).numel()
        self.head = nn.Linear(flat, cfg.n_latent_physical + 2 * cfg.n_latent_free)
        h1, h2 = cfg.decoder_hidden
        self.decoder = nn.Sequential(
            nn.Linear(cfg.n_latent_total, h1), act(),
            nn.Linear(h1, h2), act(),
            nn.Linear(h2, n_free_vars),
        )

    def encode(self, x: torch.Tensor) -> BranchLatent:
        h = self.encoder(x.unsqueeze(1)).flatten(1)
        out = self.head(h)
        p, f = self.cfg.n_latent_physical, self.cfg.n_latent_free
        return BranchLatent(
            mu_p=out[:, :p],
            mu_f=out[:, p : p + f],
            logvar_f=out[:, p + f :].clamp(LOGVAR_MIN, LOGVAR_MAX),
        )

    def decode_free_vars(self, z: torch.Tensor) -> torch.Tensor:
        return self.decoder(z)


@dataclass(frozen=True)
class DecodeResult:
    t: torch.Tensor      # (B, G) thickness on the grid
    c: torch.Tensor      # (B, G) camber on the grid
    t_ctrl: tuple        # (x, y) control tensors
    c_ctrl: tuple


class AirfoilGenerator(nn.Module):
    """Airfoil generator model; all parameters are float64.

    Construction reseeds torch's global RNG with init_seed so identically
    configured models start from identical weights.
    """

    def __init__(self, camber_cfg: BranchConfig | None = None,
                 thickness_cfg: BranchConfig | None = None,
                 x_grid: np.ndarray | None = None,
                 normalizer: FeatureNormalizer | None = None,
                 init_seed: int = 0):
        super().__init__()
        torch.manual_seed(init_seed)
        self.camber_cfg = camber_cfg or BranchConfig()
        self.thickness_cfg = thickness_cfg or BranchConfig()
        self.x_grid = cosine_grid() if x_grid is None else np.asarray(x_grid, dtype=float)
        self.normalizer = normalizer or _unit_normalizer()
        self.engine = CurveEngine(self.x_grid)
        self.torch_norm = TorchNormalizer(self.normalizer)
        self.init_seed = init_seed
        n = self.x_grid.size
        self.camber = _Branch(self.camber_cfg, n, CAMBER_FREE)
        self.thickness = _Branch(self.thickness_cfg, n, THICKNESS_FREE)
        self.double()

    # --- latent layout -----------------------------------------------------

    @property
    def n_latent(self) -> int:
        return self.camber_cfg.n_latent_total + self.thickness_cfg.n_latent_total

    def physical_indices(self) -> np.ndarray:
        nc = self.camber_cfg.n_latent_total
        cam = np.arange(self.camber_cfg.n_latent_physical)
        thk = nc + np.arange(self.thickness_cfg.n_latent_physical)
        return np.concatenate([cam, thk])

    def feature_dim_map(self) -> dict:
        nc = self.camber_cfg.n_latent_total
        out = {}
        for i, name in enumerate(BRANCH_FEATURES["camber"][: self.camber_cfg.n_latent_physical]):
            out[name] = i
        for i, name in enumerate(BRANCH_FEATURES["thickness"][: self.thickness_cfg.n_latent_physical]):
            out[name] = nc + i
        return out

    def split_latent(self, z: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        nc = self.camber_cfg.n_latent_total
        return z[:, :nc], z[:, nc:]

    # --- core ops ------------------------------------------------------------

    def _as_batch(self, arr) -> torch.Tensor:
        x = torch.as_tensor(arr, dtype=torch.float64)
        if x.ndim == 1:
            x = x.unsqueeze(0)
        if x.shape[-1] != self.x_grid.size:
            raise ShapeMismatch(
                f"expected {self.x_grid.size} grid values, got {x.shape[-1]}")
        if not torch.all(torch.isfinite(x)):
            raise ShapeMismatch("non-finite values in input distributions")
        return x

    def encode(self, t, c) -> LatentCode:
        t = self._as_batch(t)
        c = self._as_batch(c)
        return LatentCode(camber=self.camber.encode(c), thickness=self.thickness.encode(t))

    def reparameterize(self, code: LatentCode, generator: torch.Generator) -> torch.Tensor:
        """Sample free parts, pass physical means through unchanged."""
        parts = []
        for branch in (code.camber, code.thickness):
            eps = torch.randn(branch.mu_f.shape, generator=generator, dtype=torch.float64)
            z_f = branch.mu_f + torch.exp(0.5 * branch.logvar_f) * eps
            parts.append(torch.cat([branch.mu_p, z_f], dim=1))
        return torch.cat(parts, dim=1)

    def decode(self, z: torch.Tensor) -> DecodeResult:
        z_c, z_t = self.split_latent(z)
        free_c = self.camber.decode_free_vars(z_c)
        free_t = self.thickness.decode_free_vars(z_t)
        cx, cy = self.engine.realize("camber", free_c)
        tx, ty = self.engine.realize("thickness", free_t)
        return DecodeResult(
            t=self.engine.resample(tx, ty),
            c=self.engine.resample(cx, cy),
            t_ctrl=(tx, ty),
            c_ctrl=(cx, cy),
        )

    # --- numpy conveniences ----------------------------------------------------

    @torch.no_grad()
    def encode_means(self, t, c) -> np.ndarray:
        return self.encode(t, c).means().numpy()

    @torch.no_grad()
    def decode_numpy(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        z = torch.as_tensor(np.atleast_2d(z), dtype=torch.float64)
        out = self.decode(z)
        return out.t.numpy(), out.c.numpy()

    @torch.no_grad()
    def generated_features(self, z: np.ndarray) -> np.ndarray:
        """Normalized features of decoded latents, (B, 4)."""
        z = torch.as_tensor(np.atleast_2d(z), dtype=torch.float64)
        out = self.decode(z)
        feats = thickness_camber_features(
            self.engine, *out.t_ctrl, *out.c_ctrl, self.torch_norm)
        return feats.numpy()


def _unit_normalizer() -> FeatureNormalizer:
    norm = FeatureNormalizer(lo=np.array([0.0, -0.5, 0.0, -4.0]),
                             hi=np.array([0.2, 1.0, 0.7, -0.5]))
    norm.fitted = True
    return norm


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

@dataclass
class LossBreakdown:
    """Per-term values; total = recon_mse + beta*kld + lam*(phys terms).

    recon_mse is the mean squared error per grid value (t and c
    concatenated); kld sums over free dimensions and averages over the
    batch; the physical terms average over samples and the four features.
    These normalizations are what make the default beta and lambda weights
    meaningful relative to each other.
    """

    recon_mse: float
    kld: float
    mse_phys_train: float
    mse_phys_random: float
    total: float
    beta: float
    lam: float


def _branch_kld(branch: BranchLatent) -> torch.Tensor:
    term = 1.0 + branch.logvar_f - branch.mu_f.pow(2) - branch.logvar_f.exp()
    return (-0.5 * term.sum(dim=1)).mean()


def compute_loss(model: AirfoilGenerator, t_batch, c_batch, *, beta: float, lam: float,
                 latent_box: LatentBox | None, generator: torch.Generator,
                 n_resample: int = 0):
    """Full training objective; returns (total tensor, LossBreakdown)."""
    t = model._as_batch(t_batch)
    c = model._as_batch(c_batch)
    code = model.encode(t, c)
    z = model.reparameterize(code, generator)
    dec = model.decode(z)

    recon = 0.5 * ((dec.t - t).pow(2).mean() + (dec.c - c).pow(2).mean())
    kld = _branch_kld(code.camber) + _branch_kld(code.thickness)

    feats = thickness_camber_features(model.engine, *dec.t_ctrl, *dec.c_ctrl, model.torch_norm)
    mu_p = torch.cat([code.camber.mu_p, code.thickness.mu_p], dim=1)
    phys_train = (mu_p - feats).pow(2).mean()

    if n_resample > 0 and latent_box is not None:
        z_rand = latent_box.sample(n_resample, generator)
        dec_r = model.decode(z_rand)
        feats_r = thickness_camber_features(
            model.engine, *dec_r.t_ctrl, *dec_r.c_ctrl, model.torch_norm)
        target = z_rand[:, model.physical_indices()]
        phys_random = (target - feats_r).pow(2).mean()
    else:
        phys_random = torch.zeros((), dtype=torch.float64)

    total = recon + beta * kld + lam * (phys_train + phys_random)
    breakdown = LossBreakdown(
        recon_mse=float(recon.detach()), kld=float(kld.detach()),
        mse_phys_train=float(phys_train.detach()),
        mse_phys_random=float(phys_random.detach()),
        total=float(total.detach()), beta=beta, lam=lam,
    )
    return total, breakdown


@torch.no_grad()
def measure_phys_random(model: AirfoilGenerator, latent_box: LatentBox,
                        n: int, seed: int) -> float:
    """Physical-alignment MSE on uniformly resampled latents (evaluation only)."""
    generator = torch.Generator().manual_seed(seed)
    z = latent_box.sample(n, generator)
    feats = model.generated_features(z.numpy())
    target = z.numpy()[:, model.physical_indices()]
    return float(np.mean((target - feats) ** 2))


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    model: AirfoilGenerator
    latent_box: LatentBox
    latent_center: np.ndarray
    metadata: dict = field(default_factory=dict)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    model = ckpt.model
    header = {
        "magic": CKPT_MAGIC,
        "version": CKPT_VERSION,
        "camber_cfg": asdict(model.camber_cfg),
        "thickness_cfg": asdict(model.thickness_cfg),
        "n_grid": int(model.x_grid.size),
        "normalizer": model.normalizer.to_dict(),
        "latent_box": ckpt.latent_box.to_dict(),
        "latent_center": ckpt.latent_center.tolist(),
        "metadata": ckpt.metadata,
        "init_seed": model.init_seed,
    }
    table = []
    blobs = []
    offset = 0
    for name, tensor in model.state_dict().items():
        arr = tensor.detach().cpu().numpy()
        raw = np.ascontiguousarray(arr).tobytes()
        table.append({"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape),
                      "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header["tensors"] = table
    header_bytes = json.dumps(header, sort_keys=True).encode()
    payload = (CKPT_MAGIC.encode() + struct.pack("<I", CKPT_VERSION)
               + struct.pack("<Q", len(header_bytes)) + header_bytes + b"".join(blobs))
    Path(path).write_bytes(payload + hashlib.sha256(payload).digest())


def load_checkpoint(path) -> Checkpoint:
    blob = Path(path).read_bytes()
    if blob[:4] != CKPT_MAGIC.encode():
        raise CorruptFile(f"{path}: missing {CKPT_MAGIC} magic")
    if len(blob) < 48:
        raise CorruptFile(f"{path}: truncated")
    payload, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise CorruptFile(f"{path}: checksum mismatch")
    version = struct.unpack("<I", payload[4:8])[0]
    if version != CKPT_VERSION:
        raise VersionMismatch(
            f"checkpoint is version {version}, this build reads version {CKPT_VERSION}")
    header_len = struct.unpack("<Q", payload[8:16])[0]
    header = json.loads(payload[16 : 16 + header_len].decode())
    body = payload[16 + header_len :]

    model = AirfoilGenerator(
        camber_cfg=_cfg_from_dict(header["camber_cfg"]),
        thickness_cfg=_cfg_from_dict(header["thickness_cfg"]),
        x_grid=cosine_grid(header["n_grid"]),
        normalizer=FeatureNormalizer.from_dict(header["normalizer"]),
        init_seed=header.get("init_seed", 0),
    )
    state = {}
    for entry in header["tensors"]:
        raw = body[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=entry["dtype"]).reshape(entry["shape"]).copy()
        state[entry["name"]] = torch.as_tensor(arr)
    model.load_state_dict(state)
    return Checkpoint(
        model=model,
        latent_box=LatentBox.from_dict(header["latent_box"]),
        latent_center=np.array(header["latent_center"]),
        metadata=header["metadata"],
    )


def _cfg_from_dict(d: dict) -> BranchConfig:
    d = dict(d)
    d["decoder_hidden"] = tuple(d["decoder_hidden"])
    return BranchConfig(**d)
