"""The learnable dual-prototype bank.

Holds common and rare base sequences plus the affine projections into
the shared latent space. Base sequences and projections are all
trainable. Banks serialize to a small binary format (bitwise-lossless
round trip) with a JSON sidecar recording the config.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import numerics as nm
from .gp_priors import (
    ConfigurationError,
    KernelMixtureConfig,
    RareInitConfig,
    build_gram,
    sample_gp,
    sample_rare,
)

__all__ = ["BankConfig", "PrototypeBank", "BankFormatError", "init_bank",
           "project_common", "project_rare", "export_bank", "import_bank"]

BANK_MAGIC = b"DPADBANK"
BANK_VERSION = 1

# A base-sequence row is degenerate for correlation when its std falls
# below this; init re-samples such rows.
CONSTANT_ROW_STD = 1e-12


class BankFormatError(ValueError):
    """Malformed bank file; message carries the byte offset."""


@dataclass
class BankConfig:
    num_common: int = 64          # common prototypes (M)
    num_rare: int = 12            # rare prototypes (N)
    latent_dim: int = 128         # shared latent width (D)
    base_len: int = 96            # base-sequence length = look-back
    kernel: KernelMixtureConfig = field(default_factory=KernelMixtureConfig)
    rare: RareInitConfig = field(default_factory=RareInitConfig)
    seed: int = 0

    def validate(self) -> "BankConfig":
        if not (1 <= self.num_common <= 1024):
            raise ConfigurationError(f"num_common must be in [1, 1024], got {self.num_common}")
        if not (1 <= self.num_rare <= 256):
            raise ConfigurationError(f"num_rare must be in [1, 256], got {self.num_rare}")
        if self.latent_dim < 1:
            raise ConfigurationError("latent_dim must be >= 1")
        if self.base_len < 2:
            raise ConfigurationError("base_len must be >= 2")
        self.kernel.validate()
        self.rare.validate()
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BankConfig":
        d = dict(d)
        d["kernel"] = KernelMixtureConfig(**d.get("kernel", {}))
        d["rare"] = RareInitConfig(**d.get("rare", {}))
        return cls(**d)


class PrototypeBank:
    """Trainable base sequences and latent projections.

    Field order matters for serialization: common_bases, rare_bases,
    common_proj_w, common_proj_b, rare_proj_w, rare_proj_b.
    """

    def __init__(self, cfg: BankConfig, common_bases, rare_bases,
                 common_proj_w, common_proj_b, rare_proj_w, rare_proj_b):
        self.cfg = cfg
        self.common_bases = nm.tensor(common_bases, requires_grad=True, name="bank.common_bases")
        self.rare_bases = nm.tensor(rare_bases, requires_grad=True, name="bank.rare_bases")
        self.common_proj_w = nm.tensor(common_proj_w, requires_grad=True, name="bank.common_proj_w")
        self.common_proj_b = nm.tensor(common_proj_b, requires_grad=True, name="bank.common_proj_b")
        self.rare_proj_w = nm.tensor(rare_proj_w, requires_grad=True, name="bank.rare_proj_w")
        self.rare_proj_b = nm.tensor(rare_proj_b, requires_grad=True, name="bank.rare_proj_b")

    @property
    def num_common(self) -> int:
        return self.common_bases.data.shape[0]

    @property
    def num_rare(self) -> int:
        return self.rare_bases.data.shape[0]

    def parameters(self):
        return [self.common_bases, self.rare_bases,
                self.common_proj_w, self.common_proj_b,
                self.rare_proj_w, self.rare_proj_b]

    def common_parameters(self):
        return [self.common_bases, self.common_proj_w, self.common_proj_b]

    def rare_parameters(self):
        return [self.rare_bases, self.rare_proj_w, self.rare_proj_b]

    def equals_bitwise(self, other: "PrototypeBank") -> bool:
        return all(
            a.data.shape == b.data.shape and np.array_equal(a.data, b.data)
            for a, b in zip(self.parameters(), other.parameters())
        )


def _xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_bank(cfg: BankConfig, rng: np.random.Generator | None = None) -> PrototypeBank:
    """Build a bank: GP-mixture draws for common rows (each row with its
    own lengthscale/period multiplier in [0.5, 2]), small-noise rows for
    rare, Xavier-uniform projections, zero biases. Deterministic given
    cfg.seed when no generator is passed."""
    cfg.validate()
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))

    common = np.empty((cfg.num_common, cfg.base_len))
    for i in range(cfg.num_common):
        row_cfg = cfg.kernel.with_multipliers(rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0))
        gram = build_gram(cfg.base_len, row_cfg)
        row = sample_gp(gram, rng, jitter=row_cfg.jitter)
        for _ in range(10):
            if row.std() >= CONSTANT_ROW_STD:
                break
            row = sample_gp(gram, rng, jitter=row_cfg.jitter)
        else:
            raise ConfigurationError(f"common row {i} constant after 10 re-samples")
        common[i] = row

    rare_cfg = RareInitConfig(sigma=cfg.rare.sigma, length=cfg.base_len)
    rare = np.empty((cfg.num_rare, cfg.base_len))
    for j in range(cfg.num_rare):
        row = sample_rare(rare_cfg, rng)
        for _ in range(10):
            if row.std() >= CONSTANT_ROW_STD:
                break
            row = sample_rare(rare_cfg, rng)
        else:
            raise ConfigurationError(f"rare row {j} constant after 10 re-samples")
        rare[j] = row

    return PrototypeBank(
        cfg,
        common_bases=common,
        rare_bases=rare,
        common_proj_w=_xavier_uniform(rng, cfg.base_len, cfg.latent_dim),
        common_proj_b=np.zeros(cfg.latent_dim),
        rare_proj_w=_xavier_uniform(rng, cfg.base_len, cfg.latent_dim),
        rare_proj_b=np.zeros(cfg.latent_dim),
    )


def project_common(bank: PrototypeBank) -> nm.Tensor:
    """Latent common prototypes: bases @ W + b, on the tape."""
    return nm.add(nm.matmul(bank.common_bases, bank.common_proj_w), bank.common_proj_b)


def project_rare(bank: PrototypeBank) -> nm.Tensor:
    return nm.add(nm.matmul(bank.rare_bases, bank.rare_proj_w), bank.rare_proj_b)


def _payload_arrays(bank: PrototypeBank):
    return [bank.common_bases.data, bank.rare_bases.data,
            bank.common_proj_w.data, bank.common_proj_b.data,
            bank.rare_proj_w.data, bank.rare_proj_b.data]


def export_bank(bank: PrototypeBank, path) -> None:
    """Header: magic, version u32, M, N, L_p, D (u32 LE); payload: the
    parameter arrays as raw little-endian f64 in declaration order.
    A JSON sidecar <path>.json records the BankConfig."""
    cfg = bank.cfg
    with open(path, "wb") as fh:
        fh.write(BANK_MAGIC)
        fh.write(struct.pack("<5I", BANK_VERSION, cfg.num_common, cfg.num_rare,
                             cfg.base_len, cfg.latent_dim))
        for arr in _payload_arrays(bank):
            fh.write(arr.astype("<f8", copy=False).tobytes())
    with open(str(path) + ".json", "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2)
        fh.write("\n")


def import_bank(path) -> PrototypeBank:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(BANK_MAGIC)] != BANK_MAGIC:
        raise BankFormatError("bad magic at offset 0")
    header_end = len(BANK_MAGIC) + struct.calcsize("<5I")
    if len(blob) < header_end:
        raise BankFormatError(f"truncated header at offset {len(blob)}")
    version, m, n, base_len, latent = struct.unpack("<5I", blob[len(BANK_MAGIC):header_end])
    if version != BANK_VERSION:
        raise BankFormatError(f"unsupported version {version} at offset {len(BANK_MAGIC)}")

    try:
        with open(str(path) + ".json") as fh:
            cfg = BankConfig.from_dict(json.load(fh))
    except FileNotFoundError:
        cfg = BankConfig(num_common=m, num_rare=n, latent_dim=latent, base_len=base_len)
    if (cfg.num_common, cfg.num_rare, cfg.base_len, cfg.latent_dim) != (m, n, base_len, latent):
        raise BankFormatError("sidecar config disagrees with binary header")

    shapes = [(m, base_len), (n, base_len), (base_len, latent), (latent,),
              (base_len, latent), (latent,)]
    offset = header_end
    arrays = []
    for shape in shapes:
        count = int(np.prod(shape))
        nbytes = count * 8
        if len(blob) < offset + nbytes:
            raise BankFormatError(f"truncated payload at offset {len(blob)}")
        arrays.append(np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
                      .reshape(shape).copy())
        offset += nbytes
    if offset != len(blob):
        raise BankFormatError(f"trailing bytes at offset {offset}")
    return PrototypeBank(cfg, *arrays)
