"""Architecture hyperparameters and the named parameter container."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, Iterator, Mapping, Tuple

import numpy as np

from ..tensor import Tensor


@dataclass(frozen=True)
class NetworkConfig:
    """Toy-scale PDANet hyperparameters.

    ``cwam_kernel`` is the size of the convolution that produces the two
    fusion weights inside each channel-wise attention module.
    """

    in_channels: int = 1
    num_classes: int = 2
    base_channels: int = 16
    levels: int = 3
    rfb_branch_kernels: Tuple[int, ...] = (1, 3, 5)
    ham_kernel: int = 11
    ham_sigma: float = 2.0
    se_reduction: int = 4
    cwam_kernel: int = 1

    def __post_init__(self):
        object.__setattr__(self, "rfb_branch_kernels", tuple(int(k) for k in self.rfb_branch_kernels))
        for name in ("in_channels", "base_channels", "se_reduction"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.levels < 2:
            raise ValueError(f"levels must be >= 2, got {self.levels}")
        if not self.rfb_branch_kernels or any(k < 1 or k % 2 == 0 for k in self.rfb_branch_kernels):
            raise ValueError(f"rfb_branch_kernels must be positive odd sizes, got {self.rfb_branch_kernels}")
        for name in ("ham_kernel", "cwam_kernel"):
            k = getattr(self, name)
            if k < 1 or k % 2 == 0:
                raise ValueError(f"{name} must be a positive odd integer, got {k}")
        if not self.ham_sigma > 0:
            raise ValueError(f"ham_sigma must be positive, got {self.ham_sigma}")

    @property
    def divisor(self) -> int:
        return 2 ** self.levels

    def channels(self, level: int) -> int:
        return self.base_channels * 2 ** level

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rfb_branch_kernels"] = list(self.rfb_branch_kernels)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "NetworkConfig":
        return cls(**{k: (tuple(v) if k == "rfb_branch_kernels" else v) for k, v in d.items()})


@dataclass
class ModelParams:
    """Ordered mapping of parameter names to leaf tensors."""

    tensors: Dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self.tensors[name]
        except KeyError:
            raise KeyError(f"missing parameter {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def count(self) -> int:
        return int(sum(t.data.size for t in self.tensors.values()))

    def arrays(self) -> Dict[str, np.ndarray]:
        return {k: t.data for k, t in self.tensors.items()}

    def copy(self) -> "ModelParams":
        return ModelParams({k: Tensor(t.data, requires_grad=t.requires_grad) for k, t in self.tensors.items()})

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def check_finite(self) -> None:
        for k, t in self.tensors.items():
            if not np.all(np.isfinite(t.data)):
                raise ValueError(f"parameter {k!r} contains NaN or Inf")
