"""Two-branch blind-spot network built from centrally masked and dilated convs.

Layout (``b`` = base channels, ``N`` = DC modules per branch)::

    1x1 in->b, relu
    branch(mask_k, d) for (3, 2) and (5, 3):
        masked conv mask_k b->b, relu
        1x1 b->b, relu, 1x1 b->b, relu
        N x [3x3 conv dilation d, relu, 1x1, relu]
        1x1 b->b, relu
    concat -> 1x1 2b->b, relu -> 1x1 b->b/2, relu -> 1x1 b/2->b/2, relu -> 1x1 -> out

The masked conv removes offset 0 from the receptive field and every later
spatial conv moves by multiples of ``d > (mask_k - 1) / 2``, so offset 0 can
never be reached again. 1x1 convs are pointwise and cannot reintroduce it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, asdict

import numpy as np

from .tensor import ConvParams, Tensor, concat, conv2d, relu, transpose

log = logging.getLogger(__name__)

DEFAULT_BRANCHES = ((3, 2), (5, 3))


@dataclass(frozen=True)
class BsnConfig:
    in_channels: int = 3
    base_channels: int = 16
    dc_modules_per_branch: int = 3
    branch_specs: tuple[tuple[int, int], ...] = DEFAULT_BRANCHES
    # False builds the same network with ordinary convs; only used as a control
    center_masked: bool = True

    def __post_init__(self):
        object.__setattr__(self, "branch_specs", tuple(tuple(b) for b in self.branch_specs))
        if self.in_channels < 1:
            raise ValueError("in_channels must be >= 1")
        if self.base_channels < 2:
            raise ValueError("base_channels must be >= 2")
        if self.dc_modules_per_branch < 0:
            raise ValueError("dc_modules_per_branch must be >= 0")
        if not self.branch_specs:
            raise ValueError("at least one branch is required")
        for k, d in self.branch_specs:
            if k < 3 or k % 2 == 0:
                raise ValueError(f"mask size must be odd and >= 3, got {k}")
            if d != (k + 1) // 2:
                raise ValueError(
                    f"branch (mask_k={k}, dilation={d}) would leak the centre pixel; "
                    f"dilation must be {(k + 1) // 2}"
                )

    @property
    def out_channels(self) -> int:
        return self.in_channels

    def to_dict(self) -> dict:
        d = asdict(self)
        d["branch_specs"] = [list(b) for b in self.branch_specs]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BsnConfig":
        return cls(**d)


class BsnModel:
    def __init__(self, config: BsnConfig, layers: dict[str, ConvParams]):
        self.config = config
        self.layers = layers

    def __call__(self, x: Tensor) -> Tensor:
        return bsn_forward(self, x)

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers.values() for p in layer.parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for name, layer in self.layers.items():
            out[f"{name}.weight"] = layer.weight.data.copy()
            out[f"{name}.bias"] = layer.bias.data.copy()
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]):
        expected = {}
        for name, layer in self.layers.items():
            expected[f"{name}.weight"] = layer.weight
            expected[f"{name}.bias"] = layer.bias
        missing = expected.keys() - state.keys()
        extra = state.keys() - expected.keys()
        if missing or extra:
            raise ValueError(
                f"state does not match model: missing {sorted(missing)}, unexpected {sorted(extra)}"
            )
        for key, t in expected.items():
            arr = np.asarray(state[key])
            if arr.shape != t.shape:
                raise ValueError(f"shape mismatch for {key}: checkpoint {arr.shape}, model {t.shape}")
        for key, t in expected.items():
            t.data[...] = state[key]


def build_bsn(config: BsnConfig, seed: int = 0) -> BsnModel:
    rng = np.random.default_rng(seed)
    b = config.base_channels
    half = max(b // 2, 1)
    layers: dict[str, ConvParams] = {}

    def add(name, cin, cout, k=1, dilation=1, masked=False):
        layers[name] = ConvParams.init(rng, cin, cout, k, dilation, masked, name)

    add("head", config.in_channels, b)
    for i, (k, d) in enumerate(config.branch_specs):
        pre = f"branch{i}"
        add(f"{pre}.masked", b, b, k, masked=config.center_masked)
        add(f"{pre}.pw0", b, b)
        add(f"{pre}.pw1", b, b)
        for j in range(config.dc_modules_per_branch):
            add(f"{pre}.dc{j}.dilated", b, b, 3, dilation=d)
            add(f"{pre}.dc{j}.pw", b, b)
        add(f"{pre}.out", b, b)
    add("tail0", b * len(config.branch_specs), b)
    add("tail1", b, half)
    add("tail2", half, half)
    add("tail3", half, config.out_channels)

    model = BsnModel(config, layers)
    log.debug("built BSN %s with %d parameters", config, model.num_parameters())
    return model


def _layer(x: Tensor, params: ConvParams, activate: bool = True) -> Tensor:
    y = conv2d(x, params, layout="CNHW")
    return relu(y) if activate else y


def _branch(model: BsnModel, i: int, x: Tensor) -> Tensor:
    L = model.layers
    pre = f"branch{i}"
    x = _layer(x, L[f"{pre}.masked"])
    x = _layer(x, L[f"{pre}.pw0"])
    x = _layer(x, L[f"{pre}.pw1"])
    for j in range(model.config.dc_modules_per_branch):
        x = _layer(x, L[f"{pre}.dc{j}.dilated"])
        x = _layer(x, L[f"{pre}.dc{j}.pw"])
    return _layer(x, L[f"{pre}.out"])


def bsn_forward(model: BsnModel, batch: Tensor) -> Tensor:
    if batch.data.ndim != 4:
        raise ValueError(f"BSN expects (N, C, H, W) input, got shape {batch.shape}")
    if batch.shape[1] != model.config.in_channels:
        raise ValueError(
            f"BSN configured for {model.config.in_channels} channels, got {batch.shape[1]}"
        )
    L = model.layers
    # channel-major internally; see conv2d
    x = _layer(transpose(batch, (1, 0, 2, 3)), L["head"])
    x = concat([_branch(model, i, x) for i in range(len(model.config.branch_specs))], axis=0)
    x = _layer(x, L["tail0"])
    x = _layer(x, L["tail1"])
    x = _layer(x, L["tail2"])
    x = _layer(x, L["tail3"], activate=False)
    return transpose(x, (1, 0, 2, 3))
