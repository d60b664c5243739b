"""Inputs consumed by the embedding branches.

Visual side: per candidate pair, a descriptor x = [P_s(a_s); P_o(a_o); M(r)]
where P_s, P_o are single linear projections of the two appearance vectors,
M is a two-layer net over the 8-dim box-geometry feature r, and a_s, a_o are
also kept raw for the subject/object appearance branches.

Language side: q_t = [e_s; e_p; e_o], the concatenated word vectors of the
triplet, with unused slots zeroed for unigram/bigram variants.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .data import BoundingBox, CandidatePair, Triplet
from .numkit import (
    Array,
    Linear,
    Mlp,
    ShapeError,
    layer_params,
    linear_backward,
    linear_forward,
    linear_init,
    mlp_backward,
    mlp_forward,
    mlp_init,
)

SPATIAL_NORMS = ("area", "extent")

# canonical branch order; also the parameter-block order in checkpoints
BRANCH_KINDS = ("s", "o", "p", "vp", "sp", "po")

# language-input variant used by each branch
BRANCH_MASK = {"s": "s", "o": "o", "p": "p", "vp": "full", "sp": "sp", "po": "po"}

# slot multipliers (subject, predicate, object) per input variant
LANGUAGE_MASKS = {
    "full": (1.0, 1.0, 1.0),
    "s": (1.0, 0.0, 0.0),
    "p": (0.0, 1.0, 0.0),
    "o": (0.0, 0.0, 1.0),
    "sp": (1.0, 1.0, 0.0),
    "po": (0.0, 1.0, 1.0),
}


# ---------------------------------------------------------------------------
# Spatial geometry
# ---------------------------------------------------------------------------


def spatial_features(sub: BoundingBox, obj: BoundingBox, norm: str = "area") -> Array:
    """8-vector of union-normalized box coordinates, subject block first.

    Coordinates are shifted to the union-box origin, then divided by the
    union area (norm='area', the default) or by the union width/height per
    axis (norm='extent').
    """
    ux = min(sub.x_min, obj.x_min)
    uy = min(sub.y_min, obj.y_min)
    uw = max(sub.x_max, obj.x_max) - ux
    uh = max(sub.y_max, obj.y_max) - uy
    if norm == "area":
        ax = ay = uw * uh
    elif norm == "extent":
        ax, ay = uw, uh
    else:
        raise ValueError(f"unknown spatial norm {norm!r}")
    return np.array(
        [
            (sub.x_min - ux) / ax,
            (sub.x_max - ux) / ax,
            (sub.y_min - uy) / ay,
            (sub.y_max - uy) / ay,
            (obj.x_min - ux) / ax,
            (obj.x_max - ux) / ax,
            (obj.y_min - uy) / ay,
            (obj.y_max - uy) / ay,
        ]
    )


def pair_arrays(
    pairs: list[CandidatePair], spatial_norm: str = "area"
) -> tuple[Array, Array, Array]:
    """Stack appearance and geometry features of a pair list into batches."""
    a_s = np.stack([p.appear_sub for p in pairs])
    a_o = np.stack([p.appear_obj for p in pairs])
    r = np.stack([spatial_features(p.sub_box, p.obj_box, spatial_norm) for p in pairs])
    return a_s, a_o, r


# ---------------------------------------------------------------------------
# Visual descriptor
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class VisualInputParams:
    """Trainable front end producing the full pair descriptor."""

    sub_proj: Linear
    obj_proj: Linear
    spatial: Mlp

    @property
    def d_v(self) -> int:
        return self.sub_proj.n_out + self.obj_proj.n_out + self.spatial.n_out

    def params(self) -> Iterator[tuple[str, Array]]:
        yield from layer_params("visual.sub_proj", self.sub_proj)
        yield from layer_params("visual.obj_proj", self.obj_proj)
        yield from layer_params("visual.spatial", self.spatial)


def visual_init(
    rng: np.random.Generator,
    appearance_dim: int,
    app_out: int = 300,
    spatial_hidden: int = 400,
    spatial_out: int = 400,
) -> VisualInputParams:
    return VisualInputParams(
        linear_init(rng, appearance_dim, app_out),
        linear_init(rng, appearance_dim, app_out),
        mlp_init(rng, 8, spatial_hidden, spatial_out),
    )


def visual_forward(
    vip: VisualInputParams, a_s: Array, a_o: Array, r: Array
) -> tuple[Array, tuple]:
    """Descriptor x = [P_s(a_s); P_o(a_o); M(r)] for a batch of pairs."""
    if a_s.shape != a_o.shape:
        raise ShapeError(f"appearance shapes differ: {a_s.shape} vs {a_o.shape}")
    ps, c1 = linear_forward(vip.sub_proj, a_s)
    po, c2 = linear_forward(vip.obj_proj, a_o)
    pr, c3 = mlp_forward(vip.spatial, r)
    return np.concatenate([ps, po, pr], axis=-1), (c1, c2, c3)


def visual_backward(vip: VisualInputParams, cache: tuple, grad_x: Array) -> dict[str, Array]:
    """Parameter gradients of visual_forward; named like ``params()``."""
    c1, c2, c3 = cache
    n1, n2 = vip.sub_proj.n_out, vip.obj_proj.n_out
    gs = grad_x[..., :n1]
    go = grad_x[..., n1 : n1 + n2]
    gr = grad_x[..., n1 + n2 :]
    g_sub, _ = linear_backward(vip.sub_proj, c1, gs)
    g_obj, _ = linear_backward(vip.obj_proj, c2, go)
    g_spa, _ = mlp_backward(vip.spatial, c3, gr)
    grads = VisualInputParams(g_sub, g_obj, g_spa)
    return dict(grads.params())


# ---------------------------------------------------------------------------
# Language inputs
# ---------------------------------------------------------------------------


def language_input(e_s: Array, e_p: Array, e_o: Array, mask: str) -> Array:
    """q = [e_s; e_p; e_o] with masked slots zeroed."""
    ms, mp, mo = LANGUAGE_MASKS[mask]
    return np.concatenate([e_s * ms, e_p * mp, e_o * mo])


def language_matrix(
    triplets: list[Triplet], e_sub: Array, e_pre: Array, e_obj: Array, mask: str
) -> Array:
    """Stacked language inputs for many triplets; rows follow the list."""
    ms, mp, mo = LANGUAGE_MASKS[mask]
    idx = np.array([tuple(t) for t in triplets], dtype=np.intp).reshape(-1, 3)
    return np.concatenate(
        [e_sub[idx[:, 0]] * ms, e_pre[idx[:, 1]] * mp, e_obj[idx[:, 2]] * mo], axis=1
    )
