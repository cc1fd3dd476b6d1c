"""Losses of the prompt-learning objective and their analytic gradients.

Class indices are 0-based throughout. Logarithms are natural. The standalone
loss functions take probabilities and clamp them to ``[1e-12, 1]`` before any
log; the batched training objective works on exact log-probabilities.

The batch objective is the mean over samples of ``srd + lambda * sce`` where
``sce`` is the raw (unnormalised) sum over the sample's irrelevant patches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._math import log_softmax, softmax
from .errors import NonFiniteGradient, NonPositiveTemperature

EPS = 1e-12


@dataclass(frozen=True)
class SimilarityMatrix:
    values: np.ndarray  # (J, K), rows are probability vectors
    temperature: float
    cosine: np.ndarray | None = None  # pre-softmax scores; argmax ties survive here exactly


@dataclass(frozen=True)
class LossBreakdown:
    srd: float
    sce: float
    total: float
    omega: tuple  # per-sample arrays of irrelevant patch indices
    class_probs: np.ndarray  # (B, K)


def _check_tau(tau: float) -> None:
    if not tau > 0:
        raise NonPositiveTemperature(f"temperature must be positive, got {tau}")


def _unit(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-normalise; zero rows stay zero (cosine 0 with everything)."""
    norm = np.linalg.norm(x, axis=-1)
    safe = np.where(norm > 0, norm, 1.0)
    return x / safe[..., None], norm


def cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cosine similarity of every row of `a` with every row of `b`."""
    ua, _ = _unit(np.asarray(a, dtype=np.float64))
    ub, _ = _unit(np.asarray(b, dtype=np.float64))
    return ua @ ub.T


def patch_similarity(patch_features: np.ndarray, text_features: np.ndarray, tau: float) -> SimilarityMatrix:
    _check_tau(tau)
    cos = cosine(np.atleast_2d(patch_features), np.atleast_2d(text_features))
    return SimilarityMatrix(softmax(cos / tau, axis=-1), tau, cos)


def irrelevant_mask(s: np.ndarray, y) -> np.ndarray:
    """Boolean mask of rows whose best class is not `y`.

    A row whose maximum is shared by `y` counts as relevant. `s` may carry
    leading batch axes, with `y` broadcast against them.
    """
    s = np.asarray(s)
    y = np.asarray(y)
    idx = np.broadcast_to(y.reshape(y.shape + (1,) * (s.ndim - y.ndim)), s.shape[:-1] + (1,))
    return np.take_along_axis(s, idx, axis=-1)[..., 0] < s.max(axis=-1)


def irrelevant_set(S: SimilarityMatrix | np.ndarray, y: int) -> np.ndarray:
    """Indices of irrelevant rows.

    A SimilarityMatrix is judged on its cosines when it carries them: the
    softmax can merge scores closer than one ulp, which would make the set
    depend on the temperature.
    """
    if isinstance(S, SimilarityMatrix):
        values = S.values if S.cosine is None else S.cosine
    else:
        values = np.asarray(S)
    return np.flatnonzero(irrelevant_mask(values, y))


def neg_entropy(s: np.ndarray) -> np.ndarray:
    """Row-wise sum of s*log(s) over the last axis, with clamping."""
    return np.sum(s * np.log(np.clip(s, EPS, 1.0)), axis=-1)


def sce_loss(S: SimilarityMatrix | np.ndarray, omega) -> float:
    values = S.values if isinstance(S, SimilarityMatrix) else np.asarray(S)
    omega = np.asarray(omega, dtype=int)
    if omega.size == 0:
        return 0.0
    return float(np.sum(neg_entropy(values[omega])))


def sce_logit_gradient(logits: np.ndarray, omega, tau: float = 1.0) -> tuple[float, np.ndarray]:
    """ℓ_sce and its gradient w.r.t. free patch logits, ``s = softmax(logits / tau)``.

    Rows outside `omega` get zero gradient.
    """
    _check_tau(tau)
    z = np.asarray(logits, dtype=np.float64) / tau
    log_s = log_softmax(z, axis=-1)
    s = np.exp(log_s)
    ent = np.sum(s * log_s, axis=-1, keepdims=True)
    mask = np.zeros(z.shape[0], dtype=bool)
    mask[np.asarray(omega, dtype=int)] = True
    grad = np.where(mask[:, None], s * (log_s - ent) / tau, 0.0)
    return float(np.sum(ent[mask])), grad


def class_probs(f_v: np.ndarray, text_features: np.ndarray, tau: float) -> np.ndarray:
    _check_tau(tau)
    return softmax(cosine(np.atleast_2d(f_v), text_features)[0] / tau)


def srd_loss(d: np.ndarray, y: int) -> float:
    return float(-np.log(np.clip(d[y], EPS, 1.0)))


def total_loss(srd: float, sce: float, lam: float) -> float:
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    return srd + lam * sce


# -- batched forward / backward ---------------------------------------------

def _forward(model, x_g, x_p, tau):
    p = model.params
    W1, b1, W2, b2 = p["adapt.W1"], p["adapt.b1"], p["adapt.W2"], p["adapt.b2"]
    m = model.width
    n_rows = model.context_length + 3
    ctx_sum = p["context"].sum(axis=1)  # (K, m)

    z_g = x_g @ W1 + b1
    r_g = np.maximum(z_g, 0.0)
    f = r_g @ W2 + b2
    z_p = x_p @ W1 + b1
    r_p = np.maximum(z_p, 0.0)
    fp = r_p @ W2 + b2

    filt = []
    Q = np.empty((x_g.shape[0], model.n_classes, m))
    for k in range(model.n_classes):
        per_k = []
        q = ctx_sum[k] + model.class_emb[k]
        for rows, psi, bias in ((model.entity_rows[k], p["filter_e.Psi"], p["filter_e.bias"]),
                                (model.desc_rows[k], p["filter_d.Psi"], p["filter_d.bias"])):
            a = softmax(f @ rows.T / np.sqrt(m), axis=-1)
            pooled = a @ rows
            q = q + pooled @ psi + bias
            per_k.append((rows, psi, a, pooled))
        Q[:, k] = q / n_rows
        filt.append(per_k)

    T, q_norm = _unit(Q)
    f_hat, f_norm = _unit(f)
    p_hat, p_norm = _unit(fp)
    cos_g = np.einsum("bm,bkm->bk", f_hat, T)
    cos_p = np.einsum("bjm,bkm->bjk", p_hat, T)
    log_d = log_softmax(cos_g / tau, axis=-1)
    log_s = log_softmax(cos_p / tau, axis=-1)
    return dict(z_g=z_g, r_g=r_g, f=f, z_p=z_p, r_p=r_p, fp=fp, filt=filt, T=T, q_norm=q_norm,
                f_hat=f_hat, f_norm=f_norm, p_hat=p_hat, p_norm=p_norm, cos_g=cos_g, cos_p=cos_p,
                log_d=log_d, log_s=log_s, d=np.exp(log_d), s=np.exp(log_s), n_rows=n_rows)


def forward(model, global_feats: np.ndarray, patch_feats: np.ndarray, tau: float) -> dict:
    """Batched forward pass: class probabilities ``d`` (B, K) and patch similarities ``s`` (B, J, K)."""
    _check_tau(tau)
    return _forward(model, np.asarray(global_feats, float), np.asarray(patch_feats, float), tau)


def loss_and_gradients(model, global_feats, patch_feats, labels, lam: float, tau: float,
                       with_grad: bool = True):
    """Mean batch objective and its exact gradient w.r.t. every trainable parameter.

    The irrelevant-patch selection is taken from the current forward pass and
    held constant for differentiation. Log-probabilities come from an exact
    log-softmax rather than a clamped log, so saturated samples keep a useful
    gradient. Returns ``(LossBreakdown, grads)``;
    ``grads`` is None when `with_grad` is false.
    """
    _check_tau(tau)
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    x_g = np.asarray(global_feats, dtype=np.float64)
    x_p = np.asarray(patch_feats, dtype=np.float64)
    y = np.asarray(labels, dtype=int)
    B = x_g.shape[0]
    c = _forward(model, x_g, x_p, tau)
    d, s = c["d"], c["s"]

    omega = irrelevant_mask(c["cos_p"], y)  # (B, J), same argmax as s without softmax rounding
    srd = -c["log_d"][np.arange(B), y]
    sce = np.sum(np.where(omega, np.sum(s * c["log_s"], axis=-1), 0.0), axis=1)
    srd_mean, sce_mean = float(srd.mean()), float(sce.mean())
    breakdown = LossBreakdown(
        srd=srd_mean, sce=sce_mean, total=total_loss(srd_mean, sce_mean, lam),
        omega=tuple(np.flatnonzero(row) for row in omega), class_probs=d,
    )
    if not with_grad:
        return breakdown, None

    p = model.params
    m = model.width
    onehot = np.eye(model.n_classes)[y]

    g_cos_g = (d - onehot) / (B * tau)
    # d/dz of sum_k s_k log s_k is s_k (log s_k - sum_k' s_k' log s_k')
    g_cos_p = s * (c["log_s"] - np.sum(s * c["log_s"], axis=-1, keepdims=True))
    g_cos_p *= omega[..., None] * (lam / (B * tau))

    T, q_norm = c["T"], c["q_norm"]
    f_hat, f_norm, p_hat, p_norm = c["f_hat"], c["f_norm"], c["p_hat"], c["p_norm"]
    cos_g, cos_p = c["cos_g"], c["cos_p"]

    inv_f = np.where(f_norm > 0, 1.0 / np.where(f_norm > 0, f_norm, 1.0), 0.0)
    g_f = (np.einsum("bk,bkm->bm", g_cos_g, T) - np.sum(g_cos_g * cos_g, axis=1)[:, None] * f_hat) * inv_f[:, None]
    inv_p = np.where(p_norm > 0, 1.0 / np.where(p_norm > 0, p_norm, 1.0), 0.0)
    g_fp = (np.einsum("bjk,bkm->bjm", g_cos_p, T)
            - np.sum(g_cos_p * cos_p, axis=2)[..., None] * p_hat) * inv_p[..., None]

    g_T = g_cos_g[..., None] * f_hat[:, None, :] + np.einsum("bjk,bjm->bkm", g_cos_p, p_hat)
    # through the normalisation T = Q / |Q|
    g_Q = (g_T - np.sum(g_T * T, axis=-1, keepdims=True) * T) / q_norm[..., None]
    g_q = g_Q / c["n_rows"]

    grads = {name: np.zeros_like(p[name]) for name in p}
    grads["context"] += g_q.sum(axis=0)[:, None, :]
    f = c["f"]
    for k in range(model.n_classes):
        gk = g_q[:, k]
        for (rows, psi, a, pooled), tag in zip(c["filt"][k], ("filter_e", "filter_d")):
            grads[f"{tag}.Psi"] += pooled.T @ gk
            grads[f"{tag}.bias"] += gk.sum(axis=0)
            g_a = (gk @ psi.T) @ rows.T
            g_logit = a * (g_a - np.sum(a * g_a, axis=1, keepdims=True))
            g_f = g_f + g_logit @ rows / np.sqrt(m)

    W2 = p["adapt.W2"]
    J = x_p.shape[1]
    for x, z, r, g_out in ((x_g, c["z_g"], c["r_g"], g_f),
                           (x_p.reshape(B * J, -1), c["z_p"].reshape(B * J, -1),
                            c["r_p"].reshape(B * J, -1), g_fp.reshape(B * J, -1))):
        grads["adapt.W2"] += r.T @ g_out
        grads["adapt.b2"] += g_out.sum(axis=0)
        g_z = (g_out @ W2.T) * (z > 0)
        grads["adapt.W1"] += x.T @ g_z
        grads["adapt.b1"] += g_z.sum(axis=0)

    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {name}")
    return breakdown, grads


def gradients(model, global_feats, patch_feats, labels, lam: float, tau: float) -> dict:
    return loss_and_gradients(model, global_feats, patch_feats, labels, lam, tau)[1]
