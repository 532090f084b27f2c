from __future__ import annotations

from typing import Any, Literal, Protocol, Sequence

import numpy as np

from ..errors import ConfigError, DegenerateInputError

Direction = Literal["image_to_text", "text_to_image"]
DIRECTIONS: tuple[str, ...] = ("image_to_text", "text_to_image")
UNIT_TOL = 1e-6


class CaptionEmbedder(Protocol):
    def embed_captions(self, captions: Sequence[str]) -> np.ndarray: ...


def check_unit_norm(x: np.ndarray, what: str, tol: float = UNIT_TOL) -> None:
    if x.size == 0:
        return
    dev = np.abs(np.linalg.norm(x, axis=-1) - 1.0)
    if float(dev.max()) > tol:
        raise DegenerateInputError(f"{what}: rows must be unit-norm (max deviation {dev.max():.3g})")


def _dedupe(templates: Sequence[str]) -> list[str]:
    return list(dict.fromkeys(templates))


def fill_templates(class_names: Sequence[str], templates: Sequence[str]) -> list[list[str]]:
    ts = _dedupe(templates)
    if not ts:
        raise ConfigError("zero-shot needs at least one prompt template")
    bad = [t for t in ts if t.count("{}") != 1]
    if bad:
        raise ConfigError(f"templates must contain exactly one '{{}}' slot: {bad}")
    return [[t.format(name) for t in ts] for name in class_names]


def class_text_embeddings(
    class_names: Sequence[str],
    templates: Sequence[str],
    text_tower: CaptionEmbedder,
) -> np.ndarray:
    """Prompt ensemble: mean of the unit embeddings of every filled template,
    renormalised. Returns [C, D]."""
    prompts = fill_templates(class_names, templates)
    c, t = len(prompts), len(prompts[0]) if prompts else 0
    flat = [p for row in prompts for p in row]
    emb = np.asarray(text_tower.embed_captions(flat))
    emb = emb.reshape(c, t, -1).mean(axis=1)
    norms = np.linalg.norm(emb, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise DegenerateInputError("a class prompt ensemble averaged to the zero vector")
    return emb / norms


def zero_shot_predict(image_embs: np.ndarray, class_embs: np.ndarray, *, check_unit: bool = True) -> np.ndarray:
    """argmax over cosine similarity; np.argmax keeps the lowest index on ties."""
    img, cls = np.asarray(image_embs), np.asarray(class_embs)
    if check_unit:
        check_unit_norm(img, "image embeddings")
        check_unit_norm(cls, "class embeddings")
    if img.ndim != 2 or cls.ndim != 2 or img.shape[1] != cls.shape[1]:
        raise ConfigError(f"zero-shot: shapes {img.shape} and {cls.shape} are not [N, D] and [C, D]")
    return np.argmax(img @ cls.T, axis=1)


def zero_shot_classify(
    image_embs: np.ndarray, class_embs: np.ndarray, labels: Sequence[int], *, check_unit: bool = True
) -> float:
    lab = np.asarray(labels, dtype=np.int64)
    c = np.asarray(class_embs).shape[0]
    if lab.size and (lab.min() < 0 or lab.max() >= c):
        raise ConfigError(f"label out of range [0, {c})")
    if lab.size == 0:
        raise DegenerateInputError("zero-shot accuracy over an empty set")
    preds = zero_shot_predict(image_embs, class_embs, check_unit=check_unit)
    return float(np.mean(preds == lab))


def partner_ranks(img_embs: np.ndarray, txt_embs: np.ndarray, direction: str) -> np.ndarray:
    """0-based rank of each query's true partner; ties go to the lower index."""
    if direction not in DIRECTIONS:
        raise ConfigError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    sims = np.asarray(img_embs) @ np.asarray(txt_embs).T
    if direction == "text_to_image":
        sims = sims.T
    order = np.argsort(-sims, axis=1, kind="stable")
    n = sims.shape[0]
    return np.argmax(order == np.arange(n)[:, None], axis=1)


def recall_at_k(
    img_embs: np.ndarray,
    txt_embs: np.ndarray,
    k: int,
    direction: str = "image_to_text",
    *,
    check_unit: bool = True,
) -> float:
    img, txt = np.asarray(img_embs), np.asarray(txt_embs)
    if img.shape != txt.shape or img.ndim != 2:
        raise ConfigError(f"recall@k: paired embeddings must share shape [N, D], got {img.shape} vs {txt.shape}")
    n = img.shape[0]
    if not 1 <= k <= n:
        raise ConfigError(f"recall@k: k={k} must be in [1, N={n}]")
    if check_unit:
        check_unit_norm(img, "image embeddings")
        check_unit_norm(txt, "text embeddings")
    return float(np.mean(partner_ranks(img, txt, direction) < k))


def recall_table(img_embs: np.ndarray, txt_embs: np.ndarray, ks: Sequence[int]) -> dict[str, dict[int, float]]:
    """Recall@k for both directions and every k <= N."""
    n = np.asarray(img_embs).shape[0]
    return {
        d: {int(k): recall_at_k(img_embs, txt_embs, int(k), d) for k in sorted(set(ks)) if k <= n}
        for d in DIRECTIONS
    }


def modality_gap(img_embs: np.ndarray, txt_embs: np.ndarray) -> float:
    """Euclidean distance between the image and text centroids."""
    img, txt = np.asarray(img_embs), np.asarray(txt_embs)
    if img.size == 0 or txt.size == 0:
        raise DegenerateInputError("modality gap of an empty embedding set")
    return float(np.linalg.norm(img.mean(axis=0) - txt.mean(axis=0)))


def per_class_accuracy(preds: np.ndarray, labels: np.ndarray, class_names: Sequence[str]) -> list[dict[str, Any]]:
    out: list[dict[str, Any]] = []
    for cid, name in enumerate(class_names):
        sel = labels == cid
        n = int(sel.sum())
        out.append(
            {
                "class_id": cid,
                "name": name,
                "n": n,
                "accuracy": float(np.mean(preds[sel] == cid)) if n else None,
            }
        )
    return out


def prompt_similarity(class_names: Sequence[str], templates: Sequence[str], text_tower: CaptionEmbedder) -> dict[str, float | None]:
    """Mean cosine between prompts of the same class (different templates)
    and between prompts of different classes."""
    prompts = fill_templates(class_names, templates)
    c, t = len(prompts), len(prompts[0]) if prompts else 0
    emb = np.asarray(text_tower.embed_captions([p for row in prompts for p in row]))
    sims = emb @ emb.T
    cls = np.repeat(np.arange(c), t)
    same = cls[:, None] == cls[None, :]
    off_diag = ~np.eye(c * t, dtype=bool)
    within_mask = same & off_diag
    cross_mask = ~same
    return {
        "within_class": float(sims[within_mask].mean()) if within_mask.any() else None,
        "cross_class": float(sims[cross_mask].mean()) if cross_mask.any() else None,
    }
