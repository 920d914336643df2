"""Aspect typing of phrases with a collapsed Gibbs sampler.

Each phrase is assumed drawn from one latent aspect; aspects own multinomials
over content unigrams, significant phrases and left/right relation phrases,
all with symmetric Dirichlet priors that are integrated out. The sampler keeps
only sufficient statistics (count matrices) and per-phrase assignments.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MappingUndecidableError
from .segmentation import Phrase

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "conceptminer-aspect-model"
CHECKPOINT_VERSION = 1

DEFAULT_INDICATIVE_RPS: tuple[str, ...] = (
    "by using",
    "using",
    "by applying",
    "applying",
    "via",
    "based on",
    "with",
)


@dataclass(frozen=True)
class AspectHyper:
    n_aspects: int = 2
    alpha: float | None = None  # None means 50 / n_aspects
    beta_w: float = 0.01
    beta_l: float = 0.01
    beta_r: float = 0.01

    def __post_init__(self):
        if self.n_aspects < 1:
            raise ValueError("n_aspects must be >= 1")
        for name in ("alpha", "beta_w", "beta_l", "beta_r"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def alpha_value(self) -> float:
        return 50.0 / self.n_aspects if self.alpha is None else self.alpha


@dataclass(frozen=True)
class AspectPosterior:
    probs: np.ndarray

    @property
    def max_prob(self) -> float:
        return float(self.probs.max())

    @property
    def argmax(self) -> int:
        return int(self.probs.argmax())


class Vocab:
    """First-seen insertion-ordered vocabulary with stable integer ids."""

    def __init__(self, items=()):
        self.index: dict = {}
        self.items: list = []
        for it in items:
            self.add(it)

    def add(self, item) -> int:
        idx = self.index.get(item)
        if idx is None:
            idx = len(self.items)
            self.index[item] = idx
            self.items.append(item)
        return idx

    def get(self, item) -> int | None:
        return self.index.get(item)

    def __len__(self) -> int:
        return len(self.items)


@dataclass
class FeatureSpace:
    w: Vocab = field(default_factory=Vocab)
    sp: Vocab = field(default_factory=Vocab)
    l: Vocab = field(default_factory=Vocab)
    r: Vocab = field(default_factory=Vocab)
    v: Vocab = field(default_factory=Vocab)

    @classmethod
    def build(cls, phrases: list[Phrase]) -> "FeatureSpace":
        fs = cls()
        for p in phrases:
            for w in p.p_w:
                fs.w.add(w)
            for sp in sorted(p.p_sp):
                fs.sp.add(sp)
            if p.p_l is not None:
                fs.l.add(p.p_l.tokens)
            if p.p_r is not None:
                fs.r.add(p.p_r.tokens)
            fs.v.add(p.venue)
        return fs


class EncodedPhrases:
    """Integer-encoded features plus precomputed repeat offsets per phrase.

    The offsets implement the exact sequential Dirichlet-multinomial form: the
    j-th within-phrase occurrence of the same feature adds j to its numerator
    and the i-th feature token of a class adds i to the denominator.
    """

    def __init__(self, phrases: list[Phrase], fs: FeatureSpace):
        self.n = len(phrases)
        self.w_ids: list[np.ndarray] = []
        self.w_off: list[np.ndarray] = []
        self.sp_ids: list[np.ndarray] = []
        self.sp_off: list[np.ndarray] = []
        self.l_ids = np.full(self.n, -1, dtype=np.int64)
        self.r_ids = np.full(self.n, -1, dtype=np.int64)
        self.v_ids = np.zeros(self.n, dtype=np.int64)
        for i, p in enumerate(phrases):
            w = np.array([fs.w.add(t) for t in p.p_w], dtype=np.int64)
            sp = np.array([fs.sp.add(s) for s in sorted(p.p_sp)], dtype=np.int64)
            self.w_ids.append(w)
            self.w_off.append(_repeat_offsets(w))
            self.sp_ids.append(sp)
            self.sp_off.append(_repeat_offsets(sp))
            if p.p_l is not None:
                self.l_ids[i] = fs.l.add(p.p_l.tokens)
            if p.p_r is not None:
                self.r_ids[i] = fs.r.add(p.p_r.tokens)
            self.v_ids[i] = fs.v.add(p.venue)


def _repeat_offsets(ids: np.ndarray) -> np.ndarray:
    off = np.zeros(len(ids), dtype=np.float64)
    seen: dict[int, int] = {}
    for i, t in enumerate(ids):
        k = int(t)
        off[i] = seen.get(k, 0)
        seen[k] = seen.get(k, 0) + 1
    return off


class AspectModel:
    """Sufficient statistics of the collapsed sampler plus its assignments."""

    def __init__(self, hyper: AspectHyper, fs: FeatureSpace, enc: EncodedPhrases, seed: int):
        self.hyper = hyper
        self.fs = fs
        self.enc = enc
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        a = hyper.n_aspects
        self.z = np.full(enc.n, -1, dtype=np.int64)
        self.n_a = np.zeros(a, dtype=np.int64)
        self.n_aw = np.zeros((a, max(len(fs.w), 1)), dtype=np.int64)
        self.n_asp = np.zeros((a, max(len(fs.sp), 1)), dtype=np.int64)
        self.n_al = np.zeros((a, max(len(fs.l), 1)), dtype=np.int64)
        self.n_ar = np.zeros((a, max(len(fs.r), 1)), dtype=np.int64)
        self.w_tot = np.zeros(a, dtype=np.int64)
        self.sp_tot = np.zeros(a, dtype=np.int64)
        self.l_tot = np.zeros(a, dtype=np.int64)
        self.r_tot = np.zeros(a, dtype=np.int64)

    # vocabulary sizes used in smoothing denominators
    @property
    def V_w(self) -> int:
        return len(self.fs.w)

    @property
    def V_sp(self) -> int:
        return len(self.fs.sp)

    @property
    def V_l(self) -> int:
        return len(self.fs.l)

    @property
    def V_r(self) -> int:
        return len(self.fs.r)

    def _apply(self, i: int, a: int, delta: int) -> None:
        enc = self.enc
        self.n_a[a] += delta
        w = enc.w_ids[i]
        if len(w):
            np.add.at(self.n_aw[a], w, delta)
            self.w_tot[a] += delta * len(w)
        sp = enc.sp_ids[i]
        if len(sp):
            np.add.at(self.n_asp[a], sp, delta)
            self.sp_tot[a] += delta * len(sp)
        if enc.l_ids[i] >= 0:
            self.n_al[a, enc.l_ids[i]] += delta
            self.l_tot[a] += delta
        if enc.r_ids[i] >= 0:
            self.n_ar[a, enc.r_ids[i]] += delta
            self.r_tot[a] += delta

    def conditional_weights(self, i: int) -> np.ndarray:
        """Unnormalized sampling weights for phrase ``i``, counts already
        decremented for it."""
        h = self.hyper
        w = (self.n_a + h.alpha_value).astype(np.float64)
        enc = self.enc
        ids = enc.w_ids[i]
        if len(ids):
            num = self.n_aw[:, ids] + h.beta_w + enc.w_off[i]
            den = self.w_tot[:, None] + self.V_w * h.beta_w + np.arange(len(ids))
            w *= (num / den).prod(axis=1)
        ids = enc.sp_ids[i]
        if len(ids):
            num = self.n_asp[:, ids] + h.beta_w + enc.sp_off[i]
            den = self.sp_tot[:, None] + self.V_sp * h.beta_w + np.arange(len(ids))
            w *= (num / den).prod(axis=1)
        if enc.l_ids[i] >= 0:
            w *= (self.n_al[:, enc.l_ids[i]] + h.beta_l) / (
                self.l_tot + self.V_l * h.beta_l
            )
        if enc.r_ids[i] >= 0:
            w *= (self.n_ar[:, enc.r_ids[i]] + h.beta_r) / (
                self.r_tot + self.V_r * h.beta_r
            )
        return w

    # smoothed point estimates used for posterior typing and aspect mapping
    def phi_l(self) -> np.ndarray:
        h = self.hyper
        return (self.n_al + h.beta_l) / (
            self.l_tot[:, None] + self.V_l * h.beta_l
        )

    def phi_r(self) -> np.ndarray:
        h = self.hyper
        return (self.n_ar + h.beta_r) / (
            self.r_tot[:, None] + self.V_r * h.beta_r
        )

    def to_checkpoint(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "hyper": {
                "n_aspects": self.hyper.n_aspects,
                "alpha": self.hyper.alpha,
                "beta_w": self.hyper.beta_w,
                "beta_l": self.hyper.beta_l,
                "beta_r": self.hyper.beta_r,
            },
            "seed": self.seed,
            "z": self.z.tolist(),
            "vocab": {
                "w": self.fs.w.items,
                "sp": [list(t) for t in self.fs.sp.items],
                "l": [list(t) for t in self.fs.l.items],
                "r": [list(t) for t in self.fs.r.items],
                "v": self.fs.v.items,
            },
            "counts": {
                "n_a": self.n_a.tolist(),
                "n_aw": self.n_aw.tolist(),
                "n_asp": self.n_asp.tolist(),
                "n_al": self.n_al.tolist(),
                "n_ar": self.n_ar.tolist(),
                "w_tot": self.w_tot.tolist(),
                "sp_tot": self.sp_tot.tolist(),
                "l_tot": self.l_tot.tolist(),
                "r_tot": self.r_tot.tolist(),
            },
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_checkpoint(), fh, sort_keys=True, separators=(",", ":"))
            fh.write("\n")


def gibbs_init(
    phrases: list[Phrase], hyper: AspectHyper, seed: int
) -> AspectModel:
    """Assign each phrase a uniformly random aspect and tally counts."""
    if not phrases:
        raise ValueError("cannot initialize a sampler on an empty phrase list")
    fs = FeatureSpace.build(phrases)
    enc = EncodedPhrases(phrases, fs)
    model = AspectModel(hyper, fs, enc, seed)
    init = model.rng.integers(hyper.n_aspects, size=enc.n)
    for i, a in enumerate(init):
        model.z[i] = a
        model._apply(i, int(a), +1)
    return model


def gibbs_sweep(model: AspectModel, phrases: list[Phrase] | None = None) -> AspectModel:
    """One pass of collapsed Gibbs over all phrases, in order."""
    if phrases is not None and len(phrases) != model.enc.n:
        raise ValueError("phrase list does not match the model's training set")
    for i in range(model.enc.n):
        a_old = int(model.z[i])
        model._apply(i, a_old, -1)
        w = model.conditional_weights(i)
        total = float(w.sum())
        if not math.isfinite(total) or total <= 0.0:
            # fall back to log-space for pathological feature loads
            logw = np.log(np.maximum(w, 1e-320))
            w = np.exp(logw - logw.max())
            total = float(w.sum())
        u = model.rng.random() * total
        a_new = int(np.searchsorted(np.cumsum(w), u, side="right"))
        if a_new >= len(w):
            a_new = len(w) - 1
        model.z[i] = a_new
        model._apply(i, a_new, +1)
    return model


def train(
    phrases: list[Phrase], hyper: AspectHyper, seed: int, sweeps: int
) -> AspectModel:
    model = gibbs_init(phrases, hyper, seed)
    for _ in range(sweeps):
        gibbs_sweep(model)
    return model


def posterior_aspect(model: AspectModel, p: Phrase) -> AspectPosterior:
    """Normalized aspect posterior of one phrase from smoothed point estimates.

    Features unseen during training contribute nothing; missing relation
    phrases drop their factor.
    """
    h = model.hyper
    n = int(model.n_a.sum())
    logp = np.log(
        (model.n_a + h.alpha_value) / (n + h.n_aspects * h.alpha_value)
    )
    for tok in p.p_w:
        idx = model.fs.w.get(tok)
        if idx is None:
            continue
        logp += np.log(
            (model.n_aw[:, idx] + h.beta_w) / (model.w_tot + model.V_w * h.beta_w)
        )
    for sp in sorted(p.p_sp):
        idx = model.fs.sp.get(sp)
        if idx is None:
            continue
        logp += np.log(
            (model.n_asp[:, idx] + h.beta_w) / (model.sp_tot + model.V_sp * h.beta_w)
        )
    if p.p_l is not None:
        idx = model.fs.l.get(p.p_l.tokens)
        if idx is not None:
            logp += np.log(
                (model.n_al[:, idx] + h.beta_l) / (model.l_tot + model.V_l * h.beta_l)
            )
    if p.p_r is not None:
        idx = model.fs.r.get(p.p_r.tokens)
        if idx is not None:
            logp += np.log(
                (model.n_ar[:, idx] + h.beta_r) / (model.r_tot + model.V_r * h.beta_r)
            )
    logp -= logp.max()
    probs = np.exp(logp)
    probs /= probs.sum()
    return AspectPosterior(probs)


def assign_and_filter(
    model: AspectModel,
    phrases: list[Phrase],
    discard_threshold: float = 0.6,
) -> tuple[list[Phrase], list[Phrase]]:
    """Argmax-type each phrase; route low-confidence ones to the discard set.

    A phrase is kept when its maximum posterior is >= the threshold; argmax
    ties resolve to the lowest aspect index.
    """
    kept, discarded = [], []
    for p in phrases:
        post = posterior_aspect(model, p)
        p.aspect = post.argmax
        if post.max_prob >= discard_threshold:
            kept.append(p)
        else:
            discarded.append(p)
    return kept, discarded


@dataclass(frozen=True)
class AspectMapping:
    technique: int
    application: int
    tied: bool = False

    def name_of(self, aspect: int) -> str:
        if aspect == self.technique:
            return "Technique"
        if aspect == self.application:
            return "Application"
        return f"aspect-{aspect}"


def choose_mapping(
    model, indicative: tuple[str, ...] = DEFAULT_INDICATIVE_RPS
) -> AspectMapping:
    """Orient the two learned aspects as Technique/Application.

    Indicative relation phrases tend to sit left of technique phrases and
    right of application phrases, so the mapping maximizes the summed left
    probability under the technique aspect plus the summed right probability
    under the application aspect.
    """
    if not indicative:
        raise MappingUndecidableError("empty indicative relation phrase set")
    if model.hyper.n_aspects != 2:
        raise ValueError("aspect mapping is defined for exactly two aspects")
    phi_l = model.phi_l()
    phi_r = model.phi_r()
    keys = [tuple(rp.split()) for rp in indicative]
    l_ids = [model.fs.l.get(k) for k in keys]
    r_ids = [model.fs.r.get(k) for k in keys]
    if all(i is None for i in l_ids) and all(i is None for i in r_ids):
        raise MappingUndecidableError(
            "no indicative relation phrase was observed on either side"
        )

    def objective(tech: int, app: int) -> float:
        total = 0.0
        for li, ri in zip(l_ids, r_ids):
            if li is not None:
                total += phi_l[tech, li]
            if ri is not None:
                total += phi_r[app, ri]
        return total

    obj_01 = objective(0, 1)
    obj_10 = objective(1, 0)
    if obj_01 == obj_10:
        log.warning("aspect mapping objective tied; defaulting to (1,2) orientation")
        return AspectMapping(technique=0, application=1, tied=True)
    if obj_01 > obj_10:
        return AspectMapping(technique=0, application=1)
    return AspectMapping(technique=1, application=0)


def audit_counts(model: AspectModel) -> None:
    """Recompute all count matrices from assignments; raise on any mismatch."""
    clone = AspectModel(model.hyper, model.fs, model.enc, model.seed)
    for i in range(model.enc.n):
        clone._apply(i, int(model.z[i]), +1)
    pairs = [
        ("n_a", model.n_a, clone.n_a),
        ("n_aw", model.n_aw, clone.n_aw),
        ("n_asp", model.n_asp, clone.n_asp),
        ("n_al", model.n_al, clone.n_al),
        ("n_ar", model.n_ar, clone.n_ar),
        ("w_tot", model.w_tot, clone.w_tot),
        ("sp_tot", model.sp_tot, clone.sp_tot),
        ("l_tot", model.l_tot, clone.l_tot),
        ("r_tot", model.r_tot, clone.r_tot),
    ]
    for name, got, want in pairs:
        if not np.array_equal(got, want):
            raise ValueError(f"count audit failed for {name}")
    if int(model.n_a.sum()) != model.enc.n:
        raise ValueError("aspect totals do not sum to the number of phrases")


def load_checkpoint(path) -> AspectModel:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if data.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not an aspect model checkpoint: {path}")
    if data.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {data.get('version')}")
    h = data["hyper"]
    hyper = AspectHyper(
        n_aspects=h["n_aspects"],
        alpha=h["alpha"],
        beta_w=h["beta_w"],
        beta_l=h["beta_l"],
        beta_r=h["beta_r"],
    )
    fs = FeatureSpace(
        w=Vocab(data["vocab"]["w"]),
        sp=Vocab(tuple(x) for x in data["vocab"]["sp"]),
        l=Vocab(tuple(x) for x in data["vocab"]["l"]),
        r=Vocab(tuple(x) for x in data["vocab"]["r"]),
        v=Vocab(data["vocab"]["v"]),
    )
    enc = EncodedPhrases([], fs)
    enc.n = len(data["z"])
    model = AspectModel(hyper, fs, enc, data["seed"])
    model.z = np.array(data["z"], dtype=np.int64)
    c = data["counts"]
    model.n_a = np.array(c["n_a"], dtype=np.int64)
    model.n_aw = np.array(c["n_aw"], dtype=np.int64)
    model.n_asp = np.array(c["n_asp"], dtype=np.int64)
    model.n_al = np.array(c["n_al"], dtype=np.int64)
    model.n_ar = np.array(c["n_ar"], dtype=np.int64)
    model.w_tot = np.array(c["w_tot"], dtype=np.int64)
    model.sp_tot = np.array(c["sp_tot"], dtype=np.int64)
    model.l_tot = np.array(c["l_tot"], dtype=np.int64)
    model.r_tot = np.array(c["r_tot"], dtype=np.int64)
    return model
