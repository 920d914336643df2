"""Joint latent domain and aspect typing with venue evidence.

Extends the flat aspect sampler: each phrase draws a (domain, aspect) pair,
text features come from domain-specific aspect distributions, venues from a
per-domain distribution, and relation phrases stay aspect-level. Supports
chained informative priors so consecutive time slices evolve smoothly.

Cells are laid out domain-major (``cell = d * n_aspects + a``) so that a
single-domain model walks the exact same cell order as the flat sampler.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from .aspects import EncodedPhrases, FeatureSpace
from .segmentation import Phrase

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "conceptminer-domain-model"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class DomainHyper:
    n_aspects: int = 2
    n_domains: int = 10
    alpha_a: float | None = None  # None means 50 / n_aspects
    alpha_d: float | None = None  # None means 50 / n_domains
    beta_w: float = 0.01
    beta_l: float = 0.01
    beta_r: float = 0.01
    beta_v: float = 0.01
    omega: float = 0.5
    kappa: float = 100.0

    def __post_init__(self):
        if self.n_aspects < 1 or self.n_domains < 1:
            raise ValueError("n_aspects and n_domains must be >= 1")
        if not 0.0 <= self.omega <= 1.0:
            raise ValueError("omega must lie in [0, 1]")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        for name in ("alpha_a", "alpha_d", "beta_w", "beta_l", "beta_r", "beta_v"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def alpha_a_value(self) -> float:
        return 50.0 / self.n_aspects if self.alpha_a is None else self.alpha_a

    @property
    def alpha_d_value(self) -> float:
        return 50.0 / self.n_domains if self.alpha_d is None else self.alpha_d


@dataclass
class SlicePriors:
    """Informative pseudo-count vectors chaining a slice to its predecessor.

    These replace the symmetric beta pseudo-counts of the text and venue
    distributions; with omega = 0 they reduce to the symmetric priors exactly.
    """

    pw: np.ndarray      # (cells, V_w)
    psp: np.ndarray     # (cells, V_sp)
    pv: np.ndarray      # (domains, V_v)
    pw_tot: np.ndarray
    psp_tot: np.ndarray
    pv_tot: np.ndarray


class DomainAspectModel:
    def __init__(
        self,
        hyper: DomainHyper,
        fs: FeatureSpace,
        enc: EncodedPhrases,
        seed: int,
        slice_priors: SlicePriors | None = None,
    ):
        self.hyper = hyper
        self.fs = fs
        self.enc = enc
        self.seed = seed
        self.slice_priors = slice_priors
        self.rng = np.random.default_rng(seed)
        a, d = hyper.n_aspects, hyper.n_domains
        cells = a * d
        self.z_a = np.full(enc.n, -1, dtype=np.int64)
        self.z_d = np.full(enc.n, -1, dtype=np.int64)
        self.n_a = np.zeros(a, dtype=np.int64)
        self.n_d = np.zeros(d, dtype=np.int64)
        self.n_cw = np.zeros((cells, max(len(fs.w), 1)), dtype=np.int64)
        self.n_csp = np.zeros((cells, max(len(fs.sp), 1)), dtype=np.int64)
        self.n_al = np.zeros((a, max(len(fs.l), 1)), dtype=np.int64)
        self.n_ar = np.zeros((a, max(len(fs.r), 1)), dtype=np.int64)
        self.n_dv = np.zeros((d, max(len(fs.v), 1)), dtype=np.int64)
        self.w_tot = np.zeros(cells, dtype=np.int64)
        self.sp_tot = np.zeros(cells, dtype=np.int64)
        self.l_tot = np.zeros(a, dtype=np.int64)
        self.r_tot = np.zeros(a, dtype=np.int64)
        self.v_tot = np.zeros(d, dtype=np.int64)

    @property
    def n_cells(self) -> int:
        return self.hyper.n_aspects * self.hyper.n_domains

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

    @property
    def V_v(self) -> int:
        return len(self.fs.v)

    def _cell(self, d: int, a: int) -> int:
        return d * self.hyper.n_aspects + a

    def _apply(self, i: int, d: int, a: int, delta: int) -> None:
        enc = self.enc
        cell = self._cell(d, a)
        self.n_a[a] += delta
        self.n_d[d] += delta
        w = enc.w_ids[i]
        if len(w):
            np.add.at(self.n_cw[cell], w, delta)
            self.w_tot[cell] += delta * len(w)
        sp = enc.sp_ids[i]
        if len(sp):
            np.add.at(self.n_csp[cell], sp, delta)
            self.sp_tot[cell] += delta * len(sp)
        if enc.l_ids[i] >= 0:
            self.n_al[a, enc.l_ids[i]] += delta
            self.l_tot[a] += delta
        if enc.r_ids[i] >= 0:
            self.n_ar[a, enc.r_ids[i]] += delta
            self.r_tot[a] += delta
        self.n_dv[d, enc.v_ids[i]] += delta
        self.v_tot[d] += delta

    # effective pseudo-counts: the chained slice priors when configured,
    # otherwise the symmetric betas
    def _w_prior(self, ids) -> tuple[np.ndarray, np.ndarray]:
        if self.slice_priors is not None:
            return self.slice_priors.pw[:, ids], self.slice_priors.pw_tot
        h = self.hyper
        return np.full(len(ids), h.beta_w), np.full(self.n_cells, self.V_w * h.beta_w)

    def _sp_prior(self, ids) -> tuple[np.ndarray, np.ndarray]:
        if self.slice_priors is not None:
            return self.slice_priors.psp[:, ids], self.slice_priors.psp_tot
        h = self.hyper
        return np.full(len(ids), h.beta_w), np.full(self.n_cells, self.V_sp * h.beta_w)

    def _v_prior(self, vid: int) -> tuple[np.ndarray, np.ndarray]:
        if self.slice_priors is not None:
            return self.slice_priors.pv[:, vid], self.slice_priors.pv_tot
        h = self.hyper
        d = self.hyper.n_domains
        return np.full(d, h.beta_v), np.full(d, self.V_v * h.beta_v)

    def _w_prior_one(self, idx: int) -> tuple[np.ndarray, np.ndarray]:
        if self.slice_priors is not None:
            return self.slice_priors.pw[:, idx], self.slice_priors.pw_tot
        h = self.hyper
        cells = self.n_cells
        return np.full(cells, h.beta_w), np.full(cells, self.V_w * h.beta_w)

    def _sp_prior_one(self, idx: int) -> tuple[np.ndarray, np.ndarray]:
        if self.slice_priors is not None:
            return self.slice_priors.psp[:, idx], self.slice_priors.psp_tot
        h = self.hyper
        cells = self.n_cells
        return np.full(cells, h.beta_w), np.full(cells, self.V_sp * h.beta_w)

    def conditional_weights(self, i: int) -> np.ndarray:
        """Unnormalized joint (domain, aspect) weights for phrase ``i`` with
        its counts removed."""
        h = self.hyper
        A, D = h.n_aspects, h.n_domains
        enc = self.enc
        w = np.tile((self.n_a + h.alpha_a_value).astype(np.float64), D)
        w *= np.repeat(self.n_d + h.alpha_d_value, A)
        pv, pv_tot = self._v_prior(int(enc.v_ids[i]))
        vf = (self.n_dv[:, enc.v_ids[i]] + pv) / (self.v_tot + pv_tot)
        w *= np.repeat(vf, A)
        ids = enc.w_ids[i]
        if len(ids):
            pw, pw_tot = self._w_prior(ids)
            num = self.n_cw[:, ids] + pw + enc.w_off[i]
            den = (self.w_tot + pw_tot)[:, None] + np.arange(len(ids))
            w *= (num / den).prod(axis=1)
        ids = enc.sp_ids[i]
        if len(ids):
            psp, psp_tot = self._sp_prior(ids)
            num = self.n_csp[:, ids] + psp + enc.sp_off[i]
            den = (self.sp_tot + psp_tot)[:, None] + np.arange(len(ids))
            w *= (num / den).prod(axis=1)
        if enc.l_ids[i] >= 0:
            lf = (self.n_al[:, enc.l_ids[i]] + h.beta_l) / (
                self.l_tot + self.V_l * h.beta_l
            )
            w *= np.tile(lf, D)
        if enc.r_ids[i] >= 0:
            rf = (self.n_ar[:, enc.r_ids[i]] + h.beta_r) / (
                self.r_tot + self.V_r * h.beta_r
            )
            w *= np.tile(rf, D)
        return w

    def phi_l(self) -> np.ndarray:
        h = self.hyper
        return (self.n_al + h.beta_l) / (self.l_tot[:, None] + self.V_l * h.beta_l)

    def phi_r(self) -> np.ndarray:
        h = self.hyper
        return (self.n_ar + h.beta_r) / (self.r_tot[:, None] + self.V_r * h.beta_r)

    def phi_v(self) -> np.ndarray:
        """Smoothed venue distribution per domain."""
        if self.slice_priors is not None:
            return (self.n_dv + self.slice_priors.pv) / (
                (self.v_tot + self.slice_priors.pv_tot)[:, None]
            )
        h = self.hyper
        return (self.n_dv + h.beta_v) / (self.v_tot[:, None] + self.V_v * h.beta_v)

    def phi_w(self) -> np.ndarray:
        """Smoothed unigram distribution per (domain, aspect) cell."""
        if self.slice_priors is not None:
            return (self.n_cw + self.slice_priors.pw) / (
                (self.w_tot + self.slice_priors.pw_tot)[:, None]
            )
        h = self.hyper
        return (self.n_cw + h.beta_w) / (self.w_tot[:, None] + self.V_w * h.beta_w)

    def phi_sp(self) -> np.ndarray:
        if self.slice_priors is not None:
            return (self.n_csp + self.slice_priors.psp) / (
                (self.sp_tot + self.slice_priors.psp_tot)[:, None]
            )
        h = self.hyper
        return (self.n_csp + h.beta_w) / (self.sp_tot[:, None] + self.V_sp * h.beta_w)

    def to_checkpoint(self) -> dict:
        data = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "hyper": {
                "n_aspects": self.hyper.n_aspects,
                "n_domains": self.hyper.n_domains,
                "alpha_a": self.hyper.alpha_a,
                "alpha_d": self.hyper.alpha_d,
                "beta_w": self.hyper.beta_w,
                "beta_l": self.hyper.beta_l,
                "beta_r": self.hyper.beta_r,
                "beta_v": self.hyper.beta_v,
                "omega": self.hyper.omega,
                "kappa": self.hyper.kappa,
            },
            "seed": self.seed,
            "z_a": self.z_a.tolist(),
            "z_d": self.z_d.tolist(),
            "vocab": {
                "w": self.fs.w.items,
                "sp": [list(t) for t in self.fs.sp.items],
                "l": [list(t) for t in self.fs.l.items],
                "r": [list(t) for t in self.fs.r.items],
                "v": self.fs.v.items,
            },
            "counts": {
                "n_a": self.n_a.tolist(),
                "n_d": self.n_d.tolist(),
                "n_cw": self.n_cw.tolist(),
                "n_csp": self.n_csp.tolist(),
                "n_al": self.n_al.tolist(),
                "n_ar": self.n_ar.tolist(),
                "n_dv": self.n_dv.tolist(),
                "w_tot": self.w_tot.tolist(),
                "sp_tot": self.sp_tot.tolist(),
                "l_tot": self.l_tot.tolist(),
                "r_tot": self.r_tot.tolist(),
                "v_tot": self.v_tot.tolist(),
            },
            "slice_priors": None,
        }
        if self.slice_priors is not None:
            data["slice_priors"] = {
                "pw": self.slice_priors.pw.tolist(),
                "psp": self.slice_priors.psp.tolist(),
                "pv": self.slice_priors.pv.tolist(),
            }
        return data

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_checkpoint(), fh, sort_keys=True, separators=(",", ":"))
            fh.write("\n")


def gibbs_init_domain(
    phrases: list[Phrase],
    hyper: DomainHyper,
    seed: int,
    fs: FeatureSpace | None = None,
    slice_priors: SlicePriors | None = None,
) -> DomainAspectModel:
    """Uniform random joint (domain, aspect) cell per phrase, counts tallied.

    Pass a prebuilt ``fs`` when training per-slice models so feature indices
    stay aligned across slices.
    """
    if not phrases:
        raise ValueError("cannot initialize a sampler on an empty phrase list")
    if fs is None:
        fs = FeatureSpace.build(phrases)
    enc = EncodedPhrases(phrases, fs)
    model = DomainAspectModel(hyper, fs, enc, seed, slice_priors)
    init = model.rng.integers(model.n_cells, size=enc.n)
    A = hyper.n_aspects
    for i, cell in enumerate(init):
        d, a = int(cell) // A, int(cell) % A
        model.z_d[i] = d
        model.z_a[i] = a
        model._apply(i, d, a, +1)
    return model


def gibbs_sweep_domain(
    model: DomainAspectModel, phrases: list[Phrase] | None = None
) -> DomainAspectModel:
    """Jointly resample each phrase's (domain, aspect) cell over the full grid."""
    if phrases is not None and len(phrases) != model.enc.n:
        raise ValueError("phrase list does not match the model's training set")
    A = model.hyper.n_aspects
    for i in range(model.enc.n):
        model._apply(i, int(model.z_d[i]), int(model.z_a[i]), -1)
        w = model.conditional_weights(i)
        total = float(w.sum())
        if not math.isfinite(total) or total <= 0.0:
            logw = np.log(np.maximum(w, 1e-320))
            w = np.exp(logw - logw.max())
            total = float(w.sum())
        u = model.rng.random() * total
        cell = int(np.searchsorted(np.cumsum(w), u, side="right"))
        if cell >= len(w):
            cell = len(w) - 1
        d, a = cell // A, cell % A
        model.z_d[i] = d
        model.z_a[i] = a
        model._apply(i, d, a, +1)
    return model


def train_domain(
    phrases: list[Phrase],
    hyper: DomainHyper,
    seed: int,
    sweeps: int,
    fs: FeatureSpace | None = None,
    slice_priors: SlicePriors | None = None,
) -> DomainAspectModel:
    model = gibbs_init_domain(phrases, hyper, seed, fs, slice_priors)
    for _ in range(sweeps):
        gibbs_sweep_domain(model)
    return model


@dataclass(frozen=True)
class DomainAspectPosterior:
    grid: np.ndarray  # (domains, aspects), sums to 1

    @property
    def max_prob(self) -> float:
        return float(self.grid.max())

    @property
    def argmax(self) -> tuple[int, int]:
        d, a = np.unravel_index(int(self.grid.argmax()), self.grid.shape)
        return int(d), int(a)


def posterior_domain_aspect(
    model: DomainAspectModel, p: Phrase
) -> DomainAspectPosterior:
    """Normalized joint posterior grid over (domain, aspect) for one phrase."""
    h = model.hyper
    A, D = h.n_aspects, h.n_domains
    n = int(model.n_a.sum())
    log_a = np.log((model.n_a + h.alpha_a_value) / (n + A * h.alpha_a_value))
    log_d = np.log((model.n_d + h.alpha_d_value) / (n + D * h.alpha_d_value))
    logp = np.tile(log_a, D) + np.repeat(log_d, A)

    vid = model.fs.v.get(p.venue)
    if vid is not None:
        pv, pv_tot = model._v_prior(vid)
        logp += np.repeat(
            np.log((model.n_dv[:, vid] + pv) / (model.v_tot + pv_tot)), A
        )
    for tok in p.p_w:
        idx = model.fs.w.get(tok)
        if idx is None:
            continue
        pw, pw_tot = model._w_prior_one(idx)
        logp += np.log((model.n_cw[:, idx] + pw) / (model.w_tot + pw_tot))
    for sp in sorted(p.p_sp):
        idx = model.fs.sp.get(sp)
        if idx is None:
            continue
        psp, psp_tot = model._sp_prior_one(idx)
        logp += np.log((model.n_csp[:, idx] + psp) / (model.sp_tot + psp_tot))
    if p.p_l is not None:
        idx = model.fs.l.get(p.p_l.tokens)
        if idx is not None:
            lf = (model.n_al[:, idx] + h.beta_l) / (model.l_tot + model.V_l * h.beta_l)
            logp += np.tile(np.log(lf), D)
    if p.p_r is not None:
        idx = model.fs.r.get(p.p_r.tokens)
        if idx is not None:
            rf = (model.n_ar[:, idx] + h.beta_r) / (model.r_tot + model.V_r * h.beta_r)
            logp += np.tile(np.log(rf), D)

    logp -= logp.max()
    probs = np.exp(logp)
    probs /= probs.sum()
    return DomainAspectPosterior(probs.reshape(D, A))


def assign_and_filter_domain(
    model: DomainAspectModel,
    phrases: list[Phrase],
    discard_threshold: float = 0.6,
) -> tuple[list[Phrase], list[Phrase]]:
    """Argmax (domain, aspect) per phrase; discard below-threshold max cells."""
    kept, discarded = [], []
    for p in phrases:
        post = posterior_domain_aspect(model, p)
        p.domain, p.aspect = post.argmax
        if post.max_prob >= discard_threshold:
            kept.append(p)
        else:
            discarded.append(p)
    return kept, discarded


def partition_time_slices(docs, n_slices: int):
    """Chronologically contiguous slices with sizes differing by at most one.

    Among all size arrangements that keep the balance, boundaries are placed
    at year changes when possible (docs of one year then stay in one slice);
    otherwise a year group straddles two adjacent slices.
    """
    from .corpus import with_time_slice

    n = len(docs)
    if n_slices < 1:
        raise ValueError("n_slices must be >= 1")
    if n_slices > n:
        raise ValueError(f"cannot split {n} documents into {n_slices} slices")
    order = sorted(range(n), key=lambda i: (docs[i].year, i))
    years = [docs[i].year for i in order]

    q, r = divmod(n, n_slices)
    small = n_slices - r

    def boundary_ok(pos: int) -> bool:
        return pos == n or years[pos - 1] != years[pos]

    # choose the arrangement of big/small slices that maximizes boundaries at
    # year changes; prefer placing the bigger slices first on ties
    best: dict[tuple[int, int], tuple[int, tuple[int, ...]]] = {(0, 0): (0, ())}
    for _ in range(n_slices):
        nxt: dict[tuple[int, int], tuple[int, tuple[int, ...]]] = {}
        for (big_used, small_used), (score, sizes) in best.items():
            pos = big_used * (q + 1) + small_used * q
            for size, is_big in (((q + 1), True), (q, False)):
                if is_big and big_used == r:
                    continue
                if not is_big and small_used == small:
                    continue
                key = (big_used + is_big, small_used + (not is_big))
                gain = 1 if boundary_ok(pos + size) else 0
                cand = (score + gain, sizes + (size,))
                if key not in nxt or cand > nxt[key]:
                    nxt[key] = cand
        best = nxt
    sizes = best[(r, small)][1]

    slice_of = {}
    pos = 0
    for s, size in enumerate(sizes):
        for i in order[pos : pos + size]:
            slice_of[i] = s
        pos += size
    return [with_time_slice(doc, slice_of[i]) for i, doc in enumerate(docs)]


def build_slice_prior(prev_model: DomainAspectModel, hyper: DomainHyper) -> SlicePriors:
    """Pseudo-counts for the next slice from the previous slice's estimates.

    For each chained distribution the new pseudo-count vector is
    ``kappa * omega * phi_prev + (1 - omega) * beta``; it stands in for the
    symmetric beta of the next slice's sampler, so omega = 0 recovers
    independent training exactly.
    """
    w_mix = hyper.kappa * hyper.omega
    pw = w_mix * prev_model.phi_w() + (1.0 - hyper.omega) * hyper.beta_w
    psp = w_mix * prev_model.phi_sp() + (1.0 - hyper.omega) * hyper.beta_w
    pv = w_mix * prev_model.phi_v() + (1.0 - hyper.omega) * hyper.beta_v
    return SlicePriors(
        pw=pw,
        psp=psp,
        pv=pv,
        pw_tot=pw.sum(axis=1),
        psp_tot=psp.sum(axis=1),
        pv_tot=pv.sum(axis=1),
    )


def audit_counts_domain(model: DomainAspectModel) -> None:
    """Recompute all count matrices from assignments; raise on mismatch."""
    clone = DomainAspectModel(
        model.hyper, model.fs, model.enc, model.seed, model.slice_priors
    )
    for i in range(model.enc.n):
        clone._apply(i, int(model.z_d[i]), int(model.z_a[i]), +1)
    pairs = [
        ("n_a", model.n_a, clone.n_a),
        ("n_d", model.n_d, clone.n_d),
        ("n_cw", model.n_cw, clone.n_cw),
        ("n_csp", model.n_csp, clone.n_csp),
        ("n_al", model.n_al, clone.n_al),
        ("n_ar", model.n_ar, clone.n_ar),
        ("n_dv", model.n_dv, clone.n_dv),
        ("w_tot", model.w_tot, clone.w_tot),
        ("sp_tot", model.sp_tot, clone.sp_tot),
        ("l_tot", model.l_tot, clone.l_tot),
        ("r_tot", model.r_tot, clone.r_tot),
        ("v_tot", model.v_tot, clone.v_tot),
    ]
    for name, got, want in pairs:
        if not np.array_equal(got, want):
            raise ValueError(f"count audit failed for {name}")
    if int(model.n_a.sum()) != model.enc.n:
        raise ValueError("aspect totals do not sum to the number of phrases")
