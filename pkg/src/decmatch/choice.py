"""Discrete-choice datasets built from transcripts, logit estimation and predictive measures.

Binary responses are stored as two-alternative conditional choices: the
first alternative is "reject" with all-zero covariates, the second is
"accept" carrying the offer's covariates plus an intercept.  One estimation
path therefore serves both kinds.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import UNMATCHED, Market, StableSet
from .dynamics import Transcript
from .errors import NotConverged, RankDeficient, SchemaMismatch, Separation, ZeroVarianceResponse
from .metrics.offers import OfferTracker

CONDITIONAL = "Conditional"
BINARY = "Binary"

PROPOSAL_FEATURES = (
    "proposer_pa_positive",
    "receiver_rank",
    "receiver_is_matched",
    "blocking_pair",
    "receiver_pa_max0",
    "receiver_pa_min0",
    "matched_previously",
    "previous_offers_prop_to_rec",
    "stable_partners",
    "downward",
    "gale_shapley",
    "skips_someone",
)

ACCEPTANCE_FEATURES = (
    "intercept",
    "receiver_pa_positive",
    "receiver_is_matched",
    "receiver_pa_max0",
    "receiver_pa_min0",
    "proposer_rank",
    "proposer_pa_positive",
    "matched_previously",
    "previous_offers_prop_to_rec",
    "previous_offers_total_to_rec",
    "stable_partners",
)


@dataclass
class ChoiceDataset:
    """``N`` choices among ``J`` alternatives with ``K`` covariates each."""

    kind: str
    X: np.ndarray  # (N, J, K)
    y: np.ndarray  # (N, J) one-hot
    feature_names: tuple[str, ...]
    round_index: np.ndarray = None
    cluster: np.ndarray = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=np.int8)
        if self.X.ndim != 3 or self.y.shape != self.X.shape[:2]:
            raise SchemaMismatch(f"covariates {self.X.shape} and responses {self.y.shape} disagree")
        if len(self.feature_names) != self.X.shape[2]:
            raise SchemaMismatch("one name per covariate column is required")
        if not np.isfinite(self.X).all():
            raise SchemaMismatch("covariates must be finite")
        if self.N and not (self.y.sum(axis=1) == 1).all():
            raise SchemaMismatch("every choice needs exactly one chosen alternative")
        if self.kind not in (CONDITIONAL, BINARY):
            raise SchemaMismatch(f"unknown dataset kind {self.kind!r}")
        self.feature_names = tuple(self.feature_names)
        n = self.N
        self.round_index = np.ones(n, dtype=np.int64) if self.round_index is None else np.asarray(self.round_index, dtype=np.int64)
        self.cluster = np.zeros(n, dtype=np.int64) if self.cluster is None else np.asarray(self.cluster, dtype=np.int64)

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def J(self) -> int:
        return self.X.shape[1]

    @property
    def K(self) -> int:
        return self.X.shape[2]

    @property
    def chosen(self) -> np.ndarray:
        return self.y.argmax(axis=1)

    def subset(self, idx) -> "ChoiceDataset":
        idx = np.asarray(idx)
        return ChoiceDataset(self.kind, self.X[idx], self.y[idx], self.feature_names, self.round_index[idx], self.cluster[idx])

    def select(self, names: Sequence[str]) -> "ChoiceDataset":
        """Keep only the named covariates (in the given order)."""
        cols = [self.feature_names.index(n) for n in names]
        return ChoiceDataset(self.kind, self.X[:, :, cols], self.y, tuple(names), self.round_index, self.cluster)

    @classmethod
    def binary(cls, features: np.ndarray, response: Sequence[int], feature_names, round_index=None, cluster=None) -> "ChoiceDataset":
        """Wrap one-row-per-observation data as two-alternative choices."""
        features = np.asarray(features, dtype=float)
        n, k = features.shape
        X = np.zeros((n, 2, k))
        X[:, 1, :] = features
        r = np.asarray(response, dtype=np.int8)
        y = np.stack([1 - r, r], axis=1)
        return cls(BINARY, X, y, tuple(feature_names), round_index, cluster)


# ---------------------------------------------------------------- features


def _pa_dollars(cents: int) -> float:
    return cents / 100.0


def _iter_transcripts(transcripts) -> Iterable[tuple[int, Transcript]]:
    if isinstance(transcripts, Transcript):
        transcripts = [transcripts]
    for k, tr in enumerate(transcripts):
        yield k, tr


def _round_of(tr: Transcript, k: int) -> int:
    return int(tr.metadata.get("round", k + 1))


def extract_proposal_dataset(market: Market, transcripts, stable_set: StableSet | None = None) -> ChoiceDataset:
    """One conditional choice per offer: which opposite-side agent was targeted.

    Payoff advantages are in dollars; history features use only events
    before the offer.
    """
    if market.n_f != market.n_c:
        raise SchemaMismatch("proposal choices need both sides of equal size")
    n = market.n_f
    rows_x, rows_y, rounds, clusters = [], [], [], []
    for k, tr in _iter_transcripts(transcripts):
        if (tr.n_f, tr.n_c) != (market.n_f, market.n_c):
            raise SchemaMismatch("transcript does not match the market's size")
        tracker = OfferTracker(market, stable_set)
        sides, props, recs = tr.sides.tolist(), tr.proposers.tolist(), tr.receivers.tolist()
        acc, bil = tr.accepted.tolist(), tr.bilateral.tolist()
        for i in range(len(sides)):
            s, p, r = sides[i], props[i], recs[i]
            rows_x.append(proposal_features(tracker, s, p))
            y = np.zeros(n, dtype=np.int8)
            y[r] = 1
            rows_y.append(y)
            rounds.append(_round_of(tr, k))
            clusters.append(p if s == 0 else n + p)
            tracker.record(s, p, r, acc[i], bil[i])
    X = np.array(rows_x, dtype=float).reshape(len(rows_x), n, len(PROPOSAL_FEATURES))
    Y = np.array(rows_y, dtype=np.int8).reshape(len(rows_y), n)
    return ChoiceDataset(CONDITIONAL, X, Y, PROPOSAL_FEATURES, rounds, clusters)


def proposal_features(tracker: OfferTracker, side: int, proposer: int) -> list[list[float]]:
    other = 1 - side
    rank = tracker.rank[side][proposer]
    out = []
    n_alt = len(rank)
    for j in range(n_alt):
        fl = tracker.flags(side, proposer, j)
        g_p = tracker.gain(side, proposer, j)
        g_r = tracker.gain(other, j, proposer)
        sp = tracker._sp is not None and j in tracker._sp[side][proposer]
        out.append([
            float(g_p > 0),
            float(rank[j]),
            float(tracker.partner[other][j] != UNMATCHED),
            float(fl.to_blocking_pair),
            max(_pa_dollars(g_r), 0.0),
            min(_pa_dollars(g_r), 0.0),
            float(fl.to_previous_match),
            float(tracker.offered[side][proposer][j]),
            float(sp),
            float(fl.downward),
            float(fl.gale_shapley),
            float(fl.skips_someone),
        ])
    return out


def extract_acceptance_dataset(market: Market, transcripts, stable_set: StableSet | None = None) -> ChoiceDataset:
    """One binary observation per offer: was it accepted."""
    feats, resp, rounds, clusters = [], [], [], []
    for k, tr in _iter_transcripts(transcripts):
        tracker = OfferTracker(market, stable_set)
        sides, props, recs = tr.sides.tolist(), tr.proposers.tolist(), tr.receivers.tolist()
        acc, bil = tr.accepted.tolist(), tr.bilateral.tolist()
        for i in range(len(sides)):
            s, p, r = sides[i], props[i], recs[i]
            feats.append(acceptance_features(tracker, s, p, r))
            resp.append(int(acc[i]))
            rounds.append(_round_of(tr, k))
            # the receiver is the decision maker here
            clusters.append(r if s == 1 else market.n_f + r)
            tracker.record(s, p, r, acc[i], bil[i])
    F = np.array(feats, dtype=float).reshape(len(feats), len(ACCEPTANCE_FEATURES))
    return ChoiceDataset.binary(F, resp, ACCEPTANCE_FEATURES, rounds, clusters)


def acceptance_features(tracker: OfferTracker, side: int, proposer: int, receiver: int) -> list[float]:
    other = 1 - side
    g_p = tracker.gain(side, proposer, receiver)
    g_r = tracker.gain(other, receiver, proposer)
    pair = tracker.pair(side, proposer, receiver)
    sp = tracker._sp is not None and receiver in tracker._sp[side][proposer]
    return [
        1.0,
        float(g_r > 0),
        float(tracker.partner[other][receiver] != UNMATCHED),
        max(_pa_dollars(g_r), 0.0),
        min(_pa_dollars(g_r), 0.0),
        float(tracker.rank[other][receiver][proposer]),
        float(g_p > 0),
        float(pair in tracker.ever_matched),
        float(tracker.offered[side][proposer][receiver]),
        float(tracker.received[other][receiver]),
        float(sp),
    ]


# -------------------------------------------------------------- estimation


@dataclass(frozen=True)
class FitResult:
    beta: np.ndarray
    log_likelihood: float
    converged: bool
    iterations: int
    gradient_norm: float
    feature_names: tuple[str, ...] = ()
    tolerance: float = 1e-8

    def to_dict(self) -> dict:
        d = asdict(self)
        d["beta"] = dict(zip(self.feature_names, self.beta.tolist())) if self.feature_names else self.beta.tolist()
        return d


def probabilities(beta, ds: ChoiceDataset) -> np.ndarray:
    """Predicted choice probabilities, shape ``(N, J)``."""
    v = ds.X @ np.asarray(beta, dtype=float)
    v -= v.max(axis=1, keepdims=True)
    e = np.exp(v)
    return e / e.sum(axis=1, keepdims=True)


def log_likelihood(beta, ds: ChoiceDataset) -> float:
    v = ds.X @ np.asarray(beta, dtype=float)
    m = v.max(axis=1)
    lse = m + np.log(np.exp(v - m[:, None]).sum(axis=1))
    chosen = v[np.arange(ds.N), ds.chosen]
    # index-ordered reduction keeps results reproducible
    return float(math.fsum((chosen - lse).tolist()))


def gradient(beta, ds: ChoiceDataset) -> np.ndarray:
    P = probabilities(beta, ds)
    resid = ds.y - P
    return np.einsum("nj,njk->k", resid, ds.X)


def hessian(beta, ds: ChoiceDataset) -> np.ndarray:
    P = probabilities(beta, ds)
    xbar = np.einsum("nj,njk->nk", P, ds.X)
    D = ds.X - xbar[:, None, :]
    return -np.einsum("nj,njk,njl->kl", P, D, D)


def aliased_columns(ds: ChoiceDataset, rtol: float = 1e-10) -> list[str]:
    """Covariates that add no within-choice variation beyond earlier ones."""
    D = (ds.X - ds.X.mean(axis=1, keepdims=True)).reshape(-1, ds.K)
    out = []
    kept: list[int] = []
    scale = max(1.0, float(np.abs(D).max())) if D.size else 1.0
    for k in range(ds.K):
        cols = kept + [k]
        sub = D[:, cols]
        rank = np.linalg.matrix_rank(sub, tol=rtol * scale * max(sub.shape)) if sub.size else 0
        if rank == len(cols):
            kept.append(k)
        else:
            out.append(ds.feature_names[k])
    return out


def fit_logit(
    ds: ChoiceDataset,
    tolerance: float = 1e-8,
    max_iters: int = 100,
    beta0=None,
    divergence_bound: float = 50.0,
    raise_on_failure: bool = False,
) -> FitResult:
    """Maximum likelihood by damped Newton steps.

    Converged when the max-norm of the gradient of the *mean* log-likelihood
    falls below ``tolerance``.  Every accepted step does not lower the
    likelihood.
    """
    if ds.N == 0:
        raise ZeroVarianceResponse("empty dataset")
    chosen = ds.chosen
    if (chosen == chosen[0]).all() and ds.kind == BINARY:
        raise ZeroVarianceResponse("every observation has the same response")
    bad = aliased_columns(ds)
    if bad:
        raise RankDeficient(bad)

    beta = np.zeros(ds.K) if beta0 is None else np.array(beta0, dtype=float)
    ll = log_likelihood(beta, ds)
    g = gradient(beta, ds)
    it = 0
    converged = False
    n = ds.N
    while True:
        gnorm = float(np.abs(g).max()) / n if g.size else 0.0
        if gnorm < tolerance:
            converged = True
            break
        if it >= max_iters:
            break
        if np.abs(beta).max(initial=0.0) > divergence_bound or ll / n > -1e-7:
            raise Separation(f"coefficients diverge (max |beta| = {np.abs(beta).max():.3g}) after {it} iterations")
        H = hessian(beta, ds)
        try:
            step = np.linalg.solve(-H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(-H, g, rcond=None)[0]
        t = 1.0
        improved = False
        while t > 1e-12:
            cand = beta + t * step
            ll_c = log_likelihood(cand, ds)
            if ll_c >= ll:
                improved = True
                break
            t *= 0.5
        it += 1
        if not improved:
            # at machine precision: the likelihood cannot rise further
            break
        beta, ll = cand, ll_c
        g = gradient(beta, ds)
    gnorm = float(np.abs(g).max()) / n if g.size else 0.0
    if np.abs(beta).max(initial=0.0) > divergence_bound:
        raise Separation(f"coefficients diverge (max |beta| = {np.abs(beta).max():.3g})")
    res = FitResult(beta, ll, converged, it, gnorm, ds.feature_names, tolerance)
    if not converged and raise_on_failure:
        raise NotConverged(res)
    return res


# ---------------------------------------------------------------- measures


@dataclass(frozen=True)
class PredictiveMeasures:
    mse: float
    pct_corr_max_cp: float
    avg_p_ok_pred: float
    n_choices: int

    def to_dict(self) -> dict:
        return asdict(self)


def measures_from_probabilities(P: np.ndarray, y: np.ndarray) -> PredictiveMeasures:
    """MSE over all cells; strict-argmax hit rate and mean realized probability, both in percent."""
    P = np.asarray(P, dtype=float)
    y = np.asarray(y, dtype=float)
    n, J = P.shape
    mse = float(((y - P) ** 2).sum() / (n * J))
    chosen = y.argmax(axis=1)
    p_real = P[np.arange(n), chosen]
    others = np.where(y.astype(bool), -np.inf, P)
    strict = p_real > others.max(axis=1)
    return PredictiveMeasures(mse, 100.0 * float(strict.mean()), 100.0 * float(p_real.mean()), n)


def predictive_measures(beta, train: ChoiceDataset, test: ChoiceDataset) -> PredictiveMeasures:
    if train.feature_names != test.feature_names or train.J != test.J:
        raise SchemaMismatch("train and test covariates differ")
    if len(beta) != test.K:
        raise SchemaMismatch("coefficient vector does not fit the covariates")
    return measures_from_probabilities(probabilities(beta, test), test.y)


# ------------------------------------------------------------------ splits


def split_sample(ds: ChoiceDataset) -> tuple[ChoiceDataset, ChoiceDataset]:
    return ds, ds


def split_two_fold(ds: ChoiceDataset, seed: int = 0) -> tuple[ChoiceDataset, ChoiceDataset]:
    """Random halves; the seed is part of the result's provenance."""
    perm = np.random.default_rng(seed).permutation(ds.N)
    half = ds.N // 2
    return ds.subset(np.sort(perm[:half])), ds.subset(np.sort(perm[half:]))


def split_rounds(ds: ChoiceDataset, first_rounds: int = 5) -> tuple[ChoiceDataset, ChoiceDataset]:
    """``(early, late)``: rounds ``1..first_rounds`` versus the rest."""
    early = ds.round_index <= first_rounds
    return ds.subset(np.flatnonzero(early)), ds.subset(np.flatnonzero(~early))


SPLITS = ("sample", "two_fold", "future_present", "present_future")


def evaluate(ds: ChoiceDataset, split: str = "sample", seed: int = 0, first_rounds: int = 5, **fit_kw) -> dict:
    """Fit on the training part of ``split`` and score on its test part."""
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}; expected one of {SPLITS}")
    if split == "sample":
        fit = fit_logit(ds, **fit_kw)
        m = predictive_measures(fit.beta, ds, ds)
        return {"split": split, "fit": fit.to_dict(), "measures": m.to_dict()}
    if split == "two_fold":
        a, b = split_two_fold(ds, seed)
        fa, fb = fit_logit(a, **fit_kw), fit_logit(b, **fit_kw)
        m1 = predictive_measures(fa.beta, a, b)
        m2 = predictive_measures(fb.beta, b, a)
        avg = {k: (getattr(m1, k) + getattr(m2, k)) / 2 for k in ("mse", "pct_corr_max_cp", "avg_p_ok_pred")}
        avg["n_choices"] = m1.n_choices + m2.n_choices
        return {"split": split, "fold_seed": seed, "fits": [fa.to_dict(), fb.to_dict()], "measures": avg}
    early, late = split_rounds(ds, first_rounds)
    train, test = (early, late) if split == "future_present" else (late, early)
    fit = fit_logit(train, **fit_kw)
    m = predictive_measures(fit.beta, train, test)
    return {"split": split, "first_rounds": first_rounds, "fit": fit.to_dict(), "measures": m.to_dict()}


# ---------------------------------------------------------------- file I/O


_ID_COLUMNS = ("choice_id", "alternative", "chosen", "round", "cluster")


def write_dataset(ds: ChoiceDataset, path) -> None:
    """One row per (choice, alternative); the kind goes in a leading comment line."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# kind={ds.kind}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_ID_COLUMNS + ds.feature_names)
        for i in range(ds.N):
            for j in range(ds.J):
                w.writerow([i, j, int(ds.y[i, j]), int(ds.round_index[i]), int(ds.cluster[i])] + [repr(float(v)) for v in ds.X[i, j]])


def read_dataset(path) -> ChoiceDataset:
    text = Path(path).read_text().splitlines()
    kind = CONDITIONAL
    if text and text[0].startswith("#"):
        kind = text[0].split("=", 1)[1].strip()
        text = text[1:]
    reader = csv.reader(text)
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaMismatch("empty dataset file", 1) from None
    if tuple(header[:5]) != _ID_COLUMNS:
        raise SchemaMismatch(f"expected leading columns {_ID_COLUMNS}", 2)
    names = tuple(header[5:])
    rows: dict[int, list] = {}
    meta: dict[int, tuple[int, int]] = {}
    for lineno, row in enumerate(reader, start=3):
        if len(row) != len(header):
            raise SchemaMismatch(f"expected {len(header)} fields, got {len(row)}", lineno)
        try:
            cid, alt, chosen, rnd, cl = (int(v) for v in row[:5])
            feats = [float(v) for v in row[5:]]
        except ValueError as exc:
            raise SchemaMismatch(str(exc), lineno) from None
        rows.setdefault(cid, []).append((alt, chosen, feats))
        meta[cid] = (rnd, cl)
    ids = sorted(rows)
    J = len(rows[ids[0]]) if ids else 0
    X = np.zeros((len(ids), J, len(names)))
    y = np.zeros((len(ids), J), dtype=np.int8)
    for i, cid in enumerate(ids):
        alts = sorted(rows[cid])
        if len(alts) != J:
            raise SchemaMismatch(f"choice {cid} has {len(alts)} alternatives, expected {J}")
        for alt, chosen, feats in alts:
            X[i, alt] = feats
            y[i, alt] = chosen
    rounds = [meta[c][0] for c in ids]
    clusters = [meta[c][1] for c in ids]
    return ChoiceDataset(kind, X, y, names, rounds, clusters)


def simulate_conditional(beta, N: int, J: int, seed: int = 0, names=None) -> ChoiceDataset:
    """Draw choices from the model itself with standard-normal covariates."""
    rng = np.random.default_rng(seed)
    beta = np.asarray(beta, dtype=float)
    X = rng.standard_normal((N, J, len(beta)))
    v = X @ beta
    P = np.exp(v - v.max(axis=1, keepdims=True))
    P /= P.sum(axis=1, keepdims=True)
    u = rng.random(N)
    choice = (P.cumsum(axis=1) < u[:, None]).sum(axis=1).clip(max=J - 1)
    y = np.zeros((N, J), dtype=np.int8)
    y[np.arange(N), choice] = 1
    names = tuple(names) if names else tuple(f"x{k}" for k in range(len(beta)))
    return ChoiceDataset(CONDITIONAL, X, y, names)
