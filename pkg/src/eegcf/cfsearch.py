"""Counterfactual search by swapping feature-map cells.

A counterfactual for query features ``fI`` (class c) and distractor features
``fIp`` (class c') replaces a set of query cells with distractor cells. An
edit list ``[(q, d), ...]`` is the sparse form of the binary gate over query
cells plus the per-cell choice of distractor column.

Each search step picks the single swap that maximizes the softmax probability
of c'. Because the head mean-pools cells before a linear layer, a swap moves
the logits by ``W (fIp[d] - fI[q]) / hw``, so all hw^2 candidates are scored
from two (hw, C) tables without materializing any composite.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from eegcf._backend import kernels
from eegcf.compactnet import ClassifierHead, FeatureMap, Model, classify, softmax

log = logging.getLogger(__name__)

MODES = ("single", "all")


class SearchError(ValueError):
    pass


@dataclass(frozen=True)
class Edit:
    query_cell: int
    distractor_cell: int


@dataclass(frozen=True)
class ExplainResult:
    query_id: int
    distractor_id: int
    source_class: int
    target_class: int
    edits: tuple  # of (query_cell, distractor_cell)
    prob_trace: tuple
    flipped: bool
    predicted_class_after: int
    mode: str = "all"

    def to_json(self) -> dict:
        return {
            "query_id": self.query_id,
            "distractor_id": self.distractor_id,
            "c": self.source_class,
            "c_prime": self.target_class,
            "edits": [[int(q), int(d)] for q, d in self.edits],
            "prob_trace": [float(p) for p in self.prob_trace],
            "flipped": bool(self.flipped),
            "predicted_class_after": int(self.predicted_class_after),
            "mode": self.mode,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ExplainResult":
        return cls(
            query_id=int(obj["query_id"]),
            distractor_id=int(obj["distractor_id"]),
            source_class=int(obj["c"]),
            target_class=int(obj["c_prime"]),
            edits=tuple((int(q), int(d)) for q, d in obj["edits"]),
            prob_trace=tuple(float(p) for p in obj["prob_trace"]),
            flipped=bool(obj["flipped"]),
            predicted_class_after=int(obj["predicted_class_after"]),
            mode=obj.get("mode", "all"),
        )


def _as_pairs(edits):
    out = []
    for e in edits:
        if isinstance(e, Edit):
            out.append((e.query_cell, e.distractor_cell))
        else:
            q, d = e
            out.append((int(q), int(d)))
    return out


def compose(fI: FeatureMap, fIp: FeatureMap, edits) -> FeatureMap:
    """Query map with each edited cell ``q`` replaced by distractor cell ``d``."""
    if fI.values.shape != fIp.values.shape:
        raise SearchError(f"feature map shapes differ: {fI.values.shape} vs {fIp.values.shape}")
    pairs = _as_pairs(edits)
    hw = fI.hw
    seen = set()
    for q, d in pairs:
        if not (0 <= q < hw and 0 <= d < hw):
            raise SearchError(f"edit ({q}, {d}) out of range for {hw} cells")
        if q in seen:
            raise SearchError(f"duplicate query_cell {q}")
        seen.add(q)
    cells = fI.cells.copy()
    src = fIp.cells
    for q, d in pairs:
        cells[q] = src[d]
    return FeatureMap(cells.reshape(fI.values.shape))


def target_probability(logits, target: int) -> float:
    """softmax(logits)[target] in the same form the candidate kernels use."""
    z = np.asarray(logits, dtype=np.float64)
    with np.errstate(over="ignore"):
        return float(1.0 / np.exp(z - z[target]).sum())


def _check(fI, fIp, head, target):
    if fI.values.shape != fIp.values.shape:
        raise SearchError(f"feature map shapes differ: {fI.values.shape} vs {fIp.values.shape}")
    if fI.d != head.d:
        raise SearchError(f"feature depth {fI.d} does not match head depth {head.d}")
    if head.pooling != "mean":
        raise SearchError(f"incremental scoring requires mean pooling, head uses {head.pooling!r}")
    if not 0 <= target < head.class_count:
        raise SearchError(f"target class {target} out of range")


def cell_contributions(fI: FeatureMap, fIp: FeatureMap, head: ClassifierHead):
    """Per-cell logit contributions ``(B, A)`` = (fI cells @ W.T, fIp cells @ W.T).

    Identical cell vectors map to bit-identical rows, so genuinely tied
    candidates stay tied.
    """
    stacked = np.concatenate([fI.cells, fIp.cells])
    uniq, inverse = np.unique(stacked, axis=0, return_inverse=True)
    table = np.ascontiguousarray((uniq @ head.weight.T)[inverse.reshape(-1)])
    return table[:fI.hw].copy(), table[fI.hw:].copy()


def incremental_scores(fI: FeatureMap, fIp: FeatureMap, head: ClassifierHead, target: int) -> np.ndarray:
    """(hw, hw) matrix: entry (q, d) is P(target) after the single swap q <- d."""
    _check(fI, fIp, head, target)
    B, A = cell_contributions(fI, fIp, head)
    z = classify(head, fI)
    return kernels.target_prob_matrix(B, A, z, int(target), float(fI.hw))


def single_edit(fI: FeatureMap, fIp: FeatureMap, head: ClassifierHead, target: int):
    """Best single swap and the probability of ``target`` it achieves.

    Ties resolve to the smallest query cell, then the smallest distractor cell.
    """
    _check(fI, fIp, head, target)
    B, A = cell_contributions(fI, fIp, head)
    z = classify(head, fI)
    q, d, p = kernels.best_candidate(B, A, z, int(target), float(fI.hw), np.zeros(fI.hw, dtype=np.uint8))
    return Edit(q, d), p


def all_edits(fI: FeatureMap, fIp: FeatureMap, head: ClassifierHead, target: int, max_edits: int | None = None,
              query_id: int = -1, distractor_id: int = -1, source_class: int | None = None) -> ExplainResult:
    """Greedy swaps until the prediction becomes ``target`` or the budget runs out.

    Query cells are edited at most once; distractor cells may be reused. The
    state after every edit is re-evaluated directly from the composed map, so
    the flip decision and the probability trace agree with ``classify``.
    """
    _check(fI, fIp, head, target)
    hw = fI.hw
    if max_edits is None:
        max_edits = hw
    if max_edits < 1:
        raise SearchError("max_edits must be >= 1")
    max_edits = min(max_edits, hw)
    B, A = cell_contributions(fI, fIp, head)
    z = classify(head, fI)
    if source_class is None:
        source_class = int(np.argmax(z))
    edits = []
    trace = [target_probability(z, target)]
    edited = np.zeros(hw, dtype=np.uint8)
    while int(np.argmax(z)) != target and len(edits) < max_edits:
        q, d, _ = kernels.best_candidate(B, A, z, int(target), float(hw), edited)
        edits.append((q, d))
        edited[q] = 1
        z = classify(head, compose(fI, fIp, edits))
        trace.append(target_probability(z, target))
    pred = int(np.argmax(z))
    return ExplainResult(query_id, distractor_id, int(source_class), int(target), tuple(edits), tuple(trace),
                         pred == target, pred, "all")


def single_result(fI: FeatureMap, fIp: FeatureMap, head: ClassifierHead, target: int,
                  query_id: int = -1, distractor_id: int = -1, source_class: int | None = None) -> ExplainResult:
    """One solve of the swap objective packaged as an ExplainResult."""
    z0 = classify(head, fI)
    edit, _ = single_edit(fI, fIp, head, target)
    z1 = classify(head, compose(fI, fIp, [edit]))
    pred = int(np.argmax(z1))
    if source_class is None:
        source_class = int(np.argmax(z0))
    return ExplainResult(query_id, distractor_id, int(source_class), int(target),
                         ((edit.query_cell, edit.distractor_cell),),
                         (target_probability(z0, target), target_probability(z1, target)),
                         pred == target, pred, "single")


# --------------------------------------------------------------------------
# pairing


@dataclass(frozen=True)
class PairingPolicy:
    seed: int = 0
    require_correct: bool = True


@dataclass
class Sample:
    id: int
    label: int
    features: FeatureMap
    predicted: int = field(default=-1)


def featurize(model: Model, items, batch_size: int = 32):
    """``[(id, spectrogram_values, label), ...]`` -> list of Sample with predictions."""
    items = list(items)
    head = model.head
    out = []
    for start in range(0, len(items), batch_size):
        chunk = items[start:start + batch_size]
        x = np.stack([np.asarray(getattr(v, "values", v), dtype=np.float32) for _, v, _ in chunk])
        feats = model.features(x, train=False)
        for (sid, _, label), f in zip(chunk, feats):
            fm = FeatureMap(f)
            out.append(Sample(int(sid), int(label), fm, int(np.argmax(classify(head, fm)))))
    return out


def draw_pairs(queries, distractors, pairing: PairingPolicy):
    """Seeded query -> distractor assignment; returns (pairs, skipped reasons)."""
    rng = np.random.default_rng(pairing.seed)
    pairs, skipped = [], []
    for qs in queries:
        if pairing.require_correct and qs.predicted != qs.label:
            skipped.append((qs.id, "query misclassified"))
            continue
        pool = [ds for ds in distractors
                if ds.label != qs.label and (not pairing.require_correct or ds.predicted == ds.label)]
        if not pool:
            skipped.append((qs.id, "no eligible distractor"))
            log.info("skipping query %d: no eligible distractor", qs.id)
            continue
        pairs.append((qs, pool[int(rng.integers(len(pool)))]))
    return pairs, skipped


def explain_pairs(model: Model, queries, distractors, pairing: PairingPolicy = PairingPolicy(), mode: str = "all",
                  max_edits: int | None = None, head: ClassifierHead | None = None, workers: int = 1):
    """Explain every eligible query against a seeded random distractor.

    ``queries`` and ``distractors`` are ``(id, spectrogram, label)`` triples or
    already-featurized ``Sample`` objects. Results keep query order for any
    worker count.
    """
    if mode not in MODES:
        raise SearchError(f"unknown mode {mode!r}")
    head = model.head if head is None else head
    if queries and not isinstance(queries[0], Sample):
        queries = featurize(model, queries)
    if distractors and not isinstance(distractors[0], Sample):
        distractors = featurize(model, distractors)
    pairs, _ = draw_pairs(queries, distractors, pairing)

    def run(pair):
        qs, ds = pair
        if mode == "single":
            return single_result(qs.features, ds.features, head, ds.label, qs.id, ds.id, qs.label)
        return all_edits(qs.features, ds.features, head, ds.label, max_edits, qs.id, ds.id, qs.label)

    if workers > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run, pairs))
    return [run(p) for p in pairs]
