"""Inference and scoring: greedy / beam decoding, WER, WERR, ablations."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError
from .model import BOS_ID, EOS_ID, PAD_ID

_BLOCKED_IDS = (PAD_ID, BOS_ID)  # never emitted as hypothesis tokens


@dataclass
class Hypothesis:
    ids: tuple = ()            # emitted model-vocabulary ids, EOS excluded
    log_prob: float = 0.0
    finished: bool = False

    def extend(self, token: int, lp: float) -> "Hypothesis":
        if token == EOS_ID:
            return Hypothesis(self.ids, self.log_prob + lp, True)
        return Hypothesis(self.ids + (token,), self.log_prob + lp, False)

    def score(self, length_norm: bool) -> float:
        if length_norm:
            return self.log_prob / max(len(self.ids) + 1, 1)
        return self.log_prob


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    return shifted - np.log(np.exp(shifted).sum())


def greedy_decode(model, channel_features, max_len: int, key_keep=None) -> list[int]:
    """Feed the argmax token back until EOS or ``max_len`` emitted tokens."""
    if max_len < 1:
        raise InputError("max_len must be >= 1")
    enc = model.encode_features(channel_features, key_keep=key_keep)
    prefix = [BOS_ID]
    out: list[int] = []
    for _ in range(max_len):
        logits = np.array(model.decode_step(prefix, enc, key_keep=key_keep), copy=True)
        logits[list(_BLOCKED_IDS)] = -np.inf
        token = int(np.argmax(logits))
        if token == EOS_ID:
            break
        out.append(token)
        prefix.append(token)
    return out


def beam_decode(
    model,
    channel_features,
    beam_size: int,
    max_len: int,
    length_norm: bool = True,
    key_keep=None,
) -> list[int]:
    """Beam search over token log-probabilities.

    Ties break toward the lower token-id sequence, then the shorter
    hypothesis. Finished hypotheses are kept aside and never pruned.
    """
    if beam_size < 1:
        raise InputError("beam_size must be >= 1")
    if max_len < 1:
        raise InputError("max_len must be >= 1")
    enc = model.encode_features(channel_features, key_keep=key_keep)

    def sort_key(h: Hypothesis):
        return (-h.score(length_norm), h.ids, len(h.ids))

    live = [Hypothesis()]
    finished: list[Hypothesis] = []
    for _ in range(max_len):
        candidates: list[Hypothesis] = []
        for hyp in live:
            logits = model.decode_step([BOS_ID, *hyp.ids], enc, key_keep=key_keep)
            logp = _log_softmax(np.asarray(logits, dtype=np.float64))
            for token in range(logp.shape[0]):
                if token in _BLOCKED_IDS:
                    continue
                candidates.append(hyp.extend(token, float(logp[token])))
        candidates.sort(key=sort_key)
        live = []
        for hyp in candidates[: 4 * beam_size]:
            if hyp.finished:
                finished.append(hyp)
            elif len(live) < beam_size:
                live.append(hyp)
        if not live:
            break
    pool = finished + live
    pool.sort(key=sort_key)
    return list(pool[0].ids)


# ---------------------------------------------------------------------------
# scoring


def wer(ref, hyp) -> tuple[int, int, int, float]:
    """Levenshtein alignment with unit costs.

    Returns ``(substitutions, deletions, insertions, wer)`` with
    ``wer = (S + D + I) / len(ref)``.
    """
    ref = list(ref)
    hyp = list(hyp)
    if not ref:
        raise InputError("wer: reference is empty")
    n, m = len(ref), len(hyp)
    dist = np.zeros((n + 1, m + 1), dtype=np.int64)
    dist[:, 0] = np.arange(n + 1)
    dist[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = dist[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            dist[i, j] = min(sub, dist[i - 1, j] + 1, dist[i, j - 1] + 1)
    # backtrack for the S/D/I split
    s = d = ins = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dist[i, j] == dist[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            s += ref[i - 1] != hyp[j - 1]
            i -= 1
            j -= 1
        elif i > 0 and dist[i, j] == dist[i - 1, j] + 1:
            d += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return s, d, ins, (s + d + ins) / n


def werr(wer_a: float, wer_b: float) -> float:
    """Relative WER reduction of system A over baseline B: (B - A) / B."""
    if wer_b <= 0:
        raise InputError("werr: baseline WER must be positive")
    return (wer_b - wer_a) / wer_b


@dataclass
class EvalReport:
    per_utterance: list = field(default_factory=list)
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    reference_tokens: int = 0

    @property
    def corpus_wer(self) -> float:
        return (self.substitutions + self.deletions + self.insertions) / max(
            self.reference_tokens, 1
        )

    def add(self, utterance_id, ref, hyp) -> None:
        s, d, i, u_wer = wer(ref, hyp)
        self.per_utterance.append(
            {
                "utterance_id": utterance_id,
                "reference": list(ref),
                "hypothesis": list(hyp),
                "substitutions": s,
                "deletions": d,
                "insertions": i,
                "wer": u_wer,
            }
        )
        self.substitutions += s
        self.deletions += d
        self.insertions += i
        self.reference_tokens += len(ref)

    def to_dict(self, baseline_wer: float | None = None) -> dict:
        out = {
            "corpus_wer": self.corpus_wer,
            "substitutions": self.substitutions,
            "deletions": self.deletions,
            "insertions": self.insertions,
            "reference_tokens": self.reference_tokens,
            "per_utterance": self.per_utterance,
        }
        if baseline_wer is not None:
            out["werr_vs_baseline"] = werr(self.corpus_wer, baseline_wer)
        return out

    def save(self, path, baseline_wer: float | None = None) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(baseline_wer), f, indent=2)


def evaluate_dataset(
    model,
    entries,
    data_dir,
    beam_size: int = 1,
    length_norm: bool = True,
    max_len: int | None = None,
    cache: dict | None = None,
) -> EvalReport:
    """Decode every manifest entry and aggregate edit counts."""
    from .training import load_utterance, model_to_data_ids

    report = EvalReport()
    for entry in entries:
        channels = load_utterance(data_dir, entry, cache)
        feats = [(ch.mag, ch.pha) for ch in channels[: model.cfg.num_channels]]
        cap = max_len if max_len is not None else len(entry["transcript"]) + 5
        if beam_size == 1:
            hyp_ids = greedy_decode(model, feats, max_len=cap)
        else:
            hyp_ids = beam_decode(
                model, feats, beam_size=beam_size, max_len=cap, length_norm=length_norm
            )
        report.add(entry["utterance_id"], entry["transcript"], model_to_data_ids(hyp_ids))
    return report


# ---------------------------------------------------------------------------
# ablation driver (Table-2-style)

ABLATION_VARIANTS = {
    "full": {},
    "csa_only": {"use_cca": False},
    "cca_only": {"use_csa": False},
}


def run_ablation(data_dir, base_cfg, run_cfg, seeds, out_dir) -> dict:
    """Train and score the full model and its single-attention variants.

    For every seed, trains ``full``, ``csa_only`` (CCA disabled) and
    ``cca_only`` (CSA disabled) identically and reports test WER plus WERR of
    each variant against the full model (worse variants come out negative).
    Writes ``ablation.csv`` under ``out_dir``.
    """
    from dataclasses import replace

    from .frontend import read_manifest
    from .model import MultiChannelTransformer, ParameterStore
    from .training import train_loop

    data_dir = Path(data_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    test_entries = read_manifest(data_dir / "test.jsonl")

    wers: dict[str, dict[int, float]] = {name: {} for name in ABLATION_VARIANTS}
    cache: dict = {}
    for seed in seeds:
        for name, overrides in ABLATION_VARIANTS.items():
            cfg = base_cfg.with_overrides(**overrides)
            run = replace(run_cfg, seed=int(seed))
            run_out = out_dir / f"{name}_seed{seed}"
            summary = train_loop(cfg, run, data_dir, run_out)
            store = ParameterStore.load(summary["best_checkpoint"])
            model = MultiChannelTransformer(store.cfg, store)
            report = evaluate_dataset(model, test_entries, data_dir, cache=cache)
            wers[name][int(seed)] = report.corpus_wer

    rows = []
    for name in ABLATION_VARIANTS:
        for seed in seeds:
            rows.append(
                {
                    "variant": name,
                    "seed": int(seed),
                    "wer": wers[name][int(seed)],
                    "werr_vs_full": werr(wers[name][int(seed)], wers["full"][int(seed)])
                    if wers["full"][int(seed)] > 0
                    else 0.0,
                }
            )
    csv_path = out_dir / "ablation.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=["variant", "seed", "wer", "werr_vs_full"])
        writer.writeheader()
        writer.writerows(rows)

    mean_wer = {name: float(np.mean(list(w.values()))) for name, w in wers.items()}
    summary = {
        "rows": rows,
        "mean_wer": mean_wer,
        "mean_werr_vs_full": {
            name: (werr(mean_wer[name], mean_wer["full"]) if mean_wer["full"] > 0 else 0.0)
            for name in ABLATION_VARIANTS
        },
        "csv_path": str(csv_path),
    }
    with open(out_dir / "ablation.json", "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2)
    return summary
