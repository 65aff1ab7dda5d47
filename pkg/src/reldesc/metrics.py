"""Micro-averaged precision/recall/F1 over non-NULL predicates."""

from dataclasses import dataclass, field

import numpy as np


def prf(tp, fp, fn):
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def confusion_matrix(gold, pred, n_classes):
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(gold, dtype=np.int64), np.asarray(pred, dtype=np.int64)), 1)
    return cm


def counts_from_confusion(cm, null_index=0):
    """Per-class (TP, FP, FN) with rows = gold, columns = predicted.

    A wrong non-NULL prediction is an FP for the predicted class and an FN
    for the gold class. The NULL class itself is never scored.
    """
    diag = np.diag(cm)
    tp = diag.copy()
    fp = cm.sum(axis=0) - diag
    fn = cm.sum(axis=1) - diag
    tp[null_index] = fp[null_index] = fn[null_index] = 0
    return tp, fp, fn


@dataclass
class EvalReport:
    micro_precision: float
    micro_recall: float
    micro_f1: float
    predicates: list
    per_predicate: dict
    confusion: list
    n_pairs: int
    n_gold: int = field(default=0)

    @classmethod
    def from_predictions(cls, gold, pred, predicates, null_index=0):
        cm = confusion_matrix(gold, pred, len(predicates))
        tp, fp, fn = counts_from_confusion(cm, null_index)
        p, r, f = prf(int(tp.sum()), int(fp.sum()), int(fn.sum()))
        per = {
            name: {"tp": int(tp[k]), "fp": int(fp[k]), "fn": int(fn[k])}
            for k, name in enumerate(predicates)
            if k != null_index
        }
        n_gold = int(np.sum(np.asarray(gold) != null_index))
        return cls(p, r, f, list(predicates), per, cm.tolist(), int(len(gold)), n_gold)

    @property
    def tp(self):
        return sum(c["tp"] for c in self.per_predicate.values())

    @property
    def fp(self):
        return sum(c["fp"] for c in self.per_predicate.values())

    @property
    def fn(self):
        return sum(c["fn"] for c in self.per_predicate.values())

    def to_dict(self):
        return {
            "micro_precision": self.micro_precision,
            "micro_recall": self.micro_recall,
            "micro_f1": self.micro_f1,
            "n_pairs": self.n_pairs,
            "n_gold": self.n_gold,
            "predicates": self.predicates,
            "per_predicate": self.per_predicate,
            "confusion": self.confusion,
        }

    def to_text(self):
        width = max(len(p) for p in self.predicates)
        lines = [f"{'predicate':<{width}}  {'TP':>5} {'FP':>5} {'FN':>5}   P      R      F1"]
        for name, c in self.per_predicate.items():
            p, r, f = prf(c["tp"], c["fp"], c["fn"])
            lines.append(f"{name:<{width}}  {c['tp']:>5} {c['fp']:>5} {c['fn']:>5}   "
                         f"{p:.4f} {r:.4f} {f:.4f}")
        lines.append(f"{'micro':<{width}}  {self.tp:>5} {self.fp:>5} {self.fn:>5}   "
                     f"{self.micro_precision:.4f} {self.micro_recall:.4f} {self.micro_f1:.4f}")
        return "\n".join(lines) + "\n"
