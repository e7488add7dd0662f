"""Synthetic behavior-sequence data from a latent-factor model.

Each user draws a stream of items from ``softmax(user . item / temperature)``.
Event ``j`` of a user uses the ``seq_len`` items preceding it as the behavior
sequence, the next item as the positive, and ``m - 1`` uniformly drawn items
as negatives.

JSON-lines layout: the first line is ``{"header": {...}}`` holding the dataset
dimensions; every following line is one event::

    {"user": 3, "sequence": [...], "candidates": [...], "positive": 7, "split": "train"}
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .exceptions import ConfigError, DomainError

FORMAT = "recaccel-dataset/1"


@dataclass
class Dataset:
    n_users: int
    n_items: int
    users: np.ndarray
    seq: np.ndarray
    cands: np.ndarray
    pos: np.ndarray
    is_train: np.ndarray
    user_factors: Optional[np.ndarray] = field(default=None, repr=False)
    item_factors: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        n = len(self.pos)
        if not (len(self.users) == len(self.seq) == len(self.cands) == len(self.is_train) == n):
            raise DomainError("event arrays have inconsistent lengths")
        if n and (self.pos.min() < 0 or self.pos.max() >= self.cands.shape[1]):
            raise DomainError("positive index out of candidate range")
        if n and (self.cands.min() < 0 or self.cands.max() >= self.n_items
                  or self.seq.min() < 0 or self.seq.max() >= self.n_items):
            raise DomainError("item id out of range")

    def __len__(self):
        return len(self.pos)

    @property
    def m(self) -> int:
        return self.cands.shape[1]

    @property
    def seq_len(self) -> int:
        return self.seq.shape[1]

    def subset(self, rows) -> "Dataset":
        return Dataset(self.n_users, self.n_items, self.users[rows], self.seq[rows],
                       self.cands[rows], self.pos[rows], self.is_train[rows],
                       self.user_factors, self.item_factors)

    def train(self) -> "Dataset":
        return self.subset(self.is_train)

    def test(self) -> "Dataset":
        return self.subset(~self.is_train)

    @property
    def X(self) -> np.ndarray:
        """Events as one int row each: ``[sequence..., candidates...]``."""
        return np.hstack([self.seq, self.cands])

    @property
    def y(self) -> np.ndarray:
        return self.pos

    def oracle_scores(self) -> np.ndarray:
        """True latent affinities of every candidate, ``(n_events, m)``."""
        if self.user_factors is None or self.item_factors is None:
            raise DomainError("dataset carries no latent factors")
        U = self.user_factors[self.users]
        return np.einsum("nd,nmd->nm", U, self.item_factors[self.cands])

    def to_jsonl(self, path) -> None:
        header = {"format": FORMAT, "n_users": self.n_users, "n_items": self.n_items,
                  "seq_len": self.seq_len, "m": self.m}
        with open(path, "w") as fh:
            fh.write(json.dumps({"header": header}) + "\n")
            for i in range(len(self)):
                fh.write(json.dumps({
                    "user": int(self.users[i]),
                    "sequence": self.seq[i].tolist(),
                    "candidates": self.cands[i].tolist(),
                    "positive": int(self.pos[i]),
                    "split": "train" if self.is_train[i] else "test",
                }) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "Dataset":
        lines = Path(path).read_text().splitlines()
        if not lines:
            raise DomainError(f"{path} is empty")
        header = json.loads(lines[0]).get("header")
        if not header or header.get("format") != FORMAT:
            raise DomainError(f"{path} is not a {FORMAT} file")
        events = [json.loads(line) for line in lines[1:] if line.strip()]
        S, m = header["seq_len"], header["m"]
        return cls(
            n_users=header["n_users"], n_items=header["n_items"],
            users=np.array([e["user"] for e in events], dtype=np.int64),
            seq=np.array([e["sequence"] for e in events], dtype=np.int64).reshape(-1, S),
            cands=np.array([e["candidates"] for e in events], dtype=np.int64).reshape(-1, m),
            pos=np.array([e["positive"] for e in events], dtype=np.int64),
            is_train=np.array([e["split"] == "train" for e in events], dtype=bool),
        )


def generate_synthetic(users: int = 200, items: int = 1000, d_latent: int = 8,
                       events_per_user: int = 10, m: int = 50, seq_len: int = 20,
                       seed: int = 0, temperature: float = 0.25,
                       train_fraction: float = 0.8) -> Dataset:
    if m < 2 or items < m:
        raise ConfigError("need m >= 2 and items >= m")
    if min(users, d_latent, events_per_user, seq_len) < 1 or temperature <= 0:
        raise ConfigError("users, d_latent, events_per_user, seq_len and temperature must be positive")
    rng = np.random.default_rng(seed)
    P = rng.standard_normal((users, d_latent)) / d_latent ** 0.25
    Q = rng.standard_normal((items, d_latent)) / d_latent ** 0.25
    logits = (P @ Q.T) / temperature
    logits -= logits.max(axis=1, keepdims=True)
    probs = np.exp(logits)
    probs /= probs.sum(axis=1, keepdims=True)

    n = users * events_per_user
    user_ids = np.repeat(np.arange(users), events_per_user)
    seq = np.empty((n, seq_len), dtype=np.int64)
    cands = np.empty((n, m), dtype=np.int64)
    pos = np.empty(n, dtype=np.int64)
    row = 0
    for u in range(users):
        stream = rng.choice(items, size=seq_len + events_per_user, p=probs[u])
        for j in range(events_per_user):
            positive = stream[seq_len + j]
            negatives = rng.choice(items - 1, size=m - 1, replace=False)
            negatives[negatives >= positive] += 1
            slot = rng.integers(m)
            cand = np.insert(negatives, slot, positive)
            seq[row] = stream[j:j + seq_len]
            cands[row] = cand
            pos[row] = slot
            row += 1
    is_train = np.zeros(n, dtype=bool)
    is_train[rng.permutation(n)[: int(round(train_fraction * n))]] = True
    return Dataset(users, items, user_ids, seq, cands, pos, is_train, P, Q)
