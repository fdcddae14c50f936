"""Task keys and key-based automatic task selection.

Each task owns a pair of trainable key vectors, one per embedding view.
At desk scale the two views of a sample are simply the two halves of its
input vector. Training pulls each key toward its task's embeddings via a
cosine alignment loss; at inference the task whose keys are most similar
to a sample's views wins.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, SelectorError
from .tensor import Matrix, add, cosine_similarity, scale


@dataclass
class SampleEmbeddings:
    """The two fixed views of one sample, held as constant matrices."""

    img: Matrix
    txt: Matrix

    @classmethod
    def from_input(cls, x: np.ndarray) -> "SampleEmbeddings":
        v = np.asarray(x, dtype=np.float64).ravel()
        if v.size % 2 != 0:
            raise DimensionError(f"input length {v.size} is odd, cannot split into two views")
        half = v.size // 2
        return cls(img=Matrix(v[None, :half]), txt=Matrix(v[None, half:]))


class TaskKeys:
    """One trainable key pair for one task."""

    def __init__(self, task_id: int, k_img: Matrix, k_txt: Matrix):
        self.task_id = task_id
        self.k_img = k_img
        self.k_txt = k_txt

    @classmethod
    def init(cls, task_id: int, dim: int, rng: np.random.Generator) -> "TaskKeys":
        # zero init would make the cosine undefined, so start from a tiny
        # perturbation; the alignment loss only cares about direction.
        std = 1e-2 / np.sqrt(dim)
        k_img = Matrix.randn(rng, 1, dim, std=std, trainable=True, name=f"key.task{task_id}.img")
        k_txt = Matrix.randn(rng, 1, dim, std=std, trainable=True, name=f"key.task{task_id}.txt")
        return cls(task_id, k_img, k_txt)

    def freeze(self) -> None:
        self.k_img.trainable = False
        self.k_txt.trainable = False

    def params(self) -> list[Matrix]:
        return [self.k_img, self.k_txt]


class KeyStore:
    """Keys of all tasks seen so far, in task order."""

    def __init__(self):
        self._keys: dict[int, TaskKeys] = {}

    def add(self, task_id: int, dim: int, rng: np.random.Generator) -> TaskKeys:
        if task_id in self._keys:
            raise SelectorError(f"keys for task {task_id} already registered")
        keys = TaskKeys.init(task_id, dim, rng)
        self._keys[task_id] = keys
        return keys

    def get(self, task_id: int) -> TaskKeys:
        keys = self._keys.get(task_id)
        if keys is None:
            raise SelectorError(f"no keys registered for task {task_id}")
        return keys

    def ordered(self) -> list[TaskKeys]:
        return [self._keys[t] for t in sorted(self._keys)]

    def __len__(self) -> int:
        return len(self._keys)

    def __contains__(self, task_id: int) -> bool:
        return task_id in self._keys


def alignment_loss(batch: list[SampleEmbeddings], keys: TaskKeys) -> Matrix:
    """sum_j (1 - cos(e_img_j, k_img)) + sum_j (1 - cos(e_txt_j, k_txt)).

    Computed as 2*B minus the summed cosines, which is the same quantity
    with fewer tape entries. Scalar-shaped output; gradients reach the keys.
    """
    if not batch:
        raise SelectorError("alignment_loss needs a non-empty batch")
    cos_sum = None
    for e in batch:
        s = add(cosine_similarity(e.img, keys.k_img), cosine_similarity(e.txt, keys.k_txt))
        cos_sum = s if cos_sum is None else add(cos_sum, s)
    count = Matrix([[2.0 * len(batch)]])
    return add(count, scale(cos_sum, -1.0))


def total_loss(task_loss: Matrix, align: Matrix, weight: float) -> Matrix:
    """task loss + weight * alignment loss; weight 0 leaves it untouched."""
    return add(task_loss, scale(align, weight))


def _view_scores(embeds: SampleEmbeddings, keys: list[TaskKeys]) -> np.ndarray:
    ei = embeds.img.data.ravel()
    et = embeds.txt.data.ravel()
    ni = np.linalg.norm(ei)
    nt = np.linalg.norm(et)
    if ni == 0.0 or nt == 0.0:
        raise SelectorError("sample embedding has zero norm")
    scores = np.empty(len(keys))
    for idx, k in enumerate(keys):
        ki = k.k_img.data.ravel()
        kt = k.k_txt.data.ravel()
        nki = np.linalg.norm(ki)
        nkt = np.linalg.norm(kt)
        if nki == 0.0 or nkt == 0.0:
            raise SelectorError(f"keys for task {k.task_id} have zero norm")
        scores[idx] = ei @ ki / (ni * nki) + et @ kt / (nt * nkt)
    return scores


def select_task(embeds: SampleEmbeddings, store: KeyStore) -> int:
    """Return the task id whose keys best match the sample's two views.

    Ties break toward the lowest task index.
    """
    keys = store.ordered()
    if not keys:
        raise SelectorError("no task keys registered")
    scores = _view_scores(embeds, keys)
    return keys[int(np.argmax(scores))].task_id


def selector_accuracy(samples: list[tuple[SampleEmbeddings, int]], store: KeyStore) -> float:
    """Fraction of (sample, true task id) pairs routed to the right task."""
    if not samples:
        raise SelectorError("selector_accuracy needs at least one sample")
    hits = sum(1 for e, tid in samples if select_task(e, store) == tid)
    return hits / len(samples)
