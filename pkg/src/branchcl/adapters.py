"""Low-rank adapter layers over a frozen linear backbone.

Three kinds are implemented on the same contract h = x W_f + (alpha/r) * delta:

* LoRALayer: a single rank-r pair (A, B), delta = x A B.
* MoELoRALayer: N experts (A_j, B_j) of rank r/N, densely mixed by a
  softmax router read off the first row of x.
* BranchLoRALayer: one shared A of rank r/N, N branch matrices B_j, and
  one router per task; the router's scores pass through a top-k mask so
  the gate has exactly k nonzero entries. Branches can be frozen in place
  (trainable flag off) and remain routable.

A and the per-expert A_j are initialized from a zero-mean Gaussian with
std 1/sqrt(d_in); B matrices and routers start at zero, so a fresh
adapter layer computes exactly the backbone output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError, RoutingError
from .tensor import Matrix, add, matmul, mix, row_softmax, scale, take_row, topk_mask


@dataclass(frozen=True)
class AdapterHyperparams:
    """Adapter knobs: total rank, scaling, expert count, gate width, key weight."""

    rank: int = 128
    alpha: float = 256.0
    experts: int = 8
    top_k: int = 2
    align_weight: float = 1.0

    def __post_init__(self):
        if self.rank < 1:
            raise ParameterError(f"rank must be >= 1, got {self.rank}")
        if self.experts < 1:
            raise ParameterError(f"experts must be >= 1, got {self.experts}")
        if self.rank % self.experts != 0:
            raise ParameterError(
                f"rank {self.rank} must divide evenly among {self.experts} experts"
            )
        if not 1 <= self.top_k <= self.experts:
            raise ParameterError(
                f"top_k {self.top_k} out of range for {self.experts} experts"
            )
        if self.alpha <= 0:
            raise ParameterError(f"alpha must be positive, got {self.alpha}")
        if self.align_weight < 0:
            raise ParameterError(f"align_weight must be >= 0, got {self.align_weight}")

    @property
    def per_expert_rank(self) -> int:
        return self.rank // self.experts

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank


class FrozenBackbone:
    """The pretrained weight W_f. Never trainable."""

    def __init__(self, weight: Matrix):
        weight.trainable = False
        self.weight = weight

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, d_out: int) -> "FrozenBackbone":
        w = Matrix.randn(rng, d_in, d_out, std=1.0 / np.sqrt(d_in), name="backbone")
        return cls(w)

    def forward(self, x: Matrix) -> Matrix:
        return matmul(x, self.weight)


def _init_a(rng: np.random.Generator, d_in: int, r: int, name: str) -> Matrix:
    return Matrix.randn(rng, d_in, r, std=1.0 / np.sqrt(d_in), trainable=True, name=name)


class LoRALayer:
    def __init__(self, backbone: FrozenBackbone, hp: AdapterHyperparams, a: Matrix, b: Matrix):
        self.backbone = backbone
        self.hp = hp
        self.a = a
        self.b = b

    @classmethod
    def init(
        cls,
        rng: np.random.Generator,
        d_in: int,
        d_out: int,
        hp: AdapterHyperparams,
        backbone: FrozenBackbone | None = None,
    ) -> "LoRALayer":
        if backbone is None:
            backbone = FrozenBackbone.init(rng, d_in, d_out)
        a = _init_a(rng, d_in, hp.rank, "lora.A")
        b = Matrix.zeros(hp.rank, d_out, trainable=True, name="lora.B")
        return cls(backbone, hp, a, b)

    def forward(self, x: Matrix) -> Matrix:
        delta = matmul(matmul(x, self.a), self.b)
        return add(self.backbone.forward(x), scale(delta, self.hp.scaling))

    def trainable_params(self) -> list[Matrix]:
        return [self.a, self.b]

    def count_trainable_params(self) -> int:
        return sum(p.data.size for p in self.trainable_params() if p.trainable)


class MoELoRALayer:
    """N rank-r/N experts mixed by a dense softmax gate from x's first row."""

    def __init__(
        self,
        backbone: FrozenBackbone,
        hp: AdapterHyperparams,
        experts: list[tuple[Matrix, Matrix]],
        router: Matrix,
    ):
        self.backbone = backbone
        self.hp = hp
        self.experts = experts
        self.router = router

    @classmethod
    def init(
        cls,
        rng: np.random.Generator,
        d_in: int,
        d_out: int,
        hp: AdapterHyperparams,
        backbone: FrozenBackbone | None = None,
    ) -> "MoELoRALayer":
        if backbone is None:
            backbone = FrozenBackbone.init(rng, d_in, d_out)
        pr = hp.per_expert_rank
        experts = []
        for j in range(hp.experts):
            a = _init_a(rng, d_in, pr, f"moe.expert{j}.A")
            b = Matrix.zeros(pr, d_out, trainable=True, name=f"moe.expert{j}.B")
            experts.append((a, b))
        router = Matrix.zeros(d_in, hp.experts, trainable=True, name="moe.router")
        return cls(backbone, hp, experts, router)

    def forward(self, x: Matrix) -> tuple[Matrix, Matrix]:
        gate = row_softmax(matmul(take_row(x, 0), self.router))
        parts = [matmul(matmul(x, a), b) for a, b in self.experts]
        delta = mix(gate, parts)
        h = add(self.backbone.forward(x), scale(delta, self.hp.scaling))
        return h, gate

    def trainable_params(self) -> list[Matrix]:
        out = []
        for a, b in self.experts:
            out.extend([a, b])
        out.append(self.router)
        return out

    def count_trainable_params(self) -> int:
        return sum(p.data.size for p in self.trainable_params() if p.trainable)


class BranchLoRALayer:
    """Shared A, N branch B matrices, a sparse gate, and one router per task."""

    def __init__(
        self,
        backbone: FrozenBackbone,
        hp: AdapterHyperparams,
        a_shared: Matrix,
        branches: list[Matrix],
        d_in: int,
    ):
        self.backbone = backbone
        self.hp = hp
        self.a_shared = a_shared
        self.branches = branches
        self.frozen = [False] * hp.experts
        self.routers: dict[int, Matrix] = {}
        self.d_in = d_in

    @classmethod
    def init(
        cls,
        rng: np.random.Generator,
        d_in: int,
        d_out: int,
        hp: AdapterHyperparams,
        backbone: FrozenBackbone | None = None,
    ) -> "BranchLoRALayer":
        if backbone is None:
            backbone = FrozenBackbone.init(rng, d_in, d_out)
        pr = hp.per_expert_rank
        a_shared = _init_a(rng, d_in, pr, "branch.A")
        branches = [
            Matrix.zeros(pr, d_out, trainable=True, name=f"branch.B{j}")
            for j in range(hp.experts)
        ]
        return cls(backbone, hp, a_shared, branches, d_in)

    def add_router(self, task_id: int, rng: np.random.Generator | None = None) -> Matrix:
        """Register the router for a new task.

        With an rng, the router starts at a tiny Gaussian: the gate is still
        near-uniform but scores differ per input, so different samples pick
        different branch subsets and the branches can specialize. Without an
        rng the router is exactly zero and the tie-break pins selection to
        the first top_k branches, which keeps clone branches clones; that is
        only useful for handmade tests.
        """
        if task_id in self.routers:
            raise RoutingError(f"router for task {task_id} already registered")
        name = f"branch.router.task{task_id}"
        if rng is None:
            router = Matrix.zeros(self.d_in, self.hp.experts, trainable=True, name=name)
        else:
            std = 1e-2 / np.sqrt(self.d_in)
            router = Matrix.randn(
                rng, self.d_in, self.hp.experts, std=std, trainable=True, name=name
            )
        self.routers[task_id] = router
        return router

    def gate_for(self, x: Matrix, task_id: int) -> Matrix:
        router = self.routers.get(task_id)
        if router is None:
            raise RoutingError(f"no router registered for task {task_id}")
        scores = matmul(take_row(x, 0), router)
        return row_softmax(topk_mask(scores, self.hp.top_k))

    def forward(self, x: Matrix, task_id: int) -> tuple[Matrix, Matrix]:
        gate = self.gate_for(x, task_id)
        shared = matmul(x, self.a_shared)
        # Only the k selected branches execute; the masked ones carry an
        # exact 0.0 gate weight, so skipping them changes no value and no
        # gradient (a skipped branch matrix simply never joins the tape).
        selected = [int(j) for j in np.nonzero(gate.data[0] != 0.0)[0]]
        parts = [matmul(shared, self.branches[j]) for j in selected]
        delta = mix(gate, parts, cols=selected)
        h = add(self.backbone.forward(x), scale(delta, self.hp.scaling))
        return h, gate

    def trainable_params(self, task_id: int) -> list[Matrix]:
        """Parameters that receive gradients while training task_id."""
        router = self.routers.get(task_id)
        if router is None:
            raise RoutingError(f"no router registered for task {task_id}")
        out = [self.a_shared]
        out.extend(b for j, b in enumerate(self.branches) if not self.frozen[j])
        out.append(router)
        return out

    def count_trainable_params(self, task_id: int) -> int:
        return sum(p.data.size for p in self.trainable_params(task_id) if p.trainable)


def init_adapter(
    kind: str, d_in: int, d_out: int, hp: AdapterHyperparams, seed: int | np.random.Generator
):
    """Build one adapter layer of the given kind from a seed or generator."""
    if d_in < 1 or d_out < 1:
        raise DimensionError(f"adapter dims must be positive, got {d_in}x{d_out}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if kind == "lora":
        return LoRALayer.init(rng, d_in, d_out, hp)
    if kind == "moelora":
        return MoELoRALayer.init(rng, d_in, d_out, hp)
    if kind == "branchlora":
        return BranchLoRALayer.init(rng, d_in, d_out, hp)
    raise ParameterError(f"unknown adapter kind: {kind!r}")
