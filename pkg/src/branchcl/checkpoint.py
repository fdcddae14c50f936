"""Model checkpoints: a JSON manifest plus one flat binary file per matrix.

Arrays are written row-major as little-endian 64-bit floats with no
header; the manifest records shape, trainability, and everything needed
to rebuild the model object (kind, dims, hyperparams, freeze masks,
router and key task ids).
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

from .adapters import (
    AdapterHyperparams,
    BranchLoRALayer,
    FrozenBackbone,
    LoRALayer,
    MoELoRALayer,
)
from .errors import ContractError
from .model import ContinualModel, ModelConfig
from .selector import TaskKeys
from .tensor import Matrix

FORMAT = "branchcl-checkpoint-v1"


def _tensor_filename(name: str) -> str:
    return name.replace("/", "_") + ".f64"


def save_model(directory: str | Path, model: ContinualModel) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tensors = {}
    for name, m in model.all_named_matrices():
        fname = _tensor_filename(name)
        (directory / fname).write_bytes(np.ascontiguousarray(m.data, dtype="<f8").tobytes())
        tensors[name] = {
            "file": fname,
            "rows": int(m.rows),
            "cols": int(m.cols),
            "trainable": bool(m.trainable),
        }
    manifest = {
        "format": FORMAT,
        "kind": model.kind,
        "seed": model.seed,
        "model": dataclasses.asdict(model.cfg),
        "hyperparams": dataclasses.asdict(model.hp),
        "freeze_masks": [
            list(layer.frozen) for layer in model.layers
        ]
        if model.kind == "branchlora"
        else [],
        "router_tasks": sorted(model.layers[0].routers) if model.kind == "branchlora" else [],
        "key_tasks": [k.task_id for k in model.keys.ordered()],
        "tensors": tensors,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return directory


def _read_tensor(directory: Path, spec: dict, name: str) -> Matrix:
    raw = (directory / spec["file"]).read_bytes()
    arr = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    expected = spec["rows"] * spec["cols"]
    if arr.size != expected:
        raise ContractError(
            f"tensor {name}: file holds {arr.size} values, manifest says {expected}"
        )
    m = Matrix(arr.reshape(spec["rows"], spec["cols"]), trainable=spec["trainable"], name=name)
    return m


def load_model(directory: str | Path) -> ContinualModel:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.is_file():
        raise ContractError(f"no manifest.json in {directory}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != FORMAT:
        raise ContractError(f"unsupported checkpoint format: {manifest.get('format')!r}")
    cfg = ModelConfig(**manifest["model"])
    hp = AdapterHyperparams(**manifest["hyperparams"])
    kind = manifest["kind"]
    tensors = manifest["tensors"]

    def tensor(name: str) -> Matrix:
        if name not in tensors:
            raise ContractError(f"manifest missing tensor {name}")
        return _read_tensor(directory, tensors[name], name)

    layers = []
    for i in range(cfg.layers):
        prefix = f"layer{i}"
        if kind == "zero_shot":
            layers.append(FrozenBackbone(tensor(f"{prefix}.backbone")))
            continue
        backbone = FrozenBackbone(tensor(f"{prefix}.backbone"))
        if kind == "lora":
            layers.append(LoRALayer(backbone, hp, tensor(f"{prefix}.A"), tensor(f"{prefix}.B")))
        elif kind == "moelora":
            experts = [
                (tensor(f"{prefix}.expert{j}.A"), tensor(f"{prefix}.expert{j}.B"))
                for j in range(hp.experts)
            ]
            layers.append(MoELoRALayer(backbone, hp, experts, tensor(f"{prefix}.router")))
        else:
            branches = [tensor(f"{prefix}.branch{j}") for j in range(hp.experts)]
            layer = BranchLoRALayer(backbone, hp, tensor(f"{prefix}.A"), branches, cfg.width)
            layer.frozen = list(manifest["freeze_masks"][i])
            for t in manifest["router_tasks"]:
                layer.routers[t] = tensor(f"{prefix}.router.task{t}")
            layers.append(layer)

    model = ContinualModel(kind, cfg, hp, layers, tensor("head"), manifest["seed"])
    for t in manifest["key_tasks"]:
        keys = TaskKeys(t, tensor(f"keys.task{t}.img"), tensor(f"keys.task{t}.txt"))
        model.keys._keys[t] = keys
    return model
