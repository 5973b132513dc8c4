"""Canonical parameter and FLOPs accounting for transformer-style module catalogs.

External FLOPs counters disagree with each other and silently skip
operations (softmax, layer normalization, attention score scaling), so this
engine pins one convention and counts everything under it. The convention is
versioned and documented bit-exactly in ``docs/flops_convention.md``; every
report embeds ``CONVENTION_VERSION``.

Convention summary (one FLOP per scalar multiply, add, subtract, divide,
exponential, and square root; no fused multiply-adds):

* ``matmul(n, a, b)`` costs ``2*n*a*b``, bias included (each output element
  is ``a`` multiplies plus ``a`` accumulating adds, the accumulator starting
  at the bias or at zero).
* GELU costs 8 FLOPs per element, tanh 4 per element.
* Softmax over a row of width ``w`` costs ``4*w - 1``: ``w`` max-subtractions,
  ``w`` exponentials, ``w - 1`` sum adds, ``w`` divides (the running max
  itself is comparison-only and free).
* LayerNorm over ``n`` rows of width ``d`` costs ``n*(8*d + 2)`` per the
  decomposition in the convention document.
* Attention score scaling by 1/sqrt(d_head) costs one divide per score,
  ``h*n*n`` total.
* Embedding lookups are free; only the 3-way embedding sum (2 adds per
  element) and the embedding LayerNorm are counted.

All functions are pure and safe to call concurrently.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, asdict
from pathlib import Path

from .errors import ShapeError, SpecValidationError, UnknownModuleError

CONVENTION_VERSION = "1"

# scalar cost table; docs/flops_convention.md is the normative description
SCALAR_FLOPS = {
    "multiply": 1,
    "add": 1,
    "subtract": 1,
    "divide": 1,
    "exponential": 1,
    "square_root": 1,
    "gelu": 8,
    "tanh": 4,
}

GELU_FLOPS_PER_ELEMENT = SCALAR_FLOPS["gelu"]
TANH_FLOPS_PER_ELEMENT = SCALAR_FLOPS["tanh"]

EMBEDDING = "Embedding"
TRANSFORMER_LAYER = "TransformerLayer"
EXIT_CLASSIFIER = "ExitClassifier"

MODULE_KINDS = (EMBEDDING, TRANSFORMER_LAYER, EXIT_CLASSIFIER)

# Dimensions a module may override locally; everything else inherits from the model.
_OVERRIDABLE = {
    EMBEDDING: ("hidden_size", "vocab_size", "max_positions", "num_segment_types"),
    TRANSFORMER_LAYER: ("hidden_size", "num_heads", "ffn_size"),
    EXIT_CLASSIFIER: ("hidden_size", "num_labels"),
}


def matmul_flops(n: int, a: int, b: int) -> int:
    """Cost of an (n, a) x (a, b) matrix product, bias add included."""
    return 2 * n * a * b


def layernorm_flops(n: int, d: int) -> int:
    """Cost of LayerNorm over n rows of width d: n*(8d + 2)."""
    return n * (8 * d + 2)


def softmax_flops(rows: int, width: int) -> int:
    """Cost of a row-wise softmax: 4w - 1 per row."""
    return rows * (4 * width - 1)


@dataclass(frozen=True)
class ModuleDecl:
    """One entry of a model's module catalog.

    Dimension fields left as ``None`` inherit from the owning :class:`ModelSpec`.
    """

    id: str
    kind: str
    hidden_size: int | None = None
    num_heads: int | None = None
    ffn_size: int | None = None
    num_labels: int | None = None
    vocab_size: int | None = None
    max_positions: int | None = None
    num_segment_types: int | None = None


@dataclass(frozen=True)
class ModelSpec:
    """Declarative model description; the sole source for parameter and FLOPs counts."""

    model_name: str
    hidden_size: int
    num_layers: int
    num_heads: int
    ffn_size: int
    vocab_size: int
    max_positions: int
    num_segment_types: int
    num_labels: int
    modules: tuple[ModuleDecl, ...] = field(default=())

    def __post_init__(self):
        if not self.modules:
            object.__setattr__(self, "modules", default_modules(self.num_layers))
        else:
            object.__setattr__(self, "modules", tuple(self.modules))
        _validate_spec(self)
        object.__setattr__(self, "_by_id", {m.id: m for m in self.modules})

    def module(self, module_id: str) -> ModuleDecl:
        try:
            return self._by_id[module_id]
        except KeyError:
            raise UnknownModuleError(module_id) from None

    def has_module(self, module_id: str) -> bool:
        return module_id in self._by_id

    @property
    def embedding_id(self) -> str:
        return next(m.id for m in self.modules if m.kind == EMBEDDING)


def default_modules(num_layers: int) -> tuple[ModuleDecl, ...]:
    """Standard catalog: one embedding, then layer_k / exit_k for k = 1..L."""
    mods = [ModuleDecl(id="emb", kind=EMBEDDING)]
    for k in range(1, num_layers + 1):
        mods.append(ModuleDecl(id=f"layer_{k}", kind=TRANSFORMER_LAYER))
        mods.append(ModuleDecl(id=f"exit_{k}", kind=EXIT_CLASSIFIER))
    return tuple(mods)


def _validate_spec(spec: ModelSpec) -> None:
    for name in ("hidden_size", "num_layers", "num_heads", "ffn_size",
                 "vocab_size", "max_positions", "num_labels"):
        value = getattr(spec, name)
        if not isinstance(value, int) or value < 1:
            raise SpecValidationError(name, f"must be a positive integer, got {value!r}")
    if not isinstance(spec.num_segment_types, int) or spec.num_segment_types < 0:
        raise SpecValidationError(
            "num_segment_types", f"must be a non-negative integer, got {spec.num_segment_types!r}")
    if spec.hidden_size % spec.num_heads != 0:
        raise SpecValidationError(
            "num_heads", f"{spec.num_heads} does not divide hidden_size {spec.hidden_size}")

    seen: set[str] = set()
    layers: set[str] = set()
    exits: set[str] = set()
    n_embeddings = 0
    for mod in spec.modules:
        if mod.kind not in MODULE_KINDS:
            raise SpecValidationError("modules", f"unknown module kind {mod.kind!r} for id {mod.id!r}")
        if mod.id in seen:
            raise SpecValidationError("modules", f"duplicate module id {mod.id!r}")
        seen.add(mod.id)
        for dim_name in ("hidden_size", "num_heads", "ffn_size", "num_labels",
                         "vocab_size", "max_positions", "num_segment_types"):
            value = getattr(mod, dim_name)
            if value is None:
                continue
            if dim_name not in _OVERRIDABLE[mod.kind]:
                raise SpecValidationError(
                    "modules", f"module {mod.id!r} ({mod.kind}) cannot override {dim_name}")
            floor = 0 if dim_name == "num_segment_types" else 1
            if not isinstance(value, int) or value < floor:
                raise SpecValidationError("modules", f"module {mod.id!r}: bad {dim_name} {value!r}")
        if mod.kind == EMBEDDING:
            n_embeddings += 1
        elif mod.kind == TRANSFORMER_LAYER:
            layers.add(mod.id)
            d = mod.hidden_size if mod.hidden_size is not None else spec.hidden_size
            h = mod.num_heads if mod.num_heads is not None else spec.num_heads
            if d % h != 0:
                raise SpecValidationError(
                    "modules", f"module {mod.id!r}: num_heads {h} does not divide hidden_size {d}")
        else:
            exits.add(mod.id)
    if n_embeddings != 1:
        raise SpecValidationError("modules", f"exactly one embedding module required, found {n_embeddings}")
    expected_layers = {f"layer_{k}" for k in range(1, spec.num_layers + 1)}
    if layers != expected_layers:
        raise SpecValidationError(
            "modules", f"transformer layers must be named layer_1..layer_{spec.num_layers}")
    expected_exits = {f"exit_{k}" for k in range(1, spec.num_layers + 1)}
    if exits != expected_exits:
        raise SpecValidationError(
            "modules", f"exit classifiers must be named exit_1..exit_{spec.num_layers}")


def resolved_dim(decl: ModuleDecl, spec: ModelSpec, name: str) -> int:
    """Module-local dimension override, falling back to the model-wide value."""
    value = getattr(decl, name)
    return value if value is not None else getattr(spec, name)


_dim = resolved_dim


@dataclass(frozen=True)
class ParamCount:
    backbone: int
    exit_heads: int

    @property
    def with_exits(self) -> int:
        return self.backbone + self.exit_heads


def count_params(spec: ModelSpec) -> ParamCount:
    """Exact parameter totals, backbone and exit heads reported separately.

    Backbone: embedding tables (V + P + S) * d plus the embedding LayerNorm
    (2d), and per transformer layer 4*(d^2 + d) for attention projections,
    d*d_ff + d_ff and d_ff*d + d for the FFN, and 2*2d for the two
    LayerNorms. Each exit head is a single affine map, d*C + C; there is no
    pooler.
    """
    backbone = 0
    exit_heads = 0
    for mod in spec.modules:
        d = _dim(mod, spec, "hidden_size")
        if mod.kind == EMBEDDING:
            v = _dim(mod, spec, "vocab_size")
            p = _dim(mod, spec, "max_positions")
            s = _dim(mod, spec, "num_segment_types")
            backbone += (v + p + s) * d + 2 * d
        elif mod.kind == TRANSFORMER_LAYER:
            dff = _dim(mod, spec, "ffn_size")
            backbone += 4 * (d * d + d) + (d * dff + dff) + (dff * d + d) + 2 * (2 * d)
        else:
            c = _dim(mod, spec, "num_labels")
            exit_heads += d * c + c
    return ParamCount(backbone=backbone, exit_heads=exit_heads)


def attention_flops(n: int, d: int, h: int) -> int:
    """Self-attention cost: 8nd^2 + 4n^2 d + 5hn^2 - hn.

    QKV projections 3 * 2nd^2, score and value matmuls 2 * 2n^2 d, score
    scaling hn^2, softmax h*n rows at 4n - 1, output projection 2nd^2.
    """
    return 8 * n * d * d + 4 * n * n * d + 5 * h * n * n - h * n


def ffn_flops(n: int, d: int, dff: int) -> int:
    """FFN cost: two matmuls plus GELU, 4*n*d*d_ff + 8*n*d_ff."""
    return 4 * n * d * dff + GELU_FLOPS_PER_ELEMENT * n * dff


def module_flops(decl: ModuleDecl, input_shape: tuple[int, ...], spec: ModelSpec) -> int:
    """FLOPs for one module invocation on the given input shape.

    Shape arity per kind: Embedding takes (n,), TransformerLayer takes
    (n, d), ExitClassifier takes (d,).
    """
    shape = tuple(input_shape)
    if any(not isinstance(x, int) or x < 1 for x in shape):
        raise ShapeError(f"module {decl.id!r}: shape dims must be positive integers, got {shape}")
    d = _dim(decl, spec, "hidden_size")
    if decl.kind == EMBEDDING:
        if len(shape) != 1:
            raise ShapeError(f"module {decl.id!r} (Embedding) takes a 1-d shape, got {shape}")
        n = shape[0]
        return 2 * n * d + layernorm_flops(n, d)
    if decl.kind == TRANSFORMER_LAYER:
        if len(shape) != 2:
            raise ShapeError(f"module {decl.id!r} (TransformerLayer) takes a 2-d shape, got {shape}")
        n, dim = shape
        if dim != d:
            raise ShapeError(
                f"module {decl.id!r}: hidden dimension {dim} does not match spec hidden_size {d}")
        h = _dim(decl, spec, "num_heads")
        dff = _dim(decl, spec, "ffn_size")
        # attention + FFN + two LayerNorms + two residual adds
        return (attention_flops(n, d, h) + ffn_flops(n, d, dff)
                + 2 * layernorm_flops(n, d) + 2 * n * d)
    if decl.kind == EXIT_CLASSIFIER:
        if len(shape) != 1:
            raise ShapeError(f"module {decl.id!r} (ExitClassifier) takes a 1-d shape, got {shape}")
        if shape[0] != d:
            raise ShapeError(
                f"module {decl.id!r}: input width {shape[0]} does not match hidden_size {d}")
        c = _dim(decl, spec, "num_labels")
        return matmul_flops(1, d, c)
    raise ShapeError(f"module {decl.id!r}: unsupported kind {decl.kind!r}")


def forward_flops(spec: ModelSpec, seq_len: int, exit_layer: int) -> int:
    """Full forward cost when exiting at ``exit_layer``: embedding, layers
    1..exit_layer, and the exit head at that layer."""
    if not isinstance(seq_len, int) or seq_len < 1:
        raise ShapeError(f"seq_len must be a positive integer, got {seq_len!r}")
    if not 1 <= exit_layer <= spec.num_layers:
        raise ShapeError(
            f"exit_layer {exit_layer} out of range 1..{spec.num_layers}")
    emb = spec.module(spec.embedding_id)
    total = module_flops(emb, (seq_len,), spec)
    for k in range(1, exit_layer + 1):
        layer = spec.module(f"layer_{k}")
        total += module_flops(layer, (seq_len, _dim(layer, spec, "hidden_size")), spec)
    head = spec.module(f"exit_{exit_layer}")
    total += module_flops(head, (_dim(head, spec, "hidden_size"),), spec)
    return total


# ---------------------------------------------------------------------------
# JSON spec files

_SPEC_FIELDS = [f.name for f in fields(ModelSpec) if f.name != "modules"]


def model_spec_from_dict(obj: dict) -> ModelSpec:
    if not isinstance(obj, dict):
        raise SpecValidationError("spec", "model spec must be a JSON object")
    unknown = set(obj) - set(_SPEC_FIELDS) - {"modules"}
    if unknown:
        raise SpecValidationError("spec", f"unknown fields: {sorted(unknown)}")
    missing = [name for name in _SPEC_FIELDS if name not in obj]
    if missing:
        raise SpecValidationError("spec", f"missing fields: {missing}")
    modules: list[ModuleDecl] = []
    for i, m in enumerate(obj.get("modules", [])):
        if not isinstance(m, dict) or "id" not in m or "kind" not in m:
            raise SpecValidationError("modules", f"entry {i} must be an object with id and kind")
        extra = set(m) - {f.name for f in fields(ModuleDecl)}
        if extra:
            raise SpecValidationError("modules", f"entry {m.get('id', i)!r}: unknown fields {sorted(extra)}")
        modules.append(ModuleDecl(**m))
    kwargs = {name: obj[name] for name in _SPEC_FIELDS}
    return ModelSpec(modules=tuple(modules), **kwargs)


def model_spec_to_dict(spec: ModelSpec) -> dict:
    out = {name: getattr(spec, name) for name in _SPEC_FIELDS}
    out["modules"] = [
        {k: v for k, v in asdict(m).items() if v is not None} for m in spec.modules
    ]
    return out


def load_model_spec(path: str | Path) -> ModelSpec:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SpecValidationError("spec", f"not valid JSON: {exc}") from exc
    return model_spec_from_dict(obj)
