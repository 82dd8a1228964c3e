"""Counterexample search and robustness scoring.

A property pairs one or more transforms (a composition applies them in
listed order over the product of their domains) with a search budget.
Per sample: predict the original; if correct, walk the candidate
sequence, stopping at the first parameter point the model misclassifies.
The robustness score is robust / correct; samples the model already
gets wrong are excluded from the denominator.

Reproducibility contract: candidate k of sample s under property p uses
the stream derived from (seed, s, p, k). Random strategies draw the
parameter point from that stream first; stochastic transforms then
continue drawing from the same stream. Verdicts therefore depend only on
(dataset, spec, endpoint, seed), never on worker count or timing.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .classifier import Prediction, open_connection
from .dataset import DatasetManifest, LabeledSample
from .errors import ConfigError, DatasetError, TransportError
from .imaging import RandomStream, resize_bilinear
from .transforms import (
    TransformSpec,
    apply as apply_transform,
    identity_theta,
    resolve_domain,
)

STRATEGIES = ("grid", "random", "grid_then_refine")
MAX_GRID_DIMS = 3
REFINE_STEP_FRACTION = 0.1  # local-perturbation radius as a fraction of dim range


@dataclass(frozen=True)
class SearchBudget:
    strategy: str
    grid_steps: int = 5
    random_candidates: int = 50
    refine_rounds: int = 0


@dataclass(frozen=True)
class PropertySpec:
    property_id: str
    transforms: tuple[TransformSpec, ...]
    budget: SearchBudget
    seed: int | None = None  # None: fall back to the run seed


@dataclass
class SampleVerdict:
    sample_id: str
    original_prediction: Prediction
    correct: bool
    robust: bool | None  # None = not applicable (original misclassified)
    counterexample: dict | None
    candidates_evaluated: int


@dataclass
class PropertyResult:
    property_id: str
    accuracy: float
    robustness_score: float | None  # None iff no sample was correct
    verdicts: list[SampleVerdict]

    @property
    def correct_count(self) -> int:
        return sum(1 for v in self.verdicts if v.correct)

    @property
    def robust_count(self) -> int:
        return sum(1 for v in self.verdicts if v.robust is True)

    @property
    def non_robust_count(self) -> int:
        return sum(1 for v in self.verdicts if v.robust is False)


def total_dims(transforms) -> int:
    return sum(len(t.domain.dims) for t in transforms)


def validate_property_spec(spec: PropertySpec) -> None:
    if not spec.property_id:
        raise ConfigError("property_id must be non-empty")
    if not spec.transforms:
        raise ConfigError(f"{spec.property_id}: needs at least one transform")
    b = spec.budget
    if b.strategy not in STRATEGIES:
        raise ConfigError(f"{spec.property_id}: unknown strategy {b.strategy!r}")
    if b.strategy in ("grid", "grid_then_refine"):
        if b.grid_steps < 1:
            raise ConfigError(f"{spec.property_id}: grid_steps must be >= 1")
        ndims = total_dims(spec.transforms)
        if ndims > MAX_GRID_DIMS:
            raise ConfigError(
                f"{spec.property_id}: grid search over {ndims} dims is intractable; "
                f"use the random strategy for > {MAX_GRID_DIMS} dims"
            )
    if b.strategy == "random" and b.random_candidates < 1:
        raise ConfigError(f"{spec.property_id}: random_candidates must be >= 1")
    if b.strategy == "grid_then_refine" and b.refine_rounds < 1:
        raise ConfigError(f"{spec.property_id}: refine_rounds must be >= 1")


# ---------------------------------------------------------------------------
# Candidate enumeration
# ---------------------------------------------------------------------------


@dataclass
class Candidate:
    index: int
    thetas: list[dict]  # one parameter point per transform, in order
    theta_draws: int  # uniforms consumed drawing thetas (stream replay info)
    stream: RandomStream  # positioned after the theta draws


def _grid_axis(dim, steps: int) -> list:
    """Axis values for one dim: linspace for numeric kinds (inclusive
    endpoints, half-up rounding for integers), the full choice list for
    categorical, both states for binary. grid_steps only affects numeric
    dims."""
    if dim.kind == "continuous":
        return [float(v) for v in np.linspace(dim.low, dim.high, steps)]
    if dim.kind == "integer":
        return [int(math.floor(v + 0.5)) for v in np.linspace(dim.low, dim.high, steps)]
    if dim.kind == "categorical":
        return list(dim.choices)
    return [0, 1]


def _axes_for(transforms, grid_steps: int):
    axes = []
    layout = []  # (transform index, dim name) per axis
    for ti, t in enumerate(transforms):
        for d in t.domain.dims:
            axes.append(_grid_axis(d, grid_steps))
            layout.append((ti, d.name))
    return axes, layout


def _thetas_from_combo(transforms, layout, combo) -> list[dict]:
    thetas = [dict() for _ in transforms]
    for (ti, name), value in zip(layout, combo):
        thetas[ti][name] = value
    return thetas


def _draw_theta(transforms, stream: RandomStream):
    thetas = []
    draws = 0
    for t in transforms:
        th = {}
        for d in t.domain.dims:
            u = stream.next_uniform()
            draws += 1
            if d.kind == "continuous":
                th[d.name] = d.low + u * (d.high - d.low)
            elif d.kind == "integer":
                th[d.name] = min(d.low + int(u * (d.high - d.low + 1)), d.high)
            elif d.kind == "categorical":
                th[d.name] = d.choices[int(u * len(d.choices))]
            else:
                th[d.name] = 0 if u < 0.5 else 1
        thetas.append(th)
    return thetas, draws


def _perturb_theta(transforms, base, stream: RandomStream):
    """One refinement move: nudge numeric dims within 1/10 of their range."""
    thetas = []
    draws = 0
    for t, th in zip(transforms, base):
        nt = {}
        for d in t.domain.dims:
            v = th[d.name]
            if d.kind in ("continuous", "integer"):
                u = stream.next_uniform()
                draws += 1
                span = (d.high - d.low) * REFINE_STEP_FRACTION
                moved = v + (2.0 * u - 1.0) * span
                if d.kind == "integer":
                    moved = int(math.floor(moved + 0.5))
                    nt[d.name] = int(min(max(moved, d.low), d.high))
                else:
                    nt[d.name] = float(min(max(moved, d.low), d.high))
            else:
                nt[d.name] = v
        thetas.append(nt)
    return thetas, draws


def enumerate_candidates(spec: PropertySpec, sample_id: str, seed: int):
    """Generator of Candidates; callers send back the true-class score.

    The identity point (when every transform's domain includes one) is
    always candidate 0. Grid axes run in transform order, dim order, last
    dim fastest. grid_then_refine perturbs the best-scoring point seen so
    far, one candidate per round.
    """
    transforms = spec.transforms
    pid = spec.property_id
    budget = spec.budget
    index = 0
    best_thetas = None
    best_score = math.inf

    identities = [identity_theta(t) for t in transforms]
    if all(i is not None for i in identities):
        stream = RandomStream.derive(seed, sample_id, pid, index)
        received = yield Candidate(index, [dict(i) for i in identities], 0, stream)
        if received is not None and received < best_score:
            best_score, best_thetas = received, identities
        index += 1

    if budget.strategy in ("grid", "grid_then_refine"):
        axes, layout = _axes_for(transforms, budget.grid_steps)
        for combo in itertools.product(*axes):
            thetas = _thetas_from_combo(transforms, layout, combo)
            stream = RandomStream.derive(seed, sample_id, pid, index)
            received = yield Candidate(index, thetas, 0, stream)
            if received is not None and received < best_score:
                best_score, best_thetas = received, thetas
            index += 1
        if budget.strategy == "grid_then_refine" and best_thetas is not None:
            for _ in range(budget.refine_rounds):
                stream = RandomStream.derive(seed, sample_id, pid, index)
                thetas, draws = _perturb_theta(transforms, best_thetas, stream)
                received = yield Candidate(index, thetas, draws, stream)
                if received is not None and received < best_score:
                    best_score, best_thetas = received, thetas
                index += 1
    else:
        for _ in range(budget.random_candidates):
            stream = RandomStream.derive(seed, sample_id, pid, index)
            thetas, draws = _draw_theta(transforms, stream)
            yield Candidate(index, thetas, draws, stream)
            index += 1


# ---------------------------------------------------------------------------
# Per-sample search
# ---------------------------------------------------------------------------


def resolve_transforms(spec: PropertySpec, width: int, height: int) -> PropertySpec:
    """Per-image domain resolution (pixel_l0's size-dependent cap)."""
    resolved = tuple(resolve_domain(t, width, height) for t in spec.transforms)
    return replace(spec, transforms=resolved)


def _model_view(img, input_width: int, input_height: int):
    if input_width > 0 and input_height > 0:
        h, w = img.shape[:2]
        if (w, h) != (input_width, input_height):
            return resize_bilinear(img, input_width, input_height)
    return img


def apply_candidate(transforms, image, candidate: Candidate, skip_flip: bool):
    """Run the composition at one parameter point, at native resolution."""
    out = image
    for tf, theta in zip(transforms, candidate.thetas):
        if tf.kind == "flip" and skip_flip:
            continue
        out = apply_transform(tf, out, theta, candidate.stream)
    return out


def evaluate_sample(
    sample: LabeledSample,
    spec: PropertySpec,
    connection,
    *,
    flip_invariant_classes: frozenset = frozenset(),
    run_seed: int = 0,
    input_width: int = 0,
    input_height: int = 0,
    image: np.ndarray | None = None,
) -> SampleVerdict:
    native = sample.load() if image is None else image
    original = connection.predict([_model_view(native, input_width, input_height)])[0]
    if original.label != sample.label:
        return SampleVerdict(sample.sample_id, original, False, None, None, 0)

    h, w = native.shape[:2]
    resolved = resolve_transforms(spec, w, h)
    validate_property_spec(resolved)
    seed = spec.seed if spec.seed is not None else run_seed
    skip_flip = sample.label not in flip_invariant_classes

    gen = enumerate_candidates(resolved, sample.sample_id, seed)
    evaluated = 0
    score = None
    while True:
        try:
            cand = gen.send(score) if evaluated else next(gen)
        except StopIteration:
            break
        perturbed = apply_candidate(resolved.transforms, native, cand, skip_flip)
        pred = connection.predict([_model_view(perturbed, input_width, input_height)])[0]
        evaluated += 1
        if pred.label != sample.label:
            counterexample = {
                "candidate_index": cand.index,
                "thetas": cand.thetas,
                "theta_draws": cand.theta_draws,
                "predicted_label": pred.label,
            }
            return SampleVerdict(
                sample.sample_id, original, True, False, counterexample, evaluated
            )
        score = pred.scores[sample.label]
    return SampleVerdict(sample.sample_id, original, True, True, None, evaluated)


# ---------------------------------------------------------------------------
# Dataset-level evaluation (optionally parallel over samples)
# ---------------------------------------------------------------------------

_WORKER_CONN = None
_WORKER_ARGS = None


def _worker_init(endpoint, flip_invariant, run_seed, input_width, input_height):
    global _WORKER_CONN, _WORKER_ARGS
    _WORKER_CONN = open_connection(endpoint)
    _WORKER_ARGS = (flip_invariant, run_seed, input_width, input_height)


def _worker_eval(sample: LabeledSample, spec: PropertySpec) -> SampleVerdict:
    flip_invariant, run_seed, iw, ih = _WORKER_ARGS
    return evaluate_sample(
        sample,
        spec,
        _WORKER_CONN,
        flip_invariant_classes=flip_invariant,
        run_seed=run_seed,
        input_width=iw,
        input_height=ih,
    )


def _score(verdicts: list[SampleVerdict], property_id: str) -> PropertyResult:
    total = len(verdicts)
    correct = sum(1 for v in verdicts if v.correct)
    robust = sum(1 for v in verdicts if v.robust is True)
    return PropertyResult(
        property_id=property_id,
        accuracy=correct / total if total else 0.0,
        robustness_score=(robust / correct) if correct else None,
        verdicts=verdicts,
    )


def evaluate_property(
    dataset: DatasetManifest,
    spec: PropertySpec,
    endpoint,
    *,
    split: str = "test",
    run_seed: int = 0,
    workers: int = 1,
) -> PropertyResult:
    """Verdicts for every sample of the split, merged in manifest order.

    A TransportError aborts the run; the exception carries the verdicts
    completed so far as .partial_verdicts so callers can persist them.
    """
    validate_property_spec(spec)
    samples = dataset.split(split)
    if not samples:
        raise DatasetError(f"no samples in split {split!r}")
    iw = getattr(endpoint, "input_width", 0)
    ih = getattr(endpoint, "input_height", 0)
    flip = dataset.flip_invariant_classes

    verdicts: list[SampleVerdict] = []
    if workers <= 1:
        conn = open_connection(endpoint)
        try:
            for sample in samples:
                try:
                    verdicts.append(
                        evaluate_sample(
                            sample,
                            spec,
                            conn,
                            flip_invariant_classes=flip,
                            run_seed=run_seed,
                            input_width=iw,
                            input_height=ih,
                        )
                    )
                except TransportError as exc:
                    exc.partial_verdicts = verdicts
                    raise
        finally:
            if conn is not endpoint:
                conn.close()
        return _score(verdicts, spec.property_id)

    with ProcessPoolExecutor(
        max_workers=workers,
        initializer=_worker_init,
        initargs=(endpoint, flip, run_seed, iw, ih),
    ) as pool:
        futures = [pool.submit(_worker_eval, s, spec) for s in samples]
        try:
            for fut in futures:
                verdicts.append(fut.result())
        except TransportError as exc:
            for fut in futures:
                fut.cancel()
            exc.partial_verdicts = verdicts
            raise
    return _score(verdicts, spec.property_id)


# ---------------------------------------------------------------------------
# Composition
# ---------------------------------------------------------------------------


def compose_specs(
    a: PropertySpec, b: PropertySpec, budget: SearchBudget | None = None
) -> PropertySpec:
    """Joint property over the product domain, transforms of a then b."""
    transforms = a.transforms + b.transforms
    if budget is None:
        if (
            a.budget.strategy == "grid"
            and b.budget.strategy == "grid"
            and total_dims(transforms) <= MAX_GRID_DIMS
        ):
            budget = SearchBudget("grid", grid_steps=min(a.budget.grid_steps, b.budget.grid_steps))
        else:
            budget = SearchBudget(
                "random",
                random_candidates=max(a.budget.random_candidates, b.budget.random_candidates),
            )
    seed = a.seed if a.seed == b.seed else None
    return PropertySpec(
        property_id=f"{a.property_id}+{b.property_id}",
        transforms=transforms,
        budget=budget,
        seed=seed,
    )


def combination_delta(combined: PropertyResult, parts: list[PropertyResult]) -> float | None:
    """Combined score minus the last-listed part's score, percentage points.

    The baseline is the final part in listed order (for two parts, the
    second); undefined whenever any score is undefined.
    """
    if not parts:
        raise ConfigError("combination_delta needs at least one part")
    if combined.robustness_score is None or any(p.robustness_score is None for p in parts):
        return None
    return 100.0 * combined.robustness_score - 100.0 * parts[-1].robustness_score
