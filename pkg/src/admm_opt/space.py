"""Mixed-variable search space: module/algorithm tree, flat layouts, projections.

A space is a fixed sequence of pipeline modules, each offering a set of
algorithms, each algorithm carrying box-bounded continuous and integer
hyperparameters.  All vector layouts (continuous and relaxed-integer) are
deterministic functions of declaration order: modules first, then algorithms,
then continuous parameters before integer parameters within an algorithm.

Instances are immutable after construction and safe to share across threads;
the projection helpers are pure functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence


class SpaceError(ValueError):
    """Invalid search-space document (duplicate names, bad bounds, ...)."""


@dataclass(frozen=True)
class ParamSpec:
    name: str
    lower: float
    upper: float


@dataclass(frozen=True)
class AlgorithmSpec:
    name: str
    cont_params: tuple[ParamSpec, ...] = ()
    int_params: tuple[ParamSpec, ...] = ()


@dataclass(frozen=True)
class ModuleSpec:
    name: str
    algorithms: tuple[AlgorithmSpec, ...]


@dataclass(frozen=True)
class ZAssignment:
    """One algorithm index per module (the one-hot selection, densely encoded)."""

    choice: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.choice)


def project_box(value: float, lower: float, upper: float) -> float:
    """Euclidean projection of a scalar onto the interval [lower, upper]."""
    if lower > upper:
        raise ValueError(f"inverted interval [{lower}, {upper}]")
    return min(max(float(value), float(lower)), float(upper))


def round_half_away(value: float) -> int:
    """Round to nearest integer, ties away from zero (2.5 -> 3, -2.5 -> -3)."""
    if value >= 0.0:
        return int(math.floor(value + 0.5))
    return int(math.ceil(value - 0.5))


def project_and_round(value: float, lower: int, upper: int) -> int:
    """Clamp onto [lower, upper] and round to the nearest integer in range.

    This is both the per-coordinate consensus update in closed form and the
    lattice projection applied before every black-box evaluation.
    """
    return round_half_away(project_box(value, lower, upper))


class SearchSpace:
    """Validated module/algorithm tree plus its deterministic flat indexing."""

    def __init__(self, modules: Sequence[ModuleSpec]):
        if not modules:
            raise SpaceError("empty module list")
        self.modules: tuple[ModuleSpec, ...] = tuple(modules)
        self._validate()
        self._build_layout()

    # -- validation -------------------------------------------------------

    def _validate(self) -> None:
        seen_mod: set[str] = set()
        for mi, mod in enumerate(self.modules):
            path = f"modules[{mi}] ({mod.name!r})"
            if mod.name in seen_mod:
                raise SpaceError(f"duplicate module name at {path}")
            seen_mod.add(mod.name)
            if not mod.algorithms:
                raise SpaceError(f"module without algorithms at {path}")
            seen_alg: set[str] = set()
            for ai, alg in enumerate(mod.algorithms):
                apath = f"{path}.algorithms[{ai}] ({alg.name!r})"
                if alg.name in seen_alg:
                    raise SpaceError(f"duplicate algorithm name at {apath}")
                seen_alg.add(alg.name)
                seen_param: set[str] = set()
                for p in alg.cont_params:
                    ppath = f"{apath}.cont_params[{p.name!r}]"
                    if p.name in seen_param:
                        raise SpaceError(f"duplicate parameter name at {ppath}")
                    seen_param.add(p.name)
                    if not (p.lower < p.upper):
                        raise SpaceError(f"degenerate bound at {ppath}: "
                                         f"[{p.lower}, {p.upper}]")
                for p in alg.int_params:
                    ppath = f"{apath}.int_params[{p.name!r}]"
                    if p.name in seen_param:
                        raise SpaceError(f"duplicate parameter name at {ppath}")
                    seen_param.add(p.name)
                    if int(p.lower) != p.lower or int(p.upper) != p.upper:
                        raise SpaceError(f"non-integral integer bound at {ppath}")
                    if not (p.lower <= p.upper):
                        raise SpaceError(f"inverted bound at {ppath}: "
                                         f"[{p.lower}, {p.upper}]")

    # -- flat layout ------------------------------------------------------

    def _build_layout(self) -> None:
        cont_owner: list[tuple[int, int]] = []   # flat cont index -> (module, alg)
        int_owner: list[tuple[int, int]] = []
        cont_names: list[str] = []
        int_names: list[str] = []
        cont_lo: list[float] = []
        cont_hi: list[float] = []
        int_lo: list[int] = []
        int_hi: list[int] = []
        cont_by_alg: dict[tuple[int, int], list[int]] = {}
        int_by_alg: dict[tuple[int, int], list[int]] = {}
        for mi, mod in enumerate(self.modules):
            for ai, alg in enumerate(mod.algorithms):
                cidx: list[int] = []
                for p in alg.cont_params:
                    cidx.append(len(cont_names))
                    cont_owner.append((mi, ai))
                    cont_names.append(f"{mod.name}.{alg.name}.{p.name}")
                    cont_lo.append(float(p.lower))
                    cont_hi.append(float(p.upper))
                iidx: list[int] = []
                for p in alg.int_params:
                    iidx.append(len(int_names))
                    int_owner.append((mi, ai))
                    int_names.append(f"{mod.name}.{alg.name}.{p.name}")
                    int_lo.append(int(p.lower))
                    int_hi.append(int(p.upper))
                cont_by_alg[(mi, ai)] = cidx
                int_by_alg[(mi, ai)] = iidx
        self.cont_names: tuple[str, ...] = tuple(cont_names)
        self.int_names: tuple[str, ...] = tuple(int_names)
        self.cont_lower: tuple[float, ...] = tuple(cont_lo)
        self.cont_upper: tuple[float, ...] = tuple(cont_hi)
        self.int_lower: tuple[int, ...] = tuple(int_lo)
        self.int_upper: tuple[int, ...] = tuple(int_hi)
        self._cont_by_alg = cont_by_alg
        self._int_by_alg = int_by_alg
        self._cont_owner = tuple(cont_owner)
        self._int_owner = tuple(int_owner)

    # -- basic shape ------------------------------------------------------

    @property
    def n_modules(self) -> int:
        return len(self.modules)

    @property
    def n_algorithms(self) -> tuple[int, ...]:
        return tuple(len(m.algorithms) for m in self.modules)

    @property
    def n_combinations(self) -> int:
        out = 1
        for k in self.n_algorithms:
            out *= k
        return out

    @property
    def n_cont(self) -> int:
        return len(self.cont_names)

    @property
    def n_int(self) -> int:
        return len(self.int_names)

    # -- assignments ------------------------------------------------------

    def validate_z(self, z: ZAssignment) -> None:
        if len(z.choice) != self.n_modules:
            raise SpaceError(f"assignment length {len(z.choice)} != "
                             f"{self.n_modules} modules")
        for mi, ai in enumerate(z.choice):
            if not 0 <= ai < len(self.modules[mi].algorithms):
                raise SpaceError(f"algorithm index {ai} out of range for "
                                 f"module {self.modules[mi].name!r}")

    def z_names(self, z: ZAssignment) -> dict[str, str]:
        self.validate_z(z)
        return {m.name: m.algorithms[ai].name
                for m, ai in zip(self.modules, z.choice)}

    def iter_assignments(self) -> Iterator[ZAssignment]:
        """All one-hot assignments in lexicographic (layout) order."""
        def rec(prefix: tuple[int, ...], mi: int) -> Iterator[ZAssignment]:
            if mi == self.n_modules:
                yield ZAssignment(prefix)
                return
            for ai in range(len(self.modules[mi].algorithms)):
                yield from rec(prefix + (ai,), mi + 1)
        yield from rec((), 0)

    def active_indices(self, z: ZAssignment) -> tuple[list[int], list[int]]:
        """Flat indices of the selected algorithms' (continuous, integer) params."""
        self.validate_z(z)
        cont: list[int] = []
        intg: list[int] = []
        for mi, ai in enumerate(z.choice):
            cont.extend(self._cont_by_alg[(mi, ai)])
            intg.extend(self._int_by_alg[(mi, ai)])
        return cont, intg


@dataclass
class ThetaVector:
    """Full flat hyperparameter vectors (both active and inactive carried).

    ``cont`` holds one real per continuous parameter in layout order;
    ``relaxed_int`` holds the continuous surrogate of every integer parameter.
    """

    cont: list[float]
    relaxed_int: list[float]

    def copy(self) -> "ThetaVector":
        return ThetaVector(list(self.cont), list(self.relaxed_int))

    @staticmethod
    def validated(space: SearchSpace, cont: Sequence[float],
                  relaxed_int: Sequence[float]) -> "ThetaVector":
        if len(cont) != space.n_cont or len(relaxed_int) != space.n_int:
            raise SpaceError("theta vector length does not match space layout")
        for i, v in enumerate(cont):
            if not (space.cont_lower[i] <= v <= space.cont_upper[i]):
                raise SpaceError(f"continuous value {v} outside bounds of "
                                 f"{space.cont_names[i]}")
        for i, v in enumerate(relaxed_int):
            if not (space.int_lower[i] <= v <= space.int_upper[i]):
                raise SpaceError(f"relaxed integer value {v} outside bounds of "
                                 f"{space.int_names[i]}")
        return ThetaVector(list(map(float, cont)), list(map(float, relaxed_int)))


def midpoint_theta(space: SearchSpace) -> ThetaVector:
    cont = [(lo + hi) / 2.0 for lo, hi in zip(space.cont_lower, space.cont_upper)]
    rint = [(lo + hi) / 2.0 for lo, hi in zip(space.int_lower, space.int_upper)]
    return ThetaVector(cont, rint)


def round_theta(space: SearchSpace, theta: ThetaVector) -> list[int]:
    """Project every relaxed-integer coordinate back onto its lattice."""
    return [project_and_round(v, lo, hi)
            for v, lo, hi in zip(theta.relaxed_int, space.int_lower,
                                 space.int_upper)]


def build_space(doc: dict) -> SearchSpace:
    """Build and validate a SearchSpace from a JSON-compatible document.

    Expected shape::

        {"modules": [{"name": ..., "algorithms": [
            {"name": ..., "cont_params": [{"name","lower","upper"}, ...],
             "int_params": [...]}, ...]}, ...]}
    """
    if not isinstance(doc, dict) or "modules" not in doc:
        raise SpaceError("document must be a mapping with a 'modules' list")
    mods: list[ModuleSpec] = []
    for mi, m in enumerate(doc["modules"]):
        algs: list[AlgorithmSpec] = []
        for ai, a in enumerate(m.get("algorithms", [])):
            conts = tuple(ParamSpec(p["name"], float(p["lower"]), float(p["upper"]))
                          for p in a.get("cont_params", []))
            ints = tuple(ParamSpec(p["name"], p["lower"], p["upper"])
                         for p in a.get("int_params", []))
            algs.append(AlgorithmSpec(str(a["name"]), conts, ints))
        mods.append(ModuleSpec(str(m["name"]), tuple(algs)))
    return SearchSpace(mods)
