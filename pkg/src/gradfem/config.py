"""Run configuration: strict TOML parsing and problem construction.

Unknown keys anywhere in the file are rejected before any compute
starts, and every run writes the fully resolved configuration
(defaults included) next to its outputs as JSON.
"""

import json
from dataclasses import dataclass

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .assembly import DirichletSpec, NeumannSpec
from .materials import ElasticConstants
from .mesh import BoundaryLocator, Mesh, boundary_facets, boundary_nodes, generate_box_mesh, import_mesh
from .problems import (
    J2PlasticityProblem,
    LinearElasticityProblem,
    NeoHookeanProblem,
    PoissonProblem,
    SimpElasticityProblem,
)
from .materials import LinearElastic, NeoHookean
from .solvers import LinearSolveConfig, LoadSchedule, NewtonConfig


class ConfigError(ValueError):
    pass


# Schema: nested dict of key -> default (None means required), with
# lists of tables given as [schema]. Extra keys anywhere are errors.
_SCHEMA = {
    "problem": None,  # solve | infer | topopt | taylor-test
    "seed": 0,
    "threads": 0,
    "output_dir": "out",
    "mesh": {
        "kind": "box",
        "nx": 1, "ny": 1, "nz": 1,
        "lx": 1.0, "ly": 1.0, "lz": 1.0,
        "path": "",
    },
    "material": {
        "model": "linear_elastic",
        "E": 70e3, "nu": 0.3, "sigma_yield": 250.0,
        "alpha": 1.0,
    },
    "dirichlet": [{
        "where": None,
        "component": 0,
        "value": 0.0,
    }],
    "neumann": [{
        "where": None,
        "traction": [0.0, 0.0, 0.0],
    }],
    "solver": {
        "newton_rel_tol": 1e-8,
        "newton_abs_tol": 1e-10,
        "newton_max_iters": 20,
        "linear_rel_tol": 1e-10,
        "linear_abs_tol": 1e-12,
        "linear_max_iters": 0,
    },
    "load": {
        "steps": 1,
        "amplitude": 1.0,
        "unload": False,
    },
    "monitor": {
        "reaction_where": "",
        "reaction_component": 2,
    },
    "inference": {
        "n_obs": 250,
        "max_iters": 100,
        "source_kind": "bimodal",
        "source_scale": 10.0,
        "source_width": 10.0,
        "source_centers": [[0.25, 0.25, 0.1], [0.75, 0.75, 0.1]],
    },
    "topopt": {
        "volume_fraction": 0.5,
        "penalty": 3.0,
        "filter_radius": 0.0,
        "steps": 30,
        "move_limit": 0.2,
        "theta_min": 1e-3,
        "base_material": "linear_elastic",
    },
    "taylor": {
        "h_values": [1e-1, 1e-2, 1e-3, 1e-4],
        "n_perturbed": 5,
        "perturbation_scale": 5.0,
    },
    "output": {
        "vtk_every": 1,
    },
}


def _check_and_resolve(data, schema, path=""):
    if not isinstance(data, dict):
        raise ConfigError(f"expected a table at {path or '<root>'}")
    out = {}
    for key in data:
        if key not in schema:
            raise ConfigError(f"unknown config key {path + key!r}")
    for key, default in schema.items():
        loc = f"{path}{key}"
        if isinstance(default, dict):
            out[key] = _check_and_resolve(data.get(key, {}), default, loc + ".")
        elif isinstance(default, list) and default and isinstance(default[0], dict):
            entries = data.get(key, [])
            if not isinstance(entries, list):
                raise ConfigError(f"{loc} must be an array of tables")
            out[key] = [
                _check_and_resolve(e, default[0], f"{loc}[{i}].") for i, e in enumerate(entries)
            ]
        elif key in data:
            out[key] = data[key]
        elif default is None:
            raise ConfigError(f"missing required config key {loc!r}")
        else:
            out[key] = default
    return out


@dataclass
class RunConfig:
    raw: dict

    def __getitem__(self, key):
        return self.raw[key]

    def write_resolved(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.raw, fh, indent=2, sort_keys=True)
            fh.write("\n")


def load_config(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as err:
        raise ConfigError(f"config file not found: {path}") from err
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"malformed TOML in {path}: {err}") from err
    resolved = _check_and_resolve(data, _SCHEMA)
    kind = resolved["problem"]
    if kind not in ("solve", "infer", "topopt", "taylor-test"):
        raise ConfigError(f"problem must be solve|infer|topopt|taylor-test, got {kind!r}")
    return RunConfig(raw=resolved)


def build_mesh(cfg: RunConfig) -> Mesh:
    m = cfg["mesh"]
    if m["kind"] == "box":
        return generate_box_mesh(m["nx"], m["ny"], m["nz"], m["lx"], m["ly"], m["lz"])
    if m["kind"] == "import":
        if not m["path"]:
            raise ConfigError("mesh.kind = 'import' requires mesh.path")
        return import_mesh(m["path"])
    raise ConfigError(f"mesh.kind must be 'box' or 'import', got {m['kind']!r}")


def make_locator(mesh: Mesh, where: str) -> BoundaryLocator:
    """Named boundary selectors: axis planes of the bounding box, the
    topological boundary, or 'plane:<axis>:<value>'."""
    lo = mesh.nodes.min(axis=0)
    hi = mesh.nodes.max(axis=0)
    named = {
        "x_min": (0, lo[0]), "x_max": (0, hi[0]),
        "y_min": (1, lo[1]), "y_max": (1, hi[1]),
        "z_min": (2, lo[2]), "z_max": (2, hi[2]),
    }
    if where in named:
        axis, value = named[where]
        return BoundaryLocator.plane(axis, value)
    if where == "all_boundary":
        mask = np.zeros(mesh.n_nodes, dtype=bool)
        mask[boundary_nodes(mesh)] = True
        coord_key = {tuple(np.round(p, 9)): i for i, p in enumerate(mesh.nodes)}

        def pred(p):
            p = np.atleast_2d(p)
            out = np.zeros(p.shape[0], dtype=bool)
            for i, q in enumerate(p):
                idx = coord_key.get(tuple(np.round(q, 9)))
                out[i] = False if idx is None else mask[idx]
            return out

        return BoundaryLocator(pred)
    if where.startswith("plane:"):
        try:
            _, axis, value = where.split(":")
            return BoundaryLocator.plane(int(axis), float(value))
        except ValueError as err:
            raise ConfigError(f"bad plane selector {where!r}; use plane:<axis>:<value>") from err
    raise ConfigError(
        f"unknown boundary selector {where!r}; expected x_min/x_max/y_min/"
        "y_max/z_min/z_max, all_boundary, or plane:<axis>:<value>"
    )


def _material_constants(cfg: RunConfig) -> ElasticConstants:
    m = cfg["material"]
    return ElasticConstants(E=m["E"], nu=m["nu"], sigma_yield=m["sigma_yield"])


def build_problem(cfg: RunConfig, mesh: Mesh):
    mat = cfg["material"]["model"]
    vec = 1 if mat == "poisson" else 3
    dirichlet = []
    for spec in cfg["dirichlet"]:
        if not 0 <= spec["component"] < vec:
            raise ConfigError(
                f"dirichlet component {spec['component']} out of range for {mat}"
            )
        value = float(spec["value"])
        dirichlet.append(
            DirichletSpec(make_locator(mesh, spec["where"]), spec["component"], (lambda v: (lambda p: np.full(np.asarray(p).shape[:-1], v)))(value))
        )
    neumann = []
    for spec in cfg["neumann"]:
        t = np.asarray(spec["traction"], dtype=np.float64)
        if t.shape != (vec,):
            raise ConfigError(f"neumann traction must have {vec} components, got {t.shape}")
        facets = boundary_facets(mesh, make_locator(mesh, spec["where"]))
        neumann.append(
            NeumannSpec(facets, (lambda tv: (lambda p: np.broadcast_to(tv, np.asarray(p).shape[:-1] + tv.shape)))(t))
        )

    if mat == "poisson":
        design = cfg["problem"] in ("infer", "taylor-test")
        return PoissonProblem(
            mesh, cfg["material"]["alpha"], dirichlet, neumann, design_source=design
        )
    constants = _material_constants(cfg)
    if cfg["problem"] == "topopt":
        base_name = cfg["topopt"]["base_material"]
        if base_name == "linear_elastic":
            base = LinearElastic(constants)
        elif base_name == "neo_hookean":
            base = NeoHookean(constants)
        else:
            raise ConfigError(f"topopt.base_material must be linear_elastic or neo_hookean, got {base_name!r}")
        return SimpElasticityProblem(
            mesh, base, dirichlet, neumann,
            penalty=cfg["topopt"]["penalty"], theta_min=cfg["topopt"]["theta_min"],
        )
    if mat == "linear_elastic":
        return LinearElasticityProblem(mesh, constants, dirichlet, neumann)
    if mat == "neo_hookean":
        return NeoHookeanProblem(mesh, constants, dirichlet, neumann)
    if mat == "j2_plasticity":
        return J2PlasticityProblem(mesh, constants, dirichlet, neumann)
    raise ConfigError(
        f"material.model must be poisson|linear_elastic|neo_hookean|j2_plasticity, got {mat!r}"
    )


def solver_configs(cfg: RunConfig):
    s = cfg["solver"]
    return (
        NewtonConfig(rel_tol=s["newton_rel_tol"], abs_tol=s["newton_abs_tol"], max_iters=s["newton_max_iters"]),
        LinearSolveConfig(rel_tol=s["linear_rel_tol"], abs_tol=s["linear_abs_tol"], max_iters=s["linear_max_iters"]),
    )


def load_schedule(cfg: RunConfig) -> LoadSchedule:
    ld = cfg["load"]
    if ld["unload"]:
        return LoadSchedule.ramp_and_back(ld["steps"], ld["amplitude"])
    return LoadSchedule.ramp(ld["steps"], ld["amplitude"])


def source_function(cfg: RunConfig):
    inf = cfg["inference"]
    if inf["source_kind"] != "bimodal":
        raise ConfigError(f"inference.source_kind must be 'bimodal', got {inf['source_kind']!r}")
    centers = np.asarray(inf["source_centers"], dtype=np.float64)
    scale = float(inf["source_scale"])
    width = float(inf["source_width"])

    def source(x):
        x = np.asarray(x, dtype=np.float64)
        return sum(scale * np.exp(-width * np.sum((x - c) ** 2, axis=-1)) for c in centers)

    return source
