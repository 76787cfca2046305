"""Finite-group equivariant networks and symmetry diagnostics on numpy."""

import json
from importlib import resources

from .diagnostics import (
    EquivarianceVerdict,
    SymmetryInstance,
    bound_report,
    brute_force_bound,
    classify_action,
    consensus_analysis,
    loose_bound,
    tight_bound,
)
from .groups import (
    FiniteAction,
    Group,
    GroupElement,
    Representation,
    act_on_image,
    make_group,
    orbit_stabilizer,
    rep_matrix,
)
from .layers import EquivConv, expand_kernel, group_conv, group_pool, lift_conv

__version__ = "0.1.0"

SCHEMAS = (
    "bound_report",
    "comparison_csv",
    "comparison_summary",
    "dataset_sidecar",
    "experiment_config",
    "model_manifest",
    "run_report",
    "symmetry_instance",
    "verdict",
)


def load_schema(name: str) -> dict:
    """JSON schema shipped with the package, e.g. ``load_schema("run_report")``."""
    if name not in SCHEMAS:
        raise KeyError(f"unknown schema {name!r}; available: {SCHEMAS}")
    text = resources.files(__package__).joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)
