"""Inferring organizational specifications from joint-histories."""

from .clustering import (
    Merge,
    RoleClustering,
    adjusted_rand_index,
    average_linkage,
    choose_k,
    cluster_roles,
    nearest_neighbor_agreement,
)
from .deontic import (
    CommitmentFrequency,
    commitment_frequencies,
    infer_cardinalities_and_compatibilities,
    infer_deontic,
)
from .geometry import convex_hull, hull_coverage, in_hull
from .goals import GoalEvidence, default_jump_threshold, group_missions, infer_goals
from .links import LinkEvidence, MissingMessageDeclaration, infer_links
from .pca import DegenerateInput, PcaProjection, pca
from .synthesis import InferenceReport, InsufficientEpisodes, RoleCluster, synthesize
from .vectors import HistoryVector, stack, vectorize

__all__ = [
    "Merge",
    "RoleClustering",
    "adjusted_rand_index",
    "average_linkage",
    "choose_k",
    "cluster_roles",
    "nearest_neighbor_agreement",
    "CommitmentFrequency",
    "commitment_frequencies",
    "infer_cardinalities_and_compatibilities",
    "infer_deontic",
    "convex_hull",
    "hull_coverage",
    "in_hull",
    "GoalEvidence",
    "default_jump_threshold",
    "group_missions",
    "infer_goals",
    "LinkEvidence",
    "MissingMessageDeclaration",
    "infer_links",
    "DegenerateInput",
    "PcaProjection",
    "pca",
    "InferenceReport",
    "InsufficientEpisodes",
    "RoleCluster",
    "synthesize",
    "HistoryVector",
    "stack",
    "vectorize",
]
