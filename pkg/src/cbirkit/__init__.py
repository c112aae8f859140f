"""cbirkit: pooled global descriptors, descriptor fusion, and L2 retrieval."""

from .descriptors import (
    DEFAULT_SCALES,
    GlobalDescriptor,
    Region,
    RegionGrid,
    avgpool,
    generate_regions,
    l2_normalize,
    mac,
    msrmac,
    region_mac,
    rmac,
)
from .feature_io import (
    FeatureMap,
    FeatureMapSet,
    read_feature_map_set,
    validate,
    write_feature_map_set,
)
from .fusion import BranchConfig, FusionConfig, branch_descriptor, combine, describe_image
from .index import (
    DescriptorIndex,
    IndexEntry,
    QueryResult,
    RepresentativeMode,
    build_index,
    l2_distance,
    load_index,
    query_classes,
    refine,
    save_index,
)
from .evaluation import EvalReport, config_fingerprint, recall_at_k, run_experiment

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_SCALES",
    "BranchConfig",
    "DescriptorIndex",
    "EvalReport",
    "FeatureMap",
    "FeatureMapSet",
    "FusionConfig",
    "GlobalDescriptor",
    "IndexEntry",
    "QueryResult",
    "Region",
    "RegionGrid",
    "RepresentativeMode",
    "avgpool",
    "branch_descriptor",
    "build_index",
    "combine",
    "config_fingerprint",
    "describe_image",
    "generate_regions",
    "l2_distance",
    "l2_normalize",
    "load_index",
    "mac",
    "msrmac",
    "query_classes",
    "read_feature_map_set",
    "recall_at_k",
    "refine",
    "region_mac",
    "rmac",
    "run_experiment",
    "save_index",
    "validate",
    "write_feature_map_set",
]
