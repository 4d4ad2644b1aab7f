"""Collusion detection toolkit for Android-style app sets.

Three cooperating analyses over app descriptor files: a rule-based
filter (fast over-approximation), a Bayesian collusion-possibility
scorer, and an explicit-state model checker with taint abstraction that
confirms or refutes candidate pairs with a witness trace.
"""

__version__ = "0.1.0"

from .app_model import (
    ActionId,
    ActionTrace,
    AppDescriptor,
    Channel,
    ChannelKind,
    CollusionWitness,
    Poset,
    ThreatKind,
    ThreatSpec,
    check_collusion_definition,
    parse_descriptor,
    serialize_descriptor,
    total_extensions,
)
from .bayes import (
    BernoulliModel,
    ConfusionMatrix,
    CriticalityClass,
    PermissionVector,
    ScoreReport,
    Verdict,
    estimate_lambdas,
    l_com,
    l_tau,
    metrics,
    probability,
    score,
)
from .corpus import GoldenMatrix, golden_matrix, load_corpus
from .model_checker import (
    DataflowGraph,
    McVerdict,
    build_dataflow,
    check_trace,
    emit_witness,
    explore,
    influences,
    parse_witness,
)
from .rule_engine import (
    CollusionMatrix,
    HighLevelAction,
    PermissionActionMap,
    communication_paths,
    default_permission_map,
    derive_actions,
    derive_channels,
    derive_communications,
    detect,
)
