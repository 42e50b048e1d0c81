"""Cost-aware phishing-detector selection with a learned agent, static
ensemble baselines, cost-curve transfer and robustness probes."""

__version__ = "0.1.0"

from .agent import PolicyParams, TrainConfig, train  # noqa: E402,F401
from .rewards import CostCurve, MetricGoal, make_scheme, two_region_curve  # noqa: E402,F401
from .scores import ScoreTable, SampleRecord, load_table, split, synthesize  # noqa: E402,F401
from .transfer import TransferProblem, transfer  # noqa: E402,F401
