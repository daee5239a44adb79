"""Round-based TDMA convergecast simulator comparing TPO, MTPO and ETPO scheduling."""
from .analytics import (
    IdleSemantics,
    exact_idle_by_enumeration,
    expected_idle,
    monte_carlo_idle,
)
from .scheduling import (
    Discipline,
    LinkWindow,
    Schedule,
    assign_slots,
    plan_schedule,
    verify_schedule,
    window_plan,
)
from .simkernel import (
    EnergyParams,
    FixedRounds,
    NodeStates,
    RoundMetrics,
    RunSummary,
    UntilAllDead,
    UntilKDelivered,
    prune_alive,
    run_experiment,
    run_round,
)
from .topology import (
    BalancedSpec,
    Tree,
    build_tree,
    gen_balanced,
    gen_random,
    parse_topology,
    serialize_topology,
    subtree_histogram,
)
from .traffic import TrafficModel, TrafficPattern, generate_pattern, pattern_weight, prng_draw

__version__ = "0.1.0"
