"""Offline RL for dialogue tutoring on a synthetic student.

The package covers the full loop: roll logged dialogues on a seeded
latent-state student, fold per-turn annotations into 25-dim states,
fit cloned and value-based tutors offline, expand the log with
optimism-guided exploratory rollouts, and evaluate arms under shared
episode seeds.

Heavy dependencies (torch, scikit-learn) are imported lazily by the
training entry points; importing `tutor_rl` itself stays cheap.
"""

from ._version import __version__
from .annotate import (
    FEATURE_SCHEMA,
    EpisodeIdentityProvider,
    RecordsProvider,
    TurnAnnotation,
    annotate_episode,
    fold_state,
    load_prompt,
    majority_vote,
    reward_from_annotation,
)
from .augment import AugmentResult, CandidateIntervention, collect_exploratory, score_candidates
from .config import RunConfig, load_run_config, run_config_from_dict
from .core import (
    ACTIONS,
    DEFAULT_GAMMA,
    DEFAULT_MAX_TURNS,
    N_ACTIONS,
    N_FEATURES,
    Dataset,
    DatasetStats,
    Episode,
    HighLevelAction,
    LatentState,
    TaggedTransition,
    Transition,
    canonical_pair,
    dataset_stats,
    episode_value,
    flatten,
    sample_latent_states,
    scaled_features,
    stable_seed,
)
from .errors import (
    AnnotationError,
    ConfigError,
    FingerprintMismatchError,
    SimulatorError,
    TrainingDivergedError,
    TutorRLError,
    ValidationError,
)
from .evaluate import (
    EvalReport,
    compare_policies,
    evaluate_policy,
    generalization_suite,
    wilson_interval,
)
from .offline_rl import (
    CqlConfig,
    FqiConfig,
    QFunction,
    cql_train,
    fitted_q_iteration,
    neural_fqi_train,
)
from .persist import (
    dataset_digest,
    fingerprint_of,
    load_dataset,
    load_policy,
    load_qfunction,
    save_dataset,
    save_policy,
    save_qfunction,
)
from .policies import (
    BcClassifierConfig,
    ClassifierPolicy,
    GreedyQPolicy,
    Policy,
    TablePolicy,
    fit_bc_classifier,
    fit_bc_table,
    greedy_policy,
    total_variation,
)
from .studentsim import (
    REFERENCE_PROBLEM_ID,
    BaselinePolicy,
    ExpertPolicy,
    ProblemSpec,
    SimulatorState,
    StepResult,
    baseline_action_weights,
    generate_dataset,
    load_problems,
    reference_problem,
    replay_to_turn,
    reset,
    rollout,
    scripted_expert,
    step,
    variant_problems,
)

__all__ = [name for name in dir() if not name.startswith("_")]
