"""Self-evolving navigation agent framework over discrete graph worlds."""

from .backends import (
    BackendConfig,
    ChatRequest,
    ModelBackend,
    RemoteBackend,
    Script,
    ScriptedBackend,
    ScriptEntry,
)
from .errors import SevlnError
from .harness import EmbedderConfig, RunConfig, SuiteReport, run_episode, run_suite, run_sweep
from .memory import (
    DecisionTriple,
    ExperienceEntry,
    ExperienceRepo,
    NodeAnnotation,
    TopoMap,
    annotate,
    render_map,
    update_map,
)
from .reasoning import DeciderConfig, PromptBundle, decide, render_prompt
from .reflection import MetricReport, commit, correct, evaluate
from .retrieval import (
    FewShotBlock,
    HashingEmbedder,
    LandmarkSet,
    QueryVector,
    cosine,
    embed,
    extract_landmarks,
    retrieve,
)
from .world import (
    Action,
    Candidate,
    Episode,
    EpisodeState,
    NavGraph,
    Observation,
    load_world,
    observe,
    shortest_path_length,
    step,
    within_success_radius,
)

__version__ = "0.1.0"

__all__ = [
    "Action",
    "BackendConfig",
    "Candidate",
    "ChatRequest",
    "DeciderConfig",
    "DecisionTriple",
    "EmbedderConfig",
    "Episode",
    "EpisodeState",
    "ExperienceEntry",
    "ExperienceRepo",
    "FewShotBlock",
    "HashingEmbedder",
    "LandmarkSet",
    "MetricReport",
    "ModelBackend",
    "NavGraph",
    "NodeAnnotation",
    "Observation",
    "PromptBundle",
    "QueryVector",
    "RemoteBackend",
    "RunConfig",
    "Script",
    "ScriptEntry",
    "ScriptedBackend",
    "SevlnError",
    "SuiteReport",
    "TopoMap",
    "annotate",
    "commit",
    "correct",
    "cosine",
    "decide",
    "embed",
    "evaluate",
    "extract_landmarks",
    "load_world",
    "observe",
    "render_map",
    "render_prompt",
    "retrieve",
    "run_episode",
    "run_suite",
    "run_sweep",
    "shortest_path_length",
    "step",
    "update_map",
    "within_success_radius",
]
