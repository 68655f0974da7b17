from .buffer import EnvRunner, RolloutBuffer, collect_rollouts, compute_gae, make_runners
from .policy import ARCHS, ActorCritic, Critic, NetConfig, PolicySet, load_actor_critic
from .ppo import clipped_surrogate, ppo_update
from .trainer import TrainConfig, TrainResult, TrainingDiverged, train

__all__ = [
    "EnvRunner", "RolloutBuffer", "collect_rollouts", "compute_gae", "make_runners",
    "ARCHS", "ActorCritic", "Critic", "NetConfig", "PolicySet", "load_actor_critic",
    "clipped_surrogate", "ppo_update", "TrainConfig", "TrainResult", "TrainingDiverged", "train",
]
