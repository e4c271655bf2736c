"""Desk-scale visual transfer between toy Atari-style games with A3C."""
from .config import ExperimentConfig, load_config, parse_config
from .envs import BREAKOUT, PONG, ToyEnv, env_reset, env_step
from .mapper import apply_mapper, fit_linear_mapper, map_action, map_reward
from .metrics import episodes_to_threshold, evaluate, jumpstart, total_rewards, transfer_ratio
from .net import NetArch, ParameterSet, a3c_loss_and_grads, forward, init_params, init_transfer_weights
from .preprocess import attention_preprocess
from .rewardlog import RewardLog, read_reward_log, write_reward_log
from .trainer import train_stage1, train_stage2
from .checkpoint import load_checkpoint, save_checkpoint

__version__ = "0.1.0"
