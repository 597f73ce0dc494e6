from .model import PolicyConfig, PolicyOutput, VisuomotorPolicy, encode_instruction
from .oracle import OraclePhase, visual_servo_oracle
from .checkpoint import load_checkpoint, load_policy, save_checkpoint

__all__ = [
    "PolicyConfig",
    "PolicyOutput",
    "VisuomotorPolicy",
    "encode_instruction",
    "OraclePhase",
    "visual_servo_oracle",
    "load_checkpoint",
    "load_policy",
    "save_checkpoint",
]
