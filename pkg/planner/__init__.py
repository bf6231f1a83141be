from .solve import main as plan
from .model import *
from .controller import *
from .evaluation import *
from .em import *
from .file_io import *
from .logger_setup import get_logger

__all__ = ["plan", "get_logger", "DecPomdpModel", "JointPolicy", "AgentFsc", "init_random",
           "evaluate_exact", "simulate", "em_solve", "EmConfig", "load_model", "load_policy"]
