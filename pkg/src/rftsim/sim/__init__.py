from .taskfile import (ParseError, ValidationError, default_suite_dir, dump_task, load_suite, load_task,
                       scenario_path)
from .types import (Action, DeviceSpec, GoalPredicate, Inside, NearRegion, ObjectSpec, OnTop, PoseDelta,
                    Receptacle, Region, RobotConfig, Scene, TaskSpec, ToggledOn, WorldState, normalize_yaw,
                    quantize, wrap_angle)
from .world import (DYNAMICS, Dynamics, StepAfterTerminal, can_reach, eval_predicates, goal_holds, reset,
                    state_bytes, state_digest, step)
