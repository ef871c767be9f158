"""Altitude-stratified frontier exploration planner and benchmark harness."""

from .voxel import FREE, OCCUPIED, UNKNOWN, LayerView, SensorFrame, UpdateRegion, VoxelMap
from .frontiers import (Frontier, FrontierSet, ViewpointCandidate,
                        astar_distance, center_distance, cluster_cells,
                        extract_frontiers, extract_full, sample_viewpoints,
                        update_info)
from .global_plan import (CostMatrix, EdgeRole, OmissionParams, Tour,
                          build_cost_matrix, compress_matrix, frontier_cost,
                          near_current_ids, omission_penalty, plan_global,
                          position_cost, solve_tsp)
from .local_plan import (LocalParams, MotionLimits, ObstacleWindow, Scenario,
                         Trajectory, UavState, classify_scenario,
                         build_viewpoint_dag, filter_viewpoints,
                         frame_obstacle_ratio, generate_trajectory,
                         shortest_local_path, update_window)
from .manager import (ExplorationManager, EpisodeReport, FrontierParams,
                      LayerSchedule, RunParams, StepResult, run_episode)
from .sim import (SensorSpec, UavModel, WorldModel, baseline_fov,
                  baseline_nearest, execute_trajectory, generate_maze,
                  generate_plant, load_world, render_depth, save_world)

__version__ = "0.1.0"
