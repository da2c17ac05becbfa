"""Concrete scenarios: highway merge driving and the pedestrian encounter."""
from .driving import (DrivingConfig, DrivingContext, DrivingGame, DrivingParams, ParamLayout,
                      driving_parametrize, driving_stage_utility, driving_subspace, enumerate_driving_subspaces,
                      MERGER, OTHER, anchors, context_from_positions,
                      merge_context, subspace_cell, subspace_index, subspace_label)
from .geometry import FrameTransform, Lane, RoadGeometry, load_geometry, save_geometry
from .pedestrian import (PedestrianContext, PedestrianGame, PedestrianParams, PedestrianSetting,
                         enumerate_pedestrian_subspaces, invert_pedestrian_preferences,
                         pedestrian_potential)
