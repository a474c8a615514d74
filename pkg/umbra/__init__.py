from .attack import AttackConfig, AttackReport, attack_digital, attack_robust, run_attack, stabilize
from .classifier import (ConfidenceVector, FunctionClassifier, OracleClassifier, QueryCounter, ToyModel,
                         TrainHyper, external_oracle, load_model, predict, save_model, train)
from .color import lab_to_rgb, rgb_to_lab
from .dataio import Sample, filter_dark, generate_corpus, generate_samples, load_image, load_mask, save_image
from .geometry import Polygon, RegionMask, contains, rasterize
from .pso import OptimizationResult, SwarmConfig, minimize
from .shadow import K_MEAN, ShadowSpec, apply_shadow, estimate_k
from .solar import (SceneGeometry, SolarContext, plan_scheduled_attack, project_shadow, scheduled_sweep,
                    solar_position)
from .transforms import TransformPlan, TransformRanges, expected_confidence, sample_plan

__version__ = "0.3.0"
