"""Direct doubly robust estimation of the conditional quantile comparator.

The comparator maps an untreated outcome level to the treated outcome at the
same conditional quantile. This package fits it directly by stochastic
gradient methods on a doubly robust objective, together with nuisance
estimators, inversion-style baselines, and a seeded simulation lab with
closed-form oracles.
"""

__version__ = "0.1.0"

from .dataset import ColumnSpec, Dataset, Sample, SplitPair, read_csv, split_half, write_csv
from .models import (
    AffineFeatures,
    LinearCqc,
    MlpCqc,
    RandomFourierFeatures,
    model_from_json,
    model_to_json,
    project_ball,
)
from .nuisance import (
    GaussianCcdf,
    KernelCcdf,
    LogitNoise,
    NuisanceSet,
    OraclePropensity,
    PropensityModel,
    fit_ccdf,
    fit_propensity,
    oracle_nuisances,
    perturb,
    select_bandwidth,
)
from .objective import (
    GradContribution,
    LossReport,
    PairedBatch,
    Y0Sampler,
    dr_gradient,
    ipw_gradient,
    loss_quadrature,
    mc_gradient,
    sample_y0,
    sample_y0_batch,
)
from .optimizer import FitResult, ScheduleSpec, fit_adam, fit_sgd, validate
from .baselines import (
    ContrastGrid,
    contrast_grid,
    default_grid_spec,
    invert_cqc,
    invert_cqc_batch,
    isotonic_project,
    s_learner_cqc,
    s_learner_cqc_batch,
)
from .simlab import (
    DgpSpec,
    ExperimentPlan,
    MetricsRecord,
    OracleCqc,
    RunDefaults,
    generate,
    make_dgp,
    mae,
    oracle_cqc_eval,
    population_excess_loss,
    run_experiment,
)
